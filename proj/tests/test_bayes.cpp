#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vrcv/bayes.hpp"
#include "vrcv/grad_check.hpp"
#include "vrcv/loss.hpp"
#include "vrcv/net.hpp"
#include "vrcv/optim.hpp"

using namespace vrcv;
using namespace vrcv::bayes;

namespace {

// empirical mean / variance against analytic values, both within 4 standard
// errors (variance SE from the empirical fourth central moment)
void check_moments(const std::vector<double>& samples, double true_mean, double true_var) {
  const double n = static_cast<double>(samples.size());
  double m = 0.0;
  for (double v : samples) m += v;
  m /= n;
  double v2 = 0.0, v4 = 0.0;
  for (double v : samples) {
    const double d = v - m;
    v2 += d * d;
    v4 += d * d * d * d;
  }
  v2 /= n;
  v4 /= n;
  CHECK(std::abs(m - true_mean) <= 4.0 * std::sqrt(true_var / n));
  const double se_var = std::sqrt(std::max(v4 - v2 * v2, 0.0) / n);
  CHECK(std::abs(v2 - true_var) <= 4.0 * se_var);
}

GaussianWeightPosterior column_posterior() {
  // a=(1,2), mu column (0.5,-0.5), sigma column (0.1,0.2)
  GaussianWeightPosterior post;
  post.mu = Tensor({2, 1}, {0.5, -0.5});
  post.rho = Tensor({2, 1}, {rho_for_sigma(0.1), rho_for_sigma(0.2)});
  return post;
}

}  // namespace

TEST_CASE("local reparam dense: forced moments of the worked example") {
  auto post = column_posterior();
  Tensor a({1, 2}, {1.0, 2.0});
  DenseCache cache;
  Tensor b = local_reparam_dense(a, post, nullptr, Tensor::zeros({1, 1}), &cache);
  CHECK(b(0, 0) == doctest::Approx(-0.5).epsilon(1e-12));            // E(b) = sum a mu
  CHECK(cache.std(0, 0) == doctest::Approx(std::sqrt(0.17)).epsilon(1e-12));  // var = 0.17
}

TEST_CASE("local reparam dense with sigma = 0 equals the deterministic layer") {
  SeededRng rng(1);
  GaussianWeightPosterior post;
  post.mu = rng.normal({4, 3});
  post.rho = Tensor::full({4, 3}, -1e30);  // softplus underflows to exactly 0
  Tensor bias = rng.normal({3});
  Tensor a = rng.normal({5, 4});
  Tensor noise = rng.normal({5, 3});
  Tensor b = local_reparam_dense(a, post, bias.data().data(), noise);
  Tensor expect = nn::dense_raw(a, post.mu, bias.data().data());
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(b[i] == expect[i]);
}

TEST_CASE("local reparam dense: Monte-Carlo moments match Eqs for mean/variance") {
  SeededRng rng(2);
  auto post = column_posterior();
  Tensor a({1, 2}, {1.0, 2.0});
  const std::size_t n = 100000;
  std::vector<double> samples;
  samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor b = local_reparam_dense(a, post, nullptr, rng.normal({1, 1}));
    samples.push_back(b[0]);
  }
  check_moments(samples, -0.5, 0.17);
}

TEST_CASE("local reparam conv: identity kernel with zero variance is exact") {
  SeededRng rng(3);
  GaussianWeightPosterior post;
  post.mu = Tensor({1, 1, 1, 1}, {1.0});
  post.rho = Tensor::full({1, 1, 1, 1}, -1e30);
  Tensor x = rng.normal({2, 1, 4, 4});
  Tensor noise = rng.normal({2, 1, 4, 4});
  Tensor y = local_reparam_conv(x, post, nullptr, 1, 0, noise);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("local reparam conv on a single pixel collapses to the dense case") {
  // 2-channel single pixel input with a 1x1 kernel = the dense worked example
  GaussianWeightPosterior post;
  post.mu = Tensor({1, 2, 1, 1}, {0.5, -0.5});
  post.rho = Tensor({1, 2, 1, 1}, {rho_for_sigma(0.1), rho_for_sigma(0.2)});
  Tensor a({1, 2, 1, 1}, {1.0, 2.0});
  ConvCache cache;
  Tensor b = local_reparam_conv(a, post, nullptr, 1, 0, Tensor::zeros({1, 1, 1, 1}), &cache);
  CHECK(b[0] == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(cache.std[0] == doctest::Approx(std::sqrt(0.17)).epsilon(1e-12));
}

TEST_CASE("local reparam conv: Monte-Carlo moments") {
  SeededRng rng(4);
  GaussianWeightPosterior post;
  post.mu = Tensor({1, 2, 1, 1}, {0.5, -0.5});
  post.rho = Tensor({1, 2, 1, 1}, {rho_for_sigma(0.1), rho_for_sigma(0.2)});
  Tensor a({1, 2, 1, 1}, {1.0, 2.0});
  const std::size_t n = 100000;
  std::vector<double> samples;
  samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    samples.push_back(local_reparam_conv(a, post, nullptr, 1, 0, rng.normal({1, 1, 1, 1}))[0]);
  check_moments(samples, -0.5, 0.17);
}

TEST_CASE("kl_mc vanishes when the posterior equals the prior") {
  SeededRng rng(5);
  PriorSpec prior{0.1};
  GaussianWeightPosterior post;
  post.mu = Tensor::zeros({3, 2});
  post.rho = Tensor::full({3, 2}, rho_for_sigma(0.1));
  KlEstimate est = kl_mc(post, prior, rng, 10000);
  // identical distributions: each sample term is algebraically zero, so the
  // estimate sits at the round-off floor
  CHECK(std::abs(est.value) < 4.0 * est.stderr_ + 1e-12);
}

TEST_CASE("kl_mc matches the closed form for N(1,1) vs N(0,1)") {
  SeededRng rng(6);
  PriorSpec prior{1.0};
  GaussianWeightPosterior post;
  post.mu = Tensor({1, 1}, {1.0});
  post.rho = Tensor({1, 1}, {rho_for_sigma(1.0)});
  KlEstimate est = kl_mc(post, prior, rng, 20000);
  CHECK(std::abs(est.value - 0.5) < 4.0 * est.stderr_);
}

TEST_CASE("kl_mc estimator noise shrinks like sqrt(S)") {
  PriorSpec prior{0.5};
  GaussianWeightPosterior post;
  post.mu = Tensor({1, 1}, {0.3});
  post.rho = Tensor({1, 1}, {rho_for_sigma(0.2)});
  auto spread = [&](std::size_t s_count, std::uint64_t base) {
    double sum = 0.0, sumsq = 0.0;
    const int reps = 300;
    for (int r = 0; r < reps; ++r) {
      SeededRng rng(base + static_cast<std::uint64_t>(r));
      const double v = kl_mc(post, prior, rng, s_count).value;
      sum += v;
      sumsq += v * v;
    }
    return std::sqrt((sumsq - sum * sum / reps) / (reps - 1));
  };
  const double sd_s = spread(200, 1000);
  const double sd_2s = spread(400, 5000);
  const double ratio = sd_s / sd_2s;
  CHECK(ratio > 1.15);  // ~sqrt(2) with sampling slack
  CHECK(ratio < 1.75);
}

TEST_CASE("kl_mc pathwise gradients match finite differences on a 10-weight layer") {
  SeededRng rng(7);
  PriorSpec prior{0.3};
  GaussianWeightPosterior post;
  post.mu = rng.normal({5, 2});
  post.rho = Tensor::full({5, 2}, rho_for_sigma(0.15));
  Tensor eps = rng.normal({4, 10});  // S=4 fixed noise

  KlGrads grads;
  kl_mc_with(post, prior, eps, &grads);

  Tensor fd_mu = finite_diff_grad(
      [&](const Tensor& mu) {
        GaussianWeightPosterior p2{mu, post.rho};
        return kl_mc_with(p2, prior, eps).value;
      },
      post.mu);
  CHECK(max_rel_err(grads.d_mu, fd_mu) < 1e-4);

  Tensor fd_rho = finite_diff_grad(
      [&](const Tensor& rho) {
        GaussianWeightPosterior p2{post.mu, rho};
        return kl_mc_with(p2, prior, eps).value;
      },
      post.rho);
  CHECK(max_rel_err(grads.d_rho, fd_rho) < 1e-4);
}

TEST_CASE("dropout_alpha formula") {
  CHECK(dropout_alpha(0.5) == doctest::Approx(1.0));
  CHECK(dropout_alpha(0.0) == 0.0);
  CHECK(dropout_alpha(0.8) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK_THROWS_AS(dropout_alpha(1.0), std::invalid_argument);
  CHECK_THROWS_AS(dropout_alpha(-0.1), std::invalid_argument);
}

TEST_CASE("Bernoulli dropout bridge: moments match the Gaussian approximation") {
  SeededRng rng(8);
  const double p = 0.5;
  Tensor a({3}, {1.0, -0.5, 2.0});
  Tensor w({3}, {0.4, 0.8, -0.3});
  double true_mean = 0.0, true_var = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    true_mean += a[i] * w[i];
    true_var += a[i] * a[i] * w[i] * w[i] * p / (1.0 - p);
  }
  const std::size_t n = 200000;
  std::vector<double> samples;
  samples.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    double b = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      const double keep = rng.next_uniform() < (1.0 - p) ? 1.0 : 0.0;
      b += a[i] * (keep / (1.0 - p)) * w[i];
    }
    samples.push_back(b);
  }
  check_moments(samples, true_mean, true_var);
}

TEST_CASE("degenerate free energy equals the frequentist loss") {
  SeededRng rng(9);
  BayesNet net;
  net.add(nn::LayerSpec::dense(6, 8));
  net.add(nn::LayerSpec::softplus());
  net.add(nn::LayerSpec::dense(8, 3));
  net.init(rng);
  for (auto& l : net.layers)
    if (!l.weight.rho.empty()) l.weight.rho = Tensor::full(l.weight.rho.shape(), -1e30);

  Tensor batch = rng.normal({5, 6});
  std::vector<int> labels{0, 2, 1, 1, 0};

  SeededRng noise_rng(77);
  FreeEnergyParts parts = free_energy(net, batch, labels, noise_rng, 1, 0.0);

  // frequentist twin with the same mu weights
  nn::Sequential freq;
  freq.add(nn::LayerSpec::dense(6, 8));
  freq.add(nn::LayerSpec::softplus());
  freq.add(nn::LayerSpec::dense(8, 3));
  SeededRng dummy(1);
  freq.init(dummy);
  freq.states[0].params.at("weight") = net.layers[0].weight.mu;
  freq.states[0].params.at("bias") = net.layers[0].bias;
  freq.states[2].params.at("weight") = net.layers[2].weight.mu;
  freq.states[2].params.at("bias") = net.layers[2].bias;
  Tensor logits = freq.forward(batch, nn::Mode::Eval);
  auto xent = nn::softmax_xent(logits, labels);
  CHECK(parts.total == xent.loss);
  CHECK(parts.kl == 0.0);
}

TEST_CASE("degenerate Bayesian training is bit-identical to frequentist training") {
  SeededRng rng(10);
  BayesNet bnet;
  bnet.add(nn::LayerSpec::dense(4, 6));
  bnet.add(nn::LayerSpec::softplus());
  bnet.add(nn::LayerSpec::dense(6, 2));
  SeededRng init_rng(55);
  bnet.init(init_rng);
  for (auto& l : bnet.layers)
    if (!l.weight.rho.empty()) l.weight.rho = Tensor::full(l.weight.rho.shape(), -1e30);

  nn::Sequential fnet;
  fnet.add(nn::LayerSpec::dense(4, 6));
  fnet.add(nn::LayerSpec::softplus());
  fnet.add(nn::LayerSpec::dense(6, 2));
  SeededRng dummy(1);
  fnet.init(dummy);
  fnet.states[0].params.at("weight") = bnet.layers[0].weight.mu;
  fnet.states[0].params.at("bias") = bnet.layers[0].bias;
  fnet.states[2].params.at("weight") = bnet.layers[2].weight.mu;
  fnet.states[2].params.at("bias") = bnet.layers[2].bias;

  Tensor data = rng.normal({12, 4});
  std::vector<int> labels;
  for (std::size_t i = 0; i < 12; ++i) labels.push_back(static_cast<int>(i % 2));

  nn::Adam opt_b, opt_f;
  auto bnames = bnet.param_names("");
  auto fnames = fnet.param_names("");
  SeededRng noise_rng(3);
  for (int step = 0; step < 10; ++step) {
    std::vector<Tensor> bgrads;
    free_energy(bnet, data, labels, noise_rng, 1, 0.0, &bgrads);
    auto bparams = bnet.params();
    opt_b.step(bparams, bgrads, bnames);

    std::vector<nn::FwdCache> caches;
    Tensor logits = fnet.forward(data, nn::Mode::Train, &caches);
    auto xent = nn::softmax_xent(logits, labels);
    std::vector<Tensor> fgrads;
    fnet.backward(xent.grad, caches, fgrads);
    auto fparams = fnet.params();
    opt_f.step(fparams, fgrads, fnames);
  }

  CHECK(bnet.layers[0].weight.mu.data()[3] == fnet.states[0].params.at("weight").data()[3]);
  for (std::size_t i = 0; i < bnet.layers[0].weight.mu.size(); ++i)
    CHECK(bnet.layers[0].weight.mu[i] == fnet.states[0].params.at("weight")[i]);
  for (std::size_t i = 0; i < bnet.layers[2].weight.mu.size(); ++i)
    CHECK(bnet.layers[2].weight.mu[i] == fnet.states[2].params.at("weight")[i]);
  for (std::size_t i = 0; i < bnet.layers[2].bias.size(); ++i)
    CHECK(bnet.layers[2].bias[i] == fnet.states[2].params.at("bias")[i]);
}

TEST_CASE("free energy gradients match finite differences with fixed noise") {
  SeededRng rng(11);
  BayesNet net;
  net.add(nn::LayerSpec::dense(3, 4));
  net.add(nn::LayerSpec::softplus());
  net.add(nn::LayerSpec::dense(4, 2));
  net.init(rng, 0.1);
  net.prior = PriorSpec{0.5};

  Tensor batch = rng.normal({4, 3});
  std::vector<int> labels{0, 1, 1, 0};

  // two forward samples, fixed noise everywhere
  std::vector<LayerNoise> fwd_noise;
  for (int s = 0; s < 2; ++s) fwd_noise.push_back(draw_noise(net, batch.shape(), rng));
  std::vector<Tensor> kl_eps;
  for (std::size_t i = 0; i < net.layers.size(); ++i)
    if (net.stochastic(i)) kl_eps.push_back(rng.normal({3, net.layers[i].weight.mu.size()}));

  const double kl_weight = 0.25;
  std::vector<Tensor> grads;
  free_energy_with(net, batch, labels, fwd_noise, kl_eps, kl_weight, &grads);

  auto params = net.params();
  REQUIRE(grads.size() == params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto f = [&](const Tensor& p) {
      BayesNet probe = net;
      *probe.params()[k] = p;
      return free_energy_with(probe, batch, labels, fwd_noise, kl_eps, kl_weight).total;
    };
    Tensor fd = finite_diff_grad(f, *params[k]);
    CHECK(max_rel_err(grads[k], fd) < 1e-4);
  }
}

TEST_CASE("free energy decreases over 50 steps on a separable toy set") {
  SeededRng rng(12);
  const std::size_t n = 40;
  Tensor data({n, 2});
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    labels[i] = y;
    data(i, 0) = (y == 0 ? -2.0 : 2.0) + 0.3 * rng.next_normal();
    data(i, 1) = (y == 0 ? 1.0 : -1.0) + 0.3 * rng.next_normal();
  }
  BayesNet net;
  net.add(nn::LayerSpec::dense(2, 8));
  net.add(nn::LayerSpec::softplus());
  net.add(nn::LayerSpec::dense(8, 2));
  net.init(rng, 0.05);
  net.prior = PriorSpec{0.5};

  nn::Adam opt(nn::AdamConfig{.lr = 5e-3});
  auto names = net.param_names("");
  SeededRng noise_rng(4);
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 50; ++step) {
    std::vector<Tensor> grads;
    auto parts = free_energy(net, data, labels, noise_rng, 1, 1.0 / 10.0, &grads);
    if (step == 0) first = parts.total;
    last = parts.total;
    auto params = net.params();
    opt.step(params, grads, names);
  }
  CHECK(last < first);
}

TEST_CASE("predictive_mc: rows sum to one; sigma=0 makes it S-independent") {
  SeededRng rng(13);
  BayesNet net;
  net.add(nn::LayerSpec::dense(3, 5));
  net.add(nn::LayerSpec::softplus());
  net.add(nn::LayerSpec::dense(5, 4));
  net.init(rng, 0.2);
  Tensor input = rng.normal({6, 3});

  SeededRng r1(21);
  Tensor probs = predictive_mc(net, input, r1, 7);
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 4; ++j) s += probs(i, j);
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }

  // S=1 equals one stochastic pass with the same stream
  SeededRng r2(33), r3(33);
  Tensor one = predictive_mc(net, input, r2, 1);
  LayerNoise noise = draw_noise(net, input.shape(), r3);
  Tensor direct = nn::softmax_rows(bayes_forward(net, input, noise));
  for (std::size_t i = 0; i < one.size(); ++i) CHECK(one[i] == direct[i]);

  // zero variance: S does not matter
  for (auto& l : net.layers)
    if (!l.weight.rho.empty()) l.weight.rho = Tensor::full(l.weight.rho.shape(), -1e30);
  SeededRng r4(5), r5(6);
  Tensor p1 = predictive_mc(net, input, r4, 1);
  Tensor p10 = predictive_mc(net, input, r5, 10);
  for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i] == doctest::Approx(p10[i]).epsilon(1e-15));
}

TEST_CASE("gradient check for the conv local reparameterization path") {
  SeededRng rng(14);
  BayesNet net;
  net.add(nn::LayerSpec::conv2d(1, 2, 3, 1, 1));
  net.add(nn::LayerSpec::softplus());
  net.add(nn::LayerSpec::dense(2 * 4 * 4, 2));
  net.init(rng, 0.1);

  Tensor batch = rng.normal({2, 1, 4, 4});
  std::vector<int> labels{0, 1};
  std::vector<LayerNoise> fwd_noise{draw_noise(net, batch.shape(), rng)};
  std::vector<Tensor> kl_eps;
  for (std::size_t i = 0; i < net.layers.size(); ++i)
    if (net.stochastic(i)) kl_eps.push_back(rng.normal({2, net.layers[i].weight.mu.size()}));

  std::vector<Tensor> grads;
  free_energy_with(net, batch, labels, fwd_noise, kl_eps, 0.1, &grads);

  auto params = net.params();
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto f = [&](const Tensor& p) {
      BayesNet probe = net;
      *probe.params()[k] = p;
      return free_energy_with(probe, batch, labels, fwd_noise, kl_eps, 0.1).total;
    };
    Tensor fd = finite_diff_grad(f, *params[k]);
    CHECK(max_rel_err(grads[k], fd) < 1e-4);
  }
}
