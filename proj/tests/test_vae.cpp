#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vrcv/grad_check.hpp"
#include "vrcv/vae.hpp"

using namespace vrcv;
using namespace vrcv::vae;

namespace {

VaeConfig desk_cfg(std::size_t side, std::size_t dz, std::size_t hidden = 32) {
  VaeConfig cfg;
  cfg.arch = "desk";
  cfg.image_side = side;
  cfg.latent_dim = dz;
  cfg.hidden = hidden;
  return cfg;
}

Tensor random_images(std::size_t n, std::size_t side, SeededRng& rng) {
  Tensor imgs({n, 1, side, side});
  for (double& v : imgs.data()) v = rng.next_uniform();
  return imgs;
}

}  // namespace

TEST_CASE("encode emits [m, d_z] posteriors for the default latent width") {
  SeededRng rng(1);
  VaeConfig cfg = desk_cfg(28, 62);
  VaeModel model = make_vae(cfg, rng);
  Tensor batch = random_images(5, 28, rng);
  LatentPosterior post = encode(model, batch);
  CHECK(post.mu.shape() == std::vector<std::size_t>{5, 62});
  CHECK(post.logvar.shape() == std::vector<std::size_t>{5, 62});
  CHECK_THROWS_AS(encode(model, Tensor({5, 1, 14, 14})), std::invalid_argument);
}

TEST_CASE("encode is deterministic in eval mode") {
  SeededRng rng(2);
  VaeModel model = make_vae(desk_cfg(8, 4), rng);
  Tensor batch = random_images(3, 8, rng);
  LatentPosterior a = encode(model, batch);
  LatentPosterior b = encode(model, batch);
  for (std::size_t i = 0; i < a.mu.size(); ++i) {
    CHECK(a.mu[i] == b.mu[i]);
    CHECK(a.logvar[i] == b.logvar[i]);
  }
}

TEST_CASE("zeroed final head gives zero posterior") {
  SeededRng rng(3);
  VaeModel model = make_vae(desk_cfg(8, 4), rng);
  auto& head = model.encoder.states.back().params;
  head.at("weight") = Tensor::zeros(head.at("weight").shape());
  head.at("bias") = Tensor::zeros(head.at("bias").shape());
  Tensor batch = random_images(3, 8, rng);
  LatentPosterior post = encode(model, batch);
  for (double v : post.mu.data()) CHECK(v == 0.0);
  for (double v : post.logvar.data()) CHECK(v == 0.0);
}

TEST_CASE("reparameterize: zero noise returns the mean") {
  LatentPosterior post{Tensor({2, 3}, {1, 2, 3, 4, 5, 6}), Tensor({2, 3})};
  Tensor z = reparameterize_with(post, Tensor::zeros({2, 3}));
  for (std::size_t i = 0; i < 6; ++i) CHECK(z[i] == post.mu[i]);
}

TEST_CASE("reparameterize: logvar -> -inf limit collapses onto the mean") {
  LatentPosterior post{Tensor::full({2, 3}, 1.5), Tensor::full({2, 3}, -50.0)};
  Tensor eps({2, 3}, {1.0, -2.0, 0.5, 3.0, -1.0, 2.0});
  Tensor z = reparameterize_with(post, eps);
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(z[i] - 1.5) <= 1e-10);
}

TEST_CASE("reparameterize sample mean statistics") {
  SeededRng rng(4);
  const std::size_t n = 100000;
  LatentPosterior post{Tensor::full({n, 1}, 1.0), Tensor::zeros({n, 1})};
  Tensor z = reparameterize(post, rng);
  double mean = 0.0;
  for (double v : z.data()) mean += v;
  mean /= n;
  CHECK(std::abs(mean - 1.0) < 4.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("closed-form KL: zero at the prior, 0.5 for unit mean shift") {
  LatentPosterior at_prior{Tensor::zeros({4, 3}), Tensor::zeros({4, 3})};
  CHECK(kl_closed_form(at_prior) == 0.0);
  LatentPosterior shifted{Tensor::full({1, 1}, 1.0), Tensor::zeros({1, 1})};
  CHECK(kl_closed_form(shifted) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("closed-form KL is nonnegative, zero only at the prior") {
  SeededRng rng(5);
  for (int i = 0; i < 200; ++i) {
    LatentPosterior p{rng.normal({2, 4}), rng.normal({2, 4})};
    CHECK(kl_closed_form(p) >= 0.0);
    CHECK(kl_closed_form(p) > 0.0);
  }
}

TEST_CASE("negative ELBO dominates the reconstruction term") {
  SeededRng rng(6);
  VaeModel model = make_vae(desk_cfg(8, 4), rng);
  Tensor batch = random_images(6, 8, rng);
  Tensor eps = rng.normal({6, 4});
  ElboParts parts = elbo_value(model, batch, eps);
  CHECK(parts.total >= parts.recon);
  CHECK(parts.kl >= 0.0);
}

TEST_CASE("elbo rejects out-of-range pixels") {
  SeededRng rng(7);
  VaeModel model = make_vae(desk_cfg(8, 4), rng);
  Tensor bad({2, 1, 8, 8});
  bad[5] = 1.5;
  std::vector<Tensor> grads;
  CHECK_THROWS_AS(elbo_loss_grads(model, bad, Tensor({2, 4}), grads), std::invalid_argument);
}

TEST_CASE("elbo gradient matches finite differences on a 6x6 toy config") {
  SeededRng rng(8);
  VaeConfig cfg = desk_cfg(6, 3, 10);
  VaeModel model = make_vae(cfg, rng);
  Tensor batch = random_images(4, 6, rng);
  Tensor eps = rng.normal({4, 3});

  std::vector<Tensor> grads;
  elbo_loss_grads(model, batch, eps, grads);

  auto params = model.all_params();
  REQUIRE(grads.size() == params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto f = [&](const Tensor& p) {
      VaeModel probe = model;
      *probe.all_params()[k] = p;
      return elbo_value(probe, batch, eps).total;
    };
    Tensor fd = finite_diff_grad(f, *params[k]);
    CHECK(max_rel_err(grads[k], fd) < 1e-4);
  }
}

namespace {

// smallest |input| over all relu / leaky_relu layers in one elbo forward;
// finite differences are only trustworthy when this clears the step size
double min_kink_margin(const VaeModel& model, const Tensor& batch, const Tensor& eps) {
  VaeModel work = model;
  double margin = 1e300;
  auto scan = [&](nn::Sequential& seq, const std::vector<nn::FwdCache>& caches) {
    for (std::size_t i = 0; i < seq.specs.size(); ++i) {
      const auto kind = seq.specs[i].kind;
      if (kind != nn::LayerKind::Relu && kind != nn::LayerKind::LeakyRelu) continue;
      for (double v : caches[i].input.data()) margin = std::min(margin, std::abs(v));
    }
  };
  std::vector<nn::FwdCache> enc, fc, conv;
  Tensor head = work.encoder.forward(batch, nn::Mode::Train, &enc);
  const std::size_t m = batch.dim(0), dz = work.cfg.latent_dim;
  LatentPosterior post{Tensor({m, dz}), Tensor({m, dz})};
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < dz; ++j) {
      post.mu(i, j) = head(i, j);
      post.logvar(i, j) = head(i, dz + j);
    }
  Tensor z = reparameterize_with(post, eps);
  Tensor h = work.decoder_fc.forward(z, nn::Mode::Train, &fc);
  if (!work.decoder_conv.specs.empty()) {
    const std::size_t q = work.cfg.image_side / 4;
    work.decoder_conv.forward(h.reshaped({m, 128, q, q}), nn::Mode::Train, &conv);
  }
  scan(work.encoder, enc);
  scan(work.decoder_fc, fc);
  scan(work.decoder_conv, conv);
  return margin;
}

}  // namespace

TEST_CASE("elbo gradient matches finite differences on a mini paper arch") {
  VaeConfig cfg;
  cfg.arch = "paper";
  cfg.image_side = 8;
  cfg.latent_dim = 3;

  // pick the first seed whose activations sit clear of the relu kinks
  VaeModel model;
  Tensor batch, eps;
  bool found = false;
  for (std::uint64_t seed = 9; seed < 200 && !found; ++seed) {
    SeededRng rng(seed);
    model = make_vae(cfg, rng);
    batch = random_images(3, 8, rng);
    eps = rng.normal({3, 3});
    found = min_kink_margin(model, batch, eps) > 3e-4;
  }
  REQUIRE(found);

  std::vector<Tensor> grads;
  {
    VaeModel work = model;  // train-mode BN mutates running stats
    elbo_loss_grads(work, batch, eps, grads);
  }

  auto params = model.all_params();
  REQUIRE(grads.size() == params.size());
  const auto names = model.all_param_names();
  const double h = 1e-5;
  for (std::size_t k = 0; k < params.size(); ++k) {
    // per-component central differences, capped per tensor for speed
    const std::size_t cap = std::min<std::size_t>(params[k]->size(), 24);
    double denom = 1.0;
    for (std::size_t i = 0; i < cap; ++i) {
      Tensor probe = *params[k];
      probe[i] += h;
      VaeModel mp = model;
      *mp.all_params()[k] = probe;
      const double fp = elbo_value(mp, batch, eps).total;
      probe[i] -= 2 * h;
      VaeModel mm = model;
      *mm.all_params()[k] = probe;
      const double fm = elbo_value(mm, batch, eps).total;
      const double fd = (fp - fm) / (2 * h);
      denom = std::max(denom, std::abs(fd));
      CHECK_MESSAGE(std::abs(grads[k][i] - fd) / denom < 1e-4,
                    names[k] << " component " << i);
    }
  }
}

TEST_CASE("train_vae: zero epochs returns the initialized model unchanged") {
  SeededRng rng(10);
  VaeConfig cfg = desk_cfg(8, 4);
  cfg.epochs = 0;
  Tensor imgs = random_images(20, 8, rng);
  VaeModel trained = train_vae(imgs, cfg, SeededRng(99));
  SeededRng init_rng(99);
  VaeModel reference = make_vae(cfg, init_rng);
  auto pa = trained.all_params();
  auto pb = reference.all_params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t k = 0; k < pa.size(); ++k)
    for (std::size_t i = 0; i < pa[k]->size(); ++i) CHECK((*pa[k])[i] == (*pb[k])[i]);
}

TEST_CASE("train_vae reduces the loss on synthetic images") {
  SeededRng rng(11);
  const std::size_t n = 500, side = 8;
  Tensor imgs({n, 1, side, side});
  // structured images: two blob patterns plus noise
  for (std::size_t i = 0; i < n; ++i) {
    const bool left = (i % 2 == 0);
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) {
        double v = 0.1 + 0.05 * rng.next_uniform();
        if (left && x < 4) v += 0.6;
        if (!left && x >= 4) v += 0.6;
        imgs(i, 0, y, x) = std::min(1.0, v);
      }
  }
  VaeConfig cfg = desk_cfg(side, 4, 32);
  cfg.epochs = 30;
  cfg.batch = 50;
  std::vector<double> trace;
  train_vae(imgs, cfg, SeededRng(123), &trace);
  REQUIRE(trace.size() == 30);
  CHECK(trace.back() < trace.front());
}

TEST_CASE("train_vae is deterministic given a seed") {
  SeededRng rng(12);
  Tensor imgs = random_images(80, 8, rng);
  VaeConfig cfg = desk_cfg(8, 3, 16);
  cfg.epochs = 3;
  cfg.batch = 16;
  VaeModel a = train_vae(imgs, cfg, SeededRng(7));
  VaeModel b = train_vae(imgs, cfg, SeededRng(7));
  auto pa = a.all_params(), pb = b.all_params();
  for (std::size_t k = 0; k < pa.size(); ++k)
    for (std::size_t i = 0; i < pa[k]->size(); ++i) CHECK((*pa[k])[i] == (*pb[k])[i]);
}

TEST_CASE("extract_latents preserves order and duplicates") {
  SeededRng rng(13);
  VaeModel model = make_vae(desk_cfg(8, 5), rng);
  Tensor imgs = random_images(7, 8, rng);
  // duplicate instance 2 into slot 5
  for (std::size_t px = 0; px < 64; ++px) imgs[5 * 64 + px] = imgs[2 * 64 + px];
  Tensor lat = extract_latents(model, imgs, 3);
  CHECK(lat.shape() == std::vector<std::size_t>{7, 5});
  for (std::size_t j = 0; j < 5; ++j) CHECK(lat(5, j) == lat(2, j));

  // permuting inputs permutes rows identically
  std::vector<std::size_t> perm{3, 0, 6, 1, 5, 2, 4};
  Tensor shuffled({7, 1, 8, 8});
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t px = 0; px < 64; ++px) shuffled[i * 64 + px] = imgs[perm[i] * 64 + px];
  Tensor lat2 = extract_latents(model, shuffled, 4);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 5; ++j) CHECK(lat2(i, j) == lat(perm[i], j));
}

TEST_CASE("paper architecture shape chain matches the documented sizes") {
  SeededRng rng(14);
  VaeConfig cfg;
  cfg.arch = "paper";
  cfg.image_side = 28;
  cfg.latent_dim = 62;
  VaeModel model = make_vae(cfg, rng);
  CHECK(model.encoder.output_shape_of({4, 1, 28, 28}) == std::vector<std::size_t>{4, 124});
  CHECK(model.decoder_fc.output_shape_of({4, 62}) == std::vector<std::size_t>{4, 128 * 7 * 7});
  CHECK(model.decoder_conv.output_shape_of({4, 128, 7, 7}) ==
        std::vector<std::size_t>{4, 1, 28, 28});
  Tensor z = rng.normal({2, 62});
  Tensor out = decode(model, z);
  CHECK(out.shape() == std::vector<std::size_t>{2, 1, 28, 28});
  for (double v : out.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}
