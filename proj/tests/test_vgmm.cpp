#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "vrcv/kmeans.hpp"
#include "vrcv/vgmm.hpp"

using namespace vrcv;
using namespace vrcv::vgmm;

namespace {

Tensor two_blob_data(std::size_t n_per, std::size_t d, double offset, double sigma,
                     SeededRng& rng, std::vector<int>* labels = nullptr) {
  Tensor centers({2, d});
  centers(0, 0) = -offset;
  centers(1, 0) = offset;
  auto [pts, lab] = testutil::gaussian_blobs(centers, n_per, sigma, rng);
  if (labels) *labels = lab;
  return pts;
}

}  // namespace

TEST_CASE("digamma agrees with known values") {
  // psi(1) = -gamma, psi(0.5) = -gamma - 2 ln 2
  const double gamma = 0.5772156649015328606;
  CHECK(digamma(1.0) == doctest::Approx(-gamma).epsilon(1e-12));
  CHECK(digamma(0.5) == doctest::Approx(-gamma - 2.0 * std::log(2.0)).epsilon(1e-12));
  CHECK(digamma(10.0) == doctest::Approx(2.251752589066721107).epsilon(1e-12));
  // recurrence psi(x+1) = psi(x) + 1/x
  for (double x : {0.3, 1.7, 4.2}) CHECK(digamma(x + 1.0) == doctest::Approx(digamma(x) + 1.0 / x));
}

TEST_CASE("init: one component lands on the data mean with the default prior") {
  SeededRng rng(1);
  Tensor data = rng.normal({50, 3});
  VgmmPrior prior = VgmmPrior::data_driven(data, 1);
  VgmmPosterior post = init(data, 1, prior, rng);
  std::vector<double> mean(3, 0.0);
  for (std::size_t i = 0; i < 50; ++i)
    for (std::size_t p = 0; p < 3; ++p) mean[p] += data(i, p) / 50.0;
  for (std::size_t p = 0; p < 3; ++p) CHECK(post.m(0, p) == doctest::Approx(mean[p]).epsilon(1e-9));
}

TEST_CASE("init survives duplicated rows and is seed-deterministic") {
  SeededRng rng(2);
  Tensor data({20, 2});
  for (std::size_t i = 0; i < 20; ++i) {
    data(i, 0) = (i % 2) ? 1.0 : -1.0;  // only two distinct points
    data(i, 1) = 0.5;
  }
  VgmmPrior prior = VgmmPrior::data_driven(data, 2);
  SeededRng ra(9), rb(9);
  VgmmPosterior a = init(data, 2, prior, ra);
  VgmmPosterior b = init(data, 2, prior, rb);
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(a.alpha[c] == b.alpha[c]);
    for (std::size_t p = 0; p < 2; ++p) CHECK(a.m(c, p) == b.m(c, p));
  }
  CHECK_THROWS_AS(init(Tensor({1, 2}), 2, prior, rng), std::invalid_argument);
}

TEST_CASE("e_step: single component gets full responsibility") {
  SeededRng rng(3);
  Tensor data = rng.normal({30, 2});
  VgmmPrior prior = VgmmPrior::data_driven(data, 1);
  VgmmPosterior post = init(data, 1, prior, rng);
  Responsibilities r = e_step(data, post);
  for (std::size_t i = 0; i < 30; ++i) CHECK(r.r(i, 0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("e_step: symmetric components split an equidistant point evenly") {
  // hand-built posterior, exactly mirrored about the origin
  VgmmPosterior post;
  post.alpha = {3.0, 3.0};
  post.beta = {2.0, 2.0};
  post.nu = {4.0, 4.0};
  post.m = Tensor({2, 2}, {-1.5, 0.0, 1.5, 0.0});
  post.w = {Tensor::identity(2), Tensor::identity(2)};

  Tensor probe({1, 2});  // the origin is equidistant from both means
  Responsibilities r = e_step(probe, post);
  CHECK(r.r(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.r(0, 0) + r.r(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("e_step rows sum to one within 1e-12") {
  SeededRng rng(6);
  Tensor data = rng.normal({200, 4});
  VgmmPrior prior = VgmmPrior::data_driven(data, 3);
  SeededRng init_rng(7);
  VgmmPosterior post = init(data, 3, prior, init_rng);
  Responsibilities r = e_step(data, post);
  for (std::size_t i = 0; i < 200; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(r.r(i, c) >= 0.0);
      CHECK(r.r(i, c) <= 1.0);
      s += r.r(i, c);
    }
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("m_step: empty component collapses onto the prior") {
  SeededRng rng(8);
  Tensor data = rng.normal({40, 2});
  VgmmPrior prior = VgmmPrior::data_driven(data, 2);
  Tensor r({40, 2});
  for (std::size_t i = 0; i < 40; ++i) r(i, 0) = 1.0;  // everything on component 0
  VgmmPosterior post = m_step(data, Responsibilities{r}, prior);
  CHECK(post.alpha[1] == doctest::Approx(prior.alpha0).epsilon(1e-12));
  CHECK(post.beta[1] == doctest::Approx(prior.beta0).epsilon(1e-12));
  CHECK(post.nu[1] == doctest::Approx(prior.nu0).epsilon(1e-12));
  for (std::size_t p = 0; p < 2; ++p) CHECK(post.m(1, p) == doctest::Approx(prior.m0[p]));
}

TEST_CASE("m_step: huge synthetic mass drives the mean to the weighted average") {
  SeededRng rng(9);
  Tensor data = rng.normal({100, 2});
  VgmmPrior prior = VgmmPrior::data_driven(data, 1);
  Tensor r({100, 1});
  for (std::size_t i = 0; i < 100; ++i) r(i, 0) = 1e4;  // N_1 = 1e6
  VgmmPosterior post = m_step(data, Responsibilities{r}, prior);
  std::vector<double> mean(2, 0.0);
  for (std::size_t i = 0; i < 100; ++i)
    for (std::size_t p = 0; p < 2; ++p) mean[p] += data(i, p) / 100.0;
  for (std::size_t p = 0; p < 2; ++p)
    CHECK(post.m(0, p) == doctest::Approx(mean[p]).epsilon(1e-6));
}

TEST_CASE("m_step conserves responsibility mass in alpha") {
  SeededRng rng(10);
  const std::size_t n = 120;
  Tensor data = rng.normal({n, 3});
  VgmmPrior prior = VgmmPrior::data_driven(data, 4);
  SeededRng init_rng(11);
  VgmmPosterior post0 = init(data, 4, prior, init_rng);
  Responsibilities r = e_step(data, post0);
  VgmmPosterior post = m_step(data, r, prior);
  double alpha_sum = 0.0;
  for (double a : post.alpha) alpha_sum += a;
  CHECK(alpha_sum == doctest::Approx(4.0 * prior.alpha0 + n).epsilon(1e-10));
  // posterior invariant: sum_k (alpha_k - alpha0) == n
  double mass = 0.0;
  for (double a : post.alpha) mass += a - prior.alpha0;
  CHECK(std::abs(mass - static_cast<double>(n)) <= 1e-8);
}

TEST_CASE("CAVI sweeps never decrease the ELBO") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SeededRng rng(seed);
    const std::size_t n = 60 + rng.next_below(60);
    const std::size_t d = 1 + rng.next_below(4);
    const std::size_t k = 1 + rng.next_below(3);
    Tensor data = rng.normal({n, d});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < d; ++p) data(i, p) += (i % (k + 1)) * 2.0;
    VgmmPrior prior = VgmmPrior::data_driven(data, k);
    SeededRng init_rng(seed + 1000);
    VgmmPosterior post = init(data, k, prior, init_rng);
    double prev = -1e300;
    for (int sweep = 0; sweep < 15; ++sweep) {
      Responsibilities r = e_step(data, post);
      post = m_step(data, r, prior);
      const double value = elbo(data, r, post, prior);
      CHECK(value >= prev - 1e-8);
      prev = value;
    }
  }
}

TEST_CASE("elbo: K=1 is invariant to row permutations") {
  SeededRng rng(12);
  Tensor data = rng.normal({40, 3});
  VgmmPrior prior = VgmmPrior::data_driven(data, 1);
  SeededRng r1(13);
  FitResult res = fit(data, 1, prior, r1);
  const double base = res.post.elbo_trace.back();
  CHECK(std::isfinite(base));

  Tensor shuffled({40, 3});
  std::vector<std::size_t> perm(40);
  for (std::size_t i = 0; i < 40; ++i) perm[i] = (i * 17 + 5) % 40;
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t p = 0; p < 3; ++p) shuffled(i, p) = data(perm[i], p);
  SeededRng r2(13);
  FitResult res2 = fit(shuffled, 1, prior, r2);
  CHECK(res2.post.elbo_trace.back() == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("duplicating the dataset changes the ELBO but not the assignments") {
  SeededRng rng(14);
  std::vector<int> labels;
  Tensor data = two_blob_data(60, 2, 4.0, 0.5, rng, &labels);
  VgmmPrior prior = VgmmPrior::data_driven(data, 2);
  SeededRng r1(15);
  FitResult res = fit(data, 2, prior, r1);
  auto assign = hard_assign(res.resp);

  const std::size_t n = data.dim(0);
  Tensor doubled({2 * n, 2});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < 2; ++p) {
      doubled(i, p) = data(i, p);
      doubled(n + i, p) = data(i, p);
    }
  VgmmPrior prior2 = VgmmPrior::data_driven(doubled, 2);
  SeededRng r2(15);
  FitResult res2 = fit(doubled, 2, prior2, r2);
  auto assign2 = hard_assign(res2.resp);
  CHECK(res2.post.elbo_trace.back() != doctest::Approx(res.post.elbo_trace.back()));
  // same argmax pattern on the original rows, up to component relabeling
  std::vector<int> first_half(assign2.begin(), assign2.begin() + static_cast<long>(n));
  CHECK(testutil::adjusted_rand_index(assign, first_half) == doctest::Approx(1.0));
}

TEST_CASE("fit recovers two well-separated blobs exactly") {
  SeededRng rng(16);
  std::vector<int> labels;
  Tensor centers({2, 10});
  centers(0, 0) = -5.0;
  centers(1, 0) = 5.0;
  auto [data, truth] = testutil::gaussian_blobs(centers, 200, 1.0, rng);
  VgmmPrior prior = VgmmPrior::data_driven(data, 2);
  SeededRng fit_rng(17);
  FitResult res = fit(data, 2, prior, fit_rng);
  CHECK_FALSE(res.used_kmeans_fallback);
  CHECK(testutil::adjusted_rand_index(hard_assign(res.resp), truth) == doctest::Approx(1.0));
}

TEST_CASE("fit with K=1 converges in at most two sweeps") {
  SeededRng rng(18);
  Tensor data = rng.normal({50, 2});
  VgmmPrior prior = VgmmPrior::data_driven(data, 1);
  SeededRng fit_rng(19);
  FitResult res = fit(data, 1, prior, fit_rng);
  CHECK(res.post.elbo_trace.size() <= 2);
  CHECK(res.post.elbo_trace.size() >= 1);
}

TEST_CASE("fit keeps the full ELBO trace and it is non-decreasing") {
  SeededRng rng(30);
  Tensor data = two_blob_data(80, 3, 2.0, 1.2, rng);  // overlapping: needs several sweeps
  VgmmPrior prior = VgmmPrior::data_driven(data, 2);
  SeededRng fit_rng(31);
  FitResult res = fit(data, 2, prior, fit_rng);
  REQUIRE(res.post.elbo_trace.size() >= 2);
  for (std::size_t i = 1; i < res.post.elbo_trace.size(); ++i)
    CHECK(res.post.elbo_trace[i] >= res.post.elbo_trace[i - 1] - 1e-8);
}

TEST_CASE("fit is deterministic for equal seeds") {
  SeededRng rng(20);
  Tensor data = two_blob_data(80, 3, 3.0, 0.8, rng);
  VgmmPrior prior = VgmmPrior::data_driven(data, 2);
  SeededRng ra(21), rb(21);
  FitResult a = fit(data, 2, prior, ra);
  FitResult b = fit(data, 2, prior, rb);
  auto ha = hard_assign(a.resp), hb = hard_assign(b.resp);
  for (std::size_t i = 0; i < ha.size(); ++i) CHECK(ha[i] == hb[i]);
}

TEST_CASE("hard_assign follows the documented tie-break") {
  Responsibilities r{Tensor({3, 2}, {0.2, 0.8, 0.5, 0.5, 0.9, 0.1})};
  auto assign = hard_assign(r);
  REQUIRE(assign.size() == 3);
  CHECK(assign[0] == 1);
  CHECK(assign[1] == 0);  // tie goes to the lowest index
  CHECK(assign[2] == 0);
}

TEST_CASE("hard_assign is invariant to positive row rescaling") {
  SeededRng rng(22);
  Tensor r({50, 4});
  for (std::size_t i = 0; i < 50; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < 4; ++c) {
      r(i, c) = rng.next_uniform() + 1e-6;
      s += r(i, c);
    }
    for (std::size_t c = 0; c < 4; ++c) r(i, c) /= s;
  }
  auto base = hard_assign(Responsibilities{r});
  Tensor scaled = r;
  for (std::size_t i = 0; i < 50; ++i) {
    const double cscale = 0.1 + 5.0 * rng.next_uniform();
    for (std::size_t c = 0; c < 4; ++c) scaled(i, c) *= cscale;
  }
  auto rescaled = hard_assign(Responsibilities{scaled});
  for (std::size_t i = 0; i < 50; ++i) CHECK(base[i] == rescaled[i]);
}

TEST_CASE("recovery on separated synthetic mixtures reaches ARI >= 0.95") {
  SeededRng rng(23);
  Tensor centers({3, 6});
  centers(0, 0) = 0.0;
  centers(1, 0) = 8.0;   // separation = 8 standard deviations (sigma = 1)
  centers(2, 1) = 8.0;
  auto [data, truth] = testutil::gaussian_blobs(centers, 150, 1.0, rng);
  VgmmPrior prior = VgmmPrior::data_driven(data, 3);
  SeededRng fit_rng(24);
  FitResult res = fit(data, 3, prior, fit_rng);
  CHECK(testutil::adjusted_rand_index(hard_assign(res.resp), truth) >= 0.95);
}

TEST_CASE("posterior report lists mass, mean norms and the ELBO trace") {
  SeededRng rng(27);
  Tensor data = two_blob_data(60, 2, 4.0, 0.5, rng);
  VgmmPrior prior = VgmmPrior::data_driven(data, 2);
  SeededRng fit_rng(28);
  FitResult res = fit(data, 2, prior, fit_rng);
  const std::string path =
      (std::filesystem::temp_directory_path() / "vrcv_vgmm_report.txt").string();
  write_posterior_report(path, res.post, prior);
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text.find("components 2") != std::string::npos);
  CHECK(text.find("component 0 mass") != std::string::npos);
  CHECK(text.find("mean_norm") != std::string::npos);
  CHECK(text.find("elbo_trace") != std::string::npos);
  // masses sum to n
  double m0 = 0.0, m1 = 0.0;
  std::sscanf(text.c_str() + text.find("component 0 mass"), "component 0 mass %lf", &m0);
  std::sscanf(text.c_str() + text.find("component 1 mass"), "component 1 mass %lf", &m1);
  CHECK(m0 + m1 == doctest::Approx(120.0).epsilon(1e-8));
  std::filesystem::remove(path);
}

TEST_CASE("kmeans recovers separated blobs and fills empty clusters") {
  SeededRng rng(25);
  Tensor centers({3, 4});
  centers(0, 0) = -6.0;
  centers(1, 0) = 0.0;
  centers(2, 0) = 6.0;
  auto [data, truth] = testutil::gaussian_blobs(centers, 100, 0.7, rng);
  SeededRng km_rng(26);
  KmeansResult km = kmeans(data, 3, km_rng);
  CHECK(testutil::adjusted_rand_index(km.assignment, truth) >= 0.95);
  std::vector<int> counts(3, 0);
  for (int c : km.assignment) ++counts[static_cast<std::size_t>(c)];
  for (int c : counts) CHECK(c > 0);
}
