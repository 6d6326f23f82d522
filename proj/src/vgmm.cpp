#include "vrcv/vgmm.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "vrcv/kmeans.hpp"
#include "vrcv/linalg.hpp"

namespace vrcv::vgmm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2*pi)
constexpr double kLogPi = 1.1447298858494001741;   // ln(pi)

struct SuffStats {
  std::vector<double> n;     // N_k
  Tensor xbar;               // [K, d]
  std::vector<Tensor> s;     // per component scatter, d x d
};

SuffStats suff_stats(const Tensor& data, const Tensor& r) {
  const std::size_t n = data.dim(0), d = data.dim(1), k = r.dim(1);
  SuffStats st;
  st.n.assign(k, 0.0);
  st.xbar = Tensor({k, d});
  st.s.assign(k, Tensor({d, d}));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) {
      st.n[c] += r(i, c);
      for (std::size_t p = 0; p < d; ++p) st.xbar(c, p) += r(i, c) * data(i, p);
    }
  for (std::size_t c = 0; c < k; ++c)
    if (st.n[c] > 0.0)
      for (std::size_t p = 0; p < d; ++p) st.xbar(c, p) /= st.n[c];
    else
      for (std::size_t p = 0; p < d; ++p) st.xbar(c, p) = 0.0;
  std::vector<double> diff(d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) {
      const double w = r(i, c);
      if (w == 0.0) continue;
      for (std::size_t p = 0; p < d; ++p) diff[p] = data(i, p) - st.xbar(c, p);
      for (std::size_t p = 0; p < d; ++p)
        for (std::size_t q = p; q < d; ++q) st.s[c](p, q) += w * diff[p] * diff[q];
    }
  for (std::size_t c = 0; c < k; ++c) {
    if (st.n[c] > 0.0)
      for (std::size_t p = 0; p < d; ++p)
        for (std::size_t q = p; q < d; ++q) st.s[c](p, q) /= st.n[c];
    for (std::size_t p = 0; p < d; ++p)
      for (std::size_t q = p + 1; q < d; ++q) st.s[c](q, p) = st.s[c](p, q);
  }
  return st;
}

/// E[ln |Lambda_k|] = sum_i psi((nu+1-i)/2) + d ln2 + ln|W|
double expected_log_det_lambda(const Tensor& w, double nu) {
  const std::size_t d = w.dim(0);
  double s = cholesky_logdet(cholesky(w)) + static_cast<double>(d) * std::log(2.0);
  for (std::size_t i = 1; i <= d; ++i) s += digamma(0.5 * (nu + 1.0 - static_cast<double>(i)));
  return s;
}

/// ln B(W, nu), the Wishart log normalizer
double log_wishart_b(const Tensor& w, double nu) {
  const std::size_t d = w.dim(0);
  double s = -0.5 * nu * cholesky_logdet(cholesky(w)) -
             0.5 * nu * static_cast<double>(d) * std::log(2.0) -
             0.25 * static_cast<double>(d * (d - 1)) * kLogPi;
  for (std::size_t i = 1; i <= d; ++i) s -= std::lgamma(0.5 * (nu + 1.0 - static_cast<double>(i)));
  return s;
}

double quad_form(const Tensor& w, std::span<const double> v) {
  const std::size_t d = w.dim(0);
  double s = 0.0;
  for (std::size_t p = 0; p < d; ++p) {
    double row = 0.0;
    for (std::size_t q = 0; q < d; ++q) row += w(p, q) * v[q];
    s += v[p] * row;
  }
  return s;
}

double trace_prod(const Tensor& a, const Tensor& b) {
  const std::size_t d = a.dim(0);
  double s = 0.0;
  for (std::size_t p = 0; p < d; ++p)
    for (std::size_t q = 0; q < d; ++q) s += a(p, q) * b(q, p);
  return s;
}

}  // namespace

double digamma(double x) {
  if (!(x > 0.0)) throw std::invalid_argument("digamma: needs positive argument");
  double result = 0.0;
  while (x < 12.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  // Bernoulli asymptotic series through x^-12; truncation < 1e-17 for x >= 12
  const double inv = 1.0 / x, inv2 = inv * inv;
  result += std::log(x) - 0.5 * inv -
            inv2 * (1.0 / 12.0 -
                    inv2 * (1.0 / 120.0 -
                            inv2 * (1.0 / 252.0 -
                                    inv2 * (1.0 / 240.0 -
                                            inv2 * (1.0 / 132.0 - inv2 * 691.0 / 32760.0)))));
  return result;
}

VgmmPrior VgmmPrior::data_driven(const Tensor& data, std::size_t k) {
  const std::size_t n = data.dim(0), d = data.dim(1);
  VgmmPrior prior;
  prior.alpha0 = 1.0 / static_cast<double>(k);
  prior.beta0 = 1.0;
  prior.nu0 = static_cast<double>(d) + 2.0;
  prior.m0.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < d; ++p) prior.m0[p] += data(i, p);
  for (double& v : prior.m0) v /= static_cast<double>(n);

  Tensor cov({d, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < d; ++p)
      for (std::size_t q = p; q < d; ++q)
        cov(p, q) += (data(i, p) - prior.m0[p]) * (data(i, q) - prior.m0[q]);
  const double inv_n = 1.0 / static_cast<double>(n > 1 ? n - 1 : 1);
  for (std::size_t p = 0; p < d; ++p)
    for (std::size_t q = p; q < d; ++q) {
      cov(p, q) = cov(p, q) * inv_n + (p == q ? 1e-6 : 0.0);
      cov(q, p) = cov(p, q);
    }
  Tensor cov_inv = cholesky_inverse(cholesky(cov));
  for (double& v : cov_inv.data()) v /= static_cast<double>(d);
  prior.w0 = std::move(cov_inv);
  return prior;
}

void VgmmPrior::validate(std::size_t d) const {
  if (!(alpha0 > 0.0) || !(beta0 > 0.0))
    throw std::invalid_argument("VgmmPrior: alpha0 and beta0 must be positive");
  if (m0.size() != d) throw std::invalid_argument("VgmmPrior: hypermean dimension mismatch");
  if (w0.rank() != 2 || w0.dim(0) != d || w0.dim(1) != d)
    throw std::invalid_argument("VgmmPrior: W0 extent mismatch");
  if (!(nu0 > static_cast<double>(d) - 1.0))
    throw std::invalid_argument("VgmmPrior: nu0 must exceed d-1");
  cholesky(w0);  // throws when not positive definite
}

VgmmPosterior init(const Tensor& data, std::size_t k, const VgmmPrior& prior, SeededRng& rng) {
  const std::size_t n = data.dim(0);
  if (n < k) throw std::invalid_argument("vgmm::init: fewer points than components");
  prior.validate(data.dim(1));

  auto seeds = farthest_point_seed(data, k, rng);
  Tensor r({n, k});
  const std::size_t d = data.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      double dist = 0.0;
      for (std::size_t p = 0; p < d; ++p) {
        const double diff = data(i, p) - data(seeds[c], p);
        dist += diff * diff;
      }
      if (dist < best_d) {
        best_d = dist;
        best = c;
      }
    }
    r(i, best) = 1.0;
  }
  return m_step(data, Responsibilities{std::move(r)}, prior);
}

Responsibilities e_step(const Tensor& data, const VgmmPosterior& post) {
  const std::size_t n = data.dim(0), d = data.dim(1), k = post.components();
  if (!data.all_finite()) throw std::invalid_argument("vgmm::e_step: non-finite data");

  double alpha_hat = 0.0;
  for (double a : post.alpha) alpha_hat += a;
  const double psi_alpha_hat = digamma(alpha_hat);

  std::vector<double> log_pi(k), log_lambda(k);
  for (std::size_t c = 0; c < k; ++c) {
    log_pi[c] = digamma(post.alpha[c]) - psi_alpha_hat;
    log_lambda[c] = expected_log_det_lambda(post.w[c], post.nu[c]);
  }

  Responsibilities resp{Tensor({n, k})};
  std::vector<double> diff(d), logr(k);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t p = 0; p < d; ++p) diff[p] = data(i, p) - post.m(c, p);
      const double quad = static_cast<double>(d) / post.beta[c] +
                          post.nu[c] * quad_form(post.w[c], diff);
      logr[c] = log_pi[c] + 0.5 * log_lambda[c] - 0.5 * static_cast<double>(d) * kLog2Pi -
                0.5 * quad;
      mx = std::max(mx, logr[c]);
    }
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      resp.r(i, c) = std::exp(logr[c] - mx);
      z += resp.r(i, c);
    }
    for (std::size_t c = 0; c < k; ++c) resp.r(i, c) /= z;
  }
  return resp;
}

VgmmPosterior m_step(const Tensor& data, const Responsibilities& resp, const VgmmPrior& prior) {
  const std::size_t d = data.dim(1), k = resp.r.dim(1);
  prior.validate(d);
  const SuffStats st = suff_stats(data, resp.r);
  const Tensor w0_inv = cholesky_inverse(cholesky(prior.w0));

  VgmmPosterior post;
  post.alpha.resize(k);
  post.beta.resize(k);
  post.nu.resize(k);
  post.m = Tensor({k, d});
  post.w.resize(k);

  for (std::size_t c = 0; c < k; ++c) {
    const double nk = st.n[c];
    post.alpha[c] = prior.alpha0 + nk;
    post.beta[c] = prior.beta0 + nk;
    post.nu[c] = prior.nu0 + nk;
    for (std::size_t p = 0; p < d; ++p)
      post.m(c, p) = (prior.beta0 * prior.m0[p] + nk * st.xbar(c, p)) / post.beta[c];

    Tensor w_inv = w0_inv;
    const double shrink = prior.beta0 * nk / (prior.beta0 + nk);
    for (std::size_t p = 0; p < d; ++p)
      for (std::size_t q = 0; q < d; ++q) {
        w_inv(p, q) += nk * st.s[c](p, q);
        w_inv(p, q) += shrink * (st.xbar(c, p) - prior.m0[p]) * (st.xbar(c, q) - prior.m0[q]);
      }
    Tensor chol;
    try {
      chol = cholesky(w_inv);
    } catch (const std::runtime_error&) {
      throw std::runtime_error(
          "vgmm::m_step: W_k^-1 not positive definite (upstream NaN or degenerate update)");
    }
    post.w[c] = cholesky_inverse(chol);
  }
  return post;
}

double elbo(const Tensor& data, const Responsibilities& resp, const VgmmPosterior& post,
            const VgmmPrior& prior) {
  const std::size_t n = data.dim(0), d = data.dim(1), k = post.components();
  const SuffStats st = suff_stats(data, resp.r);
  const Tensor w0_inv = cholesky_inverse(cholesky(prior.w0));

  double alpha_hat = 0.0;
  for (double a : post.alpha) alpha_hat += a;
  const double psi_alpha_hat = digamma(alpha_hat);
  std::vector<double> log_pi(k), log_lambda(k);
  for (std::size_t c = 0; c < k; ++c) {
    log_pi[c] = digamma(post.alpha[c]) - psi_alpha_hat;
    log_lambda[c] = expected_log_det_lambda(post.w[c], post.nu[c]);
  }

  std::vector<double> diff(d);
  double t1 = 0.0;  // E[ln p(X|Z, mu, Lambda)]
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t p = 0; p < d; ++p) diff[p] = st.xbar(c, p) - post.m(c, p);
    t1 += 0.5 * st.n[c] *
          (log_lambda[c] - static_cast<double>(d) / post.beta[c] -
           post.nu[c] * trace_prod(st.s[c], post.w[c]) -
           post.nu[c] * quad_form(post.w[c], diff) - static_cast<double>(d) * kLog2Pi);
  }

  double t2 = 0.0;  // E[ln p(Z|pi)]
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) t2 += resp.r(i, c) * log_pi[c];

  // E[ln p(pi)]
  double t3 = std::lgamma(static_cast<double>(k) * prior.alpha0) -
              static_cast<double>(k) * std::lgamma(prior.alpha0);
  for (std::size_t c = 0; c < k; ++c) t3 += (prior.alpha0 - 1.0) * log_pi[c];

  double t4 = static_cast<double>(k) * log_wishart_b(prior.w0, prior.nu0);  // E[ln p(mu, Lambda)]
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t p = 0; p < d; ++p) diff[p] = post.m(c, p) - prior.m0[p];
    t4 += 0.5 * (static_cast<double>(d) * std::log(prior.beta0 / (2.0 * 3.14159265358979323846)) +
                 log_lambda[c] - static_cast<double>(d) * prior.beta0 / post.beta[c] -
                 prior.beta0 * post.nu[c] * quad_form(post.w[c], diff));
    t4 += 0.5 * (prior.nu0 - static_cast<double>(d) - 1.0) * log_lambda[c] -
          0.5 * post.nu[c] * trace_prod(w0_inv, post.w[c]);
  }

  double t5 = 0.0;  // E[ln q(Z)]
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c)
      if (resp.r(i, c) > 0.0) t5 += resp.r(i, c) * std::log(resp.r(i, c));

  // E[ln q(pi)]
  double t6 = std::lgamma(alpha_hat);
  for (std::size_t c = 0; c < k; ++c) {
    t6 -= std::lgamma(post.alpha[c]);
    t6 += (post.alpha[c] - 1.0) * log_pi[c];
  }

  double t7 = 0.0;  // E[ln q(mu, Lambda)]
  for (std::size_t c = 0; c < k; ++c) {
    const double entropy = -log_wishart_b(post.w[c], post.nu[c]) -
                           0.5 * (post.nu[c] - static_cast<double>(d) - 1.0) * log_lambda[c] +
                           0.5 * post.nu[c] * static_cast<double>(d);
    t7 += 0.5 * log_lambda[c] +
          0.5 * static_cast<double>(d) *
              std::log(post.beta[c] / (2.0 * 3.14159265358979323846)) -
          0.5 * static_cast<double>(d) - entropy;
  }

  const double value = t1 + t2 + t3 + t4 - t5 - t6 - t7;
  if (!std::isfinite(value)) throw std::runtime_error("vgmm::elbo: non-finite value");
  return value;
}

void write_posterior_report(const std::string& path, const VgmmPosterior& post,
                            const VgmmPrior& prior) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_posterior_report: cannot open " + path);
  const std::size_t d = post.m.dim(1);
  out << "components " << post.components() << "\n";
  for (std::size_t c = 0; c < post.components(); ++c) {
    double norm = 0.0;
    for (std::size_t p = 0; p < d; ++p) norm += post.m(c, p) * post.m(c, p);
    char line[160];
    std::snprintf(line, sizeof(line), "component %zu mass %.9g mean_norm %.9g nu %.9g beta %.9g",
                  c, post.alpha[c] - prior.alpha0, std::sqrt(norm), post.nu[c], post.beta[c]);
    out << line << "\n";
  }
  out << "elbo_trace";
  for (double v : post.elbo_trace) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), " %.9g", v);
    out << buf;
  }
  out << "\n";
  if (!out.good()) throw std::runtime_error("write_posterior_report: write failed for " + path);
}

std::vector<int> hard_assign(const Responsibilities& resp) {
  const std::size_t n = resp.r.dim(0), k = resp.r.dim(1);
  std::vector<int> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (resp.r(i, c) > resp.r(i, best)) best = c;
    out[i] = static_cast<int>(best);
  }
  return out;
}

namespace {

FitResult fit_once(const Tensor& data, std::size_t k, const VgmmPrior& prior, SeededRng rng,
                   const FitOptions& options) {
  FitResult res;
  res.post = init(data, k, prior, rng);
  std::vector<double> trace;
  double prev = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < options.max_iter; ++iter) {
    res.resp = e_step(data, res.post);
    res.post = m_step(data, res.resp, prior);  // fresh posterior: trace kept separately
    const double value = elbo(data, res.resp, res.post, prior);
    trace.push_back(value);
    if (std::abs(value - prev) < options.tol * std::max(1.0, std::abs(value))) break;
    prev = value;
  }
  res.post.elbo_trace = std::move(trace);
  return res;
}

}  // namespace

FitResult fit(const Tensor& data, std::size_t k, const VgmmPrior& prior, SeededRng& rng,
              const FitOptions& options) {
  const std::size_t n = data.dim(0);
  if (n < k) throw std::invalid_argument("vgmm::fit: fewer points than components");

  for (int attempt = 0; attempt <= options.restarts; ++attempt) {
    FitResult res = fit_once(data, k, prior, rng.derive("vgmm.fit", attempt), options);
    res.restarts_used = attempt;
    std::vector<std::size_t> counts(k, 0);
    for (int c : hard_assign(res.resp)) ++counts[static_cast<std::size_t>(c)];
    bool dead = false;
    for (std::size_t c = 0; c < k; ++c) dead = dead || counts[c] == 0;
    if (!dead) return res;
  }

  // component death persisted: plain k-means assignments for this slice
  SeededRng km_rng = rng.derive("vgmm.kmeans_fallback");
  KmeansResult km = kmeans(data, k, km_rng);
  Tensor r({n, k});
  for (std::size_t i = 0; i < n; ++i) r(i, static_cast<std::size_t>(km.assignment[i])) = 1.0;
  FitResult res;
  res.resp = Responsibilities{std::move(r)};
  res.post = m_step(data, res.resp, prior);
  res.post.elbo_trace.push_back(elbo(data, res.resp, res.post, prior));
  res.used_kmeans_fallback = true;
  res.restarts_used = options.restarts;
  return res;
}

}  // namespace vrcv::vgmm
