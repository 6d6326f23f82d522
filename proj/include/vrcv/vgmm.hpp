#pragma once

#include <vector>

#include "vrcv/rng.hpp"
#include "vrcv/tensor.hpp"

namespace vrcv::vgmm {

/// Conjugate prior for the variational mixture: Dirichlet concentration on
/// the mixing weights, Normal-Wishart on each component's mean/precision.
struct VgmmPrior {
  double alpha0 = 1.0;
  std::vector<double> m0;  // hypermean, length d
  double beta0 = 1.0;
  Tensor w0;               // Wishart scale matrix, d x d positive definite
  double nu0 = 0.0;        // degrees of freedom, > d - 1

  /// Defaults: alpha0 = 1/K, beta0 = 1, m0 = data mean,
  /// W0 = (1/d) (cov + 1e-6 I)^-1, nu0 = d + 2.
  static VgmmPrior data_driven(const Tensor& data, std::size_t k);

  void validate(std::size_t d) const;
};

struct VgmmPosterior {
  std::vector<double> alpha, beta, nu;  // per component
  Tensor m;                             // [K, d] component hypermeans
  std::vector<Tensor> w;                // per component Wishart scale, d x d
  std::vector<double> elbo_trace;

  std::size_t components() const { return alpha.size(); }
};

/// r_nk >= 0 with unit row sums.
struct Responsibilities {
  Tensor r;  // [n, K]
};

/// Component means seeded by farthest-point sampling; remaining parameters
/// come from an m_step on the induced one-hot responsibilities.
VgmmPosterior init(const Tensor& data, std::size_t k, const VgmmPrior& prior, SeededRng& rng);

/// r_nk from the conjugate expectations
/// E[ln pi_k] + 0.5 E[ln|Lambda_k|] - d/2 ln 2pi - 0.5 E[(x-mu)^T Lambda (x-mu)],
/// normalized per row through log-sum-exp.
Responsibilities e_step(const Tensor& data, const VgmmPosterior& post);

/// Conjugate updates: alpha_k = alpha0 + N_k, beta_k = beta0 + N_k,
/// m_k = (beta0 m0 + N_k xbar_k)/beta_k, nu_k = nu0 + N_k,
/// W_k^-1 = W0^-1 + N_k S_k + beta0 N_k/(beta0+N_k) (xbar-m0)(xbar-m0)^T.
VgmmPosterior m_step(const Tensor& data, const Responsibilities& resp, const VgmmPrior& prior);

/// Variational lower bound; used for convergence and monotonicity checks.
double elbo(const Tensor& data, const Responsibilities& resp, const VgmmPosterior& post,
            const VgmmPrior& prior);

struct FitOptions {
  int max_iter = 500;
  double tol = 1e-6;  // relative ELBO change
  int restarts = 5;   // reseeds when a component dies
};

struct FitResult {
  VgmmPosterior post;
  Responsibilities resp;
  bool used_kmeans_fallback = false;
  int restarts_used = 0;
};

/// Alternates e_step/m_step to convergence. If any component ends up with a
/// zero hard-assignment count, refits from a new derived seed (up to
/// options.restarts), then falls back to plain k-means assignments.
FitResult fit(const Tensor& data, std::size_t k, const VgmmPrior& prior, SeededRng& rng,
              const FitOptions& options = {});

/// Argmax per row; ties break toward the lowest component index.
std::vector<int> hard_assign(const Responsibilities& resp);

/// Diagnostic text report: per-component responsibility mass (alpha_k -
/// alpha0), hypermean norm, and the ELBO trace.
void write_posterior_report(const std::string& path, const VgmmPosterior& post,
                            const VgmmPrior& prior);

double digamma(double x);

}  // namespace vrcv::vgmm
