#pragma once

#include <span>
#include <string>
#include <vector>

#include "vrcv/layers.hpp"
#include "vrcv/rng.hpp"

namespace vrcv::bayes {

/// Diagonal Gaussian posterior over a layer's weights, one (mu, rho) pair
/// per weight with sigma = softplus(rho).
struct GaussianWeightPosterior {
  Tensor mu;
  Tensor rho;
};

/// Zero-mean Gaussian prior with standard deviation std_dev.
struct PriorSpec {
  double std_dev = 0.1;
};

inline double sigma_from_rho(double rho) {
  return std::max(rho, 0.0) + std::log1p(std::exp(-std::abs(rho)));
}
inline double dsigma_drho(double rho) {
  if (rho >= 0.0) return 1.0 / (1.0 + std::exp(-rho));
  const double e = std::exp(rho);
  return e / (1.0 + e);
}

/// rho value whose softplus equals sigma.
double rho_for_sigma(double sigma);

/// Gaussian-dropout noise scale alpha = p / (1 - p) for dropout rate p.
double dropout_alpha(double p);

struct DenseCache {
  Tensor input;  // [m, I]
  Tensor noise;  // [m, J]
  Tensor std;    // [m, J]: sqrt(sum_i a_mi^2 sigma_ij^2)
};

/// Sampled pre-activations b_mj = sum_i a_mi mu_ij (+ bias_j)
///                              + zeta_mj sqrt(sum_i a_mi^2 sigma_ij^2),
/// one zeta per (instance, output unit).
Tensor local_reparam_dense(const Tensor& a, const GaussianWeightPosterior& post,
                           const double* bias, const Tensor& noise, DenseCache* cache = nullptr);

/// Backward through the sampled pre-activations with the noise held fixed.
Tensor local_reparam_dense_backward(const GaussianWeightPosterior& post, const DenseCache& cache,
                                    const Tensor& grad_out, Tensor& d_mu, Tensor& d_rho,
                                    Tensor* d_bias);

struct ConvCache {
  Tensor input;
  Tensor noise;  // output-shaped
  Tensor std;    // output-shaped
};

/// Conv counterpart: mean path conv(a, mu), variance path conv(a^2, sigma^2).
Tensor local_reparam_conv(const Tensor& a, const GaussianWeightPosterior& post,
                          const double* bias, std::size_t stride, std::size_t pad,
                          const Tensor& noise, ConvCache* cache = nullptr);

Tensor local_reparam_conv_backward(const GaussianWeightPosterior& post, const ConvCache& cache,
                                   std::size_t stride, std::size_t pad, const Tensor& grad_out,
                                   Tensor& d_mu, Tensor& d_rho, Tensor* d_bias);

struct KlEstimate {
  double value = 0.0;   // (1/S) sum_s [log q(w_s) - log p(w_s)]
  double stderr_ = 0.0;  // sample standard error of the estimate
};

struct KlGrads {
  Tensor d_mu;
  Tensor d_rho;
};

/// Monte-Carlo KL(q || p) from S posterior samples; pathwise gradients when
/// grads is non-null. The fixed-noise variant takes eps as [S, #weights].
KlEstimate kl_mc(const GaussianWeightPosterior& post, const PriorSpec& prior, SeededRng& rng,
                 std::size_t samples, KlGrads* grads = nullptr);
KlEstimate kl_mc_with(const GaussianWeightPosterior& post, const PriorSpec& prior,
                      const Tensor& eps, KlGrads* grads = nullptr);

/// One entry per layer of a Bayesian feed-forward net: stochastic dense /
/// conv layers carry a weight posterior and a deterministic bias;
/// activation layers are plain specs.
struct BayesLayer {
  nn::LayerSpec spec;
  GaussianWeightPosterior weight;  // stochastic layers only
  Tensor bias;
};

struct BayesNet {
  std::vector<BayesLayer> layers;
  PriorSpec prior;

  void add(nn::LayerSpec spec) { layers.push_back({spec, {}, {}}); }
  bool stochastic(std::size_t i) const;

  /// mu ~ the frequentist init scheme, sigma0 via rho = rho_for_sigma.
  void init(SeededRng& rng, double sigma0 = 0.05);

  std::vector<Tensor*> params();
  std::vector<std::string> param_names(const std::string& prefix) const;
  std::vector<std::string> param_tags() const;

  std::vector<std::size_t> output_shape_of(std::vector<std::size_t> input_shape) const;
};

/// One noise tensor per stochastic layer, shaped like that layer's output.
struct LayerNoise {
  std::vector<Tensor> per_layer;
};

LayerNoise draw_noise(const BayesNet& net, const std::vector<std::size_t>& input_shape,
                      SeededRng& rng);
LayerNoise zero_noise(const BayesNet& net, const std::vector<std::size_t>& input_shape);

struct BayesCache {
  DenseCache dense;
  ConvCache conv;
  nn::FwdCache plain;
};

Tensor bayes_forward(BayesNet& net, const Tensor& x, const LayerNoise& noise,
                     std::vector<BayesCache>* caches = nullptr);

/// grads aligned with params() order; returns grad wrt the net input.
Tensor bayes_backward(const BayesNet& net, const std::vector<BayesCache>& caches,
                      const Tensor& grad_out, std::vector<Tensor>& grads);

struct FreeEnergyParts {
  double total = 0.0;
  double nll = 0.0;        // E_q[-log p(y|w,x)] estimate over S samples
  double kl = 0.0;         // MC KL(q(w) || p(w))
  double kl_weight = 0.0;  // minibatch scaling (batch_size / dataset_size)
};

/// total = nll + kl_weight * kl; gradients flow through both the local
/// reparameterized activations and the KL term. kl_weight == 0 skips the
/// KL estimate entirely.
FreeEnergyParts free_energy(BayesNet& net, const Tensor& batch, std::span<const int> labels,
                            SeededRng& rng, std::size_t samples, double kl_weight,
                            std::vector<Tensor>* grads = nullptr);

/// Fixed-noise variant for gradient checking: one LayerNoise per forward
/// sample plus per-layer KL noise [S, #weights].
FreeEnergyParts free_energy_with(BayesNet& net, const Tensor& batch, std::span<const int> labels,
                                 const std::vector<LayerNoise>& forward_noise,
                                 const std::vector<Tensor>& kl_eps, double kl_weight,
                                 std::vector<Tensor>* grads = nullptr);

/// Posterior predictive: mean softmax over S stochastic forward passes.
Tensor predictive_mc(BayesNet& net, const Tensor& input, SeededRng& rng, std::size_t samples);

}  // namespace vrcv::bayes
