#pragma once

#include <span>
#include <string>
#include <vector>

#include "vrcv/rng.hpp"
#include "vrcv/tensor.hpp"

namespace vrcv::tsne {

struct TsneConfig {
  double perplexity = 30.0;
  int iters = 1000;
  double learning_rate = 200.0;
  double momentum_start = 0.5;
  double momentum_late = 0.8;
  int momentum_switch = 250;      // iterations before the late momentum
  double early_exaggeration = 12.0;
  int exaggeration_until = 250;
  double min_gain = 0.01;
  std::size_t subsample_cap = 3000;
};

/// Pairwise squared Euclidean distances with a zero diagonal.
Tensor squared_distances(const Tensor& points);

struct Calibration {
  Tensor p_conditional;        // [n, n] rows sum to 1, zero diagonal
  std::vector<double> sigma;   // per-point Gaussian bandwidths
};

/// Per-point binary search over the bandwidth until the row perplexity
/// 2^H(p_.|i) is within 1e-3 of the target (H in bits). Throws with the
/// point index when the search cannot get there in 100 iterations.
Calibration calibrate_perplexity(const Tensor& d2, double perplexity);

struct AffinityMatrix {
  Tensor p;  // symmetric, zero diagonal, sums to 1
};

/// P_ij = (p_j|i + p_i|j) / 2n.
AffinityMatrix symmetrize(const Tensor& p_conditional);

struct EmbeddingState {
  Tensor y;      // [n, 2]
  Tensor inc;    // momentum accumulator
  Tensor gains;  // adaptive per-coordinate gains, clamped at min_gain
  int iteration = 0;
  std::vector<double> kl_trace;  // KL(P||Q) after every step
};

/// Y ~ N(0, 1e-4), seeded.
EmbeddingState init_embedding(std::size_t n, SeededRng& rng);

/// One gradient step: 4 sum_j (P_ij - q_ij)(y_i - y_j)(1 + |y_i-y_j|^2)^-1
/// with momentum and gains; early exaggeration scales P for the gradient
/// while the KL trace always uses the unexaggerated P. Returns the gradient
/// infinity norm.
double tsne_step(const AffinityMatrix& p, EmbeddingState& state, const TsneConfig& cfg);

struct TsneResult {
  Tensor y;                          // [n_used, 2]
  std::vector<std::size_t> sampled;  // rows of the input that were embedded
  std::vector<double> kl_trace;
};

/// Full pipeline: seeded subsample, calibration, symmetrization, the whole
/// optimization schedule.
TsneResult run_tsne(const Tensor& latents, const TsneConfig& cfg, SeededRng& rng);

/// CSV with columns x,y,class_label,fold_id for the embedded rows.
void write_tsne_csv(const std::string& path, const TsneResult& result,
                    std::span<const int> class_labels, std::span<const int> fold_ids);

}  // namespace vrcv::tsne
