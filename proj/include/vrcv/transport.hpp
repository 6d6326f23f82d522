#pragma once

#include <span>
#include <vector>

#include "vrcv/rng.hpp"
#include "vrcv/tensor.hpp"

namespace vrcv::ot {

/// Weighted point cloud. Weights are nonnegative and sum to 1.
struct EmpiricalDistribution {
  Tensor points;                // [n, d]
  std::vector<double> weights;  // length n

  static EmpiricalDistribution uniform(Tensor pts);
};

/// Pairwise Euclidean distances.
struct CostMatrix {
  Tensor c;  // [n, m]
};

/// Coupling with the prescribed marginals plus its transport cost; the
/// duals certify optimality (u_i + v_j <= c_ij everywhere).
struct TransportPlan {
  Tensor gamma;  // [n, m]
  double cost = 0.0;
  std::vector<double> u, v;
};

CostMatrix cost_matrix(const EmpiricalDistribution& p, const EmpiricalDistribution& q);

/// Exact optimal transport via the transportation (network) simplex:
/// min <gamma, C> subject to row sums a and column sums b.
TransportPlan exact_emd(const Tensor& cost, std::vector<double> a, std::vector<double> b);

/// Order-1 Wasserstein distance: exact_emd objective on the Euclidean cost.
double wasserstein(const EmpiricalDistribution& p, const EmpiricalDistribution& q);

/// Symmetric [K,K] matrix of Wasserstein distances between the latent point
/// clouds of the folds; folds larger than `subsample` points are reduced by
/// a seeded draw before solving.
Tensor pairwise_fold_distances(const Tensor& latents, std::span<const int> fold_ids,
                               std::size_t k, std::size_t subsample, SeededRng& rng);

/// K rows by K comma-separated values, 9 significant digits, no header.
void write_distance_csv(const std::string& path, const Tensor& matrix);
Tensor read_distance_csv(const std::string& path);

}  // namespace vrcv::ot
