#pragma once

#include <vector>

#include "vrcv/rng.hpp"
#include "vrcv/tensor.hpp"

namespace vrcv {

struct KmeansResult {
  Tensor centers;               // [k, d]
  std::vector<int> assignment;  // per row, in [0, k)
  double inertia = 0.0;
};

/// Lloyd iterations from a farthest-point seeding (first center is a seeded
/// draw, the rest maximize the minimum distance to the chosen set). Empty
/// clusters are refilled with the point farthest from its current center,
/// so every cluster ends non-empty.
KmeansResult kmeans(const Tensor& data, std::size_t k, SeededRng& rng, int max_iter = 100);

/// Farthest-point center selection only; returns row indices.
std::vector<std::size_t> farthest_point_seed(const Tensor& data, std::size_t k, SeededRng& rng);

}  // namespace vrcv
