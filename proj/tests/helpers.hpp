#pragma once

// Test-only oracles shared across the suites. These stay independent of the
// implementation paths they check.

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "vrcv/rng.hpp"
#include "vrcv/tensor.hpp"

namespace testutil {

/// Adjusted Rand index between two labelings; 1 = identical up to relabel.
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  const std::size_t n = a.size();
  std::map<std::pair<int, int>, double> cont;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < n; ++i) {
    cont[{a[i], b[i]}] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  auto comb2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double sum_ij = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (auto& [k, v] : cont) sum_ij += comb2(v);
  for (auto& [k, v] : ra) sum_a += comb2(v);
  for (auto& [k, v] : rb) sum_b += comb2(v);
  const double total = comb2(static_cast<double>(n));
  const double expected = sum_a * sum_b / total;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (sum_ij - expected) / (max_index - expected);
}

/// Mean silhouette score (Euclidean) of points under the given labels.
inline double silhouette(const vrcv::Tensor& points, const std::vector<int>& labels) {
  const std::size_t n = points.dim(0), d = points.dim(1);
  auto dist = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t p = 0; p < d; ++p) {
      const double diff = points(i, p) - points(j, p);
      s += diff * diff;
    }
    return std::sqrt(s);
  };
  int k = 0;
  for (int l : labels) k = std::max(k, l + 1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> mean_d(static_cast<std::size_t>(k), 0.0);
    std::vector<std::size_t> count(static_cast<std::size_t>(k), 0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      mean_d[static_cast<std::size_t>(labels[j])] += dist(i, j);
      ++count[static_cast<std::size_t>(labels[j])];
    }
    const std::size_t own = static_cast<std::size_t>(labels[i]);
    const double a = count[own] ? mean_d[own] / static_cast<double>(count[own]) : 0.0;
    double b = 1e300;
    for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
      if (c == own || count[c] == 0) continue;
      b = std::min(b, mean_d[c] / static_cast<double>(count[c]));
    }
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

/// Isotropic Gaussian blobs: `centers` rows are blob means; sigma the
/// standard deviation. Returns the points and the generating labels.
inline std::pair<vrcv::Tensor, std::vector<int>> gaussian_blobs(const vrcv::Tensor& centers,
                                                                std::size_t per_blob,
                                                                double sigma,
                                                                vrcv::SeededRng& rng) {
  const std::size_t k = centers.dim(0), d = centers.dim(1);
  vrcv::Tensor pts({k * per_blob, d});
  std::vector<int> labels(k * per_blob);
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t i = 0; i < per_blob; ++i) {
      const std::size_t row = c * per_blob + i;
      labels[row] = static_cast<int>(c);
      for (std::size_t p = 0; p < d; ++p)
        pts(row, p) = centers(c, p) + sigma * rng.next_normal();
    }
  return {std::move(pts), std::move(labels)};
}

}  // namespace testutil
