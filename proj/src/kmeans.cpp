#include "vrcv/kmeans.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace vrcv {

namespace {

double sq_dist(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  const std::size_t d = a.dim(1);
  double s = 0.0;
  for (std::size_t p = 0; p < d; ++p) {
    const double diff = a(i, p) - b(j, p);
    s += diff * diff;
  }
  return s;
}

}  // namespace

std::vector<std::size_t> farthest_point_seed(const Tensor& data, std::size_t k, SeededRng& rng) {
  const std::size_t n = data.dim(0);
  if (n < k) throw std::invalid_argument("kmeans: fewer points than clusters");
  std::vector<std::size_t> centers;
  centers.push_back(static_cast<std::size_t>(rng.next_below(n)));
  std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
  while (centers.size() < k) {
    const std::size_t last = centers.back();
    for (std::size_t i = 0; i < n; ++i)
      min_d[i] = std::min(min_d[i], sq_dist(data, i, data, last));
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (min_d[i] > min_d[best]) best = i;
    centers.push_back(best);
  }
  return centers;
}

KmeansResult kmeans(const Tensor& data, std::size_t k, SeededRng& rng, int max_iter) {
  const std::size_t n = data.dim(0), d = data.dim(1);
  auto seeds = farthest_point_seed(data, k, rng);
  Tensor centers({k, d});
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t p = 0; p < d; ++p) centers(c, p) = data(seeds[c], p);

  std::vector<int> assign(n, 0);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = sq_dist(data, i, centers, 0);
      for (std::size_t c = 1; c < k; ++c) {
        const double dist = sq_dist(data, i, centers, c);
        if (dist < best_d) {
          best_d = dist;
          best = c;
        }
      }
      if (assign[i] != static_cast<int>(best)) {
        assign[i] = static_cast<int>(best);
        changed = true;
      }
    }

    std::vector<std::size_t> counts(k, 0);
    Tensor sums({k, d});
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[static_cast<std::size_t>(assign[i])];
      for (std::size_t p = 0; p < d; ++p) sums(static_cast<std::size_t>(assign[i]), p) += data(i, p);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // refill from the point farthest from its assigned center
        std::size_t worst = 0;
        double worst_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double dist = sq_dist(data, i, centers, static_cast<std::size_t>(assign[i]));
          if (dist > worst_d) {
            worst_d = dist;
            worst = i;
          }
        }
        assign[worst] = static_cast<int>(c);
        for (std::size_t p = 0; p < d; ++p) centers(c, p) = data(worst, p);
        changed = true;
        continue;
      }
      for (std::size_t p = 0; p < d; ++p)
        centers(c, p) = sums(c, p) / static_cast<double>(counts[c]);
    }
    if (!changed) break;
  }

  KmeansResult res;
  res.centers = std::move(centers);
  res.assignment = std::move(assign);
  for (std::size_t i = 0; i < n; ++i)
    res.inertia += sq_dist(data, i, res.centers, static_cast<std::size_t>(res.assignment[i]));
  return res;
}

}  // namespace vrcv
