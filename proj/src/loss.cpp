#include "vrcv/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vrcv::nn {

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax: logits must be [m,C]");
  const std::size_t m = logits.dim(0), c = logits.dim(1);
  Tensor probs({m, c});
  for (std::size_t i = 0; i < m; ++i) {
    double mx = logits(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs(i, j) = std::exp(logits(i, j) - mx);
      z += probs(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) probs(i, j) /= z;
  }
  return probs;
}

XentResult softmax_xent(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax_xent: logits must be [m,C]");
  const std::size_t m = logits.dim(0), c = logits.dim(1);
  if (labels.size() != m) throw std::invalid_argument("softmax_xent: label count mismatch");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw std::invalid_argument("softmax_xent: label " + std::to_string(y) + " out of range [0," +
                                  std::to_string(c) + ")");

  XentResult res;
  res.grad = Tensor({m, c});
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double mx = logits(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(logits(i, j) - mx);
    const double logz = std::log(z) + mx;
    loss += logz - logits(i, static_cast<std::size_t>(labels[i]));
    for (std::size_t j = 0; j < c; ++j) {
      const double p = std::exp(logits(i, j) - logz);
      res.grad(i, j) = (p - (static_cast<std::size_t>(labels[i]) == j ? 1.0 : 0.0)) /
                       static_cast<double>(m);
    }
  }
  res.loss = loss / static_cast<double>(m);
  return res;
}

double accuracy(const Tensor& probs_or_logits, std::span<const int> labels) {
  const std::size_t m = probs_or_logits.dim(0), c = probs_or_logits.dim(1);
  if (labels.size() != m) throw std::invalid_argument("accuracy: label count mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (probs_or_logits(i, j) > probs_or_logits(i, best)) best = j;
    if (best == static_cast<std::size_t>(labels[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(m);
}

double nll_from_probs(const Tensor& probs, std::span<const int> labels) {
  const std::size_t m = probs.dim(0);
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    s += -std::log(std::max(probs(i, static_cast<std::size_t>(labels[i])), 1e-300));
  return s / static_cast<double>(m);
}

}  // namespace vrcv::nn
