#pragma once

#include <span>

#include "vrcv/tensor.hpp"

namespace vrcv::nn {

struct XentResult {
  double loss = 0.0;  // mean negative log-likelihood over the batch
  Tensor grad;        // (softmax - onehot) / m
};

/// Softmax cross-entropy over logits [m,C] with integer labels in [0,C).
XentResult softmax_xent(const Tensor& logits, std::span<const int> labels);

/// Row-wise softmax, numerically stable.
Tensor softmax_rows(const Tensor& logits);

/// Fraction of rows whose argmax matches the label. Ties resolve to the
/// lowest index.
double accuracy(const Tensor& probs_or_logits, std::span<const int> labels);

/// Mean negative log of the probability assigned to the true class.
double nll_from_probs(const Tensor& probs, std::span<const int> labels);

}  // namespace vrcv::nn
