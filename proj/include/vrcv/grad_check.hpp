#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>

#include "vrcv/tensor.hpp"

namespace vrcv {

/// Central-difference gradient of a scalar function, the oracle every
/// backward pass is tested against. Component-wise
/// (f(x + h e_i) - f(x - h e_i)) / (2h).
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double h = 1e-5) {
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("finite_diff_grad: non-finite function value at component " +
                               std::to_string(i));
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

/// max_i |a_i - b_i| / max(1, max_i |b_i|): the relative error measure used
/// by the gradient checks.
inline double max_rel_err(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("max_rel_err: shape mismatch");
  double denom = 1.0, num = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) denom = std::max(denom, std::abs(b[i]));
  for (std::size_t i = 0; i < a.size(); ++i) num = std::max(num, std::abs(a[i] - b[i]));
  return num / denom;
}

}  // namespace vrcv
