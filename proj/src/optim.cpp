#include "vrcv/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace vrcv::nn {

void Adam::step(std::span<Tensor* const> params, std::span<const Tensor> grads,
                std::span<const std::string> names) {
  if (params.size() != grads.size() || params.size() != names.size())
    throw std::invalid_argument("adam_step: params/grads/names length mismatch");
  if (m_.empty()) {
    for (const Tensor* p : params) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
  }
  if (m_.size() != params.size()) throw std::invalid_argument("adam_step: parameter set changed");

  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k]->same_shape(grads[k]))
      throw std::invalid_argument("adam_step: gradient shape mismatch for '" + names[k] + "'");
    if (!grads[k].all_finite())
      throw std::runtime_error("adam_step: non-finite gradient for parameter '" + names[k] + "'");
  }

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = grads[k];
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

}  // namespace vrcv::nn
