#include "vrcv/net.hpp"

#include <stdexcept>

namespace vrcv::nn {

Tensor Sequential::forward(const Tensor& x, Mode mode, std::vector<FwdCache>* caches) {
  if (states.size() != specs.size()) throw std::logic_error("Sequential: init() not called");
  if (caches) caches->assign(specs.size(), FwdCache{});
  Tensor cur = x;
  for (std::size_t i = 0; i < specs.size(); ++i)
    cur = nn::forward(specs[i], states[i], cur, mode, caches ? &(*caches)[i] : nullptr);
  return cur;
}

Tensor Sequential::backward(const Tensor& grad_out, const std::vector<FwdCache>& caches,
                            std::vector<Tensor>& param_grads) const {
  if (caches.size() != specs.size())
    throw std::invalid_argument("Sequential::backward: cache count mismatch");
  std::vector<std::vector<Tensor>> per_layer(specs.size());
  Tensor g = grad_out;
  for (std::size_t ii = specs.size(); ii-- > 0;) {
    ParamSet grads;
    g = nn::backward(specs[ii], states[ii], caches[ii], g, specs[ii].has_params() ? &grads : nullptr);
    per_layer[ii] = std::move(grads.values);
  }
  param_grads.clear();
  for (auto& layer_grads : per_layer)
    for (auto& t : layer_grads) param_grads.push_back(std::move(t));
  return g;
}

std::vector<Tensor*> Sequential::params() {
  std::vector<Tensor*> out;
  for (auto& st : states)
    for (auto& t : st.params.values) out.push_back(&t);
  return out;
}

std::vector<const Tensor*> Sequential::params() const {
  std::vector<const Tensor*> out;
  for (const auto& st : states)
    for (const auto& t : st.params.values) out.push_back(&t);
  return out;
}

std::vector<std::string> Sequential::param_names(const std::string& prefix) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < states.size(); ++i)
    for (const auto& n : states[i].params.names)
      out.push_back(prefix + "l" + std::to_string(i) + "." + n);
  return out;
}

std::vector<Tensor*> Sequential::buffers() {
  std::vector<Tensor*> out;
  for (auto& st : states)
    for (auto& t : st.buffers.values) out.push_back(&t);
  return out;
}

std::vector<std::string> Sequential::buffer_names(const std::string& prefix) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < states.size(); ++i)
    for (const auto& n : states[i].buffers.names)
      out.push_back(prefix + "l" + std::to_string(i) + "." + n);
  return out;
}

std::vector<std::size_t> Sequential::output_shape_of(std::vector<std::size_t> shape) const {
  for (const auto& spec : specs) shape = output_shape(spec, shape);
  return shape;
}

}  // namespace vrcv::nn
