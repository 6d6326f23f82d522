#pragma once

#include <string>
#include <vector>

#include "vrcv/layers.hpp"

namespace vrcv::nn {

/// Plain layer stack. Dense layers flatten rank-4 inputs themselves, so a
/// conv trunk can feed straight into a fully connected head.
struct Sequential {
  std::vector<LayerSpec> specs;
  std::vector<LayerState> states;

  void add(LayerSpec spec) { specs.push_back(spec); }

  void init(SeededRng& rng) {
    states.clear();
    for (const auto& spec : specs) states.push_back(init_layer(spec, rng));
  }

  Tensor forward(const Tensor& x, Mode mode, std::vector<FwdCache>* caches = nullptr);

  /// Returns grad wrt the stack input; `param_grads` gets one entry per
  /// trainable parameter in params() order.
  Tensor backward(const Tensor& grad_out, const std::vector<FwdCache>& caches,
                  std::vector<Tensor>& param_grads) const;

  std::vector<Tensor*> params();
  std::vector<const Tensor*> params() const;
  std::vector<std::string> param_names(const std::string& prefix) const;
  std::vector<Tensor*> buffers();
  std::vector<std::string> buffer_names(const std::string& prefix) const;

  std::vector<std::size_t> output_shape_of(std::vector<std::size_t> input_shape) const;
};

}  // namespace vrcv::nn
