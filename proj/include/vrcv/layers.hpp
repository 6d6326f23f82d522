#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "vrcv/rng.hpp"
#include "vrcv/tensor.hpp"

namespace vrcv::nn {

enum class LayerKind { Dense, Conv2d, Deconv2d, BatchNorm, Relu, LeakyRelu, Softplus, Sigmoid };
enum class Mode { Train, Eval };

const char* kind_name(LayerKind kind);

/// Declarative layer description. Output shape is a pure function of the
/// input shape and these hyperparameters (see output_shape).
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;

  std::size_t in_features = 0, out_features = 0;   // dense
  std::size_t in_channels = 0, out_channels = 0;   // conv2d / deconv2d
  std::size_t kernel = 0, stride = 1, pad = 0;
  std::size_t features = 0;                        // batchnorm width
  double slope = 0.2;                              // leaky relu

  static LayerSpec dense(std::size_t in, std::size_t out);
  static LayerSpec conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                          std::size_t stride, std::size_t pad);
  static LayerSpec deconv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                            std::size_t stride, std::size_t pad);
  static LayerSpec batchnorm(std::size_t features);
  static LayerSpec relu();
  static LayerSpec leaky_relu(double slope = 0.2);
  static LayerSpec softplus();
  static LayerSpec sigmoid();

  bool has_params() const;
};

std::vector<std::size_t> output_shape(const LayerSpec& spec,
                                      const std::vector<std::size_t>& input_shape);

/// Ordered, uniquely named parameter collection.
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor> values;

  void add(std::string name, Tensor value);
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;
  bool has(std::string_view name) const;
  std::size_t size() const { return values.size(); }
};

/// Trainable parameters plus non-trainable buffers (batchnorm running stats).
struct LayerState {
  ParamSet params;
  ParamSet buffers;
};

/// Weights ~ U(-sqrt(3/fan_in), +sqrt(3/fan_in)), biases zero, batchnorm
/// scale 1 / shift 0 with running stats (0, 1).
LayerState init_layer(const LayerSpec& spec, SeededRng& rng);

/// Values forward stashes for the matching backward call.
struct FwdCache {
  Tensor input;
  std::vector<std::size_t> pre_flatten_shape;  // dense fed a rank>2 input
  Tensor x_hat;                                // batchnorm normalized input
  std::vector<double> batch_mean, batch_var;
  Tensor output;                               // sigmoid / softplus
  Mode mode = Mode::Eval;
};

/// Runs one layer. Train-mode batchnorm updates the running statistics in
/// `state`; everything else leaves it untouched.
Tensor forward(const LayerSpec& spec, LayerState& state, const Tensor& input, Mode mode,
               FwdCache* cache = nullptr);

/// Gradients of the downstream scalar loss. Returns grad wrt the layer
/// input; fills `param_grads` (same names/order as state.params) when the
/// layer has parameters.
Tensor backward(const LayerSpec& spec, const LayerState& state, const FwdCache& cache,
                const Tensor& grad_out, ParamSet* param_grads);

// conv kernels shared with the Bayesian variance path
Tensor conv2d_raw(const Tensor& input, const Tensor& weight, const double* bias,
                  std::size_t stride, std::size_t pad);
Tensor deconv2d_raw(const Tensor& input, const Tensor& weight, const double* bias,
                    std::size_t stride, std::size_t pad);
Tensor dense_raw(const Tensor& input2d, const Tensor& weight, const double* bias);

}  // namespace vrcv::nn
