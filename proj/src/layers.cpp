#include "vrcv/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vrcv::nn {

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.9;

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                            std::size_t pad) {
  const std::size_t padded = in + 2 * pad;
  if (padded < kernel) throw std::invalid_argument("conv2d: kernel larger than padded input");
  return (padded - kernel) / stride + 1;
}

std::size_t deconv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                              std::size_t pad) {
  const std::size_t grown = (in - 1) * stride + kernel;
  if (grown < 2 * pad) throw std::invalid_argument("deconv2d: padding exceeds output extent");
  return grown - 2 * pad;
}

Tensor flatten_rows(const Tensor& input) {
  std::size_t rest = 1;
  for (std::size_t i = 1; i < input.rank(); ++i) rest *= input.dim(i);
  return input.reshaped({input.dim(0), rest});
}

}  // namespace

const char* kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Deconv2d: return "deconv2d";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::Relu: return "relu";
    case LayerKind::LeakyRelu: return "leaky_relu";
    case LayerKind::Softplus: return "softplus";
    case LayerKind::Sigmoid: return "sigmoid";
  }
  return "?";
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) {
  LayerSpec s;
  s.kind = LayerKind::Dense;
  s.in_features = in;
  s.out_features = out;
  return s;
}

LayerSpec LayerSpec::conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                            std::size_t stride, std::size_t pad) {
  LayerSpec s;
  s.kind = LayerKind::Conv2d;
  s.in_channels = in_ch;
  s.out_channels = out_ch;
  s.kernel = kernel;
  s.stride = stride;
  s.pad = pad;
  return s;
}

LayerSpec LayerSpec::deconv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                              std::size_t stride, std::size_t pad) {
  LayerSpec s = conv2d(in_ch, out_ch, kernel, stride, pad);
  s.kind = LayerKind::Deconv2d;
  return s;
}

LayerSpec LayerSpec::batchnorm(std::size_t features) {
  LayerSpec s;
  s.kind = LayerKind::BatchNorm;
  s.features = features;
  return s;
}

LayerSpec LayerSpec::relu() {
  LayerSpec s;
  s.kind = LayerKind::Relu;
  return s;
}

LayerSpec LayerSpec::leaky_relu(double slope) {
  LayerSpec s;
  s.kind = LayerKind::LeakyRelu;
  s.slope = slope;
  return s;
}

LayerSpec LayerSpec::softplus() {
  LayerSpec s;
  s.kind = LayerKind::Softplus;
  return s;
}

LayerSpec LayerSpec::sigmoid() {
  LayerSpec s;
  s.kind = LayerKind::Sigmoid;
  return s;
}

bool LayerSpec::has_params() const {
  return kind == LayerKind::Dense || kind == LayerKind::Conv2d || kind == LayerKind::Deconv2d ||
         kind == LayerKind::BatchNorm;
}

std::vector<std::size_t> output_shape(const LayerSpec& spec,
                                      const std::vector<std::size_t>& in) {
  switch (spec.kind) {
    case LayerKind::Dense: {
      if (in.empty()) throw std::invalid_argument("dense: scalar input");
      std::size_t rest = 1;
      for (std::size_t i = 1; i < in.size(); ++i) rest *= in[i];
      if (rest != spec.in_features)
        throw std::invalid_argument("dense: input features " + std::to_string(rest) +
                                    " != spec " + std::to_string(spec.in_features));
      return {in[0], spec.out_features};
    }
    case LayerKind::Conv2d: {
      if (in.size() != 4 || in[1] != spec.in_channels)
        throw std::invalid_argument("conv2d: expects [m,c,h,w] with c = in_channels");
      return {in[0], spec.out_channels, conv_out_extent(in[2], spec.kernel, spec.stride, spec.pad),
              conv_out_extent(in[3], spec.kernel, spec.stride, spec.pad)};
    }
    case LayerKind::Deconv2d: {
      if (in.size() != 4 || in[1] != spec.in_channels)
        throw std::invalid_argument("deconv2d: expects [m,c,h,w] with c = in_channels");
      return {in[0], spec.out_channels,
              deconv_out_extent(in[2], spec.kernel, spec.stride, spec.pad),
              deconv_out_extent(in[3], spec.kernel, spec.stride, spec.pad)};
    }
    case LayerKind::BatchNorm: {
      const std::size_t f = (in.size() == 4) ? in[1] : (in.size() == 2 ? in[1] : 0);
      if (f != spec.features)
        throw std::invalid_argument("batchnorm: feature extent mismatch");
      return in;
    }
    default:
      return in;
  }
}

void ParamSet::add(std::string name, Tensor value) {
  if (has(name)) throw std::invalid_argument("ParamSet: duplicate name " + name);
  names.push_back(std::move(name));
  values.push_back(std::move(value));
}

Tensor& ParamSet::at(std::string_view name) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return values[i];
  throw std::invalid_argument("ParamSet: no parameter named " + std::string(name));
}

const Tensor& ParamSet::at(std::string_view name) const {
  return const_cast<ParamSet*>(this)->at(name);
}

bool ParamSet::has(std::string_view name) const {
  for (const auto& n : names)
    if (n == name) return true;
  return false;
}

LayerState init_layer(const LayerSpec& spec, SeededRng& rng) {
  LayerState st;
  switch (spec.kind) {
    case LayerKind::Dense: {
      const double limit = std::sqrt(3.0 / static_cast<double>(spec.in_features));
      st.params.add("weight", rng.uniform({spec.in_features, spec.out_features}, -limit, limit));
      st.params.add("bias", Tensor::zeros({spec.out_features}));
      break;
    }
    case LayerKind::Conv2d: {
      const double fan_in = static_cast<double>(spec.in_channels * spec.kernel * spec.kernel);
      const double limit = std::sqrt(3.0 / fan_in);
      st.params.add("weight", rng.uniform({spec.out_channels, spec.in_channels, spec.kernel,
                                           spec.kernel},
                                          -limit, limit));
      st.params.add("bias", Tensor::zeros({spec.out_channels}));
      break;
    }
    case LayerKind::Deconv2d: {
      const double fan_in = static_cast<double>(spec.in_channels * spec.kernel * spec.kernel);
      const double limit = std::sqrt(3.0 / fan_in);
      st.params.add("weight", rng.uniform({spec.in_channels, spec.out_channels, spec.kernel,
                                           spec.kernel},
                                          -limit, limit));
      st.params.add("bias", Tensor::zeros({spec.out_channels}));
      break;
    }
    case LayerKind::BatchNorm: {
      st.params.add("scale", Tensor::full({spec.features}, 1.0));
      st.params.add("shift", Tensor::zeros({spec.features}));
      st.buffers.add("running_mean", Tensor::zeros({spec.features}));
      st.buffers.add("running_var", Tensor::full({spec.features}, 1.0));
      break;
    }
    default:
      break;
  }
  return st;
}

Tensor dense_raw(const Tensor& input2d, const Tensor& weight, const double* bias) {
  const std::size_t m = input2d.dim(0), in = input2d.dim(1), out = weight.dim(1);
  if (weight.dim(0) != in) throw std::invalid_argument("dense: weight/input shape mismatch");
  Tensor y({m, out});
  const double* px = input2d.data().data();
  const double* pw = weight.data().data();
  double* py = y.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* yrow = py + i * out;
    if (bias)
      for (std::size_t j = 0; j < out; ++j) yrow[j] = bias[j];
    for (std::size_t p = 0; p < in; ++p) {
      const double xv = px[i * in + p];
      if (xv == 0.0) continue;
      const double* wrow = pw + p * out;
      for (std::size_t j = 0; j < out; ++j) yrow[j] += xv * wrow[j];
    }
  }
  return y;
}

Tensor conv2d_raw(const Tensor& input, const Tensor& weight, const double* bias,
                  std::size_t stride, std::size_t pad) {
  const std::size_t m = input.dim(0), c_in = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t c_out = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != c_in) throw std::invalid_argument("conv2d: channel mismatch");
  const std::size_t oh = conv_out_extent(h, k, stride, pad);
  const std::size_t ow = conv_out_extent(w, k, stride, pad);
  Tensor out({m, c_out, oh, ow});
  for (std::size_t mi = 0; mi < m; ++mi)
    for (std::size_t oc = 0; oc < c_out; ++oc)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = bias ? bias[oc] : 0.0;
          for (std::size_t ic = 0; ic < c_in; ++ic)
            for (std::size_t ky = 0; ky < k; ++ky) {
              const std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                          static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                acc += input(mi, ic, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) *
                       weight(oc, ic, ky, kx);
              }
            }
          out(mi, oc, oy, ox) = acc;
        }
  return out;
}

Tensor deconv2d_raw(const Tensor& input, const Tensor& weight, const double* bias,
                    std::size_t stride, std::size_t pad) {
  const std::size_t m = input.dim(0), c_in = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (weight.dim(0) != c_in) throw std::invalid_argument("deconv2d: channel mismatch");
  const std::size_t c_out = weight.dim(1), k = weight.dim(2);
  const std::size_t oh = deconv_out_extent(h, k, stride, pad);
  const std::size_t ow = deconv_out_extent(w, k, stride, pad);
  Tensor out({m, c_out, oh, ow});
  if (bias)
    for (std::size_t mi = 0; mi < m; ++mi)
      for (std::size_t oc = 0; oc < c_out; ++oc)
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) out(mi, oc, oy, ox) = bias[oc];
  for (std::size_t mi = 0; mi < m; ++mi)
    for (std::size_t ic = 0; ic < c_in; ++ic)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double v = input(mi, ic, y, x);
          if (v == 0.0) continue;
          for (std::size_t oc = 0; oc < c_out; ++oc)
            for (std::size_t ky = 0; ky < k; ++ky) {
              const std::ptrdiff_t oy =
                  static_cast<std::ptrdiff_t>(y * stride + ky) - static_cast<std::ptrdiff_t>(pad);
              if (oy < 0 || oy >= static_cast<std::ptrdiff_t>(oh)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(x * stride + kx) -
                                          static_cast<std::ptrdiff_t>(pad);
                if (ox < 0 || ox >= static_cast<std::ptrdiff_t>(ow)) continue;
                out(mi, oc, static_cast<std::size_t>(oy), static_cast<std::size_t>(ox)) +=
                    v * weight(ic, oc, ky, kx);
              }
            }
        }
  return out;
}

namespace {

Tensor batchnorm_forward(const LayerSpec& spec, LayerState& state, const Tensor& input, Mode mode,
                         FwdCache* cache) {
  const bool conv = input.rank() == 4;
  if (!conv && input.rank() != 2)
    throw std::invalid_argument("batchnorm: input must be rank 2 or 4");
  const std::size_t m = input.dim(0);
  const std::size_t f = conv ? input.dim(1) : input.dim(1);
  if (f != spec.features) throw std::invalid_argument("batchnorm: feature extent mismatch");
  if (mode == Mode::Train && m < 2)
    throw std::invalid_argument("batchnorm: train mode needs batch size >= 2");

  const std::size_t spatial = conv ? input.dim(2) * input.dim(3) : 1;
  const double count = static_cast<double>(m * spatial);
  const Tensor& scale = state.params.at("scale");
  const Tensor& shift = state.params.at("shift");

  std::vector<double> mean(f, 0.0), var(f, 0.0);
  if (mode == Mode::Train) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t c = 0; c < f; ++c)
        for (std::size_t s = 0; s < spatial; ++s)
          mean[c] += input[(i * f + c) * spatial + s];
    for (double& v : mean) v /= count;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t c = 0; c < f; ++c)
        for (std::size_t s = 0; s < spatial; ++s) {
          const double d = input[(i * f + c) * spatial + s] - mean[c];
          var[c] += d * d;
        }
    for (double& v : var) v /= count;

    Tensor& rm = state.buffers.at("running_mean");
    Tensor& rv = state.buffers.at("running_var");
    for (std::size_t c = 0; c < f; ++c) {
      rm[c] = kBnMomentum * rm[c] + (1.0 - kBnMomentum) * mean[c];
      rv[c] = kBnMomentum * rv[c] + (1.0 - kBnMomentum) * var[c];
    }
  } else {
    const Tensor& rm = state.buffers.at("running_mean");
    const Tensor& rv = state.buffers.at("running_var");
    for (std::size_t c = 0; c < f; ++c) {
      mean[c] = rm[c];
      var[c] = rv[c];
    }
  }

  Tensor x_hat(input.shape());
  Tensor out(input.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < f; ++c) {
      const double inv_std = 1.0 / std::sqrt(var[c] + kBnEps);
      for (std::size_t s = 0; s < spatial; ++s) {
        const std::size_t idx = (i * f + c) * spatial + s;
        x_hat[idx] = (input[idx] - mean[c]) * inv_std;
        out[idx] = scale[c] * x_hat[idx] + shift[c];
      }
    }
  if (cache) {
    cache->x_hat = x_hat;
    cache->batch_mean = std::move(mean);
    cache->batch_var = std::move(var);
  }
  return out;
}

Tensor batchnorm_backward(const LayerSpec& spec, const LayerState& state, const FwdCache& cache,
                          const Tensor& grad_out, ParamSet* param_grads) {
  const Tensor& input = cache.input;
  const bool conv = input.rank() == 4;
  const std::size_t m = input.dim(0), f = spec.features;
  const std::size_t spatial = conv ? input.dim(2) * input.dim(3) : 1;
  const double count = static_cast<double>(m * spatial);
  const Tensor& scale = state.params.at("scale");

  Tensor g_scale({f}), g_shift({f});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < f; ++c)
      for (std::size_t s = 0; s < spatial; ++s) {
        const std::size_t idx = (i * f + c) * spatial + s;
        g_scale[c] += grad_out[idx] * cache.x_hat[idx];
        g_shift[c] += grad_out[idx];
      }

  Tensor grad_in(input.shape());
  if (cache.mode == Mode::Train) {
    // dL/dx for batch-statistics normalization
    for (std::size_t c = 0; c < f; ++c) {
      const double inv_std = 1.0 / std::sqrt(cache.batch_var[c] + kBnEps);
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t s = 0; s < spatial; ++s) {
          const std::size_t idx = (i * f + c) * spatial + s;
          const double dxhat = grad_out[idx] * scale[c];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * cache.x_hat[idx];
        }
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t s = 0; s < spatial; ++s) {
          const std::size_t idx = (i * f + c) * spatial + s;
          const double dxhat = grad_out[idx] * scale[c];
          grad_in[idx] =
              inv_std * (dxhat - sum_dxhat / count - cache.x_hat[idx] * sum_dxhat_xhat / count);
        }
    }
  } else {
    for (std::size_t c = 0; c < f; ++c) {
      const double inv_std = 1.0 / std::sqrt(cache.batch_var[c] + kBnEps);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t s = 0; s < spatial; ++s) {
          const std::size_t idx = (i * f + c) * spatial + s;
          grad_in[idx] = grad_out[idx] * scale[c] * inv_std;
        }
    }
  }

  if (param_grads) {
    param_grads->add("scale", std::move(g_scale));
    param_grads->add("shift", std::move(g_shift));
  }
  return grad_in;
}

}  // namespace

Tensor forward(const LayerSpec& spec, LayerState& state, const Tensor& input, Mode mode,
               FwdCache* cache) {
  if (cache) {
    cache->input = input;
    cache->mode = mode;
    cache->pre_flatten_shape.clear();
  }
  switch (spec.kind) {
    case LayerKind::Dense: {
      Tensor x = input;
      if (input.rank() != 2) {
        x = flatten_rows(input);
        if (cache) cache->pre_flatten_shape = input.shape();
      }
      if (x.dim(1) != spec.in_features)
        throw std::invalid_argument("dense: got " + std::to_string(x.dim(1)) +
                                    " input features, expected " +
                                    std::to_string(spec.in_features));
      if (cache) cache->input = x;
      return dense_raw(x, state.params.at("weight"), state.params.at("bias").data().data());
    }
    case LayerKind::Conv2d: {
      output_shape(spec, input.shape());  // validates
      return conv2d_raw(input, state.params.at("weight"), state.params.at("bias").data().data(),
                        spec.stride, spec.pad);
    }
    case LayerKind::Deconv2d: {
      output_shape(spec, input.shape());
      return deconv2d_raw(input, state.params.at("weight"), state.params.at("bias").data().data(),
                          spec.stride, spec.pad);
    }
    case LayerKind::BatchNorm:
      return batchnorm_forward(spec, state, input, mode, cache);
    case LayerKind::Relu: {
      Tensor out(input.shape());
      for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
      return out;
    }
    case LayerKind::LeakyRelu: {
      Tensor out(input.shape());
      for (std::size_t i = 0; i < input.size(); ++i)
        out[i] = input[i] > 0.0 ? input[i] : spec.slope * input[i];
      return out;
    }
    case LayerKind::Softplus: {
      Tensor out(input.shape());
      for (std::size_t i = 0; i < input.size(); ++i) out[i] = stable_softplus(input[i]);
      if (cache) cache->output = out;
      return out;
    }
    case LayerKind::Sigmoid: {
      Tensor out(input.shape());
      for (std::size_t i = 0; i < input.size(); ++i) out[i] = stable_sigmoid(input[i]);
      if (cache) cache->output = out;
      return out;
    }
  }
  throw std::logic_error("forward: unknown layer kind");
}

Tensor backward(const LayerSpec& spec, const LayerState& state, const FwdCache& cache,
                const Tensor& grad_out, ParamSet* param_grads) {
  switch (spec.kind) {
    case LayerKind::Dense: {
      const Tensor& x = cache.input;  // already 2-d
      const Tensor& w = state.params.at("weight");
      const std::size_t m = x.dim(0), in = x.dim(1), out = w.dim(1);
      if (grad_out.shape() != std::vector<std::size_t>{m, out})
        throw std::invalid_argument("dense backward: grad shape mismatch");
      Tensor grad_in({m, in});
      Tensor g_w({in, out});
      Tensor g_b({out});
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < out; ++j) {
          const double g = grad_out(i, j);
          if (g == 0.0) continue;
          g_b[j] += g;
          for (std::size_t p = 0; p < in; ++p) {
            grad_in(i, p) += g * w(p, j);
            g_w(p, j) += x(i, p) * g;
          }
        }
      if (param_grads) {
        param_grads->add("weight", std::move(g_w));
        param_grads->add("bias", std::move(g_b));
      }
      if (!cache.pre_flatten_shape.empty()) return grad_in.reshaped(cache.pre_flatten_shape);
      return grad_in;
    }
    case LayerKind::Conv2d: {
      const Tensor& x = cache.input;
      const Tensor& w = state.params.at("weight");
      const std::size_t m = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
      const std::size_t c_out = w.dim(0), k = w.dim(2);
      if (grad_out.shape() != output_shape(spec, x.shape()))
        throw std::invalid_argument("conv2d backward: grad shape mismatch");
      const std::size_t oh = grad_out.dim(2), ow = grad_out.dim(3);
      Tensor grad_in(x.shape());
      Tensor g_w(w.shape());
      Tensor g_b({c_out});
      for (std::size_t mi = 0; mi < m; ++mi)
        for (std::size_t oc = 0; oc < c_out; ++oc)
          for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const double g = grad_out(mi, oc, oy, ox);
              if (g == 0.0) continue;
              g_b[oc] += g;
              for (std::size_t ic = 0; ic < c_in; ++ic)
                for (std::size_t ky = 0; ky < k; ++ky) {
                  const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * spec.stride + ky) -
                                            static_cast<std::ptrdiff_t>(spec.pad);
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                  for (std::size_t kx = 0; kx < k; ++kx) {
                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * spec.stride + kx) -
                                              static_cast<std::ptrdiff_t>(spec.pad);
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                    grad_in(mi, ic, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) +=
                        g * w(oc, ic, ky, kx);
                    g_w(oc, ic, ky, kx) +=
                        g * x(mi, ic, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
                  }
                }
            }
      if (param_grads) {
        param_grads->add("weight", std::move(g_w));
        param_grads->add("bias", std::move(g_b));
      }
      return grad_in;
    }
    case LayerKind::Deconv2d: {
      const Tensor& x = cache.input;
      const Tensor& w = state.params.at("weight");
      const std::size_t m = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
      const std::size_t c_out = w.dim(1), k = w.dim(2);
      if (grad_out.shape() != output_shape(spec, x.shape()))
        throw std::invalid_argument("deconv2d backward: grad shape mismatch");
      const std::size_t oh = grad_out.dim(2), ow = grad_out.dim(3);
      Tensor grad_in(x.shape());
      Tensor g_w(w.shape());
      Tensor g_b({c_out});
      for (std::size_t mi = 0; mi < m; ++mi) {
        for (std::size_t oc = 0; oc < c_out; ++oc)
          for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) g_b[oc] += grad_out(mi, oc, oy, ox);
        for (std::size_t ic = 0; ic < c_in; ++ic)
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x2 = 0; x2 < wd; ++x2) {
              const double xv = x(mi, ic, y, x2);
              double acc = 0.0;
              for (std::size_t oc = 0; oc < c_out; ++oc)
                for (std::size_t ky = 0; ky < k; ++ky) {
                  const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(y * spec.stride + ky) -
                                            static_cast<std::ptrdiff_t>(spec.pad);
                  if (oy < 0 || oy >= static_cast<std::ptrdiff_t>(oh)) continue;
                  for (std::size_t kx = 0; kx < k; ++kx) {
                    const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(x2 * spec.stride + kx) -
                                              static_cast<std::ptrdiff_t>(spec.pad);
                    if (ox < 0 || ox >= static_cast<std::ptrdiff_t>(ow)) continue;
                    const double g =
                        grad_out(mi, oc, static_cast<std::size_t>(oy), static_cast<std::size_t>(ox));
                    acc += g * w(ic, oc, ky, kx);
                    g_w(ic, oc, ky, kx) += g * xv;
                  }
                }
              grad_in(mi, ic, y, x2) = acc;
            }
      }
      if (param_grads) {
        param_grads->add("weight", std::move(g_w));
        param_grads->add("bias", std::move(g_b));
      }
      return grad_in;
    }
    case LayerKind::BatchNorm:
      return batchnorm_backward(spec, state, cache, grad_out, param_grads);
    case LayerKind::Relu: {
      Tensor grad_in(cache.input.shape());
      for (std::size_t i = 0; i < grad_in.size(); ++i)
        grad_in[i] = cache.input[i] > 0.0 ? grad_out[i] : 0.0;
      return grad_in;
    }
    case LayerKind::LeakyRelu: {
      Tensor grad_in(cache.input.shape());
      for (std::size_t i = 0; i < grad_in.size(); ++i)
        grad_in[i] = cache.input[i] > 0.0 ? grad_out[i] : spec.slope * grad_out[i];
      return grad_in;
    }
    case LayerKind::Softplus: {
      Tensor grad_in(cache.input.shape());
      for (std::size_t i = 0; i < grad_in.size(); ++i)
        grad_in[i] = grad_out[i] * stable_sigmoid(cache.input[i]);
      return grad_in;
    }
    case LayerKind::Sigmoid: {
      Tensor grad_in(cache.input.shape());
      for (std::size_t i = 0; i < grad_in.size(); ++i) {
        const double y = cache.output[i];
        grad_in[i] = grad_out[i] * y * (1.0 - y);
      }
      return grad_in;
    }
  }
  throw std::logic_error("backward: unknown layer kind");
}

}  // namespace vrcv::nn
