#include "vrcv/bayes.hpp"

#include <cmath>
#include <stdexcept>

#include "vrcv/loss.hpp"

namespace vrcv::bayes {

using nn::LayerKind;
using nn::LayerSpec;

double rho_for_sigma(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("rho_for_sigma: sigma must be positive");
  return std::log(std::expm1(sigma));
}

double dropout_alpha(double p) {
  if (p < 0.0 || p >= 1.0)
    throw std::invalid_argument("dropout_alpha: rate must lie in [0,1), got " + std::to_string(p));
  return p / (1.0 - p);
}

Tensor local_reparam_dense(const Tensor& a, const GaussianWeightPosterior& post,
                           const double* bias, const Tensor& noise, DenseCache* cache) {
  if (a.rank() != 2) throw std::invalid_argument("local_reparam_dense: input must be [m,I]");
  if (!post.mu.same_shape(post.rho))
    throw std::invalid_argument("local_reparam_dense: mu/rho shape mismatch");
  const std::size_t m = a.dim(0), in = a.dim(1), out = post.mu.dim(1);
  if (post.mu.dim(0) != in)
    throw std::invalid_argument("local_reparam_dense: posterior is " +
                                Tensor::shape_str(post.mu.shape()) + ", input has " +
                                std::to_string(in) + " features");
  if (noise.shape() != std::vector<std::size_t>{m, out})
    throw std::invalid_argument("local_reparam_dense: noise must be [m,J]");

  Tensor mean = nn::dense_raw(a, post.mu, bias);
  Tensor std_t({m, out});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < out; ++j) {
      double v = 0.0;
      for (std::size_t p = 0; p < in; ++p) {
        const double s = sigma_from_rho(post.rho(p, j));
        v += a(i, p) * a(i, p) * s * s;
      }
      std_t(i, j) = std::sqrt(v);
    }
  Tensor out_t({m, out});
  for (std::size_t i = 0; i < out_t.size(); ++i)
    out_t[i] = mean[i] + noise[i] * std_t[i];
  if (cache) {
    cache->input = a;
    cache->noise = noise;
    cache->std = std_t;
  }
  return out_t;
}

Tensor local_reparam_dense_backward(const GaussianWeightPosterior& post, const DenseCache& cache,
                                    const Tensor& grad_out, Tensor& d_mu, Tensor& d_rho,
                                    Tensor* d_bias) {
  const Tensor& a = cache.input;
  const std::size_t m = a.dim(0), in = a.dim(1), out = post.mu.dim(1);
  if (grad_out.shape() != std::vector<std::size_t>{m, out})
    throw std::invalid_argument("local_reparam_dense_backward: grad shape mismatch");

  // mean path: identical arithmetic to the deterministic dense backward
  nn::LayerSpec spec = nn::LayerSpec::dense(in, out);
  nn::LayerState state;
  state.params.add("weight", post.mu);
  state.params.add("bias", Tensor::zeros({out}));
  nn::FwdCache fc;
  fc.input = a;
  nn::ParamSet pg;
  Tensor grad_in = nn::backward(spec, state, fc, grad_out, &pg);
  d_mu = std::move(pg.at("weight"));
  if (d_bias) *d_bias = std::move(pg.at("bias"));

  // noise path: d std = g * zeta, d var = d std / (2 std)
  d_rho = Tensor(post.rho.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < out; ++j) {
      const double s = cache.std(i, j);
      if (s <= 0.0) continue;
      const double dv = grad_out(i, j) * cache.noise(i, j) * 0.5 / s;
      for (std::size_t p = 0; p < in; ++p) {
        const double sig = sigma_from_rho(post.rho(p, j));
        const double a2 = a(i, p) * a(i, p);
        d_rho(p, j) += dv * a2 * 2.0 * sig * dsigma_drho(post.rho(p, j));
        grad_in(i, p) += dv * 2.0 * a(i, p) * sig * sig;
      }
    }
  return grad_in;
}

Tensor local_reparam_conv(const Tensor& a, const GaussianWeightPosterior& post,
                          const double* bias, std::size_t stride, std::size_t pad,
                          const Tensor& noise, ConvCache* cache) {
  if (!post.mu.same_shape(post.rho))
    throw std::invalid_argument("local_reparam_conv: mu/rho shape mismatch");
  Tensor mean = nn::conv2d_raw(a, post.mu, bias, stride, pad);
  Tensor a2(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) a2[i] = a[i] * a[i];
  Tensor sig2(post.rho.shape());
  for (std::size_t i = 0; i < sig2.size(); ++i) {
    const double s = sigma_from_rho(post.rho[i]);
    sig2[i] = s * s;
  }
  Tensor var = nn::conv2d_raw(a2, sig2, nullptr, stride, pad);
  if (noise.shape() != mean.shape())
    throw std::invalid_argument("local_reparam_conv: noise must match the output shape");
  Tensor std_t(var.shape());
  for (std::size_t i = 0; i < var.size(); ++i) std_t[i] = std::sqrt(std::max(var[i], 0.0));
  Tensor out(mean.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mean[i] + noise[i] * std_t[i];
  if (cache) {
    cache->input = a;
    cache->noise = noise;
    cache->std = std_t;
  }
  return out;
}

Tensor local_reparam_conv_backward(const GaussianWeightPosterior& post, const ConvCache& cache,
                                   std::size_t stride, std::size_t pad, const Tensor& grad_out,
                                   Tensor& d_mu, Tensor& d_rho, Tensor* d_bias) {
  const Tensor& a = cache.input;
  const std::size_t out_ch = post.mu.dim(0);

  LayerSpec spec = LayerSpec::conv2d(post.mu.dim(1), out_ch, post.mu.dim(2), stride, pad);
  nn::LayerState state;
  state.params.add("weight", post.mu);
  state.params.add("bias", Tensor::zeros({out_ch}));
  nn::FwdCache fc;
  fc.input = a;
  nn::ParamSet pg;
  Tensor grad_in = nn::backward(spec, state, fc, grad_out, &pg);
  d_mu = std::move(pg.at("weight"));
  if (d_bias) *d_bias = std::move(pg.at("bias"));

  // noise path: push dv = g zeta / (2 std) back through conv(a^2, sigma^2)
  Tensor dv(grad_out.shape());
  for (std::size_t i = 0; i < dv.size(); ++i) {
    const double s = cache.std[i];
    dv[i] = s > 0.0 ? grad_out[i] * cache.noise[i] * 0.5 / s : 0.0;
  }
  Tensor a2(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) a2[i] = a[i] * a[i];
  Tensor sig2(post.rho.shape());
  for (std::size_t i = 0; i < sig2.size(); ++i) {
    const double s = sigma_from_rho(post.rho[i]);
    sig2[i] = s * s;
  }
  nn::LayerState vstate;
  vstate.params.add("weight", sig2);
  vstate.params.add("bias", Tensor::zeros({out_ch}));
  nn::FwdCache vfc;
  vfc.input = a2;
  nn::ParamSet vpg;
  Tensor d_a2 = nn::backward(spec, vstate, vfc, dv, &vpg);
  const Tensor& d_sig2 = vpg.at("weight");

  d_rho = Tensor(post.rho.shape());
  for (std::size_t i = 0; i < d_rho.size(); ++i) {
    const double s = sigma_from_rho(post.rho[i]);
    d_rho[i] = d_sig2[i] * 2.0 * s * dsigma_drho(post.rho[i]);
  }
  for (std::size_t i = 0; i < grad_in.size(); ++i) grad_in[i] += d_a2[i] * 2.0 * a[i];
  return grad_in;
}

KlEstimate kl_mc_with(const GaussianWeightPosterior& post, const PriorSpec& prior,
                      const Tensor& eps, KlGrads* grads) {
  const std::size_t n = post.mu.size();
  if (eps.rank() != 2 || eps.dim(1) != n)
    throw std::invalid_argument("kl_mc: eps must be [S, #weights]");
  const std::size_t s_count = eps.dim(0);
  if (s_count < 1) throw std::invalid_argument("kl_mc: need at least one sample");
  const double sp = prior.std_dev;
  const double inv_sp2 = 1.0 / (sp * sp);

  if (grads) {
    grads->d_mu = Tensor(post.mu.shape());
    grads->d_rho = Tensor(post.rho.shape());
  }

  double sum = 0.0, sumsq = 0.0;
  for (std::size_t s = 0; s < s_count; ++s) {
    double term = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double sigma = sigma_from_rho(post.rho[i]);
      const double e = eps(s, i);
      const double w = post.mu[i] + sigma * e;
      // log q(w) - log p(w) with w = mu + sigma e
      term += -std::log(sigma) - 0.5 * e * e + std::log(sp) + 0.5 * w * w * inv_sp2;
      if (grads) {
        grads->d_mu[i] += w * inv_sp2 / static_cast<double>(s_count);
        grads->d_rho[i] += (-1.0 / sigma + w * e * inv_sp2) * dsigma_drho(post.rho[i]) /
                           static_cast<double>(s_count);
      }
    }
    sum += term;
    sumsq += term * term;
  }
  KlEstimate est;
  est.value = sum / static_cast<double>(s_count);
  if (s_count > 1) {
    const double var = (sumsq - sum * sum / static_cast<double>(s_count)) /
                       static_cast<double>(s_count - 1);
    est.stderr_ = std::sqrt(std::max(var, 0.0) / static_cast<double>(s_count));
  }
  return est;
}

KlEstimate kl_mc(const GaussianWeightPosterior& post, const PriorSpec& prior, SeededRng& rng,
                 std::size_t samples, KlGrads* grads) {
  return kl_mc_with(post, prior, rng.normal({samples, post.mu.size()}), grads);
}

bool BayesNet::stochastic(std::size_t i) const {
  const LayerKind k = layers[i].spec.kind;
  return k == LayerKind::Dense || k == LayerKind::Conv2d;
}

void BayesNet::init(SeededRng& rng, double sigma0) {
  const double rho0 = rho_for_sigma(sigma0);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    if (l.spec.kind == LayerKind::Dense) {
      nn::LayerState st = nn::init_layer(l.spec, rng);
      l.weight.mu = st.params.at("weight");
      l.weight.rho = Tensor::full(l.weight.mu.shape(), rho0);
      l.bias = Tensor::zeros({l.spec.out_features});
    } else if (l.spec.kind == LayerKind::Conv2d) {
      nn::LayerState st = nn::init_layer(l.spec, rng);
      l.weight.mu = st.params.at("weight");
      l.weight.rho = Tensor::full(l.weight.mu.shape(), rho0);
      l.bias = Tensor::zeros({l.spec.out_channels});
    } else if (l.spec.has_params()) {
      throw std::invalid_argument("BayesNet: unsupported parametric layer kind");
    }
  }
}

std::vector<Tensor*> BayesNet::params() {
  std::vector<Tensor*> out;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (stochastic(i)) {
      out.push_back(&layers[i].weight.mu);
      out.push_back(&layers[i].weight.rho);
      out.push_back(&layers[i].bias);
    }
  return out;
}

std::vector<std::string> BayesNet::param_names(const std::string& prefix) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (stochastic(i)) {
      out.push_back(prefix + "l" + std::to_string(i) + ".mu");
      out.push_back(prefix + "l" + std::to_string(i) + ".rho");
      out.push_back(prefix + "l" + std::to_string(i) + ".bias");
    }
  return out;
}

std::vector<std::string> BayesNet::param_tags() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (stochastic(i)) {
      out.push_back("bayes");
      out.push_back("bayes");
      out.push_back("");
    }
  return out;
}

std::vector<std::size_t> BayesNet::output_shape_of(std::vector<std::size_t> shape) const {
  for (const auto& l : layers) shape = nn::output_shape(l.spec, shape);
  return shape;
}

LayerNoise draw_noise(const BayesNet& net, const std::vector<std::size_t>& input_shape,
                      SeededRng& rng) {
  LayerNoise noise;
  std::vector<std::size_t> shape = input_shape;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    shape = nn::output_shape(net.layers[i].spec, shape);
    if (net.stochastic(i)) noise.per_layer.push_back(rng.normal(shape));
  }
  return noise;
}

LayerNoise zero_noise(const BayesNet& net, const std::vector<std::size_t>& input_shape) {
  LayerNoise noise;
  std::vector<std::size_t> shape = input_shape;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    shape = nn::output_shape(net.layers[i].spec, shape);
    if (net.stochastic(i)) noise.per_layer.push_back(Tensor::zeros(shape));
  }
  return noise;
}

Tensor bayes_forward(BayesNet& net, const Tensor& x, const LayerNoise& noise,
                     std::vector<BayesCache>* caches) {
  if (caches) caches->assign(net.layers.size(), BayesCache{});
  Tensor cur = x;
  std::size_t noise_idx = 0;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    auto& l = net.layers[i];
    if (l.spec.kind == LayerKind::Dense) {
      Tensor flat = cur.rank() == 2 ? cur : cur.reshaped({cur.dim(0), cur.size() / cur.dim(0)});
      cur = local_reparam_dense(flat, l.weight, l.bias.data().data(),
                                noise.per_layer.at(noise_idx),
                                caches ? &(*caches)[i].dense : nullptr);
      ++noise_idx;
    } else if (l.spec.kind == LayerKind::Conv2d) {
      cur = local_reparam_conv(cur, l.weight, l.bias.data().data(), l.spec.stride, l.spec.pad,
                               noise.per_layer.at(noise_idx),
                               caches ? &(*caches)[i].conv : nullptr);
      ++noise_idx;
    } else {
      nn::LayerState dummy;
      cur = nn::forward(l.spec, dummy, cur, nn::Mode::Eval,
                        caches ? &(*caches)[i].plain : nullptr);
    }
  }
  return cur;
}

Tensor bayes_backward(const BayesNet& net, const std::vector<BayesCache>& caches,
                      const Tensor& grad_out, std::vector<Tensor>& grads) {
  grads.clear();
  std::vector<std::vector<Tensor>> per_layer(net.layers.size());
  Tensor g = grad_out;
  for (std::size_t ii = net.layers.size(); ii-- > 0;) {
    const auto& l = net.layers[ii];
    if (l.spec.kind == LayerKind::Dense) {
      Tensor d_mu, d_rho, d_bias;
      g = local_reparam_dense_backward(l.weight, caches[ii].dense, g, d_mu, d_rho, &d_bias);
      per_layer[ii] = {std::move(d_mu), std::move(d_rho), std::move(d_bias)};
    } else if (l.spec.kind == LayerKind::Conv2d) {
      Tensor d_mu, d_rho, d_bias;
      g = local_reparam_conv_backward(l.weight, caches[ii].conv, l.spec.stride, l.spec.pad, g,
                                      d_mu, d_rho, &d_bias);
      per_layer[ii] = {std::move(d_mu), std::move(d_rho), std::move(d_bias)};
    } else {
      nn::LayerState dummy;
      g = nn::backward(l.spec, dummy, caches[ii].plain, g, nullptr);
    }
  }
  for (auto& v : per_layer)
    for (auto& t : v) grads.push_back(std::move(t));
  return g;
}

namespace {

FreeEnergyParts free_energy_impl(BayesNet& net, const Tensor& batch, std::span<const int> labels,
                                 const std::vector<LayerNoise>* fixed_noise,
                                 const std::vector<Tensor>* fixed_kl_eps, SeededRng* rng,
                                 std::size_t samples, double kl_weight,
                                 std::vector<Tensor>* grads) {
  if (batch.dim(0) == 0) throw std::invalid_argument("free_energy: empty batch");
  if (samples < 1) throw std::invalid_argument("free_energy: need at least one sample");

  FreeEnergyParts parts;
  parts.kl_weight = kl_weight;

  if (grads) {
    grads->clear();
    for (Tensor* p : net.params()) grads->push_back(Tensor(p->shape()));
  }

  for (std::size_t s = 0; s < samples; ++s) {
    const LayerNoise noise = fixed_noise ? (*fixed_noise)[s]
                                         : draw_noise(net, batch.shape(), *rng);
    std::vector<BayesCache> caches;
    Tensor logits = bayes_forward(net, batch, noise, grads ? &caches : nullptr);
    auto xent = nn::softmax_xent(logits, labels);
    parts.nll += xent.loss / static_cast<double>(samples);
    if (grads) {
      for (double& v : xent.grad.data()) v /= static_cast<double>(samples);
      std::vector<Tensor> g;
      bayes_backward(net, caches, xent.grad, g);
      for (std::size_t k = 0; k < g.size(); ++k)
        for (std::size_t i = 0; i < g[k].size(); ++i) (*grads)[k][i] += g[k][i];
    }
  }

  if (kl_weight != 0.0) {
    std::size_t grad_idx = 0, sto = 0;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      if (!net.stochastic(i)) continue;
      KlGrads kg;
      KlEstimate est =
          fixed_kl_eps
              ? kl_mc_with(net.layers[i].weight, net.prior, (*fixed_kl_eps)[sto],
                           grads ? &kg : nullptr)
              : kl_mc(net.layers[i].weight, net.prior, *rng, samples, grads ? &kg : nullptr);
      parts.kl += est.value;
      if (grads) {
        for (std::size_t j = 0; j < kg.d_mu.size(); ++j)
          (*grads)[grad_idx][j] += kl_weight * kg.d_mu[j];
        for (std::size_t j = 0; j < kg.d_rho.size(); ++j)
          (*grads)[grad_idx + 1][j] += kl_weight * kg.d_rho[j];
      }
      grad_idx += 3;
      ++sto;
    }
  }

  parts.total = parts.nll + kl_weight * parts.kl;
  if (!std::isfinite(parts.total)) throw std::runtime_error("free_energy: non-finite loss");
  return parts;
}

}  // namespace

FreeEnergyParts free_energy(BayesNet& net, const Tensor& batch, std::span<const int> labels,
                            SeededRng& rng, std::size_t samples, double kl_weight,
                            std::vector<Tensor>* grads) {
  return free_energy_impl(net, batch, labels, nullptr, nullptr, &rng, samples, kl_weight, grads);
}

FreeEnergyParts free_energy_with(BayesNet& net, const Tensor& batch, std::span<const int> labels,
                                 const std::vector<LayerNoise>& forward_noise,
                                 const std::vector<Tensor>& kl_eps, double kl_weight,
                                 std::vector<Tensor>* grads) {
  return free_energy_impl(net, batch, labels, &forward_noise, &kl_eps, nullptr,
                          forward_noise.size(), kl_weight, grads);
}

Tensor predictive_mc(BayesNet& net, const Tensor& input, SeededRng& rng, std::size_t samples) {
  if (samples < 1) throw std::invalid_argument("predictive_mc: need at least one sample");
  Tensor acc;
  for (std::size_t s = 0; s < samples; ++s) {
    const LayerNoise noise = draw_noise(net, input.shape(), rng);
    Tensor probs = nn::softmax_rows(bayes_forward(net, input, noise));
    if (s == 0)
      acc = std::move(probs);
    else
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += probs[i];
  }
  for (double& v : acc.data()) v /= static_cast<double>(samples);
  return acc;
}

}  // namespace vrcv::bayes
