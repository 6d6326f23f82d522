#include "vrcv/vae.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "vrcv/checkpoint.hpp"
#include "vrcv/optim.hpp"

namespace vrcv::vae {

using nn::LayerSpec;
using nn::Mode;

namespace {

void check_pixels(const Tensor& batch) {
  for (double v : batch.data())
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument("vae: pixel values must lie in [0,1]");
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::vector<Tensor*> VaeModel::all_params() {
  std::vector<Tensor*> out = encoder.params();
  for (Tensor* t : decoder_fc.params()) out.push_back(t);
  for (Tensor* t : decoder_conv.params()) out.push_back(t);
  return out;
}

std::vector<std::string> VaeModel::all_param_names() const {
  std::vector<std::string> out = encoder.param_names("enc.");
  for (auto& n : decoder_fc.param_names("decfc.")) out.push_back(n);
  for (auto& n : decoder_conv.param_names("decconv.")) out.push_back(n);
  return out;
}

std::vector<Tensor*> VaeModel::all_buffers() {
  std::vector<Tensor*> out = encoder.buffers();
  for (Tensor* t : decoder_fc.buffers()) out.push_back(t);
  for (Tensor* t : decoder_conv.buffers()) out.push_back(t);
  return out;
}

std::vector<std::string> VaeModel::all_buffer_names() const {
  std::vector<std::string> out = encoder.buffer_names("enc.");
  for (auto& n : decoder_fc.buffer_names("decfc.")) out.push_back(n);
  for (auto& n : decoder_conv.buffer_names("decconv.")) out.push_back(n);
  return out;
}

VaeModel make_vae(const VaeConfig& cfg, SeededRng& rng) {
  VaeModel m;
  m.cfg = cfg;
  const std::size_t side = cfg.image_side;
  const std::size_t dz = cfg.latent_dim;

  if (cfg.arch == "paper") {
    if (side % 4 != 0) throw std::invalid_argument("vae: paper arch needs image side % 4 == 0");
    const std::size_t q = side / 4;
    m.encoder.add(LayerSpec::conv2d(1, 64, 4, 2, 1));
    m.encoder.add(LayerSpec::leaky_relu(0.2));
    m.encoder.add(LayerSpec::conv2d(64, 128, 4, 2, 1));
    m.encoder.add(LayerSpec::batchnorm(128));
    m.encoder.add(LayerSpec::leaky_relu(0.2));
    m.encoder.add(LayerSpec::dense(128 * q * q, 1024));
    m.encoder.add(LayerSpec::batchnorm(1024));
    m.encoder.add(LayerSpec::leaky_relu(0.2));
    m.encoder.add(LayerSpec::dense(1024, 2 * dz));

    m.decoder_fc.add(LayerSpec::dense(dz, 1024));
    m.decoder_fc.add(LayerSpec::batchnorm(1024));
    m.decoder_fc.add(LayerSpec::relu());
    m.decoder_fc.add(LayerSpec::dense(1024, 128 * q * q));
    m.decoder_fc.add(LayerSpec::batchnorm(128 * q * q));
    m.decoder_fc.add(LayerSpec::relu());

    m.decoder_conv.add(LayerSpec::deconv2d(128, 64, 4, 2, 1));
    m.decoder_conv.add(LayerSpec::batchnorm(64));
    m.decoder_conv.add(LayerSpec::relu());
    m.decoder_conv.add(LayerSpec::deconv2d(64, 1, 4, 2, 1));
  } else if (cfg.arch == "desk") {
    const std::size_t d = side * side;
    m.encoder.add(LayerSpec::dense(d, cfg.hidden));
    m.encoder.add(LayerSpec::leaky_relu(0.2));
    m.encoder.add(LayerSpec::dense(cfg.hidden, 2 * dz));

    m.decoder_fc.add(LayerSpec::dense(dz, cfg.hidden));
    m.decoder_fc.add(LayerSpec::leaky_relu(0.2));
    m.decoder_fc.add(LayerSpec::dense(cfg.hidden, d));
  } else {
    throw std::invalid_argument("vae: unknown arch '" + cfg.arch + "'");
  }

  SeededRng r_enc = rng.derive("vae.enc");
  SeededRng r_fc = rng.derive("vae.decfc");
  SeededRng r_conv = rng.derive("vae.decconv");
  m.encoder.init(r_enc);
  m.decoder_fc.init(r_fc);
  m.decoder_conv.init(r_conv);
  return m;
}

LatentPosterior encode(VaeModel& model, const Tensor& batch, Mode mode) {
  const std::size_t side = model.cfg.image_side;
  if (batch.rank() != 4 || batch.dim(1) != 1 || batch.dim(2) != side || batch.dim(3) != side)
    throw std::invalid_argument("encode: expected [m,1," + std::to_string(side) + "," +
                                std::to_string(side) + "], got " +
                                Tensor::shape_str(batch.shape()));
  const std::size_t m = batch.dim(0), dz = model.cfg.latent_dim;
  Tensor head = model.encoder.forward(batch, mode);
  LatentPosterior post{Tensor({m, dz}), Tensor({m, dz})};
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < dz; ++j) {
      post.mu(i, j) = head(i, j);
      post.logvar(i, j) = head(i, dz + j);
    }
  return post;
}

Tensor reparameterize_with(const LatentPosterior& post, const Tensor& eps) {
  if (!eps.same_shape(post.mu))
    throw std::invalid_argument("reparameterize: noise shape mismatch");
  Tensor z(post.mu.shape());
  for (std::size_t i = 0; i < z.size(); ++i)
    z[i] = post.mu[i] + std::exp(0.5 * post.logvar[i]) * eps[i];
  return z;
}

Tensor reparameterize(const LatentPosterior& post, SeededRng& rng) {
  return reparameterize_with(post, rng.normal(post.mu.shape()));
}

Tensor decode(VaeModel& model, const Tensor& z, Mode mode) {
  const std::size_t m = z.dim(0), side = model.cfg.image_side;
  Tensor h = model.decoder_fc.forward(z, mode);
  if (!model.decoder_conv.specs.empty()) {
    const std::size_t q = side / 4;
    h = model.decoder_conv.forward(h.reshaped({m, 128, q, q}), mode);
  }
  Tensor out = h.reshaped({m, 1, side, side});
  for (double& v : out.data()) v = stable_sigmoid(v);
  return out;
}

double kl_closed_form(const LatentPosterior& post) {
  const std::size_t m = post.mu.dim(0);
  double kl = 0.0;
  for (std::size_t i = 0; i < post.mu.size(); ++i) {
    const double mu = post.mu[i], lv = post.logvar[i];
    kl += 0.5 * (mu * mu + std::exp(lv) - 1.0 - lv);
  }
  return kl / static_cast<double>(m);
}

namespace {

struct ForwardTrace {
  std::vector<nn::FwdCache> enc, fc, conv;
  LatentPosterior post;
  Tensor eps, z, logits;  // logits flattened to [m, pixels]
};

ElboParts run_forward(VaeModel& model, const Tensor& batch, const Tensor& eps, Mode mode,
                      ForwardTrace* trace) {
  check_pixels(batch);
  const std::size_t m = batch.dim(0), side = model.cfg.image_side;
  const std::size_t dz = model.cfg.latent_dim;

  std::vector<nn::FwdCache> enc_caches;
  Tensor head = model.encoder.forward(batch, mode, trace ? &enc_caches : nullptr);
  LatentPosterior post{Tensor({m, dz}), Tensor({m, dz})};
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < dz; ++j) {
      post.mu(i, j) = head(i, j);
      post.logvar(i, j) = head(i, dz + j);
    }

  Tensor z = reparameterize_with(post, eps);

  std::vector<nn::FwdCache> fc_caches, conv_caches;
  Tensor h = model.decoder_fc.forward(z, mode, trace ? &fc_caches : nullptr);
  if (!model.decoder_conv.specs.empty()) {
    const std::size_t q = side / 4;
    h = model.decoder_conv.forward(h.reshaped({m, 128, q, q}), mode,
                                   trace ? &conv_caches : nullptr);
  }
  Tensor logits = h.reshaped({m, side * side});

  ElboParts parts;
  const bool bernoulli = model.cfg.likelihood == "bernoulli";
  double rec = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double l = logits[i], x = batch[i];
    if (bernoulli)
      rec += std::max(l, 0.0) - l * x + std::log1p(std::exp(-std::abs(l)));
    else {
      const double y = stable_sigmoid(l);
      rec += 0.5 * (y - x) * (y - x);
    }
  }
  parts.recon = rec / static_cast<double>(m);
  parts.kl = kl_closed_form(post);
  parts.total = parts.recon + parts.kl;

  if (trace) {
    trace->enc = std::move(enc_caches);
    trace->fc = std::move(fc_caches);
    trace->conv = std::move(conv_caches);
    trace->post = std::move(post);
    trace->eps = eps;
    trace->z = std::move(z);
    trace->logits = std::move(logits);
  }
  return parts;
}

}  // namespace

ElboParts elbo_value(VaeModel& model, const Tensor& batch, const Tensor& eps) {
  VaeModel scratch = model;  // keep running stats of the caller intact
  return run_forward(scratch, batch, eps, Mode::Train, nullptr);
}

ElboParts elbo_loss_grads(VaeModel& model, const Tensor& batch, const Tensor& eps,
                          std::vector<Tensor>& grads) {
  const std::size_t m = batch.dim(0), side = model.cfg.image_side;
  const std::size_t dz = model.cfg.latent_dim;
  ForwardTrace tr;
  ElboParts parts = run_forward(model, batch, eps, Mode::Train, &tr);

  const bool bernoulli = model.cfg.likelihood == "bernoulli";
  Tensor dlogits({m, side * side});
  for (std::size_t i = 0; i < dlogits.size(); ++i) {
    const double y = stable_sigmoid(tr.logits[i]);
    if (bernoulli)
      dlogits[i] = (y - batch[i]) / static_cast<double>(m);
    else
      dlogits[i] = (y - batch[i]) * y * (1.0 - y) / static_cast<double>(m);
  }

  std::vector<Tensor> g_conv, g_fc, g_enc;
  Tensor dz_t;
  if (!model.decoder_conv.specs.empty()) {
    const std::size_t q = side / 4;
    Tensor d4 = model.decoder_conv.backward(dlogits.reshaped({m, 1, side, side}), tr.conv, g_conv);
    dz_t = model.decoder_fc.backward(d4.reshaped({m, 128 * q * q}), tr.fc, g_fc);
  } else {
    dz_t = model.decoder_fc.backward(dlogits, tr.fc, g_fc);
  }

  // z = mu + exp(lv/2) eps; KL adds mu/m and 0.5(exp(lv)-1)/m
  Tensor dhead({m, 2 * dz});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < dz; ++j) {
      const double lv = tr.post.logvar(i, j);
      const double dmu = dz_t(i, j) + tr.post.mu(i, j) / static_cast<double>(m);
      const double dlv = dz_t(i, j) * 0.5 * std::exp(0.5 * lv) * tr.eps(i, j) +
                         0.5 * (std::exp(lv) - 1.0) / static_cast<double>(m);
      dhead(i, j) = dmu;
      dhead(i, dz + j) = dlv;
    }
  model.encoder.backward(dhead, tr.enc, g_enc);

  grads.clear();
  for (auto& t : g_enc) grads.push_back(std::move(t));
  for (auto& t : g_fc) grads.push_back(std::move(t));
  for (auto& t : g_conv) grads.push_back(std::move(t));
  return parts;
}

ElboParts elbo_loss(VaeModel& model, const Tensor& batch, SeededRng& rng,
                    std::vector<Tensor>& grads) {
  const Tensor eps = rng.normal({batch.dim(0), model.cfg.latent_dim});
  return elbo_loss_grads(model, batch, eps, grads);
}

VaeModel train_vae(const Tensor& images, const VaeConfig& cfg, SeededRng rng,
                   std::vector<double>* trace) {
  if (images.rank() != 4) throw std::invalid_argument("train_vae: images must be [n,1,h,w]");
  const std::size_t n = images.dim(0);
  if (cfg.epochs > 0 && n < 2 * cfg.batch)
    throw std::invalid_argument("train_vae: need at least 2*batch_size instances, got " +
                                std::to_string(n));

  VaeModel model = make_vae(cfg, rng);
  if (cfg.epochs == 0) return model;

  SeededRng rng_shuffle = rng.derive("vae.shuffle");
  SeededRng rng_noise = rng.derive("vae.noise");
  nn::Adam opt(nn::AdamConfig{.lr = cfg.lr});
  const auto names = model.all_param_names();
  const std::size_t side = cfg.image_side;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng_shuffle.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch) {
      const std::size_t bs = std::min(cfg.batch, n - start);
      if (bs < 2) continue;  // train-mode batchnorm needs >= 2
      Tensor batch({bs, 1, side, side});
      for (std::size_t i = 0; i < bs; ++i) {
        const std::size_t src = order[start + i] * side * side;
        for (std::size_t px = 0; px < side * side; ++px)
          batch[i * side * side + px] = images[src + px];
      }
      std::vector<Tensor> grads;
      const ElboParts parts = elbo_loss(model, batch, rng_noise, grads);
      if (!std::isfinite(parts.total))
        throw std::runtime_error("train_vae: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batches));
      auto params = model.all_params();
      opt.step(params, grads, names);
      epoch_loss += parts.total;
      ++batches;
    }
    if (trace) trace->push_back(batches ? epoch_loss / static_cast<double>(batches) : 0.0);
  }
  return model;
}

Tensor extract_latents(VaeModel& model, const Tensor& images, std::size_t batch) {
  const std::size_t n = images.dim(0), side = model.cfg.image_side;
  const std::size_t dz = model.cfg.latent_dim;
  Tensor out({n, dz});
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t bs = std::min(batch, n - start);
    Tensor b({bs, 1, side, side});
    for (std::size_t i = 0; i < bs * side * side; ++i) b[i] = images[start * side * side + i];
    LatentPosterior post = encode(model, b, Mode::Eval);
    for (std::size_t i = 0; i < bs; ++i)
      for (std::size_t j = 0; j < dz; ++j) out(start + i, j) = post.mu(i, j);
  }
  return out;
}

void save_vae(const VaeModel& model, const std::string& stem) {
  VaeModel& m = const_cast<VaeModel&>(model);
  std::vector<std::string> names = m.all_param_names();
  std::vector<const Tensor*> tensors;
  for (Tensor* t : m.all_params()) tensors.push_back(t);
  for (Tensor* t : m.all_buffers()) tensors.push_back(t);
  for (auto& n : m.all_buffer_names()) names.push_back(n);
  nn::save_checkpoint(stem, names, tensors);
}

}  // namespace vrcv::vae
