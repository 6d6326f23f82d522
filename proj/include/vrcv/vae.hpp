#pragma once

#include <string>
#include <vector>

#include "vrcv/net.hpp"

namespace vrcv::vae {

struct VaeConfig {
  std::string arch = "desk";             // "desk" (dense) or "paper" (conv)
  std::size_t image_side = 28;
  std::size_t latent_dim = 62;
  std::size_t hidden = 256;              // desk hidden width
  std::string likelihood = "bernoulli";  // "bernoulli" or "gaussian"
  std::size_t epochs = 50;
  std::size_t batch = 64;
  double lr = 1e-3;
};

/// Per-instance variational mean and log-variance of q(z|x).
struct LatentPosterior {
  Tensor mu;      // [m, d_z]
  Tensor logvar;  // [m, d_z]
};

/// Encoder ends in a dense 2*d_z head (mean and log-variance). The decoder
/// emits pre-sigmoid logits; decode() applies the terminal sigmoid. The
/// "paper" arch is the stride-2 4x4 conv chain 28x28x1 -> 14x14x64 ->
/// 7x7x128 -> 1024 -> d_z with the mirrored deconv decoder; "desk" is the
/// dense D -> hidden -> 2*d_z stack and mirror.
struct VaeModel {
  VaeConfig cfg;
  nn::Sequential encoder;
  nn::Sequential decoder_fc;
  nn::Sequential decoder_conv;  // empty for the desk arch

  std::vector<Tensor*> all_params();
  std::vector<std::string> all_param_names() const;
  std::vector<Tensor*> all_buffers();
  std::vector<std::string> all_buffer_names() const;
};

VaeModel make_vae(const VaeConfig& cfg, SeededRng& rng);

/// Posterior (mu, logvar) for a batch [m,1,side,side].
LatentPosterior encode(VaeModel& model, const Tensor& batch, nn::Mode mode = nn::Mode::Eval);

/// z = mu + exp(logvar/2) * eps with eps ~ N(0, I).
Tensor reparameterize(const LatentPosterior& post, SeededRng& rng);
Tensor reparameterize_with(const LatentPosterior& post, const Tensor& eps);

/// Decoded Bernoulli means in (0,1) for latent codes z [m, d_z].
Tensor decode(VaeModel& model, const Tensor& z, nn::Mode mode = nn::Mode::Eval);

struct ElboParts {
  double total = 0.0;  // negative ELBO (training loss)
  double recon = 0.0;  // reconstruction negative log-likelihood term
  double kl = 0.0;     // closed-form KL(q(z|x) || N(0,I))
};

/// Closed-form KL term, summed over latent dims, averaged over the batch.
double kl_closed_form(const LatentPosterior& post);

/// Negative-ELBO value only (train-mode forward with the supplied noise).
ElboParts elbo_value(VaeModel& model, const Tensor& batch, const Tensor& eps);

/// Negative ELBO and gradients for all parameters (all_params order); the
/// reparameterization noise is explicit so gradients are checkable.
ElboParts elbo_loss_grads(VaeModel& model, const Tensor& batch, const Tensor& eps,
                          std::vector<Tensor>& grads);

/// Draws the noise and delegates to elbo_loss_grads.
ElboParts elbo_loss(VaeModel& model, const Tensor& batch, SeededRng& rng,
                    std::vector<Tensor>& grads);

/// Minibatch Adam training; epoch mean losses go to `trace` when non-null.
VaeModel train_vae(const Tensor& images, const VaeConfig& cfg, SeededRng rng,
                   std::vector<double>* trace = nullptr);

/// Posterior means for every instance, in input order ([n, d_z], eval mode).
Tensor extract_latents(VaeModel& model, const Tensor& images, std::size_t batch = 256);

void save_vae(const VaeModel& model, const std::string& stem);

}  // namespace vrcv::vae
