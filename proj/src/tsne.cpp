#include "vrcv/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "vrcv/csv.hpp"

namespace vrcv::tsne {

Tensor squared_distances(const Tensor& points) {
  const std::size_t n = points.dim(0), d = points.dim(1);
  Tensor d2({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < d; ++p) {
        const double diff = points(i, p) - points(j, p);
        s += diff * diff;
      }
      d2(i, j) = s;
      d2(j, i) = s;
    }
  return d2;
}

Calibration calibrate_perplexity(const Tensor& d2, double perplexity) {
  const std::size_t n = d2.dim(0);
  if (d2.rank() != 2 || d2.dim(1) != n)
    throw std::invalid_argument("calibrate_perplexity: distances must be square");
  if (!(perplexity < static_cast<double>(n)))
    throw std::invalid_argument("calibrate_perplexity: perplexity must be below n");

  Calibration cal;
  cal.p_conditional = Tensor({n, n});
  cal.sigma.resize(n);

  std::vector<double> row(n);
  for (std::size_t i = 0; i < n; ++i) {
    double beta = 1.0, beta_lo = 0.0, beta_hi = std::numeric_limits<double>::infinity();
    double achieved = 0.0;
    bool ok = false;
    for (int it = 0; it < 100; ++it) {
      // p_j|i ~ exp(-beta d2_ij), j != i
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) mx = std::max(mx, -beta * d2(i, j));
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        row[j] = (j == i) ? 0.0 : std::exp(-beta * d2(i, j) - mx);
      for (std::size_t j = 0; j < n; ++j) z += row[j];
      double h_bits = 0.0;  // entropy in bits
      for (std::size_t j = 0; j < n; ++j) {
        row[j] /= z;
        if (row[j] > 0.0) h_bits -= row[j] * std::log2(row[j]);
      }
      achieved = std::pow(2.0, h_bits);
      if (std::abs(achieved - perplexity) <= 1e-3) {
        ok = true;
        break;
      }
      if (achieved > perplexity) {
        beta_lo = beta;  // too flat: sharpen
        beta = std::isinf(beta_hi) ? beta * 2.0 : 0.5 * (beta_lo + beta_hi);
      } else {
        beta_hi = beta;
        beta = (beta_lo == 0.0) ? beta * 0.5 : 0.5 * (beta_lo + beta_hi);
      }
    }
    if (!ok)
      throw std::runtime_error("calibrate_perplexity: no bandwidth reaches the target for point " +
                               std::to_string(i));
    for (std::size_t j = 0; j < n; ++j) cal.p_conditional(i, j) = row[j];
    cal.sigma[i] = std::sqrt(0.5 / beta);
  }
  return cal;
}

AffinityMatrix symmetrize(const Tensor& p_conditional) {
  const std::size_t n = p_conditional.dim(0);
  AffinityMatrix aff{Tensor({n, n})};
  const double scale = 1.0 / (2.0 * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      aff.p(i, j) = (p_conditional(i, j) + p_conditional(j, i)) * scale;
  return aff;
}

EmbeddingState init_embedding(std::size_t n, SeededRng& rng) {
  EmbeddingState st;
  st.y = rng.normal({n, 2});
  for (double& v : st.y.data()) v *= 1e-2;  // variance 1e-4
  st.inc = Tensor({n, 2});
  st.gains = Tensor::full({n, 2}, 1.0);
  return st;
}

double tsne_step(const AffinityMatrix& p, EmbeddingState& state, const TsneConfig& cfg) {
  const std::size_t n = state.y.dim(0);
  const bool exaggerate = state.iteration < cfg.exaggeration_until;
  const double p_scale = exaggerate ? cfg.early_exaggeration : 1.0;
  const double momentum =
      state.iteration < cfg.momentum_switch ? cfg.momentum_start : cfg.momentum_late;

  // Student-t kernel weights and normalizer
  Tensor w({n, n});
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = state.y(i, 0) - state.y(j, 0);
      const double dy = state.y(i, 1) - state.y(j, 1);
      const double v = 1.0 / (1.0 + dx * dx + dy * dy);
      w(i, j) = v;
      w(j, i) = v;
      z += 2.0 * v;
    }

  Tensor grad({n, 2});
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double q = std::max(w(i, j) / z, 1e-300);
      const double coeff = 4.0 * (p_scale * p.p(i, j) - q) * w(i, j);
      grad(i, 0) += coeff * (state.y(i, 0) - state.y(j, 0));
      grad(i, 1) += coeff * (state.y(i, 1) - state.y(j, 1));
      if (p.p(i, j) > 0.0 && j > i) kl += 2.0 * p.p(i, j) * std::log(p.p(i, j) / q);
    }

  double grad_norm = 0.0;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const bool same_sign = (grad[i] > 0.0) == (state.inc[i] > 0.0);
    state.gains[i] = same_sign ? state.gains[i] * 0.8 : state.gains[i] + 0.2;
    state.gains[i] = std::max(state.gains[i], cfg.min_gain);
    state.inc[i] = momentum * state.inc[i] - cfg.learning_rate * state.gains[i] * grad[i];
    state.y[i] += state.inc[i];
    grad_norm = std::max(grad_norm, std::abs(grad[i]));
  }
  // recenter
  double mean_x = 0.0, mean_y = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_x += state.y(i, 0);
    mean_y += state.y(i, 1);
  }
  mean_x /= static_cast<double>(n);
  mean_y /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    state.y(i, 0) -= mean_x;
    state.y(i, 1) -= mean_y;
  }
  if (!state.y.all_finite()) throw std::runtime_error("tsne_step: non-finite coordinates");

  ++state.iteration;
  state.kl_trace.push_back(kl);
  return grad_norm;
}

TsneResult run_tsne(const Tensor& latents, const TsneConfig& cfg, SeededRng& rng) {
  const std::size_t n_total = latents.dim(0), d = latents.dim(1);
  if (n_total < 10) throw std::invalid_argument("run_tsne: need at least 10 points");

  TsneResult res;
  res.sampled.resize(n_total);
  for (std::size_t i = 0; i < n_total; ++i) res.sampled[i] = i;
  if (cfg.subsample_cap > 0 && n_total > cfg.subsample_cap) {
    SeededRng sub = rng.derive("tsne.subsample");
    sub.shuffle(res.sampled);
    res.sampled.resize(cfg.subsample_cap);
    std::sort(res.sampled.begin(), res.sampled.end());
  }
  const std::size_t n = res.sampled.size();
  Tensor pts({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < d; ++p) pts(i, p) = latents(res.sampled[i], p);

  const Tensor d2 = squared_distances(pts);
  const Calibration cal = calibrate_perplexity(d2, cfg.perplexity);
  const AffinityMatrix aff = symmetrize(cal.p_conditional);

  SeededRng init_rng = rng.derive("tsne.init");
  EmbeddingState state = init_embedding(n, init_rng);
  for (int it = 0; it < cfg.iters; ++it) tsne_step(aff, state, cfg);

  res.y = std::move(state.y);
  res.kl_trace = std::move(state.kl_trace);
  return res;
}

void write_tsne_csv(const std::string& path, const TsneResult& result,
                    std::span<const int> class_labels, std::span<const int> fold_ids) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_tsne_csv: cannot open " + path);
  out << "x,y,class_label,fold_id\n";
  for (std::size_t i = 0; i < result.sampled.size(); ++i) {
    const std::size_t row = result.sampled[i];
    out << csv::fmt(result.y(i, 0)) << "," << csv::fmt(result.y(i, 1)) << ","
        << class_labels[row] << "," << fold_ids[row] << "\n";
  }
  if (!out.good()) throw std::runtime_error("write_tsne_csv: write failed for " + path);
}

}  // namespace vrcv::tsne
