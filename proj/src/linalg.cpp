#include "vrcv/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vrcv {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw std::invalid_argument("matmul: both operands must be rank 2");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw std::invalid_argument("matmul: inner extents disagree, " +
                                Tensor::shape_str(a.shape()) + " x " +
                                Tensor::shape_str(b.shape()));
  Tensor out({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * n;
      double* orow = po + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor cholesky(const Tensor& a) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1))
    throw std::invalid_argument("cholesky: input must be square");
  const std::size_t d = a.dim(0);
  double scale = 0.0;
  for (double v : a.data()) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j)
      if (std::abs(a(i, j) - a(j, i)) > 1e-8 * std::max(1.0, scale))
        throw std::invalid_argument("cholesky: input is not symmetric");

  Tensor lower({d, d});
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a(i, j);
      for (std::size_t p = 0; p < j; ++p) s -= lower(i, p) * lower(j, p);
      if (i == j) {
        if (!(s > 0.0))
          throw std::runtime_error("cholesky: non-positive pivot at row " + std::to_string(i) +
                                   " (matrix not positive definite)");
        lower(i, i) = std::sqrt(s);
      } else {
        lower(i, j) = s / lower(j, j);
      }
    }
  }
  return lower;
}

double cholesky_logdet(const Tensor& chol_lower) {
  const std::size_t d = chol_lower.dim(0);
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) s += std::log(chol_lower(i, i));
  return 2.0 * s;
}

std::vector<double> cholesky_solve(const Tensor& chol_lower, std::span<const double> b) {
  const std::size_t d = chol_lower.dim(0);
  if (b.size() != d) throw std::invalid_argument("cholesky_solve: rhs length mismatch");
  std::vector<double> y(d), x(d);
  for (std::size_t i = 0; i < d; ++i) {
    double s = b[i];
    for (std::size_t p = 0; p < i; ++p) s -= chol_lower(i, p) * y[p];
    y[i] = s / chol_lower(i, i);
  }
  for (std::size_t ii = d; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t p = ii + 1; p < d; ++p) s -= chol_lower(p, ii) * x[p];
    x[ii] = s / chol_lower(ii, ii);
  }
  return x;
}

Tensor cholesky_inverse(const Tensor& chol_lower) {
  const std::size_t d = chol_lower.dim(0);
  Tensor inv({d, d});
  std::vector<double> e(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    e[j] = 1.0;
    auto col = cholesky_solve(chol_lower, e);
    for (std::size_t i = 0; i < d; ++i) inv(i, j) = col[i];
    e[j] = 0.0;
  }
  // symmetrize away round-off
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) {
      const double v = 0.5 * (inv(i, j) + inv(j, i));
      inv(i, j) = inv(j, i) = v;
    }
  return inv;
}

EighResult jacobi_eigh(const Tensor& a, int max_sweeps) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1))
    throw std::invalid_argument("jacobi_eigh: input must be square");
  const std::size_t d = a.dim(0);
  Tensor m = a;
  Tensor v = Tensor::identity(d);

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j) off += m(i, j) * m(i, j);
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        if (std::abs(m(p, q)) < 1e-300) continue;
        const double theta = (m(q, q) - m(p, p)) / (2.0 * m(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t i = 0; i < d; ++i) {
          const double mip = m(i, p), miq = m(i, q);
          m(i, p) = c * mip - s * miq;
          m(i, q) = s * mip + c * miq;
        }
        for (std::size_t i = 0; i < d; ++i) {
          const double mpi = m(p, i), mqi = m(q, i);
          m(p, i) = c * mpi - s * mqi;
          m(q, i) = s * mpi + c * mqi;
        }
        for (std::size_t i = 0; i < d; ++i) {
          const double vip = v(i, p), viq = v(i, q);
          v(i, p) = c * vip - s * viq;
          v(i, q) = s * vip + c * viq;
        }
      }
    }
  }

  std::vector<std::size_t> order(d);
  for (std::size_t i = 0; i < d; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return m(x, x) < m(y, y); });

  EighResult res;
  res.values.resize(d);
  res.vectors = Tensor({d, d});
  for (std::size_t k = 0; k < d; ++k) {
    res.values[k] = m(order[k], order[k]);
    for (std::size_t i = 0; i < d; ++i) res.vectors(i, k) = v(i, order[k]);
  }
  return res;
}

Tensor pca_project(const Tensor& data, std::size_t out_dim) {
  if (data.rank() != 2) throw std::invalid_argument("pca_project: data must be rank 2");
  const std::size_t n = data.dim(0), d = data.dim(1);
  if (out_dim > d) throw std::invalid_argument("pca_project: out_dim exceeds input dim");
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += data(i, j);
  for (double& v : mean) v /= static_cast<double>(n);

  Tensor cov({d, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < d; ++p) {
      const double xp = data(i, p) - mean[p];
      for (std::size_t q = p; q < d; ++q) cov(p, q) += xp * (data(i, q) - mean[q]);
    }
  const double inv = 1.0 / static_cast<double>(n > 1 ? n - 1 : 1);
  for (std::size_t p = 0; p < d; ++p)
    for (std::size_t q = p; q < d; ++q) {
      cov(p, q) *= inv;
      cov(q, p) = cov(p, q);
    }

  const EighResult eig = jacobi_eigh(cov);
  Tensor out({n, out_dim});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < out_dim; ++k) {
      // top components live at the high end of the ascending spectrum
      const std::size_t col = d - 1 - k;
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += (data(i, j) - mean[j]) * eig.vectors(j, col);
      out(i, k) = s;
    }
  return out;
}

}  // namespace vrcv
