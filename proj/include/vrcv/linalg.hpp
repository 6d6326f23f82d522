#pragma once

#include <vector>

#include "vrcv/tensor.hpp"

namespace vrcv {

/// Standard matrix product of a [m,k] and b [k,n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Lower-triangular L with L*L^T = a. Input must be symmetric positive
/// definite; a non-positive pivot raises std::runtime_error.
Tensor cholesky(const Tensor& a);

/// log|a| from its Cholesky factor: 2 * sum(log L_ii).
double cholesky_logdet(const Tensor& chol_lower);

/// Solve a x = b given the Cholesky factor of a.
std::vector<double> cholesky_solve(const Tensor& chol_lower, std::span<const double> b);

/// Dense inverse of a SPD matrix from its Cholesky factor.
Tensor cholesky_inverse(const Tensor& chol_lower);

/// Symmetric eigendecomposition via cyclic Jacobi rotations.
/// Returns eigenvalues ascending; columns of vectors are the eigenvectors.
struct EighResult {
  std::vector<double> values;
  Tensor vectors;
};
EighResult jacobi_eigh(const Tensor& a, int max_sweeps = 64);

/// PCA projection of row-vectors onto the top out_dim principal components.
Tensor pca_project(const Tensor& data, std::size_t out_dim);

}  // namespace vrcv
