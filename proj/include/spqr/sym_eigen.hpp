// Dense symmetric eigendecomposition and its analytic backward pass.
//
// For X = U diag(lambda) U^T and a scalar loss L:
//   - when L depends on the eigenvalues only, dL/dX = U diag(dL/dlambda) U^T,
//     which stays valid under repeated eigenvalues;
//   - in the general case
//       dL/dX = U { sym(K^T o (U^T dL/dU)) + diag(dL/dlambda) } U^T
//     with K_ij = 1/(lambda_i - lambda_j) off the diagonal and zero on it,
//     o the Hadamard product and sym(A) = (A + A^T)/2. The symmetrization
//     sits outside the Hadamard product: that is the form whose contraction
//     with symmetric perturbations reproduces finite differences, and it is
//     what keeps the output symmetric.

#pragma once

#include <Eigen/Dense>

#include "spqr/spectral_core.hpp"
#include "spqr/sym_matrix.hpp"

namespace spqr {

// Gradient of a scalar loss with respect to a symmetric input matrix.
struct EigenGrad {
    Eigen::MatrixXd dL_dX;
};

// Eigendecomposition with ascending eigenvalues and a deterministic sign
// convention (each eigenvector column is flipped so that its
// largest-magnitude entry is positive). Dense path only, dim <= 4096.
Spectrum eigh(const SymMatrix& x);

// Backward pass for eigenvalue-only losses: U diag(g) U^T.
EigenGrad eigh_backward_values(const Spectrum& spectrum, const Eigen::VectorXd& g);

// Full backward pass including the eigenvector term. Requires all eigenvalue
// gaps to exceed degenerate_gap_threshold; throws std::domain_error otherwise
// (callers must fall back or skip).
inline constexpr double degenerate_gap_threshold = 1e-8;
EigenGrad eigh_backward_full(const Spectrum& spectrum, const Eigen::VectorXd& g_values,
                             const Eigen::MatrixXd& g_vectors);

} // namespace spqr
