// Spectral independence loss over an ensemble of Q-values.
//
// Pipeline per evaluation: fill a D x D symmetric matrix with a seeded random
// permutation of the N ensemble values (D = floor((sqrt(1+8N)-1)/2), so the
// D(D+1)/2 distinct cells consume at most N values), normalize the distinct
// entries to zero mean / unit variance, scale by 1/sqrt(D), take eigenvalues,
// and score the ESD against the soft semicircle target. Gradients flow back
// to each consumed ensemble value through the eigenvalues, the 1/sqrt(D)
// scale, and the normalization statistics themselves.

#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "spqr/sym_matrix.hpp"

namespace spqr {

struct QMatrixBuild {
    SymMatrix matrix;
    // Ensemble index feeding each lower-triangle cell, row-major:
    // (0,0), (1,0), (1,1), (2,0), ... Injective over the lower triangle.
    std::vector<int> index_map;
    std::vector<int> perm; // permutation of 0..N-1 applied before filling
    int used = 0;          // D(D+1)/2 consumed values
    int n_values = 0;
};

inline int q_matrix_dim(int n_values) {
    return static_cast<int>((std::sqrt(1.0 + 8.0 * static_cast<double>(n_values)) - 1.0) / 2.0);
}

QMatrixBuild build_q_matrix(const Eigen::VectorXd& qvals, std::uint64_t perm_seed);

struct NormalizedQMatrix {
    SymMatrix matrix;
    double mu = 0.0;
    double sigma = 0.0; // statistic actually used (clamped below by sigma_floor)
    bool clamped = false;
};

inline constexpr double default_sigma_floor = 1e-6;

// Zero-mean / unit-variance normalization over the D(D+1)/2 distinct entries
// (population standard deviation, clamped below by sigma_floor).
NormalizedQMatrix normalize_matrix(const QMatrixBuild& build,
                                   double sigma_floor = default_sigma_floor);

struct SpqrLossOut {
    double loss = 0.0;
    Eigen::VectorXd grad_q; // length N; zero at unused ensemble indices
    double mu = 0.0;
    double sigma = 0.0;
};

// Backward treatment of the normalization statistics. `full` is the exact
// derivative of the pipeline (what finite differences measure). `stopped`
// freezes (mu, sigma): their chain terms are identical for every value in a
// row, so dropping them removes a common-mode component that would push all
// ensemble members together; trainers use this variant.
enum class NormalizationGrad { full, stopped };

SpqrLossOut spqr_loss_single(const Eigen::VectorXd& qvals, double rho, double eps,
                             std::uint64_t perm_seed,
                             double sigma_floor = default_sigma_floor,
                             NormalizationGrad norm_grad = NormalizationGrad::full);

struct SpqrBatchOut {
    double loss = 0.0;       // mean over batch rows
    Eigen::MatrixXd grads;   // |B| x N, scaled by 1/|B|
};

// Row j uses permutation seed perm_seed + j.
SpqrBatchOut spqr_loss_batch(const Eigen::MatrixXd& qmat, double rho, double eps,
                             std::uint64_t perm_seed,
                             double sigma_floor = default_sigma_floor,
                             NormalizationGrad norm_grad = NormalizationGrad::full);

} // namespace spqr
