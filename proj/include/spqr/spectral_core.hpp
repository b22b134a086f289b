// Random-matrix primitives: Gaussian orthogonal ensemble sampling, the
// semicircle density p_sc(x) = sqrt(4 s^2 - x^2) / (2 pi s^2) on [-2s, 2s],
// empirical spectral densities, KL divergence against a soft semicircle
// target, spike counting, and rank-one-perturbed (spiked) matrix generation.

#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "spqr/sym_matrix.hpp"

namespace spqr {

// Eigendecomposition result. Eigenvalues ascending, eigenvector column k
// pairs with eigenvalue k, columns orthonormal.
struct Spectrum {
    Eigen::VectorXd eigenvalues;
    Eigen::MatrixXd eigenvectors;
    int source_dim = 0;
};

// Point-mass spectral distribution: mass[i] sits at points[i].
struct SpectralDensity {
    Eigen::VectorXd points;
    Eigen::VectorXd masses;
    double normalization = 0.0; // sum of masses
};

enum class SpikePrior { gaussian, rademacher };

// Rank-one perturbation model: Y = sqrt(psi/n) u v^T + W with W holding
// i.i.d. Normal(0, sigma_noise^2) entries and u, v drawn from zero-mean
// priors. The generator emits the symmetrized matrix (Y + Y^T) / 2.
struct SpikedModelParams {
    double psi = 0.0;                          // perturbation power, >= 0
    int n = 2;                                 // matrix dimension, >= 2
    SpikePrior prior = SpikePrior::gaussian;
    double sigma_noise = 1.0;                  // noise entry std, > 0
};

// Samples a GOE matrix: off-diagonal entries i.i.d. Normal(0, sigma^2)
// mirrored symmetrically, diagonal entries i.i.d. Normal(0, 2 sigma^2).
SymMatrix sample_goe(int dim, double sigma, std::uint64_t seed);

// Semicircle density of scale sigma; zero outside [-2 sigma, 2 sigma].
double semicircle_pdf(double lambda, double sigma);

// Closed-form CDF of the semicircle density.
double semicircle_cdf(double lambda, double sigma);

// epsilon-soft semicircle target used by the KL loss:
//   rho * sqrt(4 - x^2) / (2 pi)  inside the support, (1 - rho) * eps outside,
// clamped below by (1 - rho) * eps everywhere so the log never diverges.
double soft_semicircle_pdf(double lambda, double rho, double eps);

// Empirical spectral density: mass 1/D at each eigenvalue.
SpectralDensity esd(const Spectrum& spectrum);

struct KlToSemicircle {
    double loss = 0.0;
    Eigen::VectorXd dloss_dlambda;
};

// Discrete cross-entropy form of the divergence between the ESD and the soft
// semicircle target:
//   loss = sum_i (1/D) log((1/D) / p_soft(lambda_i))
// The per-eigenvalue derivative is (1/D) lambda / (4 - lambda^2) strictly
// inside the support and zero for |lambda| >= 2 - kl_gradient_guard (the
// constant branch, and a guard band where the analytic term blows up).
inline constexpr double kl_gradient_guard = 1e-3;
KlToSemicircle kl_to_semicircle(const Spectrum& spectrum, double rho, double eps);

// Number of eigenvalues with |lambda| > 2 + margin. Callers are expected to
// hand in a spectrum scaled so that the noise bulk lies in [-2, 2].
int count_spikes(const Spectrum& spectrum, double margin);

SymMatrix sample_spiked_wishart(const SpikedModelParams& params, std::uint64_t seed);

// Two-sided Kolmogorov-Smirnov distance between the empirical CDF of the
// eigenvalues and the semicircle CDF of scale sigma.
double ks_distance(const Spectrum& spectrum, double sigma);

} // namespace spqr
