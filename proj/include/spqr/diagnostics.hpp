// Statistical evidence toolkit: chi-square uniformity and independence
// tests (p-values from the regularized incomplete gamma function), Pearson
// correlation matrices, Monte-Carlo bias statistics, spike histograms over
// ensemble Q-values, and the weak-detection error curve of the KL test
// against its erfc(sqrt(-log(1-psi^2))/4) asymptotic reference.

#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "spqr/ensemble.hpp"
#include "spqr/gridworld.hpp"

namespace spqr {

// Regularized incomplete gamma functions, absolute error < 1e-10
// (series expansion for x < a + 1, Lentz continued fraction otherwise).
double regularized_gamma_p(double a, double x);
double regularized_gamma_q(double a, double x);

// Survival function of the chi-square distribution with dof degrees.
double chi2_sf(double x, int dof);

struct TestReport {
    double statistic = 0.0;
    int dof = 1;
    double p_value = 0.0;
    double alpha = 0.025;
    bool accept = false;
    bool degenerate = false;  // degenerate inputs force a rejection
    bool low_counts = false;  // classical validity rule n >= 5 * bins violated
};

// Goodness of fit against a uniform distribution over [min, max] of the
// samples, with `bins` equal-width bins and dof = bins - 1.
TestReport chi2_uniform(const std::vector<double>& samples, int bins, double alpha);

// Independence of two samples via a bins x bins contingency table over
// per-variable equal-width bins; empty rows/columns are dropped and the
// degrees of freedom adjusted.
TestReport chi2_independence(const std::vector<double>& x, const std::vector<double>& y,
                             int bins, double alpha);

struct PearsonResult {
    Eigen::MatrixXd corr;                        // NaN where undefined
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> defined;
    double mean_abs_offdiag = 0.0;               // over defined entries
};

PearsonResult pearson_matrix(const Eigen::MatrixXd& q_table);

struct BiasStats {
    double mean_norm_bias = 0.0;
    double std_norm_bias = 0.0;
    double mean_return = 0.0; // normalization denominator before flooring
};

// Per (s, a) pair: bias = ens_eval(Q(s, a)) - Monte-Carlo return of the
// policy; normalized by max(|mean return over the set|, 1e-6).
BiasStats bias_stats(const QEnsemble& ensemble, const GridWorld& world,
                     const GridPolicy& policy, EvalRule rule,
                     const std::vector<std::pair<int, int>>& eval_states, int n_rollouts,
                     std::uint64_t seed);

struct SpikeHistogram {
    Eigen::VectorXd bin_left;
    Eigen::VectorXd bin_right;
    Eigen::VectorXi counts;
    long total_spikes = 0;
    long rows = 0;
    double mean_kl = 0.0;
};

// Q-matrix pipeline (build / normalize / eigendecompose at 1/sqrt(D)) per
// row of `q_table` (|B| x N); collects every eigenvalue with |lambda| > 2.
SpikeHistogram spike_histogram_values(const Eigen::MatrixXd& q_table, double rho, double eps,
                                      int bins, std::uint64_t perm_seed);

// Ensemble wrapper: rows are member Q-values at the given (cell, action)
// pairs.
SpikeHistogram spike_histogram(const QEnsemble& ensemble, const GridWorld& world,
                               const std::vector<std::pair<int, int>>& batch, double rho,
                               double eps, int bins);

struct DetectionCurve {
    Eigen::VectorXd psi_grid;
    Eigen::VectorXd empirical_error; // Type-I + Type-II estimate per psi
    Eigen::VectorXd erfc_reference;
    Eigen::VectorXd std_error;       // MC standard error of each estimate
    double kl_threshold = 0.0;
};

// Classifies spiked samples by thresholding the KL statistic of the scaled
// eigenvalue distribution. Pass kl_threshold = NaN to calibrate it as the
// 95th percentile over 500 pure-noise draws at the same dimension.
DetectionCurve detection_experiment(const Eigen::VectorXd& psi_grid, int n_dim, int trials,
                                    double kl_threshold, std::uint64_t seed);

} // namespace spqr
