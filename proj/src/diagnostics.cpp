#include "spqr/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "spqr/rng.hpp"
#include "spqr/spectral_core.hpp"
#include "spqr/spqr_loss.hpp"
#include "spqr/sym_eigen.hpp"

namespace spqr {

namespace {

constexpr double kGammaEps = 1e-14;
constexpr int kGammaMaxIter = 500;

double gamma_p_series(double a, double x) {
    double term = 1.0 / a;
    double sum = term;
    double ap = a;
    for (int n = 0; n < kGammaMaxIter; ++n) {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if (std::abs(term) < std::abs(sum) * kGammaEps)
            break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

double gamma_q_continued_fraction(double a, double x) {
    // Modified Lentz evaluation of the continued fraction for Q(a, x).
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= kGammaMaxIter; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny)
            d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny)
            c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < kGammaEps)
            break;
    }
    return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

int bin_index(double v, double lo, double hi, int bins) {
    if (hi <= lo)
        return 0;
    const int idx = static_cast<int>((v - lo) / (hi - lo) * bins);
    return std::clamp(idx, 0, bins - 1);
}

} // namespace

double regularized_gamma_p(double a, double x) {
    if (!(a > 0.0) || x < 0.0)
        throw std::invalid_argument("regularized_gamma_p: invalid arguments");
    if (x == 0.0)
        return 0.0;
    if (x < a + 1.0)
        return gamma_p_series(a, x);
    return 1.0 - gamma_q_continued_fraction(a, x);
}

double regularized_gamma_q(double a, double x) {
    if (!(a > 0.0) || x < 0.0)
        throw std::invalid_argument("regularized_gamma_q: invalid arguments");
    if (x == 0.0)
        return 1.0;
    if (x < a + 1.0)
        return 1.0 - gamma_p_series(a, x);
    return gamma_q_continued_fraction(a, x);
}

double chi2_sf(double x, int dof) {
    if (dof < 1)
        throw std::invalid_argument("chi2_sf: dof must be >= 1");
    return regularized_gamma_q(0.5 * dof, 0.5 * x);
}

TestReport chi2_uniform(const std::vector<double>& samples, int bins, double alpha) {
    if (bins < 2)
        throw std::invalid_argument("chi2_uniform: need at least 2 bins");
    const int n = static_cast<int>(samples.size());
    TestReport report;
    report.alpha = alpha;
    report.dof = bins - 1;
    report.low_counts = n < 5 * bins;

    const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
    const double lo = *lo_it, hi = *hi_it;
    if (hi <= lo) { // all samples equal
        report.degenerate = true;
        report.p_value = 0.0;
        report.accept = false;
        report.statistic = std::numeric_limits<double>::infinity();
        return report;
    }

    std::vector<int> observed(bins, 0);
    for (double v : samples)
        ++observed[bin_index(v, lo, hi, bins)];
    const double expected = static_cast<double>(n) / bins;
    double stat = 0.0;
    for (int k = 0; k < bins; ++k)
        stat += (observed[k] - expected) * (observed[k] - expected) / expected;
    report.statistic = stat;
    report.p_value = chi2_sf(stat, report.dof);
    report.accept = report.p_value >= alpha;
    return report;
}

TestReport chi2_independence(const std::vector<double>& x, const std::vector<double>& y,
                             int bins, double alpha) {
    if (x.size() != y.size())
        throw std::invalid_argument("chi2_independence: length mismatch");
    if (bins < 2)
        throw std::invalid_argument("chi2_independence: need at least 2 bins");
    const int n = static_cast<int>(x.size());
    TestReport report;
    report.alpha = alpha;
    report.low_counts = n < 5 * bins;

    const auto [xlo, xhi] = std::minmax_element(x.begin(), x.end());
    const auto [ylo, yhi] = std::minmax_element(y.begin(), y.end());
    if (*xhi <= *xlo || *yhi <= *ylo) {
        report.degenerate = true;
        report.p_value = 0.0;
        report.accept = false;
        report.statistic = std::numeric_limits<double>::infinity();
        return report;
    }

    Eigen::MatrixXd table = Eigen::MatrixXd::Zero(bins, bins);
    for (int k = 0; k < n; ++k)
        table(bin_index(x[k], *xlo, *xhi, bins), bin_index(y[k], *ylo, *yhi, bins)) += 1.0;

    std::vector<int> rows, cols;
    for (int r = 0; r < bins; ++r)
        if (table.row(r).sum() > 0.0)
            rows.push_back(r);
    for (int c = 0; c < bins; ++c)
        if (table.col(c).sum() > 0.0)
            cols.push_back(c);
    if (rows.size() < 2 || cols.size() < 2) {
        report.degenerate = true;
        report.p_value = 0.0;
        report.accept = false;
        report.statistic = std::numeric_limits<double>::infinity();
        return report;
    }

    double stat = 0.0;
    for (int r : rows) {
        for (int c : cols) {
            const double expected = table.row(r).sum() * table.col(c).sum() / n;
            const double diff = table(r, c) - expected;
            stat += diff * diff / expected;
        }
    }
    report.statistic = stat;
    report.dof = static_cast<int>((rows.size() - 1) * (cols.size() - 1));
    report.p_value = chi2_sf(stat, report.dof);
    report.accept = report.p_value >= alpha;
    return report;
}

PearsonResult pearson_matrix(const Eigen::MatrixXd& q_table) {
    const Eigen::Index b = q_table.rows();
    const Eigen::Index n = q_table.cols();
    if (b < 2)
        throw std::invalid_argument("pearson_matrix: need at least 2 rows");
    PearsonResult res;
    res.corr = Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::quiet_NaN());
    res.defined.setConstant(n, n, false);

    const Eigen::RowVectorXd mean = q_table.colwise().mean();
    const Eigen::MatrixXd centered = q_table.rowwise() - mean;
    Eigen::VectorXd norms(n);
    for (Eigen::Index i = 0; i < n; ++i)
        norms[i] = centered.col(i).norm();

    double acc = 0.0;
    long defined_offdiag = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        res.corr(i, i) = 1.0;
        res.defined(i, i) = true;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            if (norms[i] > 0.0 && norms[j] > 0.0) {
                double r = centered.col(i).dot(centered.col(j)) / (norms[i] * norms[j]);
                r = std::clamp(r, -1.0, 1.0);
                res.corr(i, j) = res.corr(j, i) = r;
                res.defined(i, j) = res.defined(j, i) = true;
                acc += 2.0 * std::abs(r);
                defined_offdiag += 2;
            }
        }
    }
    res.mean_abs_offdiag = defined_offdiag > 0 ? acc / defined_offdiag
                                               : std::numeric_limits<double>::quiet_NaN();
    return res;
}

BiasStats bias_stats(const QEnsemble& ensemble, const GridWorld& world,
                     const GridPolicy& policy, EvalRule rule,
                     const std::vector<std::pair<int, int>>& eval_states, int n_rollouts,
                     std::uint64_t seed) {
    if (eval_states.empty())
        throw std::invalid_argument("bias_stats: empty evaluation set");
    const int m = static_cast<int>(eval_states.size());
    Eigen::VectorXd predicted(m), returns(m);
    Eigen::VectorXd stack(static_cast<Eigen::Index>(ensemble.members.size()));
    for (int k = 0; k < m; ++k) {
        const auto [cell, action] = eval_states[k];
        Eigen::MatrixXd state(1, 2);
        state.row(0) = cell_features(world, cell).transpose();
        for (std::size_t i = 0; i < ensemble.members.size(); ++i)
            stack[static_cast<Eigen::Index>(i)] = mlp_forward(ensemble.members[i], state)(0, action);
        predicted[k] = ens_eval(rule, stack);
        returns[k] = mc_return(world, policy, cell, action, 0, n_rollouts,
                               derive_seed(seed, static_cast<std::uint64_t>(k)));
    }
    BiasStats out;
    out.mean_return = returns.mean();
    const double denom = std::max(std::abs(out.mean_return), 1e-6);
    const Eigen::VectorXd norm_bias = (predicted - returns) / denom;
    out.mean_norm_bias = norm_bias.mean();
    out.std_norm_bias =
        std::sqrt((norm_bias.array() - out.mean_norm_bias).square().sum() / m);
    return out;
}

SpikeHistogram spike_histogram_values(const Eigen::MatrixXd& q_table, double rho, double eps,
                                      int bins, std::uint64_t perm_seed) {
    const Eigen::Index b = q_table.rows();
    if (b < 1)
        throw std::invalid_argument("spike_histogram_values: empty batch");
    if (bins < 1)
        throw std::invalid_argument("spike_histogram_values: need at least 1 bin");

    std::vector<double> spikes;
    double kl_sum = 0.0;
    for (Eigen::Index j = 0; j < b; ++j) {
        const QMatrixBuild build = build_q_matrix(q_table.row(j).transpose(),
                                                  perm_seed + static_cast<std::uint64_t>(j));
        const NormalizedQMatrix norm = normalize_matrix(build);
        const int d = build.matrix.dim();
        if (norm.clamped) {
            // Collapsed row: all-zero spectrum, no spikes.
            kl_sum += std::log((1.0 / d) / soft_semicircle_pdf(0.0, rho, eps));
            continue;
        }
        const Spectrum spec = eigh(norm.matrix.scaled(1.0 / std::sqrt(double(d))));
        kl_sum += kl_to_semicircle(spec, rho, eps).loss;
        for (Eigen::Index i = 0; i < spec.eigenvalues.size(); ++i)
            if (std::abs(spec.eigenvalues[i]) > 2.0)
                spikes.push_back(spec.eigenvalues[i]);
    }

    SpikeHistogram hist;
    hist.rows = b;
    hist.total_spikes = static_cast<long>(spikes.size());
    hist.mean_kl = kl_sum / static_cast<double>(b);
    hist.bin_left.resize(bins);
    hist.bin_right.resize(bins);
    hist.counts = Eigen::VectorXi::Zero(bins);
    double lo = -3.0, hi = 3.0;
    if (!spikes.empty()) {
        const auto [mn, mx] = std::minmax_element(spikes.begin(), spikes.end());
        lo = *mn;
        hi = *mx + 1e-12;
    }
    const double width = (hi - lo) / bins;
    for (int k = 0; k < bins; ++k) {
        hist.bin_left[k] = lo + k * width;
        hist.bin_right[k] = lo + (k + 1) * width;
    }
    for (double s : spikes)
        ++hist.counts[bin_index(s, lo, hi, bins)];
    return hist;
}

SpikeHistogram spike_histogram(const QEnsemble& ensemble, const GridWorld& world,
                               const std::vector<std::pair<int, int>>& batch, double rho,
                               double eps, int bins) {
    if (ensemble.members.size() < 3)
        throw std::invalid_argument("spike_histogram: need N >= 3 members");
    const int b = static_cast<int>(batch.size());
    Eigen::MatrixXd states(b, 2);
    Eigen::VectorXi actions(b);
    for (int j = 0; j < b; ++j) {
        states.row(j) = cell_features(world, batch[j].first).transpose();
        actions[j] = batch[j].second;
    }
    const Eigen::MatrixXd q_table = ensemble_q_at(ensemble.members, states, actions);
    return spike_histogram_values(q_table, rho, eps, bins, 0);
}

DetectionCurve detection_experiment(const Eigen::VectorXd& psi_grid, int n_dim, int trials,
                                    double kl_threshold, std::uint64_t seed) {
    if (n_dim < 64)
        throw std::invalid_argument("detection_experiment: n_dim must be >= 64");
    if (trials < 1)
        throw std::invalid_argument("detection_experiment: trials must be >= 1");

    // sigma_noise = sqrt(2) makes the symmetrized pure-noise bulk match the
    // unit semicircle that the KL statistic scores against.
    const double sigma_noise = std::sqrt(2.0);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(n_dim));
    const auto kl_of_sample = [&](double psi, std::uint64_t draw_seed) {
        SpikedModelParams params;
        params.psi = psi;
        params.n = n_dim;
        params.sigma_noise = sigma_noise;
        const SymMatrix y = sample_spiked_wishart(params, draw_seed);
        const Spectrum spec = eigh(y.scaled(inv_sqrt_d));
        return kl_to_semicircle(spec, 0.5, 0.01).loss;
    };

    DetectionCurve curve;
    curve.psi_grid = psi_grid;
    if (std::isnan(kl_threshold)) {
        std::vector<double> calibration(500);
        for (int t = 0; t < 500; ++t)
            calibration[t] = kl_of_sample(0.0, derive_seed(seed, 0xCA1, t));
        std::sort(calibration.begin(), calibration.end());
        kl_threshold = calibration[static_cast<std::size_t>(0.95 * calibration.size())];
    }
    curve.kl_threshold = kl_threshold;

    const Eigen::Index m = psi_grid.size();
    curve.empirical_error.resize(m);
    curve.erfc_reference.resize(m);
    curve.std_error.resize(m);
    for (Eigen::Index k = 0; k < m; ++k) {
        const double psi = psi_grid[k];
        if (psi < 0.0)
            throw std::invalid_argument("detection_experiment: psi must be >= 0");
        long false_positive = 0, false_negative = 0;
        for (int t = 0; t < trials; ++t) {
            if (kl_of_sample(0.0, derive_seed(seed, 0xF0 + k, t)) >= kl_threshold)
                ++false_positive;
            if (kl_of_sample(psi, derive_seed(seed, 0xF1000 + k, t)) < kl_threshold)
                ++false_negative;
        }
        const double p0 = static_cast<double>(false_positive) / trials;
        const double p1 = static_cast<double>(false_negative) / trials;
        curve.empirical_error[k] = p0 + p1;
        curve.std_error[k] =
            std::sqrt(p0 * (1.0 - p0) / trials + p1 * (1.0 - p1) / trials);
        curve.erfc_reference[k] =
            psi < 1.0 ? std::erfc(0.25 * std::sqrt(-std::log1p(-psi * psi))) : 0.0;
    }
    return curve;
}

} // namespace spqr
