#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "spqr/diagnostics.hpp"
#include "spqr/gridworld.hpp"
#include "spqr/rng.hpp"

using namespace spqr;

TEST_CASE("regularized incomplete gamma against reference values") {
    CHECK(std::abs(chi2_sf(1.0, 2) - 0.6065306597126334) < 1e-10);
    CHECK(std::abs(chi2_sf(2.5, 4) - 0.6446357929354278) < 1e-10);
    CHECK(std::abs(chi2_sf(27.5, 9) - 0.0011556512843511606) < 1e-10);
    CHECK(std::abs(regularized_gamma_p(0.5, 0.5) - 0.6826894921370859) < 1e-10);
    CHECK(std::abs(regularized_gamma_q(3.2, 1.7) - 0.7961813992721769) < 1e-10);
    CHECK(std::abs(regularized_gamma_p(10.0, 12.0) - 0.7576078383294875) < 1e-10);
    CHECK(std::abs(regularized_gamma_p(2.0, 1.0) + regularized_gamma_q(2.0, 1.0) - 1.0) < 1e-12);
}

TEST_CASE("chi2_uniform closed cases") {
    // Perfectly balanced counts: one sample in each of 10 equal bins.
    std::vector<double> balanced;
    for (int k = 0; k < 10; ++k)
        balanced.push_back(k + 0.5);
    const TestReport flat = chi2_uniform(balanced, 10, 0.025);
    CHECK(flat.statistic == doctest::Approx(0.0));
    CHECK(flat.accept);
    CHECK(flat.dof == 9);

    const std::vector<double> constant(40, 1.25);
    const TestReport degenerate = chi2_uniform(constant, 10, 0.025);
    CHECK(degenerate.degenerate);
    CHECK(!degenerate.accept);
    CHECK(degenerate.p_value == 0.0);

    CHECK_THROWS(chi2_uniform(balanced, 1, 0.025));
}

TEST_CASE("chi2_uniform calibration under the null") {
    // 10^4 trials of 50 true-uniform samples, 10 bins, alpha = 0.025.
    const int trials = 10000;
    Rng rng(515);
    int accepted = 0;
    std::vector<double> sample(50);
    for (int t = 0; t < trials; ++t) {
        for (double& v : sample)
            v = rng.uniform();
        if (chi2_uniform(sample, 10, 0.025).accept)
            ++accepted;
    }
    const double rate = static_cast<double>(accepted) / trials;
    CHECK(rate > 0.965);
    CHECK(rate < 0.985);
}

TEST_CASE("chi2_independence closed cases") {
    Rng rng(99);
    std::vector<double> x(1000), y(1000);
    for (int i = 0; i < 1000; ++i) {
        x[i] = rng.uniform();
        y[i] = x[i];
    }
    const TestReport copy = chi2_independence(x, y, 5, 0.025);
    CHECK(!copy.accept);
    CHECK(copy.p_value < 1e-12);

    const std::vector<double> constant(1000, 2.0);
    const TestReport degenerate = chi2_independence(x, constant, 5, 0.025);
    CHECK(degenerate.degenerate);
    CHECK(!degenerate.accept);
}

TEST_CASE("chi2_independence calibration under the null") {
    const int trials = 1000;
    Rng rng(1234);
    int accepted = 0;
    std::vector<double> x(1000), y(1000);
    for (int t = 0; t < trials; ++t) {
        for (int i = 0; i < 1000; ++i) {
            x[i] = rng.uniform();
            y[i] = rng.uniform();
        }
        if (chi2_independence(x, y, 5, 0.025).accept)
            ++accepted;
    }
    const double rate = static_cast<double>(accepted) / trials;
    CHECK(rate > 0.955);
    CHECK(rate < 0.995);
}

TEST_CASE("pearson_matrix") {
    Rng rng(7);
    Eigen::MatrixXd table(50, 4);
    for (int r = 0; r < 50; ++r) {
        const double v = rng.normal();
        table(r, 0) = v;
        table(r, 1) = v;        // duplicated column
        table(r, 2) = -v;       // anticorrelated column
        table(r, 3) = rng.normal();
    }
    const PearsonResult res = pearson_matrix(table);
    CHECK(res.corr(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(res.corr(0, 2) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(res.corr(0, 0) == 1.0);
    CHECK((res.corr - res.corr.transpose()).cwiseAbs().maxCoeff() == 0.0);

    // Wide independent table: small mean |off-diagonal|.
    Eigen::MatrixXd wide(10000, 5);
    for (int r = 0; r < 10000; ++r)
        for (int c = 0; c < 5; ++c)
            wide(r, c) = rng.normal();
    CHECK(pearson_matrix(wide).mean_abs_offdiag < 0.05);

    // Zero-variance column is flagged undefined.
    Eigen::MatrixXd flat(20, 2);
    for (int r = 0; r < 20; ++r) {
        flat(r, 0) = rng.normal();
        flat(r, 1) = 3.0;
    }
    const PearsonResult undef = pearson_matrix(flat);
    CHECK(!undef.defined(0, 1));
    CHECK(std::isnan(undef.corr(0, 1)));
}

namespace {

// N identical affine heads equal to the given per-action values at the only
// evaluated state (features (0, 0) make the bias vector the output).
QEnsemble constant_ensemble(int n, const Eigen::Vector4d& values) {
    QEnsemble ens;
    for (int i = 0; i < n; ++i) {
        MlpParams net;
        net.layer_sizes = {2, 4};
        net.activation = Activation::relu;
        net.weights.push_back(Eigen::MatrixXd::Zero(4, 2));
        net.biases.push_back(values);
        ens.targets.push_back(net);
        ens.members.push_back(net);
    }
    return ens;
}

} // namespace

TEST_CASE("bias_stats on an exactly representable value function") {
    // 1x2 chain, no slip: the only non-goal state has features (0, 0).
    const GridWorld world = make_open_grid(2, 1, 1, 0, 0.0, 0.9);
    const Eigen::MatrixXd q_star = value_iteration(to_mdp(world));
    const int cell = world.cell(0, 0);
    Eigen::Vector4d values = q_star.row(cell).transpose();

    std::vector<std::pair<int, int>> pairs;
    for (int a = 0; a < grid_num_actions; ++a)
        pairs.emplace_back(cell, a);

    const QEnsemble exact = constant_ensemble(5, values);
    const BiasStats zero = bias_stats(exact, world, greedy_policy(q_star), EvalRule::mean,
                                      pairs, 8, 3);
    CHECK(std::abs(zero.mean_norm_bias) < 1e-12);

    const QEnsemble shifted = constant_ensemble(5, values.array() + 1.0);
    const BiasStats one = bias_stats(shifted, world, greedy_policy(q_star), EvalRule::mean,
                                     pairs, 8, 3);
    CHECK(one.mean_norm_bias ==
          doctest::Approx(1.0 / std::abs(one.mean_return)).epsilon(1e-10));
}

TEST_CASE("bias_stats is stable across seeds within Monte-Carlo noise") {
    const GridWorld world = make_open_grid(4, 4, 3, 3, 0.2, 0.95);
    const Eigen::MatrixXd q_star = value_iteration(to_mdp(world));
    const QEnsemble ens = constant_ensemble(4, q_star.row(0).transpose());
    std::vector<std::pair<int, int>> pairs{{0, 3}, {0, 1}};
    const int n_rollouts = 10000;
    const BiasStats a =
        bias_stats(ens, world, greedy_policy(q_star), EvalRule::mean, pairs, n_rollouts, 10);
    const BiasStats b =
        bias_stats(ens, world, greedy_policy(q_star), EvalRule::mean, pairs, n_rollouts, 11);
    // Per-rollout returns lie in [0, 1]; three combined standard errors with a
    // conservative variance bound.
    const double bound = 3.0 * std::sqrt(2.0 * 0.25 / n_rollouts);
    CHECK(std::abs(a.mean_norm_bias - b.mean_norm_bias) < bound);
}

TEST_CASE("spike_histogram separates independent from collapsing ensembles") {
    const int n = 45, rows = 1000;
    Rng rng(2211);
    Eigen::MatrixXd iid(rows, n), collapsed(rows, n);
    for (int r = 0; r < rows; ++r) {
        const double z = rng.normal();
        for (int c = 0; c < n; ++c) {
            iid(r, c) = rng.normal();
            collapsed(r, c) = z + 0.01 * rng.normal();
        }
        for (int c = 0; c < 5; ++c)
            collapsed(r, c) = z + rng.normal();
    }
    const SpikeHistogram h_iid = spike_histogram_values(iid, 0.5, 0.01, 12, 1);
    const SpikeHistogram h_col = spike_histogram_values(collapsed, 0.5, 0.01, 12, 1);
    // i.i.d. inputs keep the spike rate below 5% of all eigenvalues (D=9).
    CHECK(h_iid.total_spikes < rows * 9 / 20);
    CHECK(h_col.total_spikes > h_iid.total_spikes);
    CHECK(h_iid.counts.sum() == h_iid.total_spikes);

    // Fully collapsed rows take the all-zero-spectrum path: no spikes at all.
    const Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(50, 10, 2.5);
    CHECK(spike_histogram_values(flat, 0.5, 0.01, 8, 0).total_spikes == 0);
}

TEST_CASE("paired spike comparison favors the independent ensemble") {
    const int n = 45, rows = 200;
    int wins = 0;
    for (int block = 0; block < 20; ++block) {
        Rng rng(derive_seed(31337, block));
        Eigen::MatrixXd iid(rows, n), collapsed(rows, n);
        for (int r = 0; r < rows; ++r) {
            const double z = rng.normal();
            for (int c = 0; c < n; ++c) {
                iid(r, c) = rng.normal();
                collapsed(r, c) = z + 0.01 * rng.normal();
            }
            for (int c = 0; c < 5; ++c)
                collapsed(r, c) = z + rng.normal();
        }
        const long s_iid = spike_histogram_values(iid, 0.5, 0.01, 8, block).total_spikes;
        const long s_col = spike_histogram_values(collapsed, 0.5, 0.01, 8, block).total_spikes;
        if (s_iid < s_col)
            ++wins;
    }
    CHECK(wins >= 19); // > 0.95 over paired seeds
}

TEST_CASE("spike_histogram over a live ensemble") {
    const GridWorld world = make_open_grid(3, 3, 2, 2, 0.0, 0.99);
    QEnsemble ens;
    for (int i = 0; i < 5; ++i) {
        ens.members.push_back(mlp_init({2, 8, 4}, Activation::tanh, derive_seed(5, i)));
        ens.targets.push_back(ens.members.back());
    }
    std::vector<std::pair<int, int>> batch;
    for (int c = 0; c < world.n_cells(); ++c)
        for (int a = 0; a < grid_num_actions; ++a)
            batch.emplace_back(c, a);
    const SpikeHistogram hist = spike_histogram(ens, world, batch, 0.5, 0.01, 8);
    CHECK(hist.rows == static_cast<long>(batch.size()));
    CHECK(hist.total_spikes >= 0);
}

TEST_CASE("detection_experiment reference values and no-signal regime") {
    Eigen::VectorXd grid(2);
    grid << 0.0, 0.8;
    const DetectionCurve curve = detection_experiment(
        grid, 64, 400, std::numeric_limits<double>::quiet_NaN(), 777);
    CHECK(curve.erfc_reference[0] == 1.0);
    CHECK(std::abs(curve.erfc_reference[1] - 0.7208220702039466) < 1e-12);
    CHECK(curve.empirical_error[0] > 0.9);
    CHECK(curve.empirical_error[0] < 1.1);
    // The weak-signal regime never beats the asymptotic reference materially.
    CHECK(curve.empirical_error[1] >= curve.erfc_reference[1] - 0.05);
}

TEST_CASE("detection_experiment has power above the detachment threshold") {
    Eigen::VectorXd grid(3);
    grid << 0.0, 8.0, 16.0;
    const DetectionCurve curve = detection_experiment(
        grid, 64, 300, std::numeric_limits<double>::quiet_NaN(), 4242);
    CHECK(curve.empirical_error[2] < curve.empirical_error[0] - 0.3);
    // Errors are non-increasing within 2 MC standard errors along the grid.
    for (int k = 1; k < 3; ++k) {
        const double slack =
            2.0 * std::sqrt(std::pow(curve.std_error[k], 2) + std::pow(curve.std_error[k - 1], 2));
        CHECK(curve.empirical_error[k] <= curve.empirical_error[k - 1] + slack);
    }
    CHECK(curve.erfc_reference[2] == 0.0);
}

TEST_CASE("detection_experiment determinism") {
    Eigen::VectorXd grid(1);
    grid << 0.5;
    const DetectionCurve a =
        detection_experiment(grid, 64, 50, std::numeric_limits<double>::quiet_NaN(), 5);
    const DetectionCurve b =
        detection_experiment(grid, 64, 50, std::numeric_limits<double>::quiet_NaN(), 5);
    CHECK(a.empirical_error == b.empirical_error);
    CHECK(a.kl_threshold == b.kl_threshold);
}
