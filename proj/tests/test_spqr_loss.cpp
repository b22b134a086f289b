#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <numbers>
#include <set>

#include "spqr/rng.hpp"
#include "spqr/spqr_loss.hpp"
#include "test_util.hpp"

using namespace spqr;

namespace {

Eigen::VectorXd random_vector(int n, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i)
        v[i] = rng.normal();
    return v;
}

} // namespace

TEST_CASE("build_q_matrix dimensions and bookkeeping") {
    const QMatrixBuild b10 = build_q_matrix(random_vector(10, 1), 0);
    CHECK(b10.matrix.dim() == 4);
    CHECK(b10.used == 10);

    const QMatrixBuild b3 = build_q_matrix(random_vector(3, 2), 0);
    CHECK(b3.matrix.dim() == 2);
    CHECK(b3.used == 3);

    const QMatrixBuild b50 = build_q_matrix(random_vector(50, 3), 0);
    CHECK(b50.matrix.dim() == 9);
    CHECK(b50.used == 45);

    // index_map is injective over the lower triangle.
    std::set<int> seen(b50.index_map.begin(), b50.index_map.end());
    CHECK(seen.size() == 45);

    CHECK_THROWS(build_q_matrix(random_vector(2, 4), 0));
}

TEST_CASE("build_q_matrix fills the mirrored lower triangle from the permutation") {
    const Eigen::VectorXd q = random_vector(10, 5);
    const QMatrixBuild b = build_q_matrix(q, 99);
    const Eigen::MatrixXd& m = b.matrix.entries();
    int t = 0;
    for (int p = 0; p < 4; ++p) {
        for (int c = 0; c <= p; ++c, ++t) {
            CHECK(m(p, c) == q[b.index_map[t]]);
            CHECK(m(c, p) == m(p, c));
        }
    }
    // Seeded permutation is deterministic.
    const QMatrixBuild again = build_q_matrix(q, 99);
    CHECK(again.perm == b.perm);
    CHECK(again.matrix.entries() == b.matrix.entries());
}

TEST_CASE("normalize_matrix statistics") {
    Eigen::VectorXd constant = Eigen::VectorXd::Constant(10, 5.0);
    const NormalizedQMatrix n0 = normalize_matrix(build_q_matrix(constant, 0));
    CHECK(n0.mu == doctest::Approx(5.0));
    CHECK(n0.sigma == default_sigma_floor);
    CHECK(n0.clamped);
    CHECK(n0.matrix.entries().cwiseAbs().maxCoeff() == 0.0);

    Eigen::VectorXd three(3);
    three << -1.0, 0.0, 1.0;
    const NormalizedQMatrix n1 = normalize_matrix(build_q_matrix(three, 7));
    CHECK(n1.mu == doctest::Approx(0.0));
    CHECK(n1.sigma == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-12));
    CHECK(!n1.clamped);

    const QMatrixBuild b = build_q_matrix(random_vector(45, 8), 1);
    const NormalizedQMatrix n2 = normalize_matrix(b);
    double mean = 0.0, var = 0.0;
    const int d = n2.matrix.dim();
    for (int p = 0; p < d; ++p)
        for (int q = 0; q <= p; ++q)
            mean += n2.matrix.entries()(p, q);
    mean /= 45.0;
    for (int p = 0; p < d; ++p)
        for (int q = 0; q <= p; ++q)
            var += std::pow(n2.matrix.entries()(p, q) - mean, 2);
    var /= 45.0;
    CHECK(std::abs(mean) < 1e-10);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-10);
}

TEST_CASE("spqr_loss_single collapse path") {
    Eigen::VectorXd q = Eigen::VectorXd::Constant(10, 3.25);
    const SpqrLossOut out = spqr_loss_single(q, 0.5, 0.01, 12);
    const double d = 4.0;
    const double expected = std::log((1.0 / d) * std::numbers::pi / 0.5);
    CHECK(out.loss == doctest::Approx(expected).epsilon(1e-12));
    CHECK(out.grad_q.cwiseAbs().maxCoeff() == 0.0);
    CHECK(out.mu == doctest::Approx(3.25));
}

TEST_CASE("spqr_loss_single gradient matches finite differences") {
    const double h = 1e-5;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const Eigen::VectorXd q = random_vector(10, 40 + seed);
        const SpqrLossOut out = spqr_loss_single(q, 0.5, 0.01, 1234);
        Eigen::VectorXd fd(10);
        for (int i = 0; i < 10; ++i) {
            Eigen::VectorXd qp = q, qm = q;
            qp[i] += h;
            qm[i] -= h;
            fd[i] = (spqr_loss_single(qp, 0.5, 0.01, 1234).loss -
                     spqr_loss_single(qm, 0.5, 0.01, 1234).loss) /
                    (2.0 * h);
        }
        CHECK(testutil::max_rel_error(fd, out.grad_q) < 1e-3);
    }
}

TEST_CASE("stopped normalization gradient drops the shared chain terms") {
    const Eigen::VectorXd q = random_vector(10, 77);
    const SpqrLossOut full = spqr_loss_single(q, 0.5, 0.01, 11, default_sigma_floor,
                                              NormalizationGrad::full);
    const SpqrLossOut stopped = spqr_loss_single(q, 0.5, 0.01, 11, default_sigma_floor,
                                                 NormalizationGrad::stopped);
    CHECK(full.loss == stopped.loss); // forward pass identical
    CHECK(full.grad_q != stopped.grad_q);
    // The full gradient is orthogonal to uniform shifts (affine invariance);
    // the stopped variant keeps that common-mode component.
    CHECK(std::abs(full.grad_q.sum()) < 1e-12);
    CHECK(std::abs(stopped.grad_q.sum()) > 1e-12);
}

TEST_CASE("spqr_loss_single determinism") {
    const Eigen::VectorXd q = random_vector(15, 6);
    const SpqrLossOut a = spqr_loss_single(q, 0.5, 0.01, 777);
    const SpqrLossOut b = spqr_loss_single(q, 0.5, 0.01, 777);
    CHECK(a.loss == b.loss);
    CHECK(a.grad_q == b.grad_q);
    const SpqrLossOut c = spqr_loss_single(q, 0.5, 0.01, 778);
    CHECK(a.loss != c.loss);
}

TEST_CASE("unused ensemble members receive no gradient and do not move the loss") {
    const Eigen::VectorXd q = random_vector(50, 14);
    const SpqrLossOut out = spqr_loss_single(q, 0.5, 0.01, 3);
    const QMatrixBuild build = build_q_matrix(q, 3);
    std::set<int> used(build.index_map.begin(), build.index_map.end());
    int zero_count = 0;
    for (int i = 0; i < 50; ++i) {
        if (used.count(i))
            continue;
        CHECK(out.grad_q[i] == 0.0);
        ++zero_count;
        Eigen::VectorXd perturbed = q;
        perturbed[i] += 10.0;
        CHECK(spqr_loss_single(perturbed, 0.5, 0.01, 3).loss == out.loss);
    }
    CHECK(zero_count == 5);
}

TEST_CASE("loss is invariant to affine maps of the q-values") {
    const Eigen::VectorXd q = random_vector(21, 31);
    const double base = spqr_loss_single(q, 0.5, 0.01, 5).loss;
    const Eigen::VectorXd shifted = (q.array() + 17.5).matrix();
    const Eigen::VectorXd scaled = 3.75 * q;
    CHECK(spqr_loss_single(shifted, 0.5, 0.01, 5).loss == doctest::Approx(base).epsilon(1e-9));
    CHECK(spqr_loss_single(scaled, 0.5, 0.01, 5).loss == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("independent ensembles score lower than partially collapsed ones") {
    // A shared additive component alone is removed exactly by the per-matrix
    // affine normalization, so the discriminating construction clusters most
    // members tightly and lets a few stragglers deviate -- the shape an
    // ensemble takes when it starts to collapse.
    const int n = 45;
    const int seeds = 500;
    double mean_iid = 0.0, mean_collapsed = 0.0;
    for (int t = 0; t < seeds; ++t) {
        Rng rng(derive_seed(2024, t));
        Eigen::VectorXd q_iid(n), q_col(n);
        for (int i = 0; i < n; ++i)
            q_iid[i] = rng.normal();
        const double z = rng.normal();
        for (int i = 0; i < n; ++i)
            q_col[i] = z + 0.01 * rng.normal();
        for (int i = 0; i < 5; ++i)
            q_col[i] = z + rng.normal();
        mean_iid += spqr_loss_single(q_iid, 0.5, 0.01, derive_seed(99, t)).loss;
        mean_collapsed += spqr_loss_single(q_col, 0.5, 0.01, derive_seed(99, t)).loss;
    }
    mean_iid /= seeds;
    mean_collapsed /= seeds;
    CHECK(mean_iid < mean_collapsed);
    CHECK(mean_collapsed - mean_iid > 0.05);
}

TEST_CASE("spqr_loss_batch") {
    const Eigen::VectorXd q = random_vector(10, 51);
    Eigen::MatrixXd one_row(1, 10);
    one_row.row(0) = q.transpose();
    const SpqrBatchOut batch = spqr_loss_batch(one_row, 0.5, 0.01, 4242);
    const SpqrLossOut single = spqr_loss_single(q, 0.5, 0.01, 4242);
    CHECK(batch.loss == doctest::Approx(single.loss).epsilon(1e-15));
    CHECK((batch.grads.row(0).transpose() - single.grad_q).cwiseAbs().maxCoeff() < 1e-15);

    // Identical rows given identical per-row seeds produce identical losses.
    CHECK(spqr_loss_single(q, 0.5, 0.01, 9).loss == spqr_loss_single(q, 0.5, 0.01, 9).loss);

    Eigen::MatrixXd big(256, 10);
    Rng rng(60);
    for (int j = 0; j < 256; ++j)
        for (int i = 0; i < 10; ++i)
            big(j, i) = rng.normal();
    const auto t0 = std::chrono::steady_clock::now();
    const SpqrBatchOut out = spqr_loss_batch(big, 0.5, 0.01, 17);
    const auto t1 = std::chrono::steady_clock::now();
    CHECK(std::isfinite(out.loss));
    CHECK(std::chrono::duration<double, std::milli>(t1 - t0).count() < 50.0);
}
