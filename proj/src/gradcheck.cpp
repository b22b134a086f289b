#include "spqr/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <sstream>

#include <Eigen/Dense>

#include "spqr/io.hpp"
#include "spqr/mlp.hpp"
#include "spqr/rng.hpp"
#include "spqr/spectral_core.hpp"
#include "spqr/spqr_loss.hpp"
#include "spqr/sym_eigen.hpp"

namespace spqr {

namespace {

double rel_err(double fd, double an) {
    return std::abs(fd - an) / std::max(1.0, std::abs(an));
}

Eigen::MatrixXd random_symmetric(int d, double scale, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd m(d, d);
    for (int p = 0; p < d; ++p)
        for (int q = 0; q <= p; ++q) {
            m(p, q) = scale * rng.normal();
            m(q, p) = m(p, q);
        }
    return m;
}

// Worst relative error of an analytic symmetric-matrix gradient against
// central finite differences with symmetric perturbations.
double check_matrix_grad(const std::function<double(const Eigen::MatrixXd&)>& f,
                         const Eigen::MatrixXd& x, const Eigen::MatrixXd& grad, double h) {
    double worst = 0.0;
    for (Eigen::Index p = 0; p < x.rows(); ++p) {
        for (Eigen::Index q = 0; q <= p; ++q) {
            Eigen::MatrixXd xp = x, xm = x;
            xp(p, q) += h;
            xm(p, q) -= h;
            if (p != q) {
                xp(q, p) += h;
                xm(q, p) -= h;
            }
            const double fd = (f(xp) - f(xm)) / (2.0 * h);
            const double an = p == q ? grad(p, q) : grad(p, q) + grad(q, p);
            worst = std::max(worst, rel_err(fd, an));
        }
    }
    return worst;
}

double suite_eigh_values(std::uint64_t seed) {
    const auto loss = [](const Eigen::MatrixXd& m) {
        return eigh(SymMatrix::from_matrix(m, 1e-6)).eigenvalues.squaredNorm();
    };
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
        const Eigen::MatrixXd x = random_symmetric(8, 1.0, derive_seed(seed, 0x11, t));
        const Spectrum s = eigh(SymMatrix::from_matrix(x));
        const EigenGrad grad = eigh_backward_values(s, 2.0 * s.eigenvalues);
        worst = std::max(worst, check_matrix_grad(loss, x, grad.dL_dX, 1e-5));
    }
    return worst;
}

double suite_eigh_full(std::uint64_t seed) {
    double worst = 0.0;
    for (int t = 0; t < 8; ++t) {
        Rng rng(derive_seed(seed, 0x22, t));
        Eigen::MatrixXd w(4, 4);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                w(i, j) = rng.normal();
        const auto loss = [&](const Eigen::MatrixXd& m) {
            const Spectrum s = eigh(SymMatrix::from_matrix(m, 1e-6));
            return (w.array() * s.eigenvectors.array().square()).sum();
        };
        const Eigen::MatrixXd x = random_symmetric(4, 1.0, derive_seed(seed, 0x23, t));
        const Spectrum s = eigh(SymMatrix::from_matrix(x));
        bool distinct = true;
        for (int i = 1; i < 4; ++i)
            if (s.eigenvalues[i] - s.eigenvalues[i - 1] < 1e-4)
                distinct = false;
        if (!distinct)
            continue;
        const Eigen::MatrixXd g_vectors = 2.0 * (w.array() * s.eigenvectors.array()).matrix();
        const EigenGrad grad = eigh_backward_full(s, Eigen::VectorXd::Zero(4), g_vectors);
        worst = std::max(worst, check_matrix_grad(loss, x, grad.dL_dX, 1e-5));
    }
    return worst;
}

double suite_spqr(std::uint64_t seed) {
    double worst = 0.0;
    const double h = 1e-5;
    for (int t = 0; t < 8; ++t) {
        Rng rng(derive_seed(seed, 0x33, t));
        Eigen::VectorXd q(10);
        for (int i = 0; i < 10; ++i)
            q[i] = rng.normal();
        const std::uint64_t perm_seed = derive_seed(seed, 0x34, t);
        const SpqrLossOut out = spqr_loss_single(q, 0.5, 0.01, perm_seed);
        for (int i = 0; i < 10; ++i) {
            Eigen::VectorXd qp = q, qm = q;
            qp[i] += h;
            qm[i] -= h;
            const double fd = (spqr_loss_single(qp, 0.5, 0.01, perm_seed).loss -
                               spqr_loss_single(qm, 0.5, 0.01, perm_seed).loss) /
                              (2.0 * h);
            worst = std::max(worst, rel_err(fd, out.grad_q[i]));
        }
    }
    return worst;
}

double suite_mlp(std::uint64_t seed) {
    double worst = 0.0;
    const double h = 1e-5;
    MlpParams net = mlp_init({3, 8, 1}, Activation::tanh, derive_seed(seed, 0x44));
    Rng rng(derive_seed(seed, 0x45));
    Eigen::MatrixXd x(5, 3);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 3; ++c)
            x(r, c) = rng.normal();

    const auto loss = [&](const MlpParams& p) { return mlp_forward(p, x).sum(); };
    MlpCache cache;
    mlp_forward(net, x, &cache);
    const MlpGrads grads = mlp_backward(net, cache, Eigen::MatrixXd::Ones(5, 1));
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        for (Eigen::Index r = 0; r < net.weights[l].rows(); ++r) {
            for (Eigen::Index c = 0; c < net.weights[l].cols(); ++c) {
                MlpParams p1 = net, p2 = net;
                p1.weights[l](r, c) += h;
                p2.weights[l](r, c) -= h;
                const double fd = (loss(p1) - loss(p2)) / (2.0 * h);
                worst = std::max(worst, rel_err(fd, grads.weights[l](r, c)));
            }
        }
        for (Eigen::Index r = 0; r < net.biases[l].size(); ++r) {
            MlpParams p1 = net, p2 = net;
            p1.biases[l][r] += h;
            p2.biases[l][r] -= h;
            const double fd = (loss(p1) - loss(p2)) / (2.0 * h);
            worst = std::max(worst, rel_err(fd, grads.biases[l][r]));
        }
    }
    return worst;
}

} // namespace

std::string GradcheckReport::to_json() const {
    std::ostringstream out;
    out << "{\n";
    out << "  \"eigh_values_max_rel\": " << format_g17(eigh_values_max_rel) << ",\n";
    out << "  \"eigh_full_max_rel\": " << format_g17(eigh_full_max_rel) << ",\n";
    out << "  \"spqr_max_rel\": " << format_g17(spqr_max_rel) << ",\n";
    out << "  \"mlp_max_rel\": " << format_g17(mlp_max_rel) << ",\n";
    out << "  \"pass\": " << (pass() ? "true" : "false") << "\n";
    out << "}\n";
    return out.str();
}

GradcheckReport run_gradcheck(std::uint64_t seed) {
    GradcheckReport report;
    report.eigh_values_max_rel = suite_eigh_values(seed);
    report.eigh_full_max_rel = suite_eigh_full(seed);
    report.spqr_max_rel = suite_spqr(seed);
    report.mlp_max_rel = suite_mlp(seed);
    return report;
}

} // namespace spqr
