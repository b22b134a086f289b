#include "spqr/spqr_loss.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "spqr/rng.hpp"
#include "spqr/spectral_core.hpp"
#include "spqr/sym_eigen.hpp"

namespace spqr {

QMatrixBuild build_q_matrix(const Eigen::VectorXd& qvals, std::uint64_t perm_seed) {
    const int n = static_cast<int>(qvals.size());
    if (n < 3)
        throw std::invalid_argument("build_q_matrix: need at least 3 values");
    const int d = q_matrix_dim(n);
    const int used = d * (d + 1) / 2;

    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(perm_seed);
    shuffle_indices(perm, rng);

    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);
    std::vector<int> index_map(used);
    int t = 0;
    for (int p = 0; p < d; ++p) {
        for (int q = 0; q <= p; ++q, ++t) {
            index_map[t] = perm[t];
            m(p, q) = qvals[perm[t]];
        }
    }
    return QMatrixBuild{SymMatrix::from_lower(m), std::move(index_map), std::move(perm), used, n};
}

NormalizedQMatrix normalize_matrix(const QMatrixBuild& build, double sigma_floor) {
    const int d = build.matrix.dim();
    const int used = build.used;
    const Eigen::MatrixXd& m = build.matrix.entries();

    double mu = 0.0;
    for (int p = 0; p < d; ++p)
        for (int q = 0; q <= p; ++q)
            mu += m(p, q);
    mu /= static_cast<double>(used);

    double var = 0.0;
    for (int p = 0; p < d; ++p)
        for (int q = 0; q <= p; ++q)
            var += (m(p, q) - mu) * (m(p, q) - mu);
    var /= static_cast<double>(used);
    const double sigma_raw = std::sqrt(var);

    const bool clamped = sigma_raw < sigma_floor;
    const double sigma = std::max(sigma_raw, sigma_floor);
    Eigen::MatrixXd normalized = (m.array() - mu).matrix() / sigma;
    return NormalizedQMatrix{SymMatrix::from_lower(normalized), mu, sigma, clamped};
}

SpqrLossOut spqr_loss_single(const Eigen::VectorXd& qvals, double rho, double eps,
                             std::uint64_t perm_seed, double sigma_floor,
                             NormalizationGrad norm_grad) {
    const QMatrixBuild build = build_q_matrix(qvals, perm_seed);
    const NormalizedQMatrix norm = normalize_matrix(build, sigma_floor);
    const int d = build.matrix.dim();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    SpqrLossOut out;
    out.grad_q = Eigen::VectorXd::Zero(qvals.size());
    out.mu = norm.mu;
    out.sigma = norm.sigma;

    if (norm.clamped) {
        // Collapsed ensemble: score the all-zero spectrum, no gradient.
        const double mass = 1.0 / static_cast<double>(d);
        out.loss = static_cast<double>(d) * mass *
                   std::log(mass / soft_semicircle_pdf(0.0, rho, eps));
        return out;
    }

    const Spectrum spec = eigh(norm.matrix.scaled(inv_sqrt_d));
    const KlToSemicircle kl = kl_to_semicircle(spec, rho, eps);
    out.loss = kl.loss;

    const EigenGrad ds = eigh_backward_values(spec, kl.dloss_dlambda);
    // dL/dYhat, where Yhat = (Y - mu) / sigma is the normalized matrix.
    const Eigen::MatrixXd g = inv_sqrt_d * ds.dL_dX;
    const Eigen::MatrixXd& yhat = norm.matrix.entries();
    // The normalization statistics depend on every consumed value, so the
    // backward pass carries their chain terms as well: for the value feeding
    // cell c, with T = D(D+1)/2 distinct cells,
    //   dL/dy_c = ( direct_c - sum(g)/T - yhat_c * sum(g o yhat)/T ) / sigma
    // where direct_c collects both mirrored entries for off-diagonal cells.
    const double t_cells = static_cast<double>(build.used);
    const bool full = norm_grad == NormalizationGrad::full;
    const double sum_g = full ? g.sum() : 0.0;
    const double sum_g_yhat = full ? (g.array() * yhat.array()).sum() : 0.0;
    int t = 0;
    for (int p = 0; p < d; ++p) {
        for (int q = 0; q <= p; ++q, ++t) {
            const double direct = (p == q) ? g(p, q) : 2.0 * g(p, q);
            out.grad_q[build.index_map[t]] +=
                (direct - sum_g / t_cells - yhat(p, q) * sum_g_yhat / t_cells) / norm.sigma;
        }
    }
    return out;
}

SpqrBatchOut spqr_loss_batch(const Eigen::MatrixXd& qmat, double rho, double eps,
                             std::uint64_t perm_seed, double sigma_floor,
                             NormalizationGrad norm_grad) {
    const Eigen::Index b = qmat.rows();
    if (b < 1)
        throw std::invalid_argument("spqr_loss_batch: empty batch");
    SpqrBatchOut out;
    out.grads = Eigen::MatrixXd::Zero(b, qmat.cols());
    const double inv_b = 1.0 / static_cast<double>(b);
    for (Eigen::Index j = 0; j < b; ++j) {
        const SpqrLossOut row = spqr_loss_single(qmat.row(j).transpose(), rho, eps,
                                                 perm_seed + static_cast<std::uint64_t>(j),
                                                 sigma_floor, norm_grad);
        out.loss += inv_b * row.loss;
        out.grads.row(j) = inv_b * row.grad_q.transpose();
    }
    return out;
}

} // namespace spqr
