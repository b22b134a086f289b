#include "spqr/sym_eigen.hpp"

#include <stdexcept>

namespace spqr {

Spectrum eigh(const SymMatrix& x) {
    const int d = x.dim();
    if (d > 4096)
        throw std::invalid_argument("eigh: dense path limited to dim <= 4096");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(x.entries());
    if (solver.info() != Eigen::Success)
        throw std::runtime_error("eigh: eigensolver failed to converge");
    Spectrum spec;
    spec.eigenvalues = solver.eigenvalues();
    spec.eigenvectors = solver.eigenvectors();
    spec.source_dim = d;
    // Sign convention: largest-magnitude entry of each column is positive.
    for (int k = 0; k < d; ++k) {
        Eigen::Index imax = 0;
        spec.eigenvectors.col(k).cwiseAbs().maxCoeff(&imax);
        if (spec.eigenvectors(imax, k) < 0.0)
            spec.eigenvectors.col(k) = -spec.eigenvectors.col(k);
    }
    return spec;
}

EigenGrad eigh_backward_values(const Spectrum& spectrum, const Eigen::VectorXd& g) {
    if (g.size() != spectrum.eigenvalues.size())
        throw std::invalid_argument("eigh_backward_values: gradient length mismatch");
    const Eigen::MatrixXd& u = spectrum.eigenvectors;
    Eigen::MatrixXd grad = u * g.asDiagonal() * u.transpose();
    // Exact symmetry by construction.
    grad = 0.5 * (grad + grad.transpose()).eval();
    return EigenGrad{std::move(grad)};
}

EigenGrad eigh_backward_full(const Spectrum& spectrum, const Eigen::VectorXd& g_values,
                             const Eigen::MatrixXd& g_vectors) {
    const Eigen::Index d = spectrum.eigenvalues.size();
    if (g_values.size() != d || g_vectors.rows() != d || g_vectors.cols() != d)
        throw std::invalid_argument("eigh_backward_full: gradient shape mismatch");
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = i + 1; j < d; ++j)
            if (std::abs(spectrum.eigenvalues[i] - spectrum.eigenvalues[j]) <= degenerate_gap_threshold)
                throw std::domain_error("eigh_backward_full: degenerate spectrum");

    const Eigen::MatrixXd& u = spectrum.eigenvectors;
    const Eigen::MatrixXd a = u.transpose() * g_vectors; // U^T dL/dU
    Eigen::MatrixXd inner = g_values.asDiagonal();
    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
            if (i == j)
                continue;
            const double kt = 1.0 / (spectrum.eigenvalues[j] - spectrum.eigenvalues[i]); // (K^T)_ij
            inner(i, j) += 0.5 * kt * (a(i, j) - a(j, i)); // sym(K^T o A)_ij
        }
    }
    Eigen::MatrixXd grad = u * inner * u.transpose();
    grad = 0.5 * (grad + grad.transpose()).eval();
    return EigenGrad{std::move(grad)};
}

} // namespace spqr
