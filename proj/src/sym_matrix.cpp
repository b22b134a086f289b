#include "spqr/sym_matrix.hpp"

#include <stdexcept>

namespace spqr {

namespace {

void check_square_nonempty(const Eigen::MatrixXd& m) {
    if (m.rows() == 0 || m.rows() != m.cols())
        throw std::invalid_argument("SymMatrix: matrix must be square with dim >= 1");
}

Eigen::MatrixXd mirror_lower(const Eigen::MatrixXd& m) {
    Eigen::MatrixXd out = m;
    const Eigen::Index n = m.rows();
    for (Eigen::Index p = 0; p < n; ++p)
        for (Eigen::Index q = 0; q < p; ++q)
            out(q, p) = out(p, q);
    return out;
}

} // namespace

SymMatrix SymMatrix::from_lower(const Eigen::MatrixXd& m) {
    check_square_nonempty(m);
    return SymMatrix(mirror_lower(m));
}

SymMatrix SymMatrix::from_matrix(const Eigen::MatrixXd& m, double rel_tol) {
    check_square_nonempty(m);
    const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if (asym > rel_tol * scale)
        throw std::invalid_argument("SymMatrix: symmetry violated beyond tolerance");
    return SymMatrix(mirror_lower(m));
}

SymMatrix SymMatrix::symmetrized(const Eigen::MatrixXd& m) {
    check_square_nonempty(m);
    return SymMatrix(mirror_lower(0.5 * (m + m.transpose())));
}

SymMatrix SymMatrix::scaled(double factor) const {
    return SymMatrix(entries_ * factor);
}

} // namespace spqr
