#pragma once

#include <Eigen/Dense>

namespace spqr {

// Dense real symmetric matrix. Symmetry is enforced at construction and is
// exact at the bit level: the lower triangle is the source of truth and the
// upper triangle is mirrored from it.
class SymMatrix {
public:
    // Mirrors the lower triangle (including the diagonal) of m.
    static SymMatrix from_lower(const Eigen::MatrixXd& m);

    // Accepts a nearly symmetric matrix; rejects if the relative asymmetry
    // max|A - A^T| / max(1, max|A|) exceeds rel_tol, then bit-symmetrizes.
    static SymMatrix from_matrix(const Eigen::MatrixXd& m, double rel_tol = 1e-9);

    // (m + m^T) / 2, mirrored exactly afterwards.
    static SymMatrix symmetrized(const Eigen::MatrixXd& m);

    int dim() const { return static_cast<int>(entries_.rows()); }
    const Eigen::MatrixXd& entries() const { return entries_; }

    // Returns the matrix scaled by a scalar (bit symmetry is preserved).
    SymMatrix scaled(double factor) const;

private:
    explicit SymMatrix(Eigen::MatrixXd entries) : entries_(std::move(entries)) {}
    Eigen::MatrixXd entries_;
};

} // namespace spqr
