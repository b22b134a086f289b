#include "spqr/spectral_core.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "spqr/rng.hpp"

namespace spqr {

namespace {
constexpr double kPi = std::numbers::pi;
}

SymMatrix sample_goe(int dim, double sigma, std::uint64_t seed) {
    if (dim < 1)
        throw std::invalid_argument("sample_goe: dim must be >= 1");
    if (!(sigma > 0.0))
        throw std::invalid_argument("sample_goe: sigma must be positive");
    Rng rng(seed);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim, dim);
    const double diag_sigma = sigma * std::sqrt(2.0);
    for (int p = 0; p < dim; ++p) {
        m(p, p) = diag_sigma * rng.normal();
        for (int q = 0; q < p; ++q)
            m(p, q) = sigma * rng.normal();
    }
    return SymMatrix::from_lower(m);
}

double semicircle_pdf(double lambda, double sigma) {
    if (!(sigma > 0.0))
        throw std::invalid_argument("semicircle_pdf: sigma must be positive");
    const double support = 2.0 * sigma;
    if (std::abs(lambda) >= support)
        return 0.0;
    return std::sqrt(4.0 * sigma * sigma - lambda * lambda) / (2.0 * kPi * sigma * sigma);
}

double semicircle_cdf(double lambda, double sigma) {
    if (!(sigma > 0.0))
        throw std::invalid_argument("semicircle_cdf: sigma must be positive");
    const double support = 2.0 * sigma;
    if (lambda <= -support)
        return 0.0;
    if (lambda >= support)
        return 1.0;
    const double s2 = sigma * sigma;
    return lambda * std::sqrt(4.0 * s2 - lambda * lambda) / (4.0 * kPi * s2) +
           std::asin(lambda / support) / kPi + 0.5;
}

double soft_semicircle_pdf(double lambda, double rho, double eps) {
    if (!(rho > 0.0 && rho < 1.0))
        throw std::invalid_argument("soft_semicircle_pdf: rho must lie in (0, 1)");
    if (!(eps > 0.0))
        throw std::invalid_argument("soft_semicircle_pdf: eps must be positive");
    const double floor = (1.0 - rho) * eps;
    if (std::abs(lambda) > 2.0)
        return floor;
    const double branch = rho * std::sqrt(4.0 - lambda * lambda) / (2.0 * kPi);
    return std::max(branch, floor);
}

SpectralDensity esd(const Spectrum& spectrum) {
    const Eigen::Index d = spectrum.eigenvalues.size();
    if (d == 0)
        throw std::invalid_argument("esd: empty spectrum");
    SpectralDensity out;
    out.points = spectrum.eigenvalues;
    out.masses = Eigen::VectorXd::Constant(d, 1.0 / static_cast<double>(d));
    out.normalization = out.masses.sum();
    return out;
}

KlToSemicircle kl_to_semicircle(const Spectrum& spectrum, double rho, double eps) {
    const Eigen::Index d = spectrum.eigenvalues.size();
    if (d == 0)
        throw std::invalid_argument("kl_to_semicircle: empty spectrum");
    const double mass = 1.0 / static_cast<double>(d);
    KlToSemicircle out;
    out.dloss_dlambda = Eigen::VectorXd::Zero(d);
    for (Eigen::Index i = 0; i < d; ++i) {
        const double lam = spectrum.eigenvalues[i];
        out.loss += mass * std::log(mass / soft_semicircle_pdf(lam, rho, eps));
        if (std::abs(lam) < 2.0 - kl_gradient_guard)
            out.dloss_dlambda[i] = mass * lam / (4.0 - lam * lam);
    }
    return out;
}

int count_spikes(const Spectrum& spectrum, double margin) {
    int count = 0;
    for (Eigen::Index i = 0; i < spectrum.eigenvalues.size(); ++i)
        if (std::abs(spectrum.eigenvalues[i]) > 2.0 + margin)
            ++count;
    return count;
}

SymMatrix sample_spiked_wishart(const SpikedModelParams& params, std::uint64_t seed) {
    if (params.n < 2)
        throw std::invalid_argument("sample_spiked_wishart: n must be >= 2");
    if (!(params.psi >= 0.0))
        throw std::invalid_argument("sample_spiked_wishart: psi must be >= 0");
    if (!(params.sigma_noise > 0.0))
        throw std::invalid_argument("sample_spiked_wishart: sigma_noise must be positive");
    const int n = params.n;
    Rng rng(seed);
    Eigen::VectorXd u(n), v(n);
    for (int i = 0; i < n; ++i) {
        if (params.prior == SpikePrior::gaussian) {
            u[i] = rng.normal();
        } else {
            u[i] = rng.below(2) == 0 ? -1.0 : 1.0;
        }
    }
    for (int i = 0; i < n; ++i) {
        if (params.prior == SpikePrior::gaussian) {
            v[i] = rng.normal();
        } else {
            v[i] = rng.below(2) == 0 ? -1.0 : 1.0;
        }
    }
    Eigen::MatrixXd y(n, n);
    const double signal_scale = std::sqrt(params.psi / static_cast<double>(n));
    for (int p = 0; p < n; ++p)
        for (int q = 0; q < n; ++q)
            y(p, q) = signal_scale * u[p] * v[q] + params.sigma_noise * rng.normal();
    return SymMatrix::symmetrized(y);
}

double ks_distance(const Spectrum& spectrum, double sigma) {
    const Eigen::Index d = spectrum.eigenvalues.size();
    if (d == 0)
        throw std::invalid_argument("ks_distance: empty spectrum");
    // Eigenvalues are ascending, so the empirical CDF at eigenvalue i jumps
    // from i/D to (i+1)/D; the supremum is attained at one of the jumps.
    double sup = 0.0;
    const double n = static_cast<double>(d);
    for (Eigen::Index i = 0; i < d; ++i) {
        const double f = semicircle_cdf(spectrum.eigenvalues[i], sigma);
        sup = std::max(sup, std::abs(static_cast<double>(i + 1) / n - f));
        sup = std::max(sup, std::abs(static_cast<double>(i) / n - f));
    }
    return sup;
}

} // namespace spqr
