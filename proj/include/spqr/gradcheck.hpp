// Finite-difference validation suites for every analytic gradient in the
// library: the eigenvalue-only and full eigendecomposition backward passes,
// the end-to-end spectral loss gradient with respect to the ensemble values,
// and the network backward pass. Each suite reports its worst relative error
// max_e |fd_e - an_e| / max(1, |an_e|).

#pragma once

#include <cstdint>
#include <string>

namespace spqr {

struct GradcheckReport {
    double eigh_values_max_rel = 0.0; // 20 random D=8 matrices, L = sum lambda^2
    double eigh_full_max_rel = 0.0;   // D=4 eigenvector-weighted losses
    double spqr_max_rel = 0.0;        // N=10 ensembles through the full pipeline
    double mlp_max_rel = 0.0;         // [3, 8, 1] network, all parameters

    bool pass() const {
        return eigh_values_max_rel < 1e-4 && eigh_full_max_rel < 1e-3 &&
               spqr_max_rel < 1e-3 && mlp_max_rel < 1e-4;
    }
    std::string to_json() const;
};

GradcheckReport run_gradcheck(std::uint64_t seed);

} // namespace spqr
