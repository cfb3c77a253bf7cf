#include "qcollapse/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qcollapse/errors.hpp"
#include "qcollapse/model.hpp"

namespace qcollapse {

void KernelSpec::validate() const {
    if (family == KernelFamily::Constant) return;
    if (!(tau > 0.0)) {
        throw DegenerateKernelError(
            "compact kernel with tau <= 0 would zero out the nonlocal term; set nu = 0 instead");
    }
    if (!std::isfinite(tau)) {
        throw ConfigError("tau = +inf is only permitted with the constant kernel family");
    }
}

const char* kernel_family_name(KernelFamily family) {
    switch (family) {
        case KernelFamily::Tophat: return "tophat";
        case KernelFamily::CosineTaper: return "cosine_taper";
        case KernelFamily::Constant: return "constant";
    }
    return "?";
}

KernelFamily kernel_family_from_name(const std::string& name) {
    if (name == "tophat") return KernelFamily::Tophat;
    if (name == "cosine_taper") return KernelFamily::CosineTaper;
    if (name == "constant") return KernelFamily::Constant;
    throw ConfigError("unknown kernel family '" + name +
                      "' (expected tophat, cosine_taper or constant)");
}

double kernel_eval(const KernelSpec& spec, double t) {
    if (spec.family == KernelFamily::Constant) return 1.0;
    spec.validate();
    const double a = std::fabs(t); // evenness holds bit-exactly
    if (a >= spec.tau) return 0.0;
    if (spec.family == KernelFamily::Tophat) return 1.0;
    const double c = std::cos(M_PI * a / (2.0 * spec.tau));
    return c * c;
}

int support_halfwidth(const KernelSpec& spec, const TimeGrid& grid) {
    grid.validate();
    if (spec.family == KernelFamily::Constant) return grid.n_nodes - 1;
    spec.validate();
    const double cells = std::ceil(spec.tau / grid.dt());
    const double cap = static_cast<double>(grid.n_nodes - 1);
    return static_cast<int>(std::min(cells, cap));
}

double slow_variation_epsilon(const KernelSpec& spec, const ModeSpectrum& spec_modes,
                              double hbar, const TimeGrid& grid) {
    const double gap = min_energy_gap(spec_modes);
    if (gap <= 0.0) return -1.0; // no two distinct combined energies

    double max_slope = 0.0;
    switch (spec.family) {
        case KernelFamily::Constant:
            max_slope = 0.0;
            break;
        case KernelFamily::CosineTaper:
            // f' = -(pi/(2 tau)) sin(pi t / tau)
            max_slope = M_PI / (2.0 * spec.tau);
            break;
        case KernelFamily::Tophat: {
            // Jump at |t| = tau: report the slope the grid actually realizes.
            double worst = 0.0;
            for (int s = 0; s + 1 <= grid.n_nodes - 1; ++s) {
                const double f0 = kernel_eval(spec, s * grid.dt());
                const double f1 = kernel_eval(spec, (s + 1) * grid.dt());
                worst = std::max(worst, std::fabs(f1 - f0) / grid.dt());
            }
            max_slope = worst;
            break;
        }
    }
    return hbar * max_slope / gap; // f_max = 1 for every family
}

} // namespace qcollapse
