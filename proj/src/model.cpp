#include "qcollapse/model.hpp"

#include <cmath>
#include <limits>

namespace qcollapse {

void ModeSpectrum::validate() const {
    if (sigma1.empty() || sigma2.empty()) {
        throw ArgumentError("mode spectrum needs at least one mode per subsystem");
    }
    if (sigma1.size() != e1.size()) {
        throw ArgumentError("sigma1 and e1 must have matching lengths");
    }
    if (sigma2.size() != e2.size()) {
        throw ArgumentError("sigma2 and e2 must have matching lengths");
    }
    auto check_finite = [](const std::vector<double>& v, const char* name) {
        for (double x : v) {
            if (!std::isfinite(x)) {
                throw ArgumentError(std::string(name) + " contains a non-finite entry");
            }
        }
    };
    check_finite(sigma1, "sigma1");
    check_finite(sigma2, "sigma2");
    check_finite(e1, "e1");
    check_finite(e2, "e2");
}

namespace {

void check_index(const ModeSpectrum& spec, int j, int k) {
    if (j < 0 || j >= spec.num_system_modes() || k < 0 || k >= spec.num_pointer_modes()) {
        throw ArgumentError("mode index (" + std::to_string(j) + "," + std::to_string(k) +
                            ") out of range");
    }
}

} // namespace

double delta(const ModeSpectrum& spec, int j, int k) {
    check_index(spec, j, k);
    return spec.sigma1[j] - spec.sigma2[k];
}

double combined_energy(const ModeSpectrum& spec, int j, int k) {
    check_index(spec, j, k);
    return spec.e1[j] + spec.e2[k];
}

std::vector<DegeneratePair> validate_nondegenerate(const ModeSpectrum& spec, double tol_e) {
    if (tol_e < 0.0) {
        throw ArgumentError("tol_e must be non-negative");
    }
    std::vector<DegeneratePair> collisions;
    const int J = spec.num_system_modes();
    const int K = spec.num_pointer_modes();
    for (int j1 = 0; j1 < J; ++j1) {
        for (int k1 = 0; k1 < K; ++k1) {
            const int flat1 = spec.flat(j1, k1);
            for (int j2 = 0; j2 < J; ++j2) {
                for (int k2 = 0; k2 < K; ++k2) {
                    if (spec.flat(j2, k2) <= flat1) continue;
                    const double gap =
                        std::abs(combined_energy(spec, j1, k1) - combined_energy(spec, j2, k2));
                    if (gap <= tol_e) {
                        collisions.push_back({j1, k1, j2, k2});
                    }
                }
            }
        }
    }
    return collisions;
}

double min_energy_gap(const ModeSpectrum& spec) {
    double gap = std::numeric_limits<double>::infinity();
    const int J = spec.num_system_modes();
    const int K = spec.num_pointer_modes();
    for (int j1 = 0; j1 < J; ++j1) {
        for (int k1 = 0; k1 < K; ++k1) {
            for (int j2 = 0; j2 < J; ++j2) {
                for (int k2 = 0; k2 < K; ++k2) {
                    const double d =
                        std::abs(combined_energy(spec, j1, k1) - combined_energy(spec, j2, k2));
                    if (d > 0.0 && d < gap) gap = d;
                }
            }
        }
    }
    return std::isfinite(gap) ? gap : 0.0;
}

void Couplings::validate() const {
    if (!(B > 0.0)) {
        throw ConfigError("coupling B must be positive; it divides the evolution equation");
    }
    if (!(hbar > 0.0)) {
        throw ConfigError("hbar must be positive");
    }
    if (!std::isfinite(mu) || !std::isfinite(nu)) {
        throw ConfigError("mu and nu must be finite");
    }
    kernel.validate();
}

void TimeGrid::validate() const {
    if (!(t_f > t_i)) {
        throw ConfigError("time grid needs t_f > t_i");
    }
    if (n_nodes < 3) {
        throw ConfigError("time grid needs at least 3 nodes");
    }
    if (!std::isfinite(t_i) || !std::isfinite(t_f)) {
        throw ConfigError("grid endpoints must be finite");
    }
}

} // namespace qcollapse
