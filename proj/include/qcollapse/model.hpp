#pragma once

#include <vector>

#include "qcollapse/errors.hpp"
#include "qcollapse/kernel.hpp"

namespace qcollapse {

// Eigenvalues and energies of the measured system (1) and the apparatus (2).
// sigma is the measured observable, e the mode energy; both constant in time.
struct ModeSpectrum {
    std::vector<double> sigma1;
    std::vector<double> sigma2;
    std::vector<double> e1;
    std::vector<double> e2;

    int num_system_modes() const { return static_cast<int>(sigma1.size()); }
    int num_pointer_modes() const { return static_cast<int>(sigma2.size()); }
    int num_modes() const { return num_system_modes() * num_pointer_modes(); }

    // Row-major flat index over (j, k); fixed layout for all trajectory storage.
    int flat(int j, int k) const { return j * num_pointer_modes() + k; }

    void validate() const;
};

// Eigenvalue mismatch between system mode j and pointer mode k.
double delta(const ModeSpectrum& spec, int j, int k);

// Combined mode energy E_jk = E_j^1 + E_k^2.
double combined_energy(const ModeSpectrum& spec, int j, int k);

struct DegeneratePair {
    int j1, k1;
    int j2, k2;
};

// All distinct index pairs whose combined energies agree within tol_e.
// An empty result means the non-degeneracy assumption behind the outcome
// statistics holds for this spectrum.
std::vector<DegeneratePair> validate_nondegenerate(const ModeSpectrum& spec, double tol_e);

// Smallest nonzero |E_jk - E_lm| over all mode pairs; 0 if none differ.
double min_energy_gap(const ModeSpectrum& spec);

// Coupling constants of the combined action. B multiplies the kinetic part
// and must be positive; mu and nu set the local and nonlocal interaction
// strengths and are free knobs of the model.
struct Couplings {
    double B = 1.0;
    double mu = 0.0;
    double nu = 0.0;
    double hbar = 1.0;
    KernelSpec kernel;

    double tau() const { return kernel.tau; }

    // Coefficient of C~ in the evolution equation. The stationarity condition
    // of the quartic double-time term carries twice the bare coupling, because
    // the varied coefficient appears once in each time slot of the integrand.
    double nonlocal_gain() const { return 2.0 * nu / B; }

    void validate() const;
};

// Uniform time grid over the measurement window [t_i, t_f].
struct TimeGrid {
    double t_i = 0.0;
    double t_f = 1.0;
    int n_nodes = 3;

    double duration() const { return t_f - t_i; }
    double dt() const { return (t_f - t_i) / (n_nodes - 1); }
    double t(int n) const { return t_i + n * dt(); }

    // Trapezoid weight of node n over the full grid.
    double weight(int n) const {
        return (n == 0 || n == n_nodes - 1) ? 0.5 * dt() : dt();
    }

    void validate() const;
};

} // namespace qcollapse
