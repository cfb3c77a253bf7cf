#pragma once

#include <string>

namespace qcollapse {

struct TimeGrid;
struct ModeSpectrum;

// Temporal interaction kernel f(t1 - t2). All families are even, non-negative
// and bounded by 1; the compact ones vanish identically for |t| >= tau.
enum class KernelFamily {
    Tophat,      // 1 on |t| < tau, 0 outside
    CosineTaper, // cos^2(pi t / (2 tau)) on |t| < tau, 0 outside
    Constant,    // identically 1; infinite range
};

struct KernelSpec {
    KernelFamily family = KernelFamily::Constant;
    double tau = 0.0; // range; ignored for the constant family

    void validate() const;
};

const char* kernel_family_name(KernelFamily family);
KernelFamily kernel_family_from_name(const std::string& name);

double kernel_eval(const KernelSpec& spec, double t);

// Node-separation bound b such that kernel_eval is exactly zero for
// separations > b on this grid. Constant kernels span the whole grid.
int support_halfwidth(const KernelSpec& spec, const TimeGrid& grid);

// Realized slow-variation ratio hbar*max|f'| / (min nonzero |E_jk - E_lm| * f_max).
// Reported per run, never enforced. For the tophat family the slope is taken
// from grid differences since the jump has no finite derivative. Returns a
// negative value when the spectrum has no two distinct combined energies.
double slow_variation_epsilon(const KernelSpec& spec, const ModeSpectrum& spec_modes,
                              double hbar, const TimeGrid& grid);

} // namespace qcollapse
