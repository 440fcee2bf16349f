#pragma once

#include "fdne/rls.hpp"
#include "fdne/types.hpp"

#include <iosfwd>
#include <span>
#include <vector>

namespace fdne::passivity {

// Evaluates every entry at z = exp(j 2 pi f ts). Throws SamplingError when a
// denominator vanishes on the grid or the grid leaves [0, Nyquist).
[[nodiscard]] AdmittanceSampleSet sample_admittance(const ident::TFMatrix& m, std::span<const double> f_grid);

// Hermitian (conductance) and skew-Hermitian (susceptance) parts, g + b = y.
struct ConductanceSplit {
    ComplexMatrix g;
    ComplexMatrix b;
};
[[nodiscard]] ConductanceSplit conductance_part(const ComplexMatrix& y);

struct PassivityReport {
    std::vector<double> f_hz;
    std::vector<double> min_eig;
    std::vector<std::size_t> violations;
    double worst = 0.0;  // most negative min_eig, 0 when passive
    double tol = 0.0;

    [[nodiscard]] bool passive() const { return violations.empty(); }
    [[nodiscard]] bool violated(std::size_t k) const;
};

[[nodiscard]] PassivityReport check_passivity(const AdmittanceSampleSet& s, double tol = 1e-9);
void write_report_csv(std::ostream& out, const PassivityReport& r);

// Frobenius-nearest positive semidefinite matrix: U max(L, 0) U*.
[[nodiscard]] ComplexMatrix nearest_psd(const ComplexMatrix& g);

// Twice the sweep density over [f_start, f_end], continued at the sweep step
// from 0 Hz up to just below Nyquist.
[[nodiscard]] std::vector<double> default_grid(double f_start, double f_end, double f_step, double ts);

struct EnforceOptions {
    int max_rounds = 8;
    double tol = 1e-9;
    double weight_floor = 1e-6;  // lower bound on |Y| in the relative refit weights
    double hold_weight = 10.0;   // extra weight on samples that are not being corrected
    double margin = 0.0;         // eigenvalue target above tol, fraction of |worst|
};

struct EnforcementResult {
    ident::TFMatrix model;
    PassivityReport before;
    PassivityReport after;
    int rounds = 0;
    double shift = 0.0;  // constant diagonal conductance added as the fallback
    // Largest ||Y_c - Y_f|| / ||Y_f|| over samples that were passive before.
    double max_perturbation = 0.0;
};

// Clips the conductance part of violating samples to the nearest PSD matrix
// and refits the numerators (denominators fixed) to the corrected samples by
// relative-weighted least squares. The refit is constrained so that every
// sample found violating in any round keeps its linearized eigenvalues at
// or above the target, solved as a least-distance problem. Re-checks up to
// `max_rounds` times, then shifts the diagonal by any residual violation.
[[nodiscard]] EnforcementResult enforce_passivity(const ident::TFMatrix& m, std::span<const double> f_grid,
                                                  const EnforceOptions& opt = {});

// Relative spectral-norm distance of two sample sets, per sample.
[[nodiscard]] std::vector<double> relative_difference(const AdmittanceSampleSet& a, const AdmittanceSampleSet& b);

}  // namespace fdne::passivity
