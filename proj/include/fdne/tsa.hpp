#pragma once

#include "fdne/fdne_rt.hpp"
#include "fdne/netmodel.hpp"

#include <deque>
#include <span>
#include <vector>

namespace fdne::tsa {

using rt::PhasorValue;

// One-cycle sliding estimator of the f0 component. The window holds
// round(1 / (f0 ts)) samples; the cosine/sine correlations are corrected by
// their Gram matrix so non-integer cycle counts are exact for a pure tone.
// Angles refer to cos(2 pi f0 t) at absolute sample time t.
class PhasorEstimator {
public:
    PhasorEstimator(double f0, double ts, double start = 0.0);

    void push(double x);
    [[nodiscard]] bool ready() const { return buf_.size() == window_; }
    [[nodiscard]] PhasorValue value() const;
    [[nodiscard]] std::size_t window() const { return window_; }

private:
    double f0_, ts_, start_;
    std::size_t window_;
    long k_ = 0;  // index of the next sample
    std::deque<double> buf_;
};

// Phasor at every `step` seconds once the first window is full (the first
// estimate is at the end of the first window). Throws InsufficientDataError
// when the channel is shorter than a window or the rate is below 8 samples
// per cycle.
[[nodiscard]] std::vector<PhasorValue> phasor_extract(std::span<const double> x, double ts, double f0,
                                                      double step, double start = 0.0);

[[nodiscard]] double phasor_to_time(const PhasorValue& p, double t);

// V_g = Y_gg^-1 (I_g - Y_gb V_b). Throws InterfaceError for singular Y_gg.
[[nodiscard]] ComplexVector gen_bus_voltage(const ComplexVector& i_g, const ComplexVector& v_b,
                                            const ComplexMatrix& y_gb, const ComplexMatrix& y_gg);

// I_b = Y_bb V_b + Y_bg V_g, the current drawn into the area at each boundary bus.
[[nodiscard]] ComplexVector boundary_current(const ComplexVector& v_b, const ComplexVector& v_g,
                                             const ComplexMatrix& y_bb, const ComplexMatrix& y_bg);

struct GeneratorPhasorModel {
    int id = 0;
    double h = 0.0;
    double d = 0.0;
    double xd_prime = 0.0;
    double ra = 0.0;
    double e_prime = 0.0;  // |E'|
    double delta = 0.0;    // rad
    double omega = 0.0;    // pu speed deviation
    double pm = 0.0;

    [[nodiscard]] Complex emf() const { return std::polar(e_prime, delta); }
    [[nodiscard]] Complex impedance() const { return {ra, xd_prime}; }
    // Current injected into the terminal bus and electrical power for V_g.
    [[nodiscard]] Complex current(Complex v_g) const { return (emf() - v_g) / impedance(); }
    [[nodiscard]] double electrical_power(Complex v_g) const;
    void validate() const;
};

// Trapezoidal swing step over dt with terminal voltages held at v_g.
// Returns the injected currents at the end of the step.
ComplexVector tsa_step(std::vector<GeneratorPhasorModel>& gens, const ComplexVector& v_g, double dt,
                       double f0 = 60.0);

// Phasor model of an area behind its boundary buses: the 60 Hz network
// Kron-reduced to (boundary, generator terminal) buses with classical
// machines on the terminals.
class TsaEquivalent {
public:
    // `area` is the external area case; `pf` a power-flow solution covering
    // its buses. `aggregate` lists machine-id groups merged into one machine.
    TsaEquivalent(const net::NetworkCase& area, const net::PowerFlowResult& pf,
                  std::span<const std::vector<int>> aggregate = {});

    [[nodiscard]] const std::vector<BusId>& boundary() const { return part_.boundary_ids; }
    [[nodiscard]] const std::vector<GeneratorPhasorModel>& generators() const { return gens_; }
    [[nodiscard]] const net::PartitionedY& partition() const { return part_; }

    // Network solution for boundary voltages with the current machine state.
    struct Solution {
        ComplexVector v_g;
        ComplexVector i_g;
        ComplexVector i_b;
    };
    [[nodiscard]] Solution solve(const ComplexVector& v_b) const;

    // Boundary admittance with the machine EMFs held: I_b = Y_eq V_b + I_n.
    [[nodiscard]] ComplexMatrix norton_admittance() const;

    // Trapezoidal step to boundary voltages v_b at the end of dt, solving the
    // machines and network together. The start point is the previous step's
    // end (initially the power-flow state).
    Solution advance(const ComplexVector& v_b, double dt);

private:
    double f0_;
    net::PartitionedY part_;
    std::vector<GeneratorPhasorModel> gens_;
    ComplexMatrix y_gg_aug_;
    ComplexVector v_g_last_;
    Eigen::PartialPivLU<ComplexMatrix> lu_;
};

}  // namespace fdne::tsa
