#pragma once

#include "fdne/netmodel.hpp"

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fdne::emt {

// Equally spaced samples, sample k at start + k * ts.
struct TimeSeries {
    double ts = 0.0;
    double start = 0.0;
    std::vector<std::string> names;
    std::vector<std::vector<double>> channels;

    // The returned reference is invalidated by the next add().
    std::vector<double>& add(const std::string& name, std::size_t reserve = 0);
    [[nodiscard]] bool has(const std::string& name) const;
    [[nodiscard]] const std::vector<double>& operator[](const std::string& name) const;
    [[nodiscard]] std::size_t size() const { return channels.empty() ? 0 : channels.front().size(); }
    [[nodiscard]] double time(std::size_t k) const { return start + static_cast<double>(k) * ts; }
    void validate() const;
};

void write_csv(std::ostream& out, const TimeSeries& ts);

enum class EventKind { fault_on, fault_off, branch_open, branch_close, source_step };

// `target` is a bus id for faults, a branch index for branch events and a
// source index for source steps. `value` is the fault resistance or the new
// source magnitude.
struct Event {
    double time = 0.0;
    EventKind kind = EventKind::fault_on;
    int target = 0;
    double value = 0.0;
};

// Fixed-step trapezoidal simulator over the case branches and sources.
// Voltage-source buses are solved as known-voltage nodes.
class Simulator {
public:
    // `phase_offset` is added to every source phase (used for the quadrature
    // companion run of a balanced system).
    Simulator(const net::NetworkCase& c, double ts, double phase_offset = 0.0);

    // Consistent state at t = 0 for zero inductor currents and capacitor
    // voltages; resistive node voltages are solved around them.
    void initialize_at_rest();

    // Periodic steady state of the sampled system at frequency f. The
    // network is solved at the trapezoidal-warped frequency with the case
    // sources, `injections` (current phasors into buses) and `extra`
    // admittance blocks standing in for any conductance blocks.
    struct PortAdmittance {
        std::vector<BusId> buses;
        ComplexMatrix y;
    };
    std::map<BusId, Complex> initialize_steady_state(double f,
                                                     const std::map<BusId, Complex>& injections = {},
                                                     std::span<const PortAdmittance> extra = {});

    void apply(const Event& e);
    void step();

    // Manual control of a source; std::nullopt returns it to its waveform.
    void set_source_value(std::size_t source, std::optional<double> value);
    void set_injection(BusId bus, double amps);
    int add_conductance_block(std::vector<BusId> buses, const Eigen::MatrixXd& g);
    void set_conductance_block(int handle, const Eigen::MatrixXd& g);

    [[nodiscard]] double time() const { return t_; }
    [[nodiscard]] long step_index() const { return k_; }
    [[nodiscard]] double ts() const { return ts_; }
    [[nodiscard]] double voltage(BusId bus) const;
    // Current delivered into the network by a voltage source.
    [[nodiscard]] double source_current(std::size_t source) const;
    // Series-element current of a branch, from -> to.
    [[nodiscard]] double branch_current(std::size_t branch) const;
    // Current leaving `bus` into the branch at that terminal (series plus the
    // branch's own shunt capacitance at that end).
    [[nodiscard]] double branch_terminal_current(std::size_t branch, BusId bus) const;
    [[nodiscard]] double stored_energy() const;
    [[nodiscard]] const net::NetworkCase& network() const { return case_; }

private:
    enum class Kind { rl, cap, res };
    struct Element {
        Kind kind;
        int branch;
        Eigen::Index a, b;  // node indices, -1 is ground
        double r = 0.0, l = 0.0, c = 0.0;
        double g = 0.0;
        double alpha = 0.0;  // rl: 2L/ts - R
        double v = 0.0, i = 0.0, h = 0.0;
        bool active = true;
    };
    struct Block {
        std::vector<Eigen::Index> nodes;
        Eigen::MatrixXd g;
    };

    [[nodiscard]] double source_value(std::size_t s, double t) const;
    [[nodiscard]] double element_voltage(const Element& e) const;
    void assemble();
    void stamp(Eigen::MatrixXd& g, Eigen::Index a, Eigen::Index b, double y) const;
    void factor();
    void solve_current_time();
    [[nodiscard]] Eigen::Index node(BusId bus) const;

    net::NetworkCase case_;
    double ts_;
    double phase_offset_;
    double t_ = 0.0;
    long k_ = 0;
    std::map<BusId, Eigen::Index> index_;
    std::vector<BusId> bus_of_;
    std::vector<Element> elements_;
    std::vector<Block> blocks_;
    std::map<Eigen::Index, double> faults_;
    std::vector<std::optional<double>> override_;
    std::vector<double> magnitude_;
    Eigen::VectorXd injection_;
    std::vector<int> source_of_node_;  // -1 if unknown-voltage node
    std::vector<Eigen::Index> unknown_, known_;

    Eigen::MatrixXd g_full_;
    Eigen::MatrixXd g_uk_;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
    bool dirty_ = true;

    Eigen::VectorXd v_, rhs_, residual_;
};

// Runs from rest for `duration` seconds. Channels: v<bus> for every bus,
// isrc<k> for each voltage source, ibr<k> for each branch series current.
[[nodiscard]] TimeSeries simulate(const net::NetworkCase& c, double ts, double duration,
                                  std::span<const Event> events = {});

struct SweepSpec {
    double f_start = 1.0;
    double f_end = 2500.0;
    double f_step = 1.0;
    double amplitude = 1.0;
    int cycles_per_step = 5;
    double dwell = 0.0;  // seconds per point; overrides cycles_per_step when > 0
    int discard_cycles = 1;
    double ts = 50e-6;

    void validate() const;
    [[nodiscard]] std::vector<double> frequencies() const;
};

// One record per excited port. Internal sources are removed first, the
// excited port carries a stepped sine starting at phase 0 and every other
// port is shorted. Channels: "v" (applied voltage), "i<bus>" (current into
// the network at each port) and "valid" (1 outside the discarded cycles).
[[nodiscard]] std::vector<TimeSeries> frequency_sweep(const net::NetworkCase& c,
                                                      std::span<const BusId> ports,
                                                      const SweepSpec& spec);

}  // namespace fdne::emt
