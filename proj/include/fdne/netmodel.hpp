#pragma once

#include "fdne/types.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fdne::net {

enum class BusKind { internal, boundary, generator };
enum class Area { study, external };

struct Bus {
    BusId id = 0;
    BusKind kind = BusKind::internal;
    Area area = Area::study;
};

enum class BranchModel {
    series_rl,  // R + jwL between `from` and `to` (to may be ground)
    pi_line,    // series R + jwL, C/2 to ground at each end
    shunt_rc,   // R parallel C from `from` to ground; R == 0 means no resistor
};

struct Branch {
    BusId from = 0;
    BusId to = kGround;
    BranchModel model = BranchModel::series_rl;
    double r = 0.0;  // ohm (or pu)
    double l = 0.0;  // henry (or pu * s)
    double c = 0.0;  // farad (or pu * s)
};

enum class SourceKind { voltage, current };

// Ideal source from `bus` to ground: magnitude * cos(2 pi f t + phase).
// frequency == 0 gives the constant magnitude * cos(phase).
struct Source {
    BusId bus = 0;
    SourceKind kind = SourceKind::voltage;
    double magnitude = 0.0;
    double phase = 0.0;      // rad
    double frequency = 0.0;  // Hz
};

// Classical machine: internal EMF behind ra + j xd_prime at terminal `bus`.
// Speeds are per-unit deviations, powers per-unit on the case base.
struct Generator {
    int id = 0;
    BusId bus = 0;
    double h = 0.0;         // inertia constant, s
    double d = 0.0;         // damping, pu power / pu speed
    double xd_prime = 0.0;  // pu at base frequency
    double ra = 0.0;        // pu
};

enum class PfBusType { slack, pv, pq };

struct PowerFlowBus {
    BusId bus = 0;
    PfBusType type = PfBusType::pq;
    double p = 0.0;      // injected active power, pu
    double q = 0.0;      // injected reactive power, pu (pq buses)
    double v = 1.0;      // magnitude set-point (slack/pv), initial guess otherwise
    double angle = 0.0;  // rad, slack only
};

struct NetworkCase {
    std::string name;
    double base_frequency = 60.0;
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<Source> sources;
    std::vector<Generator> generators;
    std::vector<PowerFlowBus> powerflow;

    // Throws CaseError on a broken invariant. `for_reduction` additionally
    // requires at least one boundary bus.
    void validate(bool for_reduction = false) const;

    [[nodiscard]] std::vector<BusId> sorted_bus_ids() const;
    [[nodiscard]] bool has_bus(BusId id) const;
    [[nodiscard]] const Bus& bus(BusId id) const;
    [[nodiscard]] std::vector<BusId> ids_of_kind(BusKind kind) const;
    [[nodiscard]] const Generator* generator(int id) const;
    [[nodiscard]] BusId max_bus_id() const;
};

// Nodal admittance matrix labelled by bus id (row i <-> buses[i]).
struct NodalMatrix {
    std::vector<BusId> buses;
    ComplexMatrix y;

    [[nodiscard]] Eigen::Index index_of(BusId id) const;
};

struct PartitionedY {
    ComplexMatrix y_bb, y_bg, y_gb, y_gg;
    std::vector<BusId> boundary_ids;
    std::vector<BusId> generator_ids;

    [[nodiscard]] ComplexMatrix reassemble() const;
};

// Admittance of a branch's series element and the shunt it places at each end.
struct BranchAdmittance {
    Complex series{0.0, 0.0};
    Complex shunt_from{0.0, 0.0};
    Complex shunt_to{0.0, 0.0};
};

[[nodiscard]] BranchAdmittance branch_admittance(const Branch& b, double f_hz);

// Nodal admittance at f over the case branches (generators and sources are
// not stamped). Buses ordered by sorted id.
[[nodiscard]] NodalMatrix build_ybus(const NetworkCase& c, double f_hz);

// Schur complement onto `keep`: Y_mm - Y_mn Y_nn^-1 Y_nm.
[[nodiscard]] NodalMatrix kron_reduce(const NodalMatrix& y, std::span<const BusId> keep);

[[nodiscard]] PartitionedY partition_reduced(const NodalMatrix& y_red,
                                             std::span<const BusId> boundary_ids,
                                             std::span<const BusId> generator_ids);

// Short-circuits voltage sources and generator EMFs, opens current sources.
// A shorted voltage-source bus is merged into ground; a generator becomes a
// series ra + j xd' branch from its terminal to ground.
[[nodiscard]] NetworkCase source_free(const NetworkCase& c);

// m x m port admittance per frequency, from the source-free network with
// every non-port bus Kron-eliminated.
[[nodiscard]] AdmittanceSampleSet analytic_port_admittance(const NetworkCase& c,
                                                           std::span<const BusId> ports,
                                                           std::span<const double> f_grid);

// Area split. Boundary buses belong to both sides: the external side holds
// every branch whose endpoints are all external-area buses (ground allowed,
// except shunts hanging on a boundary bus, which stay with the study side).
[[nodiscard]] bool is_external_branch(const NetworkCase& c, const Branch& b);
[[nodiscard]] NetworkCase external_area(const NetworkCase& c);
[[nodiscard]] NetworkCase study_area(const NetworkCase& c);

// Newton-Raphson power flow (flat start) on build_ybus at base frequency.
struct PowerFlowResult {
    std::map<BusId, Complex> voltage;    // bus voltage phasors
    std::map<BusId, Complex> injection;  // complex power injected at each bus
    int iterations = 0;
    double mismatch = 0.0;
};

[[nodiscard]] PowerFlowResult solve_power_flow(const NetworkCase& c, double tol = 1e-12,
                                               int max_iterations = 50);

}  // namespace fdne::net
