#include "fdne/tsa.hpp"

#include "fdne/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace fdne::tsa {

PhasorEstimator::PhasorEstimator(double f0, double ts, double start) : f0_(f0), ts_(ts), start_(start) {
    if (!(f0 > 0.0 && ts > 0.0)) throw InsufficientDataError("phasor estimator needs f0 > 0 and ts > 0");
    const double per_cycle = 1.0 / (f0 * ts);
    if (per_cycle < 8.0)
        throw InsufficientDataError("phasor estimator needs at least 8 samples per cycle, got " + std::to_string(per_cycle));
    window_ = static_cast<std::size_t>(std::lround(per_cycle));
}

void PhasorEstimator::push(double x) {
    buf_.push_back(x);
    if (buf_.size() > window_) buf_.pop_front();
    ++k_;
}

PhasorValue PhasorEstimator::value() const {
    if (!ready()) throw InsufficientDataError("phasor window not yet full");
    // Least squares x ~ a cos(th) - b sin(th), phasor a + jb.
    double scc = 0.0, sss = 0.0, scs = 0.0, xc = 0.0, xs = 0.0;
    const long first = k_ - static_cast<long>(window_);
    for (std::size_t i = 0; i < window_; ++i) {
        const double cyc = f0_ * (start_ + static_cast<double>(first + static_cast<long>(i)) * ts_);
        const double th = kTwoPi * (cyc - std::floor(cyc));
        const double c = std::cos(th), s = -std::sin(th);
        const double x = buf_[i];
        scc += c * c;
        sss += s * s;
        scs += c * s;
        xc += x * c;
        xs += x * s;
    }
    const double det = scc * sss - scs * scs;
    const double a = (sss * xc - scs * xs) / det;
    const double b = (scc * xs - scs * xc) / det;
    return PhasorValue::from_complex({a, b}, f0_);
}

std::vector<PhasorValue> phasor_extract(std::span<const double> x, double ts, double f0, double step, double start) {
    PhasorEstimator est(f0, ts, start);
    if (x.size() < est.window())
        throw InsufficientDataError("channel of " + std::to_string(x.size()) + " samples is shorter than one " +
                                    std::to_string(est.window()) + "-sample window");
    const auto every = std::max<long>(1, std::lround(step / ts));
    std::vector<PhasorValue> out;
    long since = 0;
    for (double v : x) {
        est.push(v);
        if (!est.ready()) continue;
        if (out.empty() || ++since == every) {
            out.push_back(est.value());
            since = 0;
        }
    }
    return out;
}

double phasor_to_time(const PhasorValue& p, double t) {
    return p.magnitude * std::cos(kTwoPi * p.frequency * t + p.angle);
}

ComplexVector gen_bus_voltage(const ComplexVector& i_g, const ComplexVector& v_b, const ComplexMatrix& y_gb,
                              const ComplexMatrix& y_gg) {
    if (y_gg.rows() != y_gg.cols() || y_gg.rows() != i_g.size() || y_gb.rows() != i_g.size() ||
        y_gb.cols() != v_b.size())
        throw InterfaceError("generator/boundary block dimensions disagree");
    if (y_gg.rows() == 0) return {};
    Eigen::PartialPivLU<ComplexMatrix> lu(y_gg);
    const double pivot = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
    if (!(pivot > 0.0 && pivot >= 1e-12 * y_gg.cwiseAbs().maxCoeff())) throw InterfaceError("Y_gg is singular");
    return lu.solve(i_g - y_gb * v_b);
}

ComplexVector boundary_current(const ComplexVector& v_b, const ComplexVector& v_g, const ComplexMatrix& y_bb,
                               const ComplexMatrix& y_bg) {
    if (y_bb.rows() != v_b.size() || y_bb.cols() != v_b.size() || y_bg.rows() != v_b.size() ||
        y_bg.cols() != v_g.size())
        throw InterfaceError("boundary block dimensions disagree");
    ComplexVector i = y_bb * v_b;
    if (v_g.size() > 0) i += y_bg * v_g;
    return i;
}

double GeneratorPhasorModel::electrical_power(Complex v_g) const {
    return (emf() * std::conj(current(v_g))).real();
}

void GeneratorPhasorModel::validate() const {
    if (!(h > 0.0)) throw IntegrationError("generator " + std::to_string(id) + " needs H > 0");
    if (!(e_prime > 0.0)) throw IntegrationError("generator " + std::to_string(id) + " needs |E'| > 0");
    if (!(xd_prime > 0.0 || ra > 0.0)) throw IntegrationError("generator " + std::to_string(id) + " has zero impedance");
}

namespace {

// Trapezoidal swing step of one machine from its current state, with
// electrical power pe0 at the start and terminal voltage v at the end.
void trapezoid(GeneratorPhasorModel& m, double pe0, Complex v, double dt, double f0) {
    m.validate();
    const double ws = kTwoPi * f0;
    const Complex z = m.impedance();
    const double d0 = m.delta, w0 = m.omega;
    const double k = 2.0 / (dt * ws);
    double d1 = d0 + dt * ws * w0;
    for (int it = 0; it < 50; ++it) {
        m.delta = d1;
        const Complex e = m.emf();
        const double pe = m.electrical_power(v);
        const double dpe = (Complex(0, 1) * e * std::conj((e - v) / z) + e * std::conj(Complex(0, 1) * e / z)).real();
        const double w1 = k * (d1 - d0) - w0;
        const double f = 4.0 * m.h * (w1 - w0) / dt - (2.0 * m.pm - pe0 - pe - m.d * (w0 + w1));
        const double df = (4.0 * m.h / dt + m.d) * k + dpe;
        const double step = f / df;
        d1 -= step;
        if (!std::isfinite(d1)) throw IntegrationError("rotor angle of generator " + std::to_string(m.id) + " diverged");
        if (std::abs(step) < 1e-14) break;
    }
    m.delta = d1;
    m.omega = k * (d1 - d0) - w0;
    if (!std::isfinite(m.omega)) throw IntegrationError("speed of generator " + std::to_string(m.id) + " diverged");
}

void check_step(double dt) {
    if (!(dt > 0.0 && dt <= 0.01)) throw IntegrationError("TSA step must lie in (0, 10 ms]");
}

}  // namespace

ComplexVector tsa_step(std::vector<GeneratorPhasorModel>& gens, const ComplexVector& v_g, double dt, double f0) {
    check_step(dt);
    if (v_g.size() != static_cast<Eigen::Index>(gens.size())) throw IntegrationError("one terminal voltage per machine");
    ComplexVector i_g(v_g.size());
    for (std::size_t g = 0; g < gens.size(); ++g) {
        const Complex v = v_g(static_cast<Eigen::Index>(g));
        trapezoid(gens[g], gens[g].electrical_power(v), v, dt, f0);
        i_g(static_cast<Eigen::Index>(g)) = gens[g].current(v);
    }
    return i_g;
}

TsaEquivalent::TsaEquivalent(const net::NetworkCase& area, const net::PowerFlowResult& pf,
                             std::span<const std::vector<int>> aggregate)
    : f0_(area.base_frequency) {
    area.validate(true);
    std::vector<BusId> boundary = area.ids_of_kind(net::BusKind::boundary);
    std::vector<const net::Generator*> machines;
    for (const auto& g : area.generators) machines.push_back(&g);
    std::sort(machines.begin(), machines.end(), [](auto* a, auto* b) { return a->id < b->id; });

    std::vector<BusId> gen_buses;
    for (auto* g : machines) {
        if (std::find(gen_buses.begin(), gen_buses.end(), g->bus) != gen_buses.end())
            throw InterfaceError("bus " + std::to_string(g->bus) + " carries more than one machine");
        gen_buses.push_back(g->bus);
    }
    std::vector<BusId> keep = boundary;
    keep.insert(keep.end(), gen_buses.begin(), gen_buses.end());
    const net::NodalMatrix red = net::kron_reduce(net::build_ybus(area, f0_), keep);

    const auto voltage = [&](BusId b) {
        const auto it = pf.voltage.find(b);
        if (it == pf.voltage.end()) throw InterfaceError("power flow lacks bus " + std::to_string(b));
        return it->second;
    };

    // Machine states at the power-flow operating point.
    std::vector<GeneratorPhasorModel> single;
    for (auto* g : machines) {
        GeneratorPhasorModel m;
        m.id = g->id;
        m.h = g->h;
        m.d = g->d;
        m.xd_prime = g->xd_prime;
        m.ra = g->ra;
        const Complex v = voltage(g->bus);
        const auto it = pf.injection.find(g->bus);
        if (it == pf.injection.end()) throw InterfaceError("power flow lacks injection at bus " + std::to_string(g->bus));
        const Complex i = std::conj(it->second / v);
        const Complex e = v + m.impedance() * i;
        m.e_prime = std::abs(e);
        m.delta = std::arg(e);
        m.pm = (e * std::conj(i)).real();
        single.push_back(m);
    }

    // Groups: each aggregate list becomes one machine on a merged terminal.
    std::map<int, int> group_of;
    for (std::size_t gi = 0; gi < aggregate.size(); ++gi)
        for (int id : aggregate[gi]) {
            if (group_of.count(id)) throw InterfaceError("machine " + std::to_string(id) + " listed in two groups");
            group_of[id] = static_cast<int>(gi);
        }
    struct Slot {
        std::vector<std::size_t> members;
    };
    std::vector<Slot> slots;
    std::map<int, std::size_t> slot_of_group;
    for (std::size_t i = 0; i < single.size(); ++i) {
        const auto it = group_of.find(single[i].id);
        if (it == group_of.end()) {
            slots.push_back({{i}});
            continue;
        }
        const auto s = slot_of_group.find(it->second);
        if (s == slot_of_group.end()) {
            slot_of_group[it->second] = slots.size();
            slots.push_back({{i}});
        } else {
            slots[s->second].members.push_back(i);
        }
    }
    for (const auto& [id, gi] : group_of)
        if (std::none_of(single.begin(), single.end(), [&](const auto& m) { return m.id == id; }))
            throw InterfaceError("aggregate group names unknown machine " + std::to_string(id));

    // Members of a slot reach a common terminal through ideal transformers of
    // ratio V_i / V_t, so the power-flow state is preserved: Y' = T^H Y T.
    const auto nb = static_cast<Eigen::Index>(boundary.size());
    const auto ns = static_cast<Eigen::Index>(slots.size());
    ComplexMatrix tc = ComplexMatrix::Zero(nb + static_cast<Eigen::Index>(gen_buses.size()), nb + ns);
    for (Eigen::Index i = 0; i < nb; ++i) tc(i, i) = 1.0;
    for (Eigen::Index s = 0; s < ns; ++s) {
        const auto& members = slots[static_cast<std::size_t>(s)].members;
        Complex v_t = 0.0;
        for (std::size_t mi : members) v_t += voltage(gen_buses[mi]);
        v_t /= static_cast<double>(members.size());
        for (std::size_t mi : members) tc(nb + static_cast<Eigen::Index>(mi), nb + s) = voltage(gen_buses[mi]) / v_t;
    }
    const ComplexMatrix y = tc.adjoint() * red.y * tc;

    part_.boundary_ids = boundary;
    for (Eigen::Index s = 0; s < ns; ++s) part_.generator_ids.push_back(gen_buses[slots[static_cast<std::size_t>(s)].members.front()]);
    part_.y_bb = y.topLeftCorner(nb, nb);
    part_.y_bg = y.topRightCorner(nb, ns);
    part_.y_gb = y.bottomLeftCorner(ns, nb);
    part_.y_gg = y.bottomRightCorner(ns, ns);

    for (const auto& slot : slots) {
        if (slot.members.size() == 1) {
            gens_.push_back(single[slot.members.front()]);
            continue;
        }
        GeneratorPhasorModel agg;
        agg.id = single[slot.members.front()].id;
        Complex y_sum = 0.0, i_t = 0.0, v_t = 0.0;
        for (std::size_t mi : slot.members) v_t += voltage(gen_buses[mi]);
        v_t /= static_cast<double>(slot.members.size());
        for (std::size_t mi : slot.members) {
            const auto& m = single[mi];
            const Complex v = voltage(gen_buses[mi]);
            agg.h += m.h;
            agg.d += m.d;
            y_sum += 1.0 / m.impedance();
            i_t += std::conj(v / v_t) * m.current(v);
        }
        const Complex z = 1.0 / y_sum;
        agg.ra = z.real();
        agg.xd_prime = z.imag();
        const Complex e = v_t + z * i_t;
        agg.e_prime = std::abs(e);
        agg.delta = std::arg(e);
        gens_.push_back(agg);
    }

    y_gg_aug_ = part_.y_gg;
    for (Eigen::Index s = 0; s < ns; ++s) y_gg_aug_(s, s) += 1.0 / gens_[static_cast<std::size_t>(s)].impedance();
    if (ns > 0) lu_.compute(y_gg_aug_);

    // Aggregates start in equilibrium at the power-flow boundary voltages.
    ComplexVector v_b(nb);
    for (Eigen::Index i = 0; i < nb; ++i) v_b(i) = voltage(boundary[static_cast<std::size_t>(i)]);
    const Solution s0 = solve(v_b);
    for (std::size_t s = 0; s < slots.size(); ++s)
        if (slots[s].members.size() > 1) gens_[s].pm = gens_[s].electrical_power(s0.v_g(static_cast<Eigen::Index>(s)));
    v_g_last_ = s0.v_g;
}

TsaEquivalent::Solution TsaEquivalent::solve(const ComplexVector& v_b) const {
    const auto ns = static_cast<Eigen::Index>(gens_.size());
    Solution out;
    ComplexVector norton(ns);
    for (Eigen::Index s = 0; s < ns; ++s) {
        const auto& g = gens_[static_cast<std::size_t>(s)];
        norton(s) = g.emf() / g.impedance();
    }
    out.v_g = ns > 0 ? gen_bus_voltage(norton, v_b, part_.y_gb, y_gg_aug_) : ComplexVector();
    out.i_g.resize(ns);
    for (Eigen::Index s = 0; s < ns; ++s) out.i_g(s) = gens_[static_cast<std::size_t>(s)].current(out.v_g(s));
    out.i_b = boundary_current(v_b, out.v_g, part_.y_bb, part_.y_bg);
    return out;
}

ComplexMatrix TsaEquivalent::norton_admittance() const {
    if (gens_.empty()) return part_.y_bb;
    return part_.y_bb - part_.y_bg * lu_.solve(part_.y_gb);
}

TsaEquivalent::Solution TsaEquivalent::advance(const ComplexVector& v_b, double dt) {
    check_step(dt);
    const std::size_t n = gens_.size();
    std::vector<double> pe0(n), d0(n), w0(n);
    for (std::size_t g = 0; g < n; ++g) {
        pe0[g] = gens_[g].electrical_power(v_g_last_(static_cast<Eigen::Index>(g)));
        d0[g] = gens_[g].delta;
        w0[g] = gens_[g].omega;
    }
    ComplexVector v_g = v_g_last_;
    for (int it = 0; it < 50; ++it) {
        for (std::size_t g = 0; g < n; ++g) {
            gens_[g].delta = d0[g];
            gens_[g].omega = w0[g];
            trapezoid(gens_[g], pe0[g], v_g(static_cast<Eigen::Index>(g)), dt, f0_);
        }
        Solution s = solve(v_b);
        const double change = n > 0 ? (s.v_g - v_g).cwiseAbs().maxCoeff() : 0.0;
        v_g = s.v_g;
        if (change < 1e-12) {
            v_g_last_ = v_g;
            return s;
        }
    }
    throw IntegrationError("machine and network solution did not converge within a TSA step");
}

}  // namespace fdne::tsa
