#include "fdne/emt.hpp"

#include "fdne/errors.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

namespace fdne::emt {

std::vector<double>& TimeSeries::add(const std::string& name, std::size_t reserve) {
    if (has(name)) throw TopologyError("duplicate channel '" + name + "'");
    names.push_back(name);
    channels.emplace_back();
    channels.back().reserve(reserve);
    return channels.back();
}

bool TimeSeries::has(const std::string& name) const {
    return std::find(names.begin(), names.end(), name) != names.end();
}

const std::vector<double>& TimeSeries::operator[](const std::string& name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw TopologyError("no channel named '" + name + "'");
    return channels[static_cast<std::size_t>(it - names.begin())];
}

void TimeSeries::validate() const {
    if (!(ts > 0.0)) throw TopologyError("time series needs ts > 0");
    for (const auto& ch : channels)
        if (ch.size() != size()) throw TopologyError("time series channels differ in length");
}

void write_csv(std::ostream& out, const TimeSeries& ts) {
    out << "t";
    for (const auto& n : ts.names) out << ',' << n;
    out << '\n' << std::setprecision(12);
    for (std::size_t k = 0; k < ts.size(); ++k) {
        out << ts.time(k);
        for (const auto& ch : ts.channels) out << ',' << ch[k];
        out << '\n';
    }
}

Simulator::Simulator(const net::NetworkCase& c, double ts, double phase_offset)
    : case_(c), ts_(ts), phase_offset_(phase_offset) {
    if (!(ts > 0.0)) throw TopologyError("time step must be positive");
    case_.validate();
    for (BusId id : case_.sorted_bus_ids()) {
        index_[id] = static_cast<Eigen::Index>(bus_of_.size());
        bus_of_.push_back(id);
    }
    const auto n = static_cast<Eigen::Index>(bus_of_.size());

    for (std::size_t bi = 0; bi < case_.branches.size(); ++bi) {
        const auto& br = case_.branches[bi];
        const int tag = static_cast<int>(bi);
        const Eigen::Index a = node(br.from);
        const Eigen::Index b = node(br.to);
        const auto series = [&](Eigen::Index from, Eigen::Index to) {
            Element e{};
            e.branch = tag;
            e.a = from;
            e.b = to;
            e.r = br.r;
            e.l = br.l;
            if (br.l > 0.0) {
                e.kind = Kind::rl;
                e.g = 1.0 / (br.r + 2.0 * br.l / ts_);
                e.alpha = 2.0 * br.l / ts_ - br.r;
            } else {
                if (!(br.r > 0.0)) throw DegenerateBranchError("branch " + std::to_string(bi) + " has zero impedance");
                e.kind = Kind::res;
                e.g = 1.0 / br.r;
            }
            elements_.push_back(e);
        };
        const auto capacitor = [&](Eigen::Index at, double cap) {
            if (at < 0 || cap <= 0.0) return;
            Element e{};
            e.kind = Kind::cap;
            e.branch = tag;
            e.a = at;
            e.b = -1;
            e.c = cap;
            e.g = 2.0 * cap / ts_;
            elements_.push_back(e);
        };
        switch (br.model) {
            case net::BranchModel::series_rl:
                series(a, b);
                break;
            case net::BranchModel::pi_line:
                series(a, b);
                capacitor(a, br.c / 2.0);
                capacitor(b, br.c / 2.0);
                break;
            case net::BranchModel::shunt_rc:
                if (br.r > 0.0) {
                    Element e{};
                    e.kind = Kind::res;
                    e.branch = tag;
                    e.a = a;
                    e.b = -1;
                    e.r = br.r;
                    e.g = 1.0 / br.r;
                    elements_.push_back(e);
                }
                capacitor(a, br.c);
                break;
        }
    }

    source_of_node_.assign(static_cast<std::size_t>(n), -1);
    for (std::size_t s = 0; s < case_.sources.size(); ++s) {
        const auto& src = case_.sources[s];
        if (src.kind != net::SourceKind::voltage) continue;
        const Eigen::Index i = node(src.bus);
        if (i < 0) throw TopologyError("voltage source at ground");
        if (source_of_node_[static_cast<std::size_t>(i)] >= 0)
            throw TopologyError("two voltage sources at bus " + std::to_string(src.bus));
        source_of_node_[static_cast<std::size_t>(i)] = static_cast<int>(s);
    }
    for (Eigen::Index i = 0; i < n; ++i)
        (source_of_node_[static_cast<std::size_t>(i)] >= 0 ? known_ : unknown_).push_back(i);

    override_.assign(case_.sources.size(), std::nullopt);
    for (const auto& s : case_.sources) magnitude_.push_back(s.magnitude);
    injection_ = Eigen::VectorXd::Zero(n);
    v_ = Eigen::VectorXd::Zero(n);
    rhs_ = Eigen::VectorXd::Zero(n);
    residual_ = Eigen::VectorXd::Zero(n);
}

Eigen::Index Simulator::node(BusId bus) const {
    if (bus == kGround) return -1;
    const auto it = index_.find(bus);
    if (it == index_.end()) throw TopologyError("unknown bus " + std::to_string(bus));
    return it->second;
}

double Simulator::source_value(std::size_t s, double t) const {
    if (override_[s]) return *override_[s];
    const auto& src = case_.sources[s];
    return magnitude_[s] * std::cos(kTwoPi * src.frequency * t + src.phase + phase_offset_);
}

double Simulator::element_voltage(const Element& e) const {
    const double va = e.a >= 0 ? v_(e.a) : 0.0;
    const double vb = e.b >= 0 ? v_(e.b) : 0.0;
    return va - vb;
}

void Simulator::stamp(Eigen::MatrixXd& g, Eigen::Index a, Eigen::Index b, double y) const {
    if (a >= 0) g(a, a) += y;
    if (b >= 0) g(b, b) += y;
    if (a >= 0 && b >= 0) {
        g(a, b) -= y;
        g(b, a) -= y;
    }
}

void Simulator::assemble() {
    const auto n = static_cast<Eigen::Index>(bus_of_.size());
    g_full_ = Eigen::MatrixXd::Zero(n, n);
    for (const auto& e : elements_)
        if (e.active) stamp(g_full_, e.a, e.b, e.g);
    for (const auto& [i, g] : faults_) g_full_(i, i) += g;
    for (const auto& blk : blocks_)
        for (std::size_t r = 0; r < blk.nodes.size(); ++r)
            for (std::size_t c = 0; c < blk.nodes.size(); ++c)
                g_full_(blk.nodes[r], blk.nodes[c]) +=
                    blk.g(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

void Simulator::factor() {
    assemble();
    const auto nu = static_cast<Eigen::Index>(unknown_.size());
    const auto nk = static_cast<Eigen::Index>(known_.size());
    Eigen::MatrixXd guu(nu, nu);
    g_uk_.resize(nu, nk);
    for (Eigen::Index r = 0; r < nu; ++r) {
        for (Eigen::Index c = 0; c < nu; ++c) guu(r, c) = g_full_(unknown_[r], unknown_[c]);
        for (Eigen::Index c = 0; c < nk; ++c) g_uk_(r, c) = g_full_(unknown_[r], known_[c]);
    }
    if (nu > 0) {
        lu_.compute(guu);
        const double scale = guu.cwiseAbs().maxCoeff();
        const double pivot = lu_.matrixLU().diagonal().cwiseAbs().minCoeff();
        if (!(pivot >= 1e-12 * scale) || scale == 0.0)
            throw TopologyError("singular conductance matrix at t = " + std::to_string(t_) + " s");
    }
    dirty_ = false;
}

void Simulator::solve_current_time() {
    if (dirty_) factor();
    const auto nu = static_cast<Eigen::Index>(unknown_.size());
    const auto nk = static_cast<Eigen::Index>(known_.size());
    Eigen::VectorXd vk(nk);
    for (Eigen::Index c = 0; c < nk; ++c) {
        vk(c) = source_value(static_cast<std::size_t>(source_of_node_[static_cast<std::size_t>(known_[c])]), t_);
        v_(known_[c]) = vk(c);
    }
    if (nu > 0) {
        Eigen::VectorXd b(nu);
        for (Eigen::Index r = 0; r < nu; ++r) b(r) = rhs_(unknown_[r]);
        if (nk > 0) b -= g_uk_ * vk;
        const Eigen::VectorXd vu = lu_.solve(b);
        for (Eigen::Index r = 0; r < nu; ++r) v_(unknown_[r]) = vu(r);
    }
}

void Simulator::step() {
    ++k_;
    t_ = static_cast<double>(k_) * ts_;
    rhs_ = injection_;
    for (std::size_t s = 0; s < case_.sources.size(); ++s) {
        const auto& src = case_.sources[s];
        if (src.kind != net::SourceKind::current) continue;
        const Eigen::Index i = node(src.bus);
        if (i >= 0) rhs_(i) += source_value(s, t_);
    }
    for (auto& e : elements_) {
        if (!e.active) continue;
        switch (e.kind) {
            case Kind::rl: e.h = e.g * (e.v + e.alpha * e.i); break;
            case Kind::cap: e.h = -e.g * e.v - e.i; break;
            case Kind::res: e.h = 0.0; break;
        }
        if (e.a >= 0) rhs_(e.a) -= e.h;
        if (e.b >= 0) rhs_(e.b) += e.h;
    }
    solve_current_time();
    for (auto& e : elements_) {
        if (!e.active) continue;
        e.v = element_voltage(e);
        e.i = e.g * e.v + e.h;
    }
    residual_.noalias() = g_full_ * v_ - rhs_;
    if (!std::isfinite(v_.sum())) throw TopologyError("non-finite node voltage at t = " + std::to_string(t_) + " s");
}

void Simulator::initialize_at_rest() {
    t_ = 0.0;
    k_ = 0;
    const auto n = static_cast<Eigen::Index>(bus_of_.size());
    std::vector<double> cap_total(static_cast<std::size_t>(n), 0.0);
    for (auto& e : elements_) {
        e.v = e.i = e.h = 0.0;
        if (e.active && e.kind == Kind::cap) cap_total[static_cast<std::size_t>(e.a)] += e.c;
    }
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(known_.size()); ++c)
        v_(known_[c]) = source_value(static_cast<std::size_t>(source_of_node_[static_cast<std::size_t>(known_[c])]), 0.0);

    // Nodes free of sources and capacitors are solved on the resistive part;
    // inductors carry their (zero) state current.
    std::vector<Eigen::Index> free;
    for (Eigen::Index i : unknown_)
        if (cap_total[static_cast<std::size_t>(i)] == 0.0) free.push_back(i);
        else v_(i) = 0.0;
    Eigen::VectorXd inj = injection_;
    for (std::size_t s = 0; s < case_.sources.size(); ++s)
        if (case_.sources[s].kind == net::SourceKind::current && node(case_.sources[s].bus) >= 0)
            inj(node(case_.sources[s].bus)) += source_value(s, 0.0);
    Eigen::MatrixXd gres = Eigen::MatrixXd::Zero(n, n);
    for (const auto& e : elements_)
        if (e.active && e.kind == Kind::res) stamp(gres, e.a, e.b, e.g);
    for (const auto& [i, g] : faults_) gres(i, i) += g;
    for (const auto& blk : blocks_)
        for (std::size_t r = 0; r < blk.nodes.size(); ++r)
            for (std::size_t c = 0; c < blk.nodes.size(); ++c)
                gres(blk.nodes[r], blk.nodes[c]) += blk.g(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    if (!free.empty()) {
        const auto nf = static_cast<Eigen::Index>(free.size());
        Eigen::MatrixXd a(nf, nf);
        Eigen::VectorXd b(nf);
        std::vector<bool> is_free(static_cast<std::size_t>(n), false);
        for (Eigen::Index i : free) is_free[static_cast<std::size_t>(i)] = true;
        for (Eigen::Index r = 0; r < nf; ++r) {
            b(r) = inj(free[r]);
            for (Eigen::Index c = 0; c < nf; ++c) a(r, c) = gres(free[r], free[c]);
            for (Eigen::Index c = 0; c < n; ++c)
                if (!is_free[static_cast<std::size_t>(c)]) b(r) -= gres(free[r], c) * v_(c);
        }
        const Eigen::VectorXd x = a.completeOrthogonalDecomposition().solve(b);
        for (Eigen::Index r = 0; r < nf; ++r) v_(free[r]) = x(r);
    }
    for (auto& e : elements_) {
        if (!e.active) continue;
        e.v = element_voltage(e);
        if (e.kind == Kind::res) e.i = e.g * e.v;
    }
    // Capacitor currents close KCL at their node, shared in proportion to C.
    Eigen::VectorXd leaving = gres * v_ - inj;
    for (const auto& e : elements_) {
        if (!e.active || e.kind != Kind::rl) continue;
        if (e.a >= 0) leaving(e.a) += e.i;
        if (e.b >= 0) leaving(e.b) -= e.i;
    }
    for (auto& e : elements_) {
        if (!e.active || e.kind != Kind::cap) continue;
        if (source_of_node_[static_cast<std::size_t>(e.a)] >= 0) continue;
        e.i = -leaving(e.a) * e.c / cap_total[static_cast<std::size_t>(e.a)];
    }
    residual_ = leaving;
    for (const auto& e : elements_)
        if (e.active && e.kind == Kind::cap) residual_(e.a) += e.i;
    dirty_ = true;
}

std::map<BusId, Complex> Simulator::initialize_steady_state(double f, const std::map<BusId, Complex>& injections,
                                                            std::span<const PortAdmittance> extra) {
    t_ = 0.0;
    k_ = 0;
    const auto n = static_cast<Eigen::Index>(bus_of_.size());
    const double w = 2.0 / ts_ * std::tan(std::numbers::pi * f * ts_);
    const Complex j(0.0, 1.0);
    const auto element_y = [&](const Element& e) -> Complex {
        switch (e.kind) {
            case Kind::rl: return 1.0 / Complex(e.r, w * e.l);
            case Kind::cap: return j * w * e.c;
            case Kind::res: return e.g;
        }
        return 0.0;
    };
    ComplexMatrix y = ComplexMatrix::Zero(n, n);
    const auto cstamp = [&](Eigen::Index a, Eigen::Index b, Complex v) {
        if (a >= 0) y(a, a) += v;
        if (b >= 0) y(b, b) += v;
        if (a >= 0 && b >= 0) {
            y(a, b) -= v;
            y(b, a) -= v;
        }
    };
    for (const auto& e : elements_)
        if (e.active) cstamp(e.a, e.b, element_y(e));
    for (const auto& [i, g] : faults_) y(i, i) += g;
    for (const auto& blk : extra)
        for (std::size_t r = 0; r < blk.buses.size(); ++r)
            for (std::size_t c = 0; c < blk.buses.size(); ++c)
                y(node(blk.buses[r]), node(blk.buses[c])) +=
                    blk.y(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));

    ComplexVector inj = ComplexVector::Zero(n);
    for (const auto& [bus, cur] : injections) inj(node(bus)) += cur;
    ComplexVector v = ComplexVector::Zero(n);
    for (std::size_t s = 0; s < case_.sources.size(); ++s) {
        const auto& src = case_.sources[s];
        if (src.magnitude != 0.0 && std::abs(src.frequency - f) > 1e-9)
            throw TopologyError("steady-state initialization needs every source at " + std::to_string(f) + " Hz");
        const Complex ph = std::polar(magnitude_[s], src.phase + phase_offset_);
        if (src.kind == net::SourceKind::voltage) v(node(src.bus)) = ph;
        else inj(node(src.bus)) += ph;
    }
    const auto nu = static_cast<Eigen::Index>(unknown_.size());
    if (nu > 0) {
        ComplexMatrix yuu(nu, nu);
        ComplexVector b(nu);
        for (Eigen::Index r = 0; r < nu; ++r) {
            b(r) = inj(unknown_[r]);
            for (Eigen::Index c = 0; c < nu; ++c) yuu(r, c) = y(unknown_[r], unknown_[c]);
            for (Eigen::Index kc : known_) b(r) -= y(unknown_[r], kc) * v(kc);
        }
        Eigen::PartialPivLU<ComplexMatrix> lu(yuu);
        const ComplexVector vu = lu.solve(b);
        for (Eigen::Index r = 0; r < nu; ++r) v(unknown_[r]) = vu(r);
    }
    for (Eigen::Index i = 0; i < n; ++i) v_(i) = v(i).real();
    for (auto& e : elements_) {
        if (!e.active) continue;
        const Complex va = e.a >= 0 ? v(e.a) : 0.0;
        const Complex vb = e.b >= 0 ? v(e.b) : 0.0;
        e.v = (va - vb).real();
        e.i = (element_y(e) * (va - vb)).real();
        e.h = 0.0;
    }
    residual_ = (y * v - inj).real();
    dirty_ = true;

    std::map<BusId, Complex> out;
    for (Eigen::Index i = 0; i < n; ++i) out[bus_of_[static_cast<std::size_t>(i)]] = v(i);
    return out;
}

void Simulator::apply(const Event& e) {
    switch (e.kind) {
        case EventKind::fault_on: {
            if (!(e.value > 0.0)) throw TopologyError("fault resistance must be positive");
            const Eigen::Index i = node(e.target);
            if (i < 0) throw TopologyError("fault at ground");
            faults_[i] = 1.0 / e.value;
            break;
        }
        case EventKind::fault_off:
            faults_.erase(node(e.target));
            break;
        case EventKind::branch_open:
        case EventKind::branch_close: {
            if (e.target < 0 || static_cast<std::size_t>(e.target) >= case_.branches.size())
                throw TopologyError("event names unknown branch " + std::to_string(e.target));
            for (auto& el : elements_) {
                if (el.branch != e.target) continue;
                el.active = e.kind == EventKind::branch_close;
                el.v = el.i = el.h = 0.0;
            }
            break;
        }
        case EventKind::source_step:
            if (e.target < 0 || static_cast<std::size_t>(e.target) >= case_.sources.size())
                throw TopologyError("event names unknown source " + std::to_string(e.target));
            magnitude_[static_cast<std::size_t>(e.target)] = e.value;
            return;
    }
    dirty_ = true;
}

void Simulator::set_source_value(std::size_t source, std::optional<double> value) {
    if (source >= override_.size()) throw TopologyError("unknown source " + std::to_string(source));
    override_[source] = value;
}

void Simulator::set_injection(BusId bus, double amps) {
    const Eigen::Index i = node(bus);
    if (i < 0) throw TopologyError("injection at ground");
    injection_(i) = amps;
}

int Simulator::add_conductance_block(std::vector<BusId> buses, const Eigen::MatrixXd& g) {
    Block blk;
    for (BusId b : buses) {
        const Eigen::Index i = node(b);
        if (i < 0) throw TopologyError("conductance block at ground");
        blk.nodes.push_back(i);
    }
    if (g.rows() != static_cast<Eigen::Index>(buses.size()) || g.cols() != g.rows())
        throw TopologyError("conductance block dimension mismatch");
    blk.g = g;
    blocks_.push_back(std::move(blk));
    dirty_ = true;
    return static_cast<int>(blocks_.size()) - 1;
}

void Simulator::set_conductance_block(int handle, const Eigen::MatrixXd& g) {
    auto& blk = blocks_.at(static_cast<std::size_t>(handle));
    if (g.rows() != blk.g.rows() || g.cols() != blk.g.cols()) throw TopologyError("conductance block dimension mismatch");
    blk.g = g;
    dirty_ = true;
}

double Simulator::voltage(BusId bus) const {
    const Eigen::Index i = node(bus);
    return i < 0 ? 0.0 : v_(i);
}

double Simulator::source_current(std::size_t source) const {
    const Eigen::Index i = node(case_.sources.at(source).bus);
    if (case_.sources[source].kind == net::SourceKind::current) return source_value(source, t_);
    return residual_(i);
}

double Simulator::branch_current(std::size_t branch) const {
    const auto& br = case_.branches.at(branch);
    double total = 0.0;
    for (const auto& e : elements_) {
        if (e.branch != static_cast<int>(branch)) continue;
        if (br.model == net::BranchModel::shunt_rc || e.kind != Kind::cap) total += e.i;
    }
    return total;
}

double Simulator::branch_terminal_current(std::size_t branch, BusId bus) const {
    const Eigen::Index i = node(bus);
    double total = 0.0;
    for (const auto& e : elements_) {
        if (e.branch != static_cast<int>(branch)) continue;
        if (e.a == i) total += e.i;
        else if (e.b == i) total -= e.i;
    }
    return total;
}

double Simulator::stored_energy() const {
    double w = 0.0;
    for (const auto& e : elements_) {
        if (!e.active) continue;
        if (e.kind == Kind::rl) w += 0.5 * e.l * e.i * e.i;
        if (e.kind == Kind::cap) w += 0.5 * e.c * e.v * e.v;
    }
    return w;
}

TimeSeries simulate(const net::NetworkCase& c, double ts, double duration, std::span<const Event> events) {
    if (!(duration > 0.0)) throw TopologyError("duration must be positive");
    Simulator sim(c, ts);
    std::vector<Event> pending(events.begin(), events.end());
    std::stable_sort(pending.begin(), pending.end(), [](const Event& a, const Event& b) { return a.time < b.time; });
    std::size_t next = 0;
    const auto due = [&](long k) {
        while (next < pending.size() && std::lround(pending[next].time / ts) <= k) sim.apply(pending[next++]);
    };
    due(0);
    sim.initialize_at_rest();

    const auto steps = static_cast<std::size_t>(std::floor(duration / ts + 1e-9));
    TimeSeries out;
    out.ts = ts;
    const auto ids = c.sorted_bus_ids();
    std::vector<std::size_t> vsrc;
    for (BusId id : ids) out.add("v" + std::to_string(id), steps + 1);
    for (std::size_t s = 0; s < c.sources.size(); ++s)
        if (c.sources[s].kind == net::SourceKind::voltage) {
            vsrc.push_back(s);
            out.add("isrc" + std::to_string(s), steps + 1);
        }
    for (std::size_t b = 0; b < c.branches.size(); ++b) out.add("ibr" + std::to_string(b), steps + 1);
    std::vector<std::vector<double>*> vbus, isrc, ibr;
    std::size_t ch = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) vbus.push_back(&out.channels[ch++]);
    for (std::size_t i = 0; i < vsrc.size(); ++i) isrc.push_back(&out.channels[ch++]);
    for (std::size_t b = 0; b < c.branches.size(); ++b) ibr.push_back(&out.channels[ch++]);
    const auto record = [&] {
        for (std::size_t i = 0; i < ids.size(); ++i) vbus[i]->push_back(sim.voltage(ids[i]));
        for (std::size_t i = 0; i < vsrc.size(); ++i) isrc[i]->push_back(sim.source_current(vsrc[i]));
        for (std::size_t b = 0; b < ibr.size(); ++b) ibr[b]->push_back(sim.branch_current(b));
    };
    record();
    for (std::size_t k = 1; k <= steps; ++k) {
        due(static_cast<long>(k));
        sim.step();
        record();
    }
    return out;
}

void SweepSpec::validate() const {
    if (!(f_start > 0.0 && f_start <= f_end)) throw SweepSpecError("sweep needs 0 < f_start <= f_end");
    if (!(f_step > 0.0)) throw SweepSpecError("sweep step must be positive");
    if (!(ts > 0.0)) throw SweepSpecError("sweep time step must be positive");
    if (!(ts < 1.0 / (2.0 * f_end)))
        throw SweepSpecError("Nyquist violation: ts = " + std::to_string(ts) + " s with f_end = " +
                             std::to_string(f_end) + " Hz");
    if (dwell <= 0.0 && cycles_per_step < 1) throw SweepSpecError("cycles per step must be at least 1");
    if (discard_cycles < 0) throw SweepSpecError("discarded cycles must be non-negative");
}

std::vector<double> SweepSpec::frequencies() const {
    validate();
    const auto count = static_cast<std::size_t>(std::floor((f_end - f_start) / f_step + 1e-9)) + 1;
    std::vector<double> f(count);
    for (std::size_t i = 0; i < count; ++i) f[i] = f_start + static_cast<double>(i) * f_step;
    return f;
}

std::vector<TimeSeries> frequency_sweep(const net::NetworkCase& c, std::span<const BusId> ports, const SweepSpec& spec) {
    const auto freqs = spec.frequencies();
    if (ports.empty()) throw SweepSpecError("sweep needs at least one port");
    net::NetworkCase sf = net::source_free(c);
    for (std::size_t p = 0; p < ports.size(); ++p) {
        if (!sf.has_bus(ports[p]))
            throw SweepSpecError("port " + std::to_string(ports[p]) + " is not a bus of the source-free network");
        for (std::size_t q = 0; q < p; ++q)
            if (ports[q] == ports[p]) throw SweepSpecError("duplicate port " + std::to_string(ports[p]));
        sf.sources.push_back({ports[p], net::SourceKind::voltage, 0.0, 0.0, 0.0});
    }

    std::vector<std::size_t> n_samples, n_discard;
    std::size_t total = 1;
    for (double f : freqs) {
        const double per_cycle = 1.0 / (f * spec.ts);
        const auto n = spec.dwell > 0.0 ? static_cast<std::size_t>(std::lround(spec.dwell / spec.ts))
                                        : static_cast<std::size_t>(std::lround(spec.cycles_per_step * per_cycle));
        n_samples.push_back(std::max<std::size_t>(n, 1));
        n_discard.push_back(static_cast<std::size_t>(std::ceil(spec.discard_cycles * per_cycle - 1e-9)));
        total += n_samples.back();
    }

    std::vector<TimeSeries> out;
    for (std::size_t p = 0; p < ports.size(); ++p) {
        Simulator sim(sf, spec.ts);
        sim.initialize_at_rest();
        TimeSeries rec;
        rec.ts = spec.ts;
        rec.add("v", total);
        for (BusId q : ports) rec.add("i" + std::to_string(q), total);
        rec.add("valid", total);
        auto& v = rec.channels.front();
        auto& valid = rec.channels.back();
        std::vector<std::vector<double>*> cur;
        for (std::size_t q = 0; q < ports.size(); ++q) cur.push_back(&rec.channels[q + 1]);
        const auto record = [&](double vp, bool ok) {
            v.push_back(vp);
            for (std::size_t q = 0; q < ports.size(); ++q) cur[q]->push_back(sim.source_current(q));
            valid.push_back(ok ? 1.0 : 0.0);
        };
        for (std::size_t q = 0; q < ports.size(); ++q) sim.set_source_value(q, 0.0);
        record(0.0, false);
        double theta = 0.0;
        for (std::size_t i = 0; i < freqs.size(); ++i) {
            const double dtheta = kTwoPi * freqs[i] * spec.ts;
            for (std::size_t k = 0; k < n_samples[i]; ++k) {
                theta = std::fmod(theta + dtheta, kTwoPi);
                const double vp = spec.amplitude * std::sin(theta);
                sim.set_source_value(p, vp);
                sim.step();
                record(vp, k >= n_discard[i]);
            }
        }
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace fdne::emt
