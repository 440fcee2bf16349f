#include "fdne/pipeline.hpp"

#include "fdne/case_io.hpp"
#include "fdne/coherency.hpp"
#include "fdne/errors.hpp"
#include "fdne/fdne_rt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>

namespace fdne::pipeline {

namespace {

constexpr double kQuarter = -std::numbers::pi / 2.0;

std::string lower(std::string s) {
    for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return s;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::string to_string(Variant v) {
    switch (v) {
        case Variant::emt: return "EMT";
        case Variant::emt_tsa: return "EMT+TSA";
        case Variant::emt_tsa_agg: return "EMT+TSA(AGG)";
        case Variant::emt_fdne: return "EMT+FDNE";
        case Variant::emt_fdne_tsa: return "EMT+FDNE+TSA";
        case Variant::emt_fdne_tsa_agg: return "EMT+FDNE+TSA(AGG)";
    }
    return "?";
}

Variant parse_variant(const std::string& name) {
    std::string key;
    for (char ch : lower(name))
        if (std::isalnum(static_cast<unsigned char>(ch))) key += ch;
    for (Variant v : kAllVariants) {
        std::string k;
        for (char ch : lower(to_string(v)))
            if (std::isalnum(static_cast<unsigned char>(ch))) k += ch;
        if (k == key) return v;
    }
    throw ConfigError("unknown variant '" + name + "' (expected EMT, EMT+TSA, EMT+TSA(AGG), EMT+FDNE, "
                      "EMT+FDNE+TSA or EMT+FDNE+TSA(AGG))");
}

bool uses_tsa(Variant v) {
    return v == Variant::emt_tsa || v == Variant::emt_tsa_agg || v == Variant::emt_fdne_tsa ||
           v == Variant::emt_fdne_tsa_agg;
}
bool uses_fdne(Variant v) {
    return v == Variant::emt_fdne || v == Variant::emt_fdne_tsa || v == Variant::emt_fdne_tsa_agg;
}
bool uses_aggregation(Variant v) { return v == Variant::emt_tsa_agg || v == Variant::emt_fdne_tsa_agg; }

double relative_error(std::span<const double> ref, std::span<const double> act) {
    if (ref.size() != act.size())
        throw MetricError("sequences differ in length (" + std::to_string(ref.size()) + " vs " +
                          std::to_string(act.size()) + ")");
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < ref.size(); ++k) {
        num += (ref[k] - act[k]) * (ref[k] - act[k]);
        den += ref[k] * ref[k];
    }
    if (!(den > 0.0)) throw MetricError("reference sequence has zero norm");
    return std::sqrt(num / den);
}

double rms_error(std::span<const double> ref, std::span<const double> act) {
    if (ref.size() != act.size() || ref.empty()) throw MetricError("rms error needs equal, non-empty sequences");
    double num = 0.0;
    for (std::size_t k = 0; k < ref.size(); ++k) num += (ref[k] - act[k]) * (ref[k] - act[k]);
    return std::sqrt(num / static_cast<double>(ref.size()));
}

void RunConfig::validate() const {
    if (case_path.empty()) throw ConfigError("no case path given");
    const auto& s = scenario;
    if (!(s.ts > 0.0)) throw ConfigError("scenario ts must be positive");
    if (!(s.duration > s.ts)) throw ConfigError("scenario duration must exceed one step");
    if (!(s.tsa_dt >= s.ts && s.tsa_dt <= 0.01)) throw ConfigError("tsa_dt must lie in [ts, 10 ms]");
    if (s.fault_bus != 0 && !(s.fault_resistance > 0.0)) throw ConfigError("fault_resistance must be positive");
    if (s.fault_bus != 0 && !(s.fault_start >= 0.0 && s.fault_duration > 0.0))
        throw ConfigError("fault needs start >= 0 and duration > 0");
    if (s.window_end >= 0.0 && !(s.window_end > s.window_start)) throw ConfigError("empty metric window");
    if (fit.order > 40 || fit.n_max < 1) throw ConfigError("fit order out of range");
    if (!(fit.options.gamma > 0.0 && fit.options.gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
    if (!(coherency.tau > 0.0 && coherency.tau <= 1.0)) throw ConfigError("coherency tau must lie in (0, 1]");
    if (!coherency.participation.empty() && !std::filesystem::exists(coherency.participation))
        throw ConfigError("participation file '" + coherency.participation + "' does not exist");
}

RunConfig parse_config(std::istream& in, const std::string& base_dir, const std::string& origin) {
    RunConfig cfg;
    std::string section, line;
    int lineno = 0;
    const auto resolve = [&](const std::string& p) {
        const std::filesystem::path path(p);
        return path.is_absolute() ? p : (std::filesystem::path(base_dir) / path).lexically_normal().string();
    };
    while (std::getline(in, line)) {
        ++lineno;
        const std::string where = origin + ":" + std::to_string(lineno);
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + ": malformed section header");
            section = lower(trim(line.substr(1, line.size() - 2)));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        const std::string key = lower(trim(line.substr(0, eq)));
        const std::string value = trim(line.substr(eq + 1));
        const auto num = [&]() {
            try {
                std::size_t used = 0;
                const double d = std::stod(value, &used);
                if (used != value.size()) throw std::invalid_argument(value);
                return d;
            } catch (const std::exception&) {
                throw ConfigError(where + ": '" + key + "' needs a number, got '" + value + "'");
            }
        };
        const auto integer = [&]() {
            const double d = num();
            if (d != std::floor(d)) throw ConfigError(where + ": '" + key + "' needs an integer");
            return static_cast<long>(d);
        };
        const auto unknown = [&]() { throw ConfigError(where + ": unknown key '" + key + "' in [" + section + "]"); };

        if (section == "run") {
            if (key == "case") cfg.case_path = resolve(value);
            else if (key == "variant") cfg.variant = parse_variant(value);
            else if (key == "output") cfg.output = resolve(value);
            else if (key == "seed") cfg.seed = static_cast<unsigned long>(integer());
            else unknown();
        } else if (section == "scenario") {
            auto& s = cfg.scenario;
            if (key == "fault_bus") s.fault_bus = static_cast<BusId>(integer());
            else if (key == "fault_start") s.fault_start = num();
            else if (key == "fault_duration") s.fault_duration = num();
            else if (key == "fault_resistance") s.fault_resistance = num();
            else if (key == "duration") s.duration = num();
            else if (key == "ts") s.ts = num();
            else if (key == "tsa_dt") s.tsa_dt = num();
            else if (key == "window_start") s.window_start = num();
            else if (key == "window_end") s.window_end = num();
            else unknown();
        } else if (section == "sweep") {
            auto& s = cfg.sweep;
            if (key == "f_start") s.f_start = num();
            else if (key == "f_end") s.f_end = num();
            else if (key == "f_step") s.f_step = num();
            else if (key == "amplitude") s.amplitude = num();
            else if (key == "cycles_per_step") s.cycles_per_step = static_cast<int>(integer());
            else if (key == "dwell") s.dwell = num();
            else if (key == "discard_cycles") s.discard_cycles = static_cast<int>(integer());
            else unknown();
        } else if (section == "fit") {
            if (key == "order") cfg.fit.order = static_cast<int>(integer());
            else if (key == "n_max") cfg.fit.n_max = static_cast<int>(integer());
            else if (key == "gamma") cfg.fit.options.gamma = num();
            else if (key == "delta") cfg.fit.options.delta = num();
            else if (key == "form") {
                if (lower(value) == "square_root") cfg.fit.options.form = ident::RlsForm::square_root;
                else if (lower(value) == "covariance") cfg.fit.options.form = ident::RlsForm::covariance;
                else throw ConfigError(where + ": form must be square_root or covariance");
            } else unknown();
        } else if (section == "passivity") {
            if (key == "tol") cfg.passivity.tol = num();
            else if (key == "max_rounds") cfg.passivity.max_rounds = static_cast<int>(integer());
            else if (key == "hold_weight") cfg.passivity.hold_weight = num();
            else unknown();
        } else if (section == "coherency") {
            if (key == "participation") cfg.coherency.participation = resolve(value);
            else if (key == "tau") cfg.coherency.tau = num();
            else if (key == "groups") {
                cfg.coherency.groups.clear();
                std::stringstream all(value);
                std::string part;
                while (std::getline(all, part, ';')) {
                    std::stringstream ids(part);
                    std::vector<int> g;
                    std::string tok;
                    while (ids >> tok) {
                        try {
                            g.push_back(std::stoi(tok));
                        } catch (const std::exception&) {
                            throw ConfigError(where + ": bad machine id '" + tok + "'");
                        }
                    }
                    if (!g.empty()) cfg.coherency.groups.push_back(g);
                }
            } else unknown();
        } else {
            throw ConfigError(where + ": key outside a known section");
        }
    }
    cfg.sweep.ts = cfg.scenario.ts;
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    const auto dir = std::filesystem::path(path).parent_path();
    return parse_config(in, dir.empty() ? "." : dir.string(), path);
}

net::NetworkCase load_run_case(const RunConfig& cfg) {
    if (cfg.case_path.empty()) throw ConfigError("no case path given");
    if (!std::filesystem::exists(cfg.case_path)) throw ConfigError("case file '" + cfg.case_path + "' does not exist");
    return net::load_case(cfg.case_path);
}

void Timing::add(const std::string& stage, double seconds) { stages.emplace_back(stage, seconds); }

double Timing::get(const std::string& stage) const {
    double total = 0.0;
    for (const auto& [s, t] : stages)
        if (s == stage) total += t;
    return total;
}

FdneBuild build_fdne(const net::NetworkCase& c, const RunConfig& cfg, Timing* timing) {
    const net::NetworkCase ext = net::external_area(c);
    const std::vector<BusId> ports = ext.ids_of_kind(net::BusKind::boundary);
    if (ports.empty()) throw PartitionError("case has no boundary bus");
    emt::SweepSpec spec = cfg.sweep;
    spec.ts = cfg.scenario.ts;

    auto t0 = std::chrono::steady_clock::now();
    const auto records = emt::frequency_sweep(ext, ports, spec);
    if (timing) timing->add("fdne_sweep", seconds_since(t0));

    t0 = std::chrono::steady_clock::now();
    FdneBuild out;
    out.fit = ident::fit_mimo(records, ports, cfg.fit.order, cfg.fit.options, cfg.fit.n_max);
    out.model = out.fit.model;
    for (auto& e : out.model.entries)
        if (!e.is_stable()) e = ident::enforce_stability(e);
    if (timing) timing->add("fdne_fit", seconds_since(t0));

    t0 = std::chrono::steady_clock::now();
    const auto grid = passivity::default_grid(spec.f_start, spec.f_end, spec.f_step, spec.ts);
    out.before = passivity::check_passivity(passivity::sample_admittance(out.model, grid), cfg.passivity.tol);
    if (out.before.passive()) {
        out.after = out.before;
    } else {
        const auto res = passivity::enforce_passivity(out.model, grid, cfg.passivity);
        out.model = res.model;
        out.after = res.after;
        out.enforced = true;
    }
    if (timing) timing->add("fdne_passify", seconds_since(t0));
    return out;
}

std::vector<std::vector<int>> aggregation_groups(const net::NetworkCase& c, const RunConfig& cfg) {
    std::set<int> external;
    for (const auto& g : c.generators)
        if (c.has_bus(g.bus) && c.bus(g.bus).area == net::Area::external) external.insert(g.id);
    std::vector<std::vector<int>> groups;
    if (!cfg.coherency.groups.empty()) {
        for (const auto& g : cfg.coherency.groups)
            for (int id : g)
                if (!external.count(id))
                    throw ConfigError("aggregation group names machine " + std::to_string(id) +
                                      ", which is not an external-area machine");
        return cfg.coherency.groups;
    }
    if (!cfg.coherency.participation.empty()) {
        std::ifstream in(cfg.coherency.participation);
        if (!in) throw ConfigError("cannot open participation file '" + cfg.coherency.participation + "'");
        const auto grouping = coherency::group_by_participation(coherency::read_participation_csv(in), cfg.coherency.tau);
        for (const auto& g : grouping.groups) {
            std::vector<int> members;
            for (int id : g)
                if (external.count(id)) members.push_back(id);
            if (members.size() > 1) groups.push_back(members);
        }
        return groups;
    }
    if (external.size() > 1) groups.emplace_back(external.begin(), external.end());
    return groups;
}

tsa::TsaEquivalent build_tsa(const net::NetworkCase& c, const net::PowerFlowResult& pf, bool aggregate,
                             const RunConfig& cfg, Timing* timing) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto groups = aggregate ? aggregation_groups(c, cfg) : std::vector<std::vector<int>>{};
    tsa::TsaEquivalent eq(net::external_area(c), pf, groups);
    if (timing) timing->add("tsa_build", seconds_since(t0));
    return eq;
}

namespace {

// Classical machine in the EMT network: a source at a private internal bus
// behind ra + j xd'.
struct Machine {
    int id = 0;
    bool study = true;
    std::size_t source = 0;
    double h = 0.0, d = 0.0, e = 0.0;
    double delta = 0.0, omega = 0.0, pm = 0.0, pe = 0.0;
};

struct Plant {
    net::NetworkCase c;
    std::vector<Machine> machines;
};

Plant build_plant(const net::NetworkCase& area, const net::PowerFlowResult& pf) {
    Plant pl;
    pl.c = area;
    pl.c.generators.clear();
    pl.c.powerflow.clear();
    const double w0 = kTwoPi * area.base_frequency;
    BusId next = area.max_bus_id();
    std::vector<net::Generator> gens = area.generators;
    std::sort(gens.begin(), gens.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    std::set<BusId> used;
    for (const auto& g : gens) {
        if (!used.insert(g.bus).second)
            throw InterfaceError("bus " + std::to_string(g.bus) + " carries more than one machine");
        const auto v = pf.voltage.find(g.bus);
        const auto s = pf.injection.find(g.bus);
        if (v == pf.voltage.end() || s == pf.injection.end())
            throw InterfaceError("power flow lacks generator bus " + std::to_string(g.bus));
        const Complex i = std::conj(s->second / v->second);
        const Complex e = v->second + Complex(g.ra, g.xd_prime) * i;
        const BusId internal = ++next;
        const net::Area where = area.bus(g.bus).area;
        pl.c.buses.push_back({internal, net::BusKind::internal, where});
        pl.c.branches.push_back({internal, g.bus, net::BranchModel::series_rl, g.ra, g.xd_prime / w0, 0.0});
        pl.c.sources.push_back({internal, net::SourceKind::voltage, std::abs(e), std::arg(e), area.base_frequency});
        Machine m;
        m.id = g.id;
        m.study = where == net::Area::study;
        m.source = pl.c.sources.size() - 1;
        m.h = g.h;
        m.d = g.d;
        m.e = std::abs(e);
        m.delta = std::arg(e);
        pl.machines.push_back(m);
    }
    return pl;
}

ComplexVector pf_boundary_current(const net::NetworkCase& c, const net::PowerFlowResult& pf,
                                  const std::vector<BusId>& boundary) {
    const auto y = net::build_ybus(net::external_area(c), c.base_frequency);
    ComplexVector i = ComplexVector::Zero(static_cast<Eigen::Index>(boundary.size()));
    for (std::size_t p = 0; p < boundary.size(); ++p) {
        const Eigen::Index r = y.index_of(boundary[p]);
        for (std::size_t j = 0; j < y.buses.size(); ++j)
            i(static_cast<Eigen::Index>(p)) += y.y(r, static_cast<Eigen::Index>(j)) * pf.voltage.at(y.buses[j]);
    }
    return i;
}

// Coupled series RL network Y(s) = (R + sL)^-1 with R + j ww L = y^-1, so the
// trapezoidal response equals y at f0. In q = z^-1 with A = R + kL and
// B = R - kL, Y = (1 + q)(I + Mq)^-1 A^-1 where M = A^-1 B; the adjugate of
// I + Mq follows from P_0 = I, P_j = c_j I - M P_{j-1} with c_j the
// coefficients of det(I + Mq).
ident::TFMatrix lumped_realization(const ComplexMatrix& y, const std::vector<BusId>& ports, double f0, double ts) {
    const Eigen::Index m = y.rows();
    const double ww = 2.0 / ts * std::tan(std::numbers::pi * f0 * ts);
    const double k = 2.0 / ts;
    const ComplexMatrix z = y.inverse();
    const Eigen::MatrixXd r = z.real(), l = z.imag() / ww;
    const Eigen::MatrixXd rs = 0.5 * (r + r.transpose()), ls = 0.5 * (l + l.transpose());
    if (!z.allFinite() || Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(rs).eigenvalues().minCoeff() < 0.0 ||
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(ls).eigenvalues().minCoeff() <= 0.0)
        throw InterfaceError("fundamental boundary admittance is not an RL network");
    const Eigen::MatrixXd a = r + k * l;
    const Eigen::MatrixXd ainv = a.inverse();
    const Eigen::MatrixXd mm = ainv * (r - k * l);

    const Eigen::VectorXcd lam = mm.eigenvalues();
    Eigen::VectorXcd poly = Eigen::VectorXcd::Zero(m + 1);
    poly(0) = 1.0;
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = i + 1; j >= 1; --j) poly(j) += lam(i) * poly(j - 1);
    const Eigen::VectorXd c = poly.real();

    std::vector<Eigen::MatrixXd> pk(static_cast<std::size_t>(m));
    pk[0] = Eigen::MatrixXd::Identity(m, m);
    for (Eigen::Index j = 1; j < m; ++j)
        pk[static_cast<std::size_t>(j)] = c(j) * Eigen::MatrixXd::Identity(m, m) - mm * pk[static_cast<std::size_t>(j - 1)];
    std::vector<Eigen::MatrixXd> num(static_cast<std::size_t>(m + 1), Eigen::MatrixXd::Zero(m, m));
    for (Eigen::Index j = 0; j < m; ++j) {
        const Eigen::MatrixXd t = pk[static_cast<std::size_t>(j)] * ainv;
        num[static_cast<std::size_t>(j)] += t;
        num[static_cast<std::size_t>(j + 1)] += t;
    }

    ident::TFMatrix out;
    out.ports = ports;
    out.ts = ts;
    for (Eigen::Index q = 0; q < m; ++q)
        for (Eigen::Index p = 0; p < m; ++p) {
            ident::RationalTFz tf;
            tf.ts = ts;
            tf.a = c.tail(m);
            tf.b.resize(m + 1);
            for (Eigen::Index j = 0; j <= m; ++j) tf.b(j) = num[static_cast<std::size_t>(j)](q, p);
            out.entries.push_back(tf);
        }
    return out;
}

}  // namespace

emt::TimeSeries simulate_variant(const net::NetworkCase& c, const net::PowerFlowResult& pf, Variant variant,
                                 const Scenario& sc, const Equivalents& eq) {
    const bool fd = uses_fdne(variant);
    const bool ts_side = uses_tsa(variant);
    if (fd && !eq.fdne) throw ConfigError(to_string(variant) + " needs an FDNE model");
    if (ts_side && !eq.tsa) throw ConfigError(to_string(variant) + " needs a TSA equivalent");
    if (!(sc.ts > 0.0 && sc.duration > sc.ts)) throw ConfigError("scenario needs ts > 0 and duration > ts");

    const double f0 = c.base_frequency;
    const double w0 = kTwoPi * f0;
    const double ts = sc.ts;
    const std::vector<BusId> boundary = c.ids_of_kind(net::BusKind::boundary);
    const auto m = static_cast<Eigen::Index>(boundary.size());
    if (m == 0) throw PartitionError("case has no boundary bus");
    if (sc.fault_bus != 0 && !c.has_bus(sc.fault_bus))
        throw ConfigError("fault bus " + std::to_string(sc.fault_bus) + " is not in the case");
    if (variant != Variant::emt && sc.fault_bus != 0 && c.bus(sc.fault_bus).area == net::Area::external &&
        c.bus(sc.fault_bus).kind != net::BusKind::boundary)
        throw ConfigError("fault bus " + std::to_string(sc.fault_bus) + " lies inside the equivalenced area");

    Plant pl = build_plant(variant == Variant::emt ? c : net::study_area(c), pf);
    emt::Simulator sa(pl.c, ts);
    emt::Simulator sb(pl.c, ts, kQuarter);

    std::vector<std::vector<std::size_t>> ext_branches(boundary.size());
    if (variant == Variant::emt)
        for (std::size_t k = 0; k < c.branches.size(); ++k) {
            const auto& br = c.branches[k];
            if (!net::is_external_branch(c, br)) continue;
            for (std::size_t p = 0; p < boundary.size(); ++p)
                if (br.from == boundary[p] || br.to == boundary[p]) ext_branches[p].push_back(k);
        }

    // Drawn current = Y(z) v + i_comp. Y(z) is the FDNE, or without it the
    // lumped 60 Hz Norton admittance of the TSA network.
    const bool equiv = variant != Variant::emt;
    std::optional<ident::TFMatrix> lumped;
    if (equiv && !fd) lumped = lumped_realization(eq.tsa->norton_admittance(), boundary, f0, ts);
    const ident::TFMatrix* bm = fd ? &eq.fdne->model : lumped ? &*lumped : nullptr;
    ComplexVector vb0(m);
    for (Eigen::Index p = 0; p < m; ++p) vb0(p) = pf.voltage.at(boundary[static_cast<std::size_t>(p)]);
    ComplexMatrix y60 = ComplexMatrix::Zero(m, m);
    ComplexVector icomp = ComplexVector::Zero(m);
    std::map<BusId, Complex> inj_a, inj_b;
    std::vector<emt::Simulator::PortAdmittance> extra;
    if (equiv) {
        if (ts_side && eq.tsa->boundary() != boundary) throw InterfaceError("TSA boundary buses differ from the case");
        if (fd && eq.fdne->model.ports != boundary) throw InterfaceError("FDNE ports differ from the case boundary");
        const ComplexVector ib0 = ts_side ? eq.tsa->solve(vb0).i_b : pf_boundary_current(c, pf, boundary);
        y60 = bm->at_frequency(f0);
        icomp = ib0 - y60 * vb0;
        extra.push_back({boundary, y60});
        for (Eigen::Index p = 0; p < m; ++p) {
            inj_a[boundary[static_cast<std::size_t>(p)]] = -icomp(p);
            inj_b[boundary[static_cast<std::size_t>(p)]] = -icomp(p) * std::polar(1.0, kQuarter);
        }
    }
    const auto init_a = sa.initialize_steady_state(f0, inj_a, extra);
    sb.initialize_steady_state(f0, inj_b, extra);
    ComplexVector vb_init(m);
    for (Eigen::Index p = 0; p < m; ++p) vb_init(p) = init_a.at(boundary[static_cast<std::size_t>(p)]);

    std::optional<rt::FdneRuntime> rta, rtb;
    if (equiv) {
        rta.emplace(*bm);
        rtb.emplace(*bm);
        sa.add_conductance_block(boundary, rta->feedthrough());
        sb.add_conductance_block(boundary, rtb->feedthrough());
        rta->init_steady_state(vb_init, f0, ts);
        rtb->init_steady_state(vb_init * std::polar(1.0, kQuarter), f0, ts);
    }

    for (auto& mc : pl.machines) {
        mc.pe = mc.e * (std::cos(mc.delta) * sa.source_current(mc.source) +
                        std::sin(mc.delta) * sb.source_current(mc.source));
        mc.pm = mc.pe;
    }

    // Boundary phasor estimators, primed with the initial steady state.
    std::vector<tsa::PhasorEstimator> est;
    if (ts_side) {
        const tsa::PhasorEstimator probe(f0, ts);
        const auto w = static_cast<long>(probe.window());
        for (Eigen::Index p = 0; p < m; ++p) {
            est.emplace_back(f0, ts, -static_cast<double>(w - 1) * ts);
            for (long j = w - 1; j >= 1; --j) est.back().push((vb_init(p) * std::polar(1.0, -w0 * j * ts)).real());
            est.back().push(sa.voltage(boundary[static_cast<std::size_t>(p)]));
        }
    }

    const long steps = std::lround(sc.duration / ts);
    const long tsa_every = std::max(1L, std::lround(sc.tsa_dt / ts));
    const long k_on = sc.fault_bus != 0 ? std::max(1L, std::lround(sc.fault_start / ts)) : -1;
    const long k_off = sc.fault_bus != 0 ? std::lround((sc.fault_start + sc.fault_duration) / ts) : -1;

    const auto n = static_cast<std::size_t>(steps + 1);
    std::vector<std::vector<double>> vch(boundary.size()), vmag(boundary.size()), ich(boundary.size());
    for (std::size_t p = 0; p < boundary.size(); ++p) {
        vch[p].reserve(n);
        vmag[p].reserve(n);
        ich[p].reserve(n);
    }
    std::vector<std::vector<double>> comp_re(equiv ? boundary.size() : 0), comp_im(comp_re.size());
    std::vector<double> pch, qch;
    pch.reserve(n);
    qch.reserve(n);
    std::vector<std::vector<double>> omega(pl.machines.size()), delta(pl.machines.size());
    std::vector<std::vector<double>> tsa_omega(ts_side ? eq.tsa->generators().size() : 0);
    std::vector<std::vector<double>> tsa_delta(tsa_omega.size());

    Eigen::VectorXd ia(m), ib(m), va(m), vb(m);
    const auto drawn_from_branches = [&](emt::Simulator& s, Eigen::VectorXd& out) {
        for (std::size_t p = 0; p < boundary.size(); ++p) {
            double total = 0.0;
            for (std::size_t k : ext_branches[p]) total += s.branch_terminal_current(k, boundary[p]);
            out(static_cast<Eigen::Index>(p)) = total;
        }
    };
    const auto comp_at = [&](double t, Eigen::VectorXd& ca, Eigen::VectorXd& cb) {
        for (Eigen::Index p = 0; p < m; ++p) {
            const Complex z = icomp(p) * std::polar(1.0, w0 * t);
            ca(p) = z.real();
            cb(p) = z.imag();
        }
    };
    const auto record = [&]() {
        double p_tot = 0.0, q_tot = 0.0;
        for (Eigen::Index p = 0; p < m; ++p) {
            const auto pi = static_cast<std::size_t>(p);
            vch[pi].push_back(va(p));
            vmag[pi].push_back(std::hypot(va(p), vb(p)));
            ich[pi].push_back(ia(p));
            p_tot += va(p) * ia(p) + vb(p) * ib(p);
            q_tot += vb(p) * ia(p) - va(p) * ib(p);
        }
        for (std::size_t p = 0; p < comp_re.size(); ++p) {
            comp_re[p].push_back(icomp(static_cast<Eigen::Index>(p)).real());
            comp_im[p].push_back(icomp(static_cast<Eigen::Index>(p)).imag());
        }
        pch.push_back(p_tot);
        qch.push_back(q_tot);
        for (std::size_t g = 0; g < pl.machines.size(); ++g) {
            omega[g].push_back(pl.machines[g].omega);
            delta[g].push_back(pl.machines[g].delta);
        }
        for (std::size_t g = 0; g < tsa_omega.size(); ++g) {
            tsa_omega[g].push_back(eq.tsa->generators()[g].omega);
            tsa_delta[g].push_back(eq.tsa->generators()[g].delta);
        }
    };
    const auto read_voltages = [&]() {
        for (Eigen::Index p = 0; p < m; ++p) {
            va(p) = sa.voltage(boundary[static_cast<std::size_t>(p)]);
            vb(p) = sb.voltage(boundary[static_cast<std::size_t>(p)]);
        }
    };

    Eigen::VectorXd ca(m), cb(m);
    read_voltages();
    if (variant == Variant::emt) {
        drawn_from_branches(sa, ia);
        drawn_from_branches(sb, ib);
    } else {
        const ComplexVector i0 = y60 * vb_init + icomp;
        ia = i0.real();
        ib = i0.imag();
    }
    record();

    // Each TSA step targets the end of the coming interval and the compensation
    // ramps towards its result, so the injection has no steps. The one-cycle
    // estimate describes the window centre; it is rotated forward to the step
    // end by the phasor's rate of turn.
    ComplexVector comp_from = icomp, comp_to = icomp;
    long k_update = 0;
    ComplexVector v_prev = vb_init;
    const double est_delay = ts_side ? 0.5 * static_cast<double>(est.front().window() - 1) * ts : 0.0;
    const double dt_tsa = static_cast<double>(tsa_every) * ts;
    const double max_rate = kTwoPi * 2.0;
    for (long k = 1; k <= steps; ++k) {
        const double t = static_cast<double>(k) * ts;
        if (k == k_on) {
            const emt::Event on{t, emt::EventKind::fault_on, sc.fault_bus, sc.fault_resistance};
            sa.apply(on);
            sb.apply(on);
        }
        if (k == k_off) {
            const emt::Event off{t, emt::EventKind::fault_off, sc.fault_bus, 0.0};
            sa.apply(off);
            sb.apply(off);
        }
        for (auto& mc : pl.machines) {
            mc.omega += ts / (2.0 * mc.h) * (mc.pm - mc.pe - mc.d * mc.omega);
            mc.delta += ts * w0 * mc.omega;
            sa.set_source_value(mc.source, mc.e * std::cos(w0 * t + mc.delta));
            sb.set_source_value(mc.source, mc.e * std::sin(w0 * t + mc.delta));
        }
        Eigen::VectorXd ha, hb;
        if (ts_side) {
            const double frac = std::min(1.0, static_cast<double>(k - k_update) / static_cast<double>(tsa_every));
            icomp = comp_from + (comp_to - comp_from) * frac;
        }
        if (equiv) {
            comp_at(t, ca, cb);
            ha = rta->history();
            hb = rtb->history();
            for (Eigen::Index p = 0; p < m; ++p) {
                const BusId bus = boundary[static_cast<std::size_t>(p)];
                sa.set_injection(bus, -ca(p) - ha(p));
                sb.set_injection(bus, -cb(p) - hb(p));
            }
        }
        sa.step();
        sb.step();
        read_voltages();
        if (variant == Variant::emt) {
            drawn_from_branches(sa, ia);
            drawn_from_branches(sb, ib);
        } else {
            ia = ca + rta->commit(va);
            ib = cb + rtb->commit(vb);
        }
        for (auto& mc : pl.machines)
            mc.pe = mc.e * (std::cos(w0 * t + mc.delta) * sa.source_current(mc.source) +
                            std::sin(w0 * t + mc.delta) * sb.source_current(mc.source));
        if (ts_side) {
            for (Eigen::Index p = 0; p < m; ++p) est[static_cast<std::size_t>(p)].push(va(p));
            if (k % tsa_every == 0) {
                ComplexVector v_est(m);
                for (Eigen::Index p = 0; p < m; ++p) {
                    const Complex raw = est[static_cast<std::size_t>(p)].value().complex();
                    const double rate = std::abs(v_prev(p)) > 0.0 && std::abs(raw) > 0.0
                                            ? std::clamp(std::arg(raw * std::conj(v_prev(p))) / dt_tsa, -max_rate, max_rate)
                                            : 0.0;
                    v_prev(p) = raw;
                    v_est(p) = raw * std::polar(1.0, rate * (est_delay + dt_tsa));
                }
                const auto sol = eq.tsa->advance(v_est, dt_tsa);
                comp_from = comp_to;
                comp_to = sol.i_b - y60 * v_est;
                k_update = k;
            }
        }
        record();
    }

    emt::TimeSeries out;
    out.ts = ts;
    out.start = 0.0;
    for (std::size_t p = 0; p < boundary.size(); ++p) {
        const std::string b = std::to_string(boundary[p]);
        out.add("v" + b) = std::move(vch[p]);
        out.add("vmag" + b) = std::move(vmag[p]);
        out.add("i" + b) = std::move(ich[p]);
    }
    for (std::size_t p = 0; p < comp_re.size(); ++p) {
        out.add("comp_re" + std::to_string(boundary[p])) = std::move(comp_re[p]);
        out.add("comp_im" + std::to_string(boundary[p])) = std::move(comp_im[p]);
    }
    out.add("p_b") = std::move(pch);
    out.add("q_b") = std::move(qch);
    for (std::size_t g = 0; g < pl.machines.size(); ++g) {
        out.add("omega" + std::to_string(pl.machines[g].id)) = std::move(omega[g]);
        out.add("delta" + std::to_string(pl.machines[g].id)) = std::move(delta[g]);
    }
    for (std::size_t g = 0; g < tsa_omega.size(); ++g) {
        out.add("tsa_omega" + std::to_string(eq.tsa->generators()[g].id)) = std::move(tsa_omega[g]);
        out.add("tsa_delta" + std::to_string(eq.tsa->generators()[g].id)) = std::move(tsa_delta[g]);
    }
    return out;
}

const ChannelError& ComparisonReport::error(const std::string& channel) const {
    for (const auto& e : errors)
        if (e.channel == channel) return e;
    throw MetricError("report has no channel '" + channel + "'");
}

std::vector<ChannelError> compare_runs(const emt::TimeSeries& ref, const emt::TimeSeries& act, const Scenario& sc) {
    if (ref.size() != act.size() || ref.ts != act.ts)
        throw MetricError("runs differ in length or step (" + std::to_string(ref.size()) + " vs " +
                          std::to_string(act.size()) + " samples)");
    std::size_t k0 = 0, k1 = ref.size();
    if (sc.window_start > 0.0) k0 = std::min(k1, static_cast<std::size_t>(std::ceil(sc.window_start / ref.ts - 1e-9)));
    if (sc.window_end >= 0.0) k1 = std::min(k1, static_cast<std::size_t>(std::floor(sc.window_end / ref.ts + 1e-9)) + 1);
    if (k1 <= k0) throw MetricError("metric window holds no samples");
    std::vector<ChannelError> out;
    for (const auto& name : ref.names) {
        const bool metric = name == "p_b" || name.rfind("vmag", 0) == 0 || name.rfind("omega", 0) == 0;
        if (!metric || !act.has(name)) continue;
        const std::span<const double> r(ref[name].data() + k0, k1 - k0);
        const std::span<const double> a(act[name].data() + k0, k1 - k0);
        ChannelError e;
        e.channel = name;
        e.rms = rms_error(r, a);
        e.relative = (e.rms == 0.0) ? 0.0 : relative_error(r, a);
        out.push_back(e);
    }
    return out;
}

void write_report_csv(std::ostream& out, const ComparisonReport& r) {
    out << "channel,relative_error,rms_error\n" << std::setprecision(10);
    for (const auto& e : r.errors) out << e.channel << ',' << e.relative << ',' << e.rms << '\n';
}

void write_timing_csv(std::ostream& out, const Timing& t) {
    out << "stage,seconds\n" << std::setprecision(6);
    for (const auto& [s, sec] : t.stages) out << s << ',' << sec << '\n';
}

void write_report_text(std::ostream& out, const ComparisonReport& r) {
    const auto& s = r.scenario;
    out << "case      " << r.case_name << "\n";
    out << "variant   " << to_string(r.variant) << " vs EMT\n";
    out << "seed      " << r.seed << "\n";
    if (s.fault_bus != 0)
        out << "scenario  fault at bus " << s.fault_bus << ", " << s.fault_start << " s for " << s.fault_duration
            << " s through " << s.fault_resistance << " pu\n";
    else
        out << "scenario  no disturbance\n";
    out << "run       " << s.duration << " s, ts " << s.ts << " s, TSA step " << s.tsa_dt << " s\n";
    out << "window    " << s.window_start << " s to " << (s.window_end < 0 ? s.duration : s.window_end) << " s\n\n";
    out << std::left << std::setw(14) << "channel" << std::setw(16) << "relative error" << "rms error\n";
    out << std::scientific << std::setprecision(4);
    for (const auto& e : r.errors) out << std::setw(14) << e.channel << std::setw(16) << e.relative << e.rms << '\n';
    out << std::defaultfloat;
    if (!r.timing.stages.empty()) {
        out << "\nstage timings (s)\n" << std::fixed << std::setprecision(3);
        for (const auto& [st, sec] : r.timing.stages) out << "  " << std::setw(16) << st << sec << '\n';
        out << std::defaultfloat;
    }
}

Timing timing_report(const RunConfig& cfg) {
    const net::NetworkCase c = load_run_case(cfg);
    const auto pf = net::solve_power_flow(c);
    Timing t;
    (void)build_tsa(c, pf, false, cfg, &t);
    (void)build_fdne(c, cfg, &t);
    return t;
}

std::string slug(Variant v) {
    std::string s;
    for (char ch : lower(to_string(v))) {
        if (std::isalnum(static_cast<unsigned char>(ch))) s += ch;
        else if (ch == '+' || ch == '(') s += '_';
    }
    return s;
}

namespace {

template <class F>
void write_file(const std::filesystem::path& p, F&& body) {
    std::ofstream out(p);
    if (!out) throw ConfigError("cannot write '" + p.string() + "'");
    body(out);
}

}  // namespace

ComparisonReport run_pipeline(const RunConfig& cfg) {
    cfg.validate();
    const net::NetworkCase c = load_run_case(cfg);
    const auto pf = net::solve_power_flow(c);
    const std::filesystem::path out_dir(cfg.output);
    std::filesystem::create_directories(out_dir);

    ComparisonReport rep;
    rep.case_name = c.name;
    rep.variant = cfg.variant;
    rep.scenario = cfg.scenario;
    rep.seed = cfg.seed;

    std::optional<tsa::TsaEquivalent> tsa_eq;
    std::optional<FdneBuild> fdne;
    if (uses_tsa(cfg.variant)) tsa_eq.emplace(build_tsa(c, pf, uses_aggregation(cfg.variant), cfg, &rep.timing));
    if (uses_fdne(cfg.variant)) {
        fdne.emplace(build_fdne(c, cfg, &rep.timing));
        ident::save_model((out_dir / "model.txt").string(), fdne->model);
        write_file(out_dir / "passivity_before.csv", [&](auto& o) { passivity::write_report_csv(o, fdne->before); });
        write_file(out_dir / "passivity_after.csv", [&](auto& o) { passivity::write_report_csv(o, fdne->after); });
    }

    auto t0 = std::chrono::steady_clock::now();
    const emt::TimeSeries ref = simulate_variant(c, pf, Variant::emt, cfg.scenario);
    rep.timing.add("emt_reference", seconds_since(t0));
    write_file(out_dir / "emt.csv", [&](auto& o) { emt::write_csv(o, ref); });

    if (cfg.variant == Variant::emt) {
        rep.errors = compare_runs(ref, ref, cfg.scenario);
    } else {
        t0 = std::chrono::steady_clock::now();
        Equivalents eq;
        eq.fdne = fdne ? &*fdne : nullptr;
        eq.tsa = tsa_eq ? &*tsa_eq : nullptr;
        const emt::TimeSeries act = simulate_variant(c, pf, cfg.variant, cfg.scenario, eq);
        rep.timing.add("variant_run", seconds_since(t0));
        write_file(out_dir / (slug(cfg.variant) + ".csv"), [&](auto& o) { emt::write_csv(o, act); });
        rep.errors = compare_runs(ref, act, cfg.scenario);
    }
    write_file(out_dir / "report.csv", [&](auto& o) { write_report_csv(o, rep); });
    write_file(out_dir / "timing.csv", [&](auto& o) { write_timing_csv(o, rep.timing); });
    write_file(out_dir / "report.txt", [&](auto& o) { write_report_text(o, rep); });
    return rep;
}

}  // namespace fdne::pipeline
