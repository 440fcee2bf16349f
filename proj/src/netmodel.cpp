#include "fdne/netmodel.hpp"

#include "fdne/errors.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace fdne::net {

namespace {

constexpr double kPivotThreshold = 1e-12;

std::string join_ids(std::span<const BusId> ids) {
    std::ostringstream os;
    os << '{';
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) os << ',';
        os << ids[i];
    }
    os << '}';
    return os.str();
}

bool endpoint_ok(const NetworkCase& c, BusId id) { return id == kGround || c.has_bus(id); }

}  // namespace

void NetworkCase::validate(bool for_reduction) const {
    std::set<BusId> seen;
    for (const auto& b : buses) {
        if (b.id <= 0) throw CaseError("bus id must be positive, got " + std::to_string(b.id));
        if (!seen.insert(b.id).second) throw CaseError("duplicate bus id " + std::to_string(b.id));
    }
    for (std::size_t k = 0; k < branches.size(); ++k) {
        const auto& br = branches[k];
        const std::string tag = "branch " + std::to_string(k);
        if (!endpoint_ok(*this, br.from) || !endpoint_ok(*this, br.to))
            throw CaseError(tag + " references an unknown bus");
        if (br.from == kGround) throw CaseError(tag + ": from-bus may not be ground");
        if (br.from == br.to) throw CaseError(tag + ": both ends on bus " + std::to_string(br.from));
        if (!(br.r >= 0.0) || !(br.l >= 0.0) || !(br.c >= 0.0))
            throw CaseError(tag + ": R, L, C must be non-negative");
        if (br.model == BranchModel::pi_line && br.to == kGround)
            throw CaseError(tag + ": pi-line needs two buses");
        if (br.model == BranchModel::shunt_rc && br.to != kGround)
            throw CaseError(tag + ": shunt-rc connects to ground only");
    }
    for (const auto& s : sources) {
        if (!has_bus(s.bus)) throw CaseError("source on unknown bus " + std::to_string(s.bus));
        if (!(s.magnitude >= 0.0) || !(s.frequency >= 0.0))
            throw CaseError("source magnitude and frequency must be non-negative");
    }
    std::set<int> gen_ids;
    for (const auto& g : generators) {
        if (!has_bus(g.bus)) throw CaseError("generator on unknown bus " + std::to_string(g.bus));
        if (!gen_ids.insert(g.id).second) throw CaseError("duplicate generator id " + std::to_string(g.id));
        if (!(g.h > 0.0)) throw CaseError("generator " + std::to_string(g.id) + ": H must be positive");
        if (!(g.xd_prime > 0.0) || g.ra < 0.0)
            throw CaseError("generator " + std::to_string(g.id) + ": invalid impedance");
    }
    for (const auto& p : powerflow)
        if (!has_bus(p.bus)) throw CaseError("powerflow row on unknown bus " + std::to_string(p.bus));
    if (!(base_frequency > 0.0)) throw CaseError("base_frequency must be positive");
    if (for_reduction && ids_of_kind(BusKind::boundary).empty())
        throw CaseError("case has no boundary bus");
}

std::vector<BusId> NetworkCase::sorted_bus_ids() const {
    std::vector<BusId> ids;
    ids.reserve(buses.size());
    for (const auto& b : buses) ids.push_back(b.id);
    std::sort(ids.begin(), ids.end());
    return ids;
}

bool NetworkCase::has_bus(BusId id) const {
    return std::any_of(buses.begin(), buses.end(), [id](const Bus& b) { return b.id == id; });
}

const Bus& NetworkCase::bus(BusId id) const {
    auto it = std::find_if(buses.begin(), buses.end(), [id](const Bus& b) { return b.id == id; });
    if (it == buses.end()) throw CaseError("unknown bus " + std::to_string(id));
    return *it;
}

std::vector<BusId> NetworkCase::ids_of_kind(BusKind kind) const {
    std::vector<BusId> ids;
    for (const auto& b : buses)
        if (b.kind == kind) ids.push_back(b.id);
    std::sort(ids.begin(), ids.end());
    return ids;
}

const Generator* NetworkCase::generator(int id) const {
    for (const auto& g : generators)
        if (g.id == id) return &g;
    return nullptr;
}

BusId NetworkCase::max_bus_id() const {
    BusId m = 0;
    for (const auto& b : buses) m = std::max(m, b.id);
    return m;
}

Eigen::Index NodalMatrix::index_of(BusId id) const {
    auto it = std::find(buses.begin(), buses.end(), id);
    if (it == buses.end()) throw CaseError("bus " + std::to_string(id) + " not in matrix");
    return static_cast<Eigen::Index>(it - buses.begin());
}

ComplexMatrix PartitionedY::reassemble() const {
    const auto nb = static_cast<Eigen::Index>(boundary_ids.size());
    const auto ng = static_cast<Eigen::Index>(generator_ids.size());
    ComplexMatrix y(nb + ng, nb + ng);
    y.topLeftCorner(nb, nb) = y_bb;
    y.topRightCorner(nb, ng) = y_bg;
    y.bottomLeftCorner(ng, nb) = y_gb;
    y.bottomRightCorner(ng, ng) = y_gg;
    return y;
}

BranchAdmittance branch_admittance(const Branch& b, double f_hz) {
    const double w = kTwoPi * f_hz;
    BranchAdmittance out;
    switch (b.model) {
    case BranchModel::series_rl:
    case BranchModel::pi_line: {
        const Complex z(b.r, w * b.l);
        if (b.r == 0.0 && b.l == 0.0)
            throw DegenerateBranchError("zero-impedance series branch " + std::to_string(b.from) +
                                        "-" + std::to_string(b.to));
        if (std::abs(z) == 0.0)
            throw DegenerateBranchError("series impedance vanishes at f = 0 for branch " +
                                        std::to_string(b.from) + "-" + std::to_string(b.to));
        out.series = 1.0 / z;
        if (b.model == BranchModel::pi_line) {
            out.shunt_from = Complex(0.0, 0.5 * w * b.c);
            out.shunt_to = out.shunt_from;
        }
        break;
    }
    case BranchModel::shunt_rc:
        if (b.r == 0.0 && b.c == 0.0)
            throw DegenerateBranchError("empty shunt-rc branch at bus " + std::to_string(b.from));
        out.shunt_from = Complex(b.r > 0.0 ? 1.0 / b.r : 0.0, w * b.c);
        break;
    }
    return out;
}

NodalMatrix build_ybus(const NetworkCase& c, double f_hz) {
    if (!(f_hz > 0.0)) throw CaseError("build_ybus needs f > 0");
    NodalMatrix out;
    out.buses = c.sorted_bus_ids();
    const auto n = static_cast<Eigen::Index>(out.buses.size());
    out.y = ComplexMatrix::Zero(n, n);
    std::map<BusId, Eigen::Index> index;
    for (Eigen::Index i = 0; i < n; ++i) index[out.buses[static_cast<std::size_t>(i)]] = i;

    for (const auto& br : c.branches) {
        const auto ya = branch_admittance(br, f_hz);
        const Eigen::Index i = index.at(br.from);
        if (br.model == BranchModel::shunt_rc) {
            out.y(i, i) += ya.shunt_from;
            continue;
        }
        out.y(i, i) += ya.series + ya.shunt_from;
        if (br.to == kGround) continue;
        const Eigen::Index j = index.at(br.to);
        out.y(j, j) += ya.series + ya.shunt_to;
        out.y(i, j) -= ya.series;
        out.y(j, i) -= ya.series;
    }
    return out;
}

NodalMatrix kron_reduce(const NodalMatrix& y, std::span<const BusId> keep) {
    if (keep.empty()) throw CaseError("kron_reduce: keep set is empty");
    std::set<BusId> keep_set(keep.begin(), keep.end());
    if (keep_set.size() != keep.size()) throw CaseError("kron_reduce: keep set has duplicates");

    std::vector<Eigen::Index> m_idx, n_idx;
    std::vector<BusId> eliminated;
    for (BusId id : keep) m_idx.push_back(y.index_of(id));
    for (std::size_t i = 0; i < y.buses.size(); ++i) {
        if (!keep_set.count(y.buses[i])) {
            n_idx.push_back(static_cast<Eigen::Index>(i));
            eliminated.push_back(y.buses[i]);
        }
    }

    NodalMatrix out;
    out.buses.assign(keep.begin(), keep.end());
    const ComplexMatrix y_mm = y.y(m_idx, m_idx);
    if (n_idx.empty()) {
        out.y = y_mm;
        return out;
    }
    const ComplexMatrix y_nn = y.y(n_idx, n_idx);
    const ComplexMatrix y_mn = y.y(m_idx, n_idx);
    const ComplexMatrix y_nm = y.y(n_idx, m_idx);

    Eigen::PartialPivLU<ComplexMatrix> lu(y_nn);
    const double scale = y_nn.cwiseAbs().maxCoeff();
    const double min_pivot = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
    if (!(scale > 0.0) || !(min_pivot >= kPivotThreshold * scale))
        throw SingularEliminationError("eliminated block is singular for buses " + join_ids(eliminated));
    out.y = y_mm - y_mn * lu.solve(y_nm);
    return out;
}

PartitionedY partition_reduced(const NodalMatrix& y_red, std::span<const BusId> boundary_ids,
                               std::span<const BusId> generator_ids) {
    std::set<BusId> all;
    for (BusId id : boundary_ids)
        if (!all.insert(id).second) throw PartitionError("bus " + std::to_string(id) + " listed twice");
    for (BusId id : generator_ids)
        if (!all.insert(id).second)
            throw PartitionError("bus " + std::to_string(id) + " is both boundary and generator");
    std::set<BusId> have(y_red.buses.begin(), y_red.buses.end());
    if (all != have) throw PartitionError("partition ids do not cover the reduced matrix exactly");

    std::vector<Eigen::Index> bi, gi;
    for (BusId id : boundary_ids) bi.push_back(y_red.index_of(id));
    for (BusId id : generator_ids) gi.push_back(y_red.index_of(id));

    PartitionedY p;
    p.boundary_ids.assign(boundary_ids.begin(), boundary_ids.end());
    p.generator_ids.assign(generator_ids.begin(), generator_ids.end());
    p.y_bb = y_red.y(bi, bi);
    p.y_bg = y_red.y(bi, gi);
    p.y_gb = y_red.y(gi, bi);
    p.y_gg = y_red.y(gi, gi);
    return p;
}

NetworkCase source_free(const NetworkCase& c) {
    NetworkCase out = c;
    out.sources.clear();
    out.generators.clear();
    out.powerflow.clear();

    std::set<BusId> grounded;
    for (const auto& s : c.sources)
        if (s.kind == SourceKind::voltage) grounded.insert(s.bus);

    for (const auto& g : c.generators) {
        Branch br;
        br.from = g.bus;
        br.to = kGround;
        br.model = BranchModel::series_rl;
        br.r = g.ra;
        br.l = g.xd_prime / (kTwoPi * c.base_frequency);
        out.branches.push_back(br);
    }
    if (grounded.empty()) return out;

    std::erase_if(out.buses, [&](const Bus& b) { return grounded.count(b.id) > 0; });
    std::vector<Branch> kept;
    for (Branch br : out.branches) {
        const bool from_g = grounded.count(br.from) > 0;
        const bool to_g = br.to != kGround && grounded.count(br.to) > 0;
        if (from_g && (to_g || br.to == kGround)) continue;
        if (br.model == BranchModel::pi_line) {
            if (from_g || to_g) {
                // The shunt half on the grounded end is shorted out.
                const BusId live = from_g ? br.to : br.from;
                Branch series = br;
                series.model = BranchModel::series_rl;
                series.from = live;
                series.to = kGround;
                series.c = 0.0;
                kept.push_back(series);
                if (br.c > 0.0) {
                    Branch shunt;
                    shunt.from = live;
                    shunt.model = BranchModel::shunt_rc;
                    shunt.c = 0.5 * br.c;
                    kept.push_back(shunt);
                }
                continue;
            }
        } else if (from_g) {
            std::swap(br.from, br.to);
            br.to = kGround;
        } else if (to_g) {
            br.to = kGround;
        }
        kept.push_back(br);
    }
    out.branches = std::move(kept);
    return out;
}

AdmittanceSampleSet analytic_port_admittance(const NetworkCase& c, std::span<const BusId> ports,
                                             std::span<const double> f_grid) {
    const NetworkCase sf = source_free(c);
    for (BusId p : ports)
        if (!sf.has_bus(p)) throw CaseError("port bus " + std::to_string(p) + " not in network");
    AdmittanceSampleSet out;
    out.f_grid.assign(f_grid.begin(), f_grid.end());
    out.y.reserve(f_grid.size());
    for (double f : f_grid) out.y.push_back(kron_reduce(build_ybus(sf, f), ports).y);
    return out;
}

bool is_external_branch(const NetworkCase& c, const Branch& b) {
    const auto external = [&](BusId id) { return c.bus(id).area == Area::external; };
    if (!external(b.from)) return false;
    if (b.to == kGround) return c.bus(b.from).kind != BusKind::boundary;
    return external(b.to);
}

NetworkCase external_area(const NetworkCase& c) {
    NetworkCase out;
    out.name = c.name + ":external";
    out.base_frequency = c.base_frequency;
    for (const auto& b : c.buses)
        if (b.area == Area::external) out.buses.push_back(b);
    for (const auto& br : c.branches)
        if (is_external_branch(c, br)) out.branches.push_back(br);
    for (const auto& g : c.generators)
        if (c.bus(g.bus).area == Area::external) out.generators.push_back(g);
    for (const auto& s : c.sources)
        if (c.bus(s.bus).area == Area::external) out.sources.push_back(s);
    return out;
}

NetworkCase study_area(const NetworkCase& c) {
    NetworkCase out;
    out.name = c.name + ":study";
    out.base_frequency = c.base_frequency;
    for (const auto& b : c.buses)
        if (b.area == Area::study || b.kind == BusKind::boundary) out.buses.push_back(b);
    for (const auto& br : c.branches)
        if (!is_external_branch(c, br)) out.branches.push_back(br);
    for (const auto& g : c.generators)
        if (c.bus(g.bus).area == Area::study) out.generators.push_back(g);
    for (const auto& s : c.sources)
        if (c.bus(s.bus).area == Area::study) out.sources.push_back(s);
    return out;
}

PowerFlowResult solve_power_flow(const NetworkCase& c, double tol, int max_iterations) {
    const NodalMatrix ybus = build_ybus(c, c.base_frequency);
    const auto n = static_cast<Eigen::Index>(ybus.buses.size());

    std::vector<PfBusType> type(static_cast<std::size_t>(n), PfBusType::pq);
    Eigen::VectorXd p_spec = Eigen::VectorXd::Zero(n), q_spec = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd vm = Eigen::VectorXd::Ones(n), va = Eigen::VectorXd::Zero(n);
    int slack_count = 0;
    for (const auto& row : c.powerflow) {
        const Eigen::Index i = ybus.index_of(row.bus);
        type[static_cast<std::size_t>(i)] = row.type;
        p_spec(i) += row.p;
        q_spec(i) += row.q;
        if (row.type != PfBusType::pq) vm(i) = row.v;
        if (row.type == PfBusType::slack) {
            va(i) = row.angle;
            ++slack_count;
        }
    }
    if (slack_count != 1) throw PowerFlowError("power flow needs exactly one slack bus");

    std::vector<Eigen::Index> pvpq, pq;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto t = type[static_cast<std::size_t>(i)];
        if (t != PfBusType::slack) pvpq.push_back(i);
        if (t == PfBusType::pq) pq.push_back(i);
    }
    const auto npvpq = static_cast<Eigen::Index>(pvpq.size());
    const auto npq = static_cast<Eigen::Index>(pq.size());

    const ComplexMatrix& y = ybus.y;
    PowerFlowResult res;
    ComplexVector v(n);
    for (int it = 0; it <= max_iterations; ++it) {
        for (Eigen::Index i = 0; i < n; ++i) v(i) = std::polar(vm(i), va(i));
        const ComplexVector ibus = y * v;
        const ComplexVector s = v.cwiseProduct(ibus.conjugate());

        Eigen::VectorXd f(npvpq + npq);
        for (Eigen::Index k = 0; k < npvpq; ++k) f(k) = s(pvpq[k]).real() - p_spec(pvpq[k]);
        for (Eigen::Index k = 0; k < npq; ++k) f(npvpq + k) = s(pq[k]).imag() - q_spec(pq[k]);
        res.mismatch = f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
        res.iterations = it;
        if (res.mismatch < tol) break;
        if (it == max_iterations)
            throw PowerFlowError("power flow did not converge, mismatch " + std::to_string(res.mismatch));

        // dS/dVa = j diag(V) conj(diag(I) - Y diag(V)); dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
        const ComplexVector vnorm = v.cwiseQuotient(vm.cast<Complex>());
        const ComplexMatrix ds_dva =
            Complex(0, 1) * v.asDiagonal() *
            (ComplexMatrix(ibus.asDiagonal()) - y * v.asDiagonal()).conjugate();
        const ComplexMatrix ds_dvm = v.asDiagonal() * (y * vnorm.asDiagonal()).conjugate() +
                                     ComplexMatrix(ibus.conjugate().asDiagonal()) * vnorm.asDiagonal();

        Eigen::MatrixXd jac(npvpq + npq, npvpq + npq);
        for (Eigen::Index r = 0; r < npvpq; ++r) {
            for (Eigen::Index k = 0; k < npvpq; ++k) jac(r, k) = ds_dva(pvpq[r], pvpq[k]).real();
            for (Eigen::Index k = 0; k < npq; ++k) jac(r, npvpq + k) = ds_dvm(pvpq[r], pq[k]).real();
        }
        for (Eigen::Index r = 0; r < npq; ++r) {
            for (Eigen::Index k = 0; k < npvpq; ++k) jac(npvpq + r, k) = ds_dva(pq[r], pvpq[k]).imag();
            for (Eigen::Index k = 0; k < npq; ++k) jac(npvpq + r, npvpq + k) = ds_dvm(pq[r], pq[k]).imag();
        }
        const Eigen::VectorXd dx = jac.partialPivLu().solve(-f);
        if (!dx.allFinite()) throw PowerFlowError("power flow Jacobian is singular");
        for (Eigen::Index k = 0; k < npvpq; ++k) va(pvpq[k]) += dx(k);
        for (Eigen::Index k = 0; k < npq; ++k) vm(pq[k]) += dx(npvpq + k);
    }

    const ComplexVector s = v.cwiseProduct((y * v).conjugate());
    for (Eigen::Index i = 0; i < n; ++i) {
        res.voltage[ybus.buses[static_cast<std::size_t>(i)]] = v(i);
        res.injection[ybus.buses[static_cast<std::size_t>(i)]] = s(i);
    }
    return res;
}

}  // namespace fdne::net
