#include "support.hpp"

#include "fdne/case_io.hpp"
#include "fdne/errors.hpp"
#include "fdne/netmodel.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace fdne;
using namespace fdne::net;
using testing_support::random_rlc;
using testing_support::Rng;

namespace {

NetworkCase two_bus(BranchModel m, double r, double l, double c) {
    NetworkCase nc;
    nc.buses = {{1, BusKind::boundary, Area::external}, {2, BusKind::internal, Area::external}};
    nc.branches.push_back({1, 2, m, r, l, c});
    return nc;
}

ComplexVector solve_full_port_current(const NodalMatrix& y, const std::vector<BusId>& keep, const ComplexVector& vk) {
    // Full nodal solution with eliminated buses current-free.
    const auto n = static_cast<Eigen::Index>(y.buses.size());
    std::vector<Eigen::Index> ki, ei;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (std::find(keep.begin(), keep.end(), y.buses[i]) != keep.end()) continue;
        ei.push_back(i);
    }
    for (BusId b : keep) ki.push_back(y.index_of(b));
    ComplexMatrix yee(ei.size(), ei.size()), yek(ei.size(), ki.size());
    for (std::size_t a = 0; a < ei.size(); ++a) {
        for (std::size_t b = 0; b < ei.size(); ++b) yee(a, b) = y.y(ei[a], ei[b]);
        for (std::size_t b = 0; b < ki.size(); ++b) yek(a, b) = y.y(ei[a], ki[b]);
    }
    ComplexVector v = ComplexVector::Zero(n);
    for (std::size_t b = 0; b < ki.size(); ++b) v(ki[b]) = vk(b);
    if (!ei.empty()) {
        const ComplexVector ve = yee.fullPivLu().solve(-yek * vk);
        for (std::size_t a = 0; a < ei.size(); ++a) v(ei[a]) = ve(a);
    }
    const ComplexVector i = y.y * v;
    ComplexVector out(ki.size());
    for (std::size_t b = 0; b < ki.size(); ++b) out(b) = i(ki[b]);
    return out;
}

}  // namespace

TEST(BuildYbus, SingleResistor) {
    const auto y = build_ybus(two_bus(BranchModel::series_rl, 1.0, 0.0, 0.0), 60.0);
    EXPECT_NEAR(std::abs(y.y(0, 0) - 1.0), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(y.y(0, 1) + 1.0), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(y.y(1, 0) + 1.0), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(y.y(1, 1) - 1.0), 0.0, 1e-15);
}

TEST(BuildYbus, ShuntCapacitorAtUnitOmega) {
    NetworkCase c;
    c.buses = {{1, BusKind::internal, Area::study}};
    c.branches.push_back({1, kGround, BranchModel::shunt_rc, 0.0, 0.0, 1.0});
    const auto y = build_ybus(c, 1.0 / (2.0 * std::numbers::pi));
    EXPECT_NEAR(std::abs(y.y(0, 0) - Complex(0.0, 1.0)), 0.0, 1e-15);
}

TEST(BuildYbus, LadderMatchesHandStamp) {
    NetworkCase c;
    for (int i = 1; i <= 3; ++i) c.buses.push_back({i, BusKind::internal, Area::study});
    c.branches.push_back({1, 2, BranchModel::series_rl, 1.0, 0.0, 0.0});
    c.branches.push_back({2, 3, BranchModel::series_rl, 1.0, 0.0, 0.0});
    c.branches.push_back({3, kGround, BranchModel::series_rl, 1.0, 0.0, 0.0});
    const auto y = build_ybus(c, 60.0);
    ComplexMatrix hand(3, 3);
    hand << 1, -1, 0, -1, 2, -1, 0, -1, 2;
    EXPECT_LT((y.y - hand).norm(), 1e-14);
}

TEST(BuildYbus, RandomNetworksMatchOracleAndAreSymmetric) {
    Rng r(11);
    for (int t = 0; t < 50; ++t) {
        const auto c = random_rlc(r, r.integer(2, 10));
        const double f = r.log_uniform(1.0, 5000.0);
        const auto y = build_ybus(c, f);
        const auto oracle = testing_support::stamp_oracle(c, f);
        EXPECT_LT(testing_support::rel_diff(y.y, oracle), 1e-13);
        EXPECT_LE((y.y - y.y.transpose()).norm(), 1e-12 * y.y.norm());
    }
}

TEST(BuildYbus, DegenerateBranchesThrow) {
    EXPECT_THROW((void)build_ybus(two_bus(BranchModel::series_rl, 0.0, 0.0, 0.0), 60.0), DegenerateBranchError);
    NetworkCase c;
    c.buses = {{1, BusKind::internal, Area::study}};
    c.branches.push_back({1, kGround, BranchModel::shunt_rc, 0.0, 0.0, 0.0});
    EXPECT_THROW((void)build_ybus(c, 60.0), DegenerateBranchError);
    EXPECT_THROW((void)build_ybus(two_bus(BranchModel::series_rl, 1.0, 0.0, 0.0), 0.0), CaseError);
}

TEST(KronReduce, SeriesChain) {
    NetworkCase c;
    for (int i = 1; i <= 3; ++i) c.buses.push_back({i, BusKind::internal, Area::study});
    c.branches.push_back({1, 2, BranchModel::series_rl, 2.0, 0.0, 0.0});
    c.branches.push_back({2, 3, BranchModel::series_rl, 3.0, 0.0, 0.0});
    const std::vector<BusId> keep = {1, 3};
    const auto red = kron_reduce(build_ybus(c, 60.0), keep);
    const Complex y1 = 0.5, y2 = 1.0 / 3.0, through = y1 * y2 / (y1 + y2);
    EXPECT_NEAR(std::abs(red.y(0, 1) + through), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(red.y(0, 0) - through), 0.0, 1e-15);
    EXPECT_EQ(red.buses, keep);
}

TEST(KronReduce, KeepAllIsIdentity) {
    Rng r(3);
    const auto c = random_rlc(r, 5);
    const auto y = build_ybus(c, 60.0);
    const auto red = kron_reduce(y, y.buses);
    EXPECT_EQ((red.y - y.y).norm(), 0.0);
}

TEST(KronReduce, PortResponseMatchesFullSolution) {
    Rng r(5);
    for (int t = 0; t < 40; ++t) {
        const auto c = random_rlc(r, 6);
        std::vector<BusId> keep;
        for (BusId b = 1; b <= 6; ++b)
            if (r.coin()) keep.push_back(b);
        if (keep.empty()) keep.push_back(1);
        const auto y = build_ybus(c, 60.0);
        const auto red = kron_reduce(y, keep);
        ComplexVector v(keep.size());
        for (auto& x : v) x = Complex(r.normal(), r.normal());
        const ComplexVector full = solve_full_port_current(y, keep, v);
        EXPECT_LT((red.y * v - full).norm() / full.norm(), 1e-10);
    }
}

TEST(KronReduce, NestedEliminationEqualsJoint) {
    Rng r(8);
    for (int t = 0; t < 30; ++t) {
        const auto c = random_rlc(r, 8);
        const auto y = build_ybus(c, r.log_uniform(1.0, 2000.0));
        const std::vector<BusId> first = {1, 2, 3, 4, 5, 6}, second = {2, 4, 5};
        const auto joint = kron_reduce(y, second);
        const auto nested = kron_reduce(kron_reduce(y, first), second);
        EXPECT_LT(testing_support::rel_diff(nested.y, joint.y), 1e-10);
    }
}

TEST(KronReduce, BadKeepSetsThrow) {
    Rng r(1);
    const auto y = build_ybus(random_rlc(r, 4), 60.0);
    EXPECT_THROW((void)kron_reduce(y, std::vector<BusId>{}), CaseError);
    EXPECT_THROW((void)kron_reduce(y, std::vector<BusId>{1, 1}), CaseError);
    EXPECT_THROW((void)kron_reduce(y, std::vector<BusId>{9}), CaseError);
}

TEST(KronReduce, SingularEliminatedBlockThrows) {
    // Buses 2 and 3 carry no admittance at all.
    NodalMatrix y;
    y.buses = {1, 2, 3};
    y.y = ComplexMatrix::Zero(3, 3);
    y.y(0, 0) = 1.0;
    EXPECT_THROW((void)kron_reduce(y, std::vector<BusId>{1}), SingularEliminationError);
}

TEST(Partition, TwoByTwoBlocks) {
    NodalMatrix y;
    y.buses = {4, 7};
    y.y.resize(2, 2);
    y.y << Complex(1, 1), Complex(2, 0), Complex(3, 0), Complex(4, -1);
    const auto p = partition_reduced(y, std::vector<BusId>{7}, std::vector<BusId>{4});
    EXPECT_EQ(p.y_bb(0, 0), Complex(4, -1));
    EXPECT_EQ(p.y_bg(0, 0), Complex(3, 0));
    EXPECT_EQ(p.y_gb(0, 0), Complex(2, 0));
    EXPECT_EQ(p.y_gg(0, 0), Complex(1, 1));
}

TEST(Partition, NoGeneratorsAndReassembly) {
    Rng r(2);
    const auto c = random_rlc(r, 5);
    const auto y = build_ybus(c, 60.0);
    const auto p0 = partition_reduced(y, y.buses, std::vector<BusId>{});
    EXPECT_EQ((p0.y_bb - y.y).norm(), 0.0);
    EXPECT_EQ(p0.y_gg.size(), 0);
    EXPECT_EQ(p0.y_bg.size(), 0);

    const std::vector<BusId> b = {2, 5}, g = {1, 3, 4};
    const auto p = partition_reduced(y, b, g);
    const ComplexMatrix back = p.reassemble();
    const auto order = kron_reduce(y, std::vector<BusId>{2, 5, 1, 3, 4});
    EXPECT_LT((back - order.y).norm(), 1e-14);
}

TEST(Partition, InvalidPartitionsThrow) {
    Rng r(2);
    const auto y = build_ybus(random_rlc(r, 3), 60.0);
    EXPECT_THROW((void)partition_reduced(y, std::vector<BusId>{1, 2}, std::vector<BusId>{2, 3}), PartitionError);
    EXPECT_THROW((void)partition_reduced(y, std::vector<BusId>{1}, std::vector<BusId>{2}), PartitionError);
}

TEST(PortAdmittance, PureResistor) {
    NetworkCase c;
    c.buses = {{1, BusKind::boundary, Area::external}};
    c.branches.push_back({1, kGround, BranchModel::series_rl, 2.0, 0.0, 0.0});
    const std::vector<double> f = {1.0, 60.0, 1000.0};
    const auto s = analytic_port_admittance(c, std::vector<BusId>{1}, f);
    for (const auto& y : s.y) {
        EXPECT_NEAR(std::abs(y(0, 0)), 0.5, 1e-15);
        EXPECT_NEAR(std::arg(y(0, 0)), 0.0, 1e-15);
    }
    EXPECT_EQ(s.ts, 0.0);
}

TEST(PortAdmittance, SeriesRlAngle) {
    NetworkCase c;
    c.buses = {{1, BusKind::boundary, Area::external}};
    c.branches.push_back({1, kGround, BranchModel::series_rl, 1.0, 1.0 / (2.0 * std::numbers::pi), 0.0});
    const auto s = analytic_port_admittance(c, std::vector<BusId>{1}, std::vector<double>{1.0});
    EXPECT_NEAR(std::arg(s.y[0](0, 0)), -std::numbers::pi / 4.0, 1e-14);
}

TEST(PortAdmittance, RandomNetworksArePassive) {
    Rng r(21);
    std::vector<double> grid;
    for (int k = 0; k < 40; ++k) grid.push_back(r.log_uniform(1.0, 5000.0));
    for (int t = 0; t < 20; ++t) {
        const auto c = random_rlc(r, r.integer(3, 9));
        const std::vector<BusId> ports = {1, 2};
        const auto s = analytic_port_admittance(c, ports, grid);
        for (const auto& y : s.y) {
            const ComplexMatrix g = 0.5 * (y + y.adjoint());
            EXPECT_GE(Eigen::SelfAdjointEigenSolver<ComplexMatrix>(g).eigenvalues().minCoeff(), -1e-12);
        }
    }
}

TEST(PortAdmittance, TwoAreaExternalHasResonances) {
    const auto c = load_case(testing_support::fixture("two_area.case"));
    const auto ext = external_area(c);
    std::vector<double> f;
    for (double x = 1.0; x <= 2500.0; x += 1.0) f.push_back(x);
    const auto s = analytic_port_admittance(ext, ext.ids_of_kind(BusKind::boundary), f);
    int peaks = 0;
    for (std::size_t k = 1; k + 1 < f.size(); ++k) {
        const double a = std::abs(s.y[k - 1](0, 0)), b = std::abs(s.y[k](0, 0)), d = std::abs(s.y[k + 1](0, 0));
        if (b > a && b > d) ++peaks;
    }
    EXPECT_GE(peaks, 2);
}

TEST(PortAdmittance, UnknownPortThrows) {
    Rng r(4);
    const auto c = random_rlc(r, 3);
    EXPECT_THROW((void)analytic_port_admittance(c, std::vector<BusId>{7}, std::vector<double>{60.0}), CaseError);
}

TEST(CaseIo, XbUnitsConvertAtBaseFrequency) {
    std::istringstream in(R"(
[case]
name = t
base_frequency = 50
units = xb
[buses]
1 boundary external
2 internal external
[branches]
1 2 series-rl 0.1 0.5 0
2 0 shunt-rc 0 0 0.2
)");
    const auto c = parse_case(in);
    const double w = 2.0 * std::numbers::pi * 50.0;
    EXPECT_NEAR(c.branches[0].l, 0.5 / w, 1e-15);
    EXPECT_NEAR(c.branches[1].c, 0.2 / w, 1e-15);
    const auto y = build_ybus(c, 50.0);
    EXPECT_NEAR(std::abs(y.y(0, 1) + 1.0 / Complex(0.1, 0.5)), 0.0, 1e-13);
}

TEST(CaseIo, MalformedInputThrows) {
    std::istringstream bad_kind("[buses]\n1 middle study\n");
    EXPECT_THROW((void)parse_case(bad_kind), CaseError);
    std::istringstream bad_ref("[buses]\n1 internal study\n[branches]\n1 5 series-rl 1 0 0\n");
    EXPECT_THROW((void)parse_case(bad_ref), CaseError);
    EXPECT_THROW((void)load_case("/nonexistent/x.case"), ConfigError);
}

TEST(CaseIo, AdmittanceCsvRoundTrip) {
    AdmittanceSampleSet s;
    s.f_grid = {1.0, 2.0};
    for (int k = 0; k < 2; ++k) {
        ComplexMatrix y(2, 2);
        y << Complex(1, k), Complex(0.5, -1), Complex(0.5, -1), Complex(3, 0.25);
        s.y.push_back(y);
    }
    std::stringstream io;
    write_admittance_csv(io, s);
    const auto back = read_admittance_csv(io);
    ASSERT_EQ(back.size(), 2u);
    for (int k = 0; k < 2; ++k) EXPECT_LT((back.y[k] - s.y[k]).norm(), 1e-14);
}

TEST(AreaSplit, BoundaryBelongsToBothSides) {
    const auto c = load_case(testing_support::fixture("two_area.case"));
    const auto ext = external_area(c), study = study_area(c);
    EXPECT_TRUE(ext.has_bus(10));
    EXPECT_TRUE(study.has_bus(10));
    EXPECT_FALSE(ext.has_bus(9));
    EXPECT_FALSE(study.has_bus(11));
    EXPECT_EQ(ext.branches.size() + study.branches.size(), c.branches.size());
    EXPECT_EQ(ext.generators.size(), 2u);
}

TEST(PowerFlow, TwoAreaConverges) {
    const auto c = load_case(testing_support::fixture("two_area.case"));
    const auto pf = solve_power_flow(c);
    EXPECT_LT(pf.mismatch, 1e-10);
    EXPECT_NEAR(std::abs(pf.voltage.at(1)), 1.03, 1e-12);
    EXPECT_NEAR(pf.injection.at(2).real(), 7.0, 1e-10);
    // Load buses hold no injection; the network balances the generators.
    double p = 0.0;
    for (const auto& [b, s] : pf.injection) p += s.real();
    EXPECT_GT(p, 0.0);
    EXPECT_NEAR(pf.injection.at(5).real(), 0.0, 1e-10);
}

TEST(PowerFlow, NeedsOneSlack) {
    auto c = load_case(testing_support::fixture("two_area.case"));
    for (auto& row : c.powerflow) row.type = PfBusType::pv;
    EXPECT_THROW((void)solve_power_flow(c), PowerFlowError);
}
