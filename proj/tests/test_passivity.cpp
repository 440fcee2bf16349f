#include "support.hpp"

#include "fdne/emt.hpp"
#include "fdne/errors.hpp"
#include "fdne/passivity.hpp"
#include "fdne/pipeline.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace fdne;
using namespace fdne::passivity;
using ident::RationalTFz;
using ident::TFMatrix;
using testing_support::make_tf;
using testing_support::one_port;
using testing_support::Rng;
using testing_support::series_rl_tf;
using testing_support::violator;

namespace {

constexpr double kTs = testing_support::kTs;

std::vector<double> test_grid() { return default_grid(10.0, 2500.0, 10.0, kTs); }

ComplexMatrix random_hermitian(Rng& r, int n) {
    ComplexMatrix a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = {r.normal(), r.normal()};
    return 0.5 * (a + a.adjoint());
}

ComplexMatrix random_psd(Rng& r, int n) {
    ComplexMatrix a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = {r.normal(), r.normal()};
    return a * a.adjoint() * r.uniform(0.0, 1.0);
}

double min_eig(const ComplexMatrix& h) {
    return Eigen::SelfAdjointEigenSolver<ComplexMatrix>(h, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

}  // namespace

TEST(SampleAdmittance, ConstantConductance) {
    const std::vector<double> f = {0.0, 60.0, 1000.0, 9000.0};
    const auto s = sample_admittance(one_port(make_tf({0.25}, {})), f);
    ASSERT_EQ(s.size(), 4u);
    for (const auto& y : s.y) EXPECT_EQ(y(0, 0), Complex(0.25, 0.0));
}

TEST(SampleAdmittance, UnitDelay) {
    const std::vector<double> f = {0.0, 60.0, 1234.5, 9000.0};
    const auto s = sample_admittance(one_port(make_tf({0.0, 1.0}, {0.0})), f);
    for (std::size_t k = 0; k < f.size(); ++k) {
        EXPECT_NEAR(std::abs(s.y[k](0, 0)), 1.0, 1e-15);
        EXPECT_NEAR(std::arg(s.y[k](0, 0)), -kTwoPi * f[k] * kTs, 1e-12);
    }
}

TEST(SampleAdmittance, FittedSeriesRlMatchesCircuit) {
    const double r = 0.5, l = 2e-3;
    net::NetworkCase c;
    c.buses = {{1, net::BusKind::boundary, net::Area::external}};
    c.branches.push_back({1, kGround, net::BranchModel::series_rl, r, l, 0.0});
    emt::SweepSpec spec;
    spec.f_start = 5.0;
    spec.f_end = 2000.0;
    spec.f_step = 25.0;
    const std::vector<BusId> ports = {1};
    const auto recs = emt::frequency_sweep(c, ports, spec);
    const auto fit = ident::fit_mimo(recs, ports, 2);
    const auto grid = test_grid();
    const auto s = sample_admittance(fit.model, grid);
    for (std::size_t k = 0; k < grid.size(); ++k) {
        // The trapezoidal rule maps f to the warped angular frequency.
        const double ww = 2.0 / kTs * std::tan(std::numbers::pi * grid[k] * kTs);
        const Complex ya = 1.0 / Complex(r, ww * l);
        EXPECT_LT(std::abs(s.y[k](0, 0) - ya) / std::abs(ya), 1e-4) << grid[k];
    }
}

TEST(SampleAdmittance, RejectsBadGrids) {
    const auto m = one_port(make_tf({1.0}, {}));
    EXPECT_THROW((void)sample_admittance(m, std::vector<double>{10000.0}), SamplingError);
    EXPECT_THROW((void)sample_admittance(m, std::vector<double>{-1.0}), SamplingError);
    EXPECT_THROW((void)sample_admittance(m, std::vector<double>{5.0, 5.0}), SamplingError);
    const auto integrator = one_port(make_tf({1.0, 0.0}, {-1.0}));
    try {
        (void)sample_admittance(integrator, std::vector<double>{0.0});
        FAIL() << "pole on the unit circle not reported";
    } catch (const SamplingError& e) {
        EXPECT_NE(std::string(e.what()).find("0 Hz"), std::string::npos) << e.what();
    }
}

TEST(ConductancePart, SplitsOnePort) {
    const auto s = conductance_part(ComplexMatrix::Constant(1, 1, Complex(3.0, 4.0)));
    EXPECT_EQ(s.g(0, 0), Complex(3.0, 0.0));
    EXPECT_EQ(s.b(0, 0), Complex(0.0, 4.0));
}

TEST(ConductancePart, HermitianInputHasNoSusceptance) {
    Rng r(1);
    const ComplexMatrix h = random_hermitian(r, 3);
    const auto s = conductance_part(h);
    EXPECT_LE((s.g - h).norm(), 1e-15);
    EXPECT_LE(s.b.norm(), 1e-15);
}

TEST(ConductancePart, ReassemblesRandomSamples) {
    Rng r(2);
    for (int t = 0; t < 100; ++t) {
        ComplexMatrix y(3, 3);
        for (int i = 0; i < 9; ++i) y(i / 3, i % 3) = {r.normal(), r.normal()};
        const auto s = conductance_part(y);
        EXPECT_LE((s.g + s.b - y).norm(), 1e-14 * y.norm());
        EXPECT_EQ((s.g - s.g.adjoint()).norm(), 0.0);
        EXPECT_EQ((s.b + s.b.adjoint()).norm(), 0.0);
    }
    EXPECT_THROW((void)conductance_part(ComplexMatrix::Zero(2, 3)), SamplingError);
}

TEST(CheckPassivity, ResistorPasses) {
    AdmittanceSampleSet s;
    s.ts = kTs;
    for (int k = 0; k < 20; ++k) {
        s.f_grid.push_back(10.0 * k);
        s.y.push_back(ComplexMatrix::Constant(1, 1, 0.1));
    }
    const auto rep = check_passivity(s);
    EXPECT_TRUE(rep.passive());
    EXPECT_EQ(rep.worst, 0.0);
}

TEST(CheckPassivity, AngleBeyondRightAngleFlagged) {
    AdmittanceSampleSet s;
    s.f_grid = {50.0, 60.0};
    s.y = {ComplexMatrix::Constant(1, 1, std::polar(2.0, 1.5)), ComplexMatrix::Constant(1, 1, std::polar(2.0, 1.6))};
    const auto rep = check_passivity(s);
    EXPECT_EQ(rep.violations, (std::vector<std::size_t>{1}));
    EXPECT_DOUBLE_EQ(rep.worst, 2.0 * std::cos(1.6));
    EXPECT_TRUE(rep.violated(1));
    EXPECT_FALSE(rep.violated(0));
    EXPECT_THROW((void)check_passivity(s, -1.0), SamplingError);
}

TEST(CheckPassivity, FlagsExactlyBelowTolerance) {
    Rng r(3);
    AdmittanceSampleSet s;
    for (int k = 0; k < 300; ++k) {
        s.f_grid.push_back(k);
        ComplexMatrix y = random_hermitian(r, 3) * 1e-8;
        y(0, 1) += Complex(0.0, r.normal());
        y(1, 0) += Complex(0.0, r.normal());
        s.y.push_back(y);
    }
    const double tol = 1e-9;
    const auto rep = check_passivity(s, tol);
    for (std::size_t k = 0; k < s.size(); ++k) {
        const double e = min_eig(conductance_part(s.y[k]).g);
        EXPECT_NEAR(rep.min_eig[k], e, 1e-20);
        EXPECT_EQ(rep.violated(k), e < -tol);
    }
    std::ostringstream out;
    write_report_csv(out, rep);
    const std::string csv = out.str();
    EXPECT_EQ(csv.rfind("f_hz,min_eig,violated\n", 0), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 301);
}

TEST(NearestPsd, ClipsNegativeEigenvalue) {
    ComplexMatrix g = ComplexMatrix::Zero(2, 2);
    g(0, 0) = 2.0;
    g(1, 1) = -1.0;
    const ComplexMatrix b = nearest_psd(g);
    EXPECT_NEAR(std::abs(b(0, 0) - 2.0), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(b(1, 1)), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(b(0, 1)), 0.0, 1e-15);
}

TEST(NearestPsd, PsdUnchangedAndIdempotent) {
    Rng r(4);
    for (int t = 0; t < 50; ++t) {
        const ComplexMatrix p = random_psd(r, 4) + ComplexMatrix::Identity(4, 4) * 1e-3;
        EXPECT_EQ(nearest_psd(p), p);
        const ComplexMatrix g = random_hermitian(r, 4);
        const ComplexMatrix b = nearest_psd(g);
        EXPECT_EQ(nearest_psd(b), b);
    }
}

TEST(NearestPsd, NeverBeatenByRandomPsdMatrices) {
    Rng r(5);
    for (int t = 0; t < 10; ++t) {
        const ComplexMatrix g = random_hermitian(r, 4);
        const ComplexMatrix b = nearest_psd(g);
        EXPECT_GE(min_eig(b), -1e-12);
        const double best = (g - b).norm();
        for (int c = 0; c < 2000; ++c) {
            // Candidates near the projection and far from it.
            ComplexMatrix cand = c % 2 == 0 ? random_psd(r, 4) : b + 1e-3 * random_psd(r, 4);
            if (c % 4 == 1) {
                Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(b + 0.01 * random_hermitian(r, 4));
                cand = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cast<Complex>().asDiagonal() *
                       es.eigenvectors().adjoint();
            }
            EXPECT_GE((g - cand).norm(), best - 1e-12);
        }
    }
}

TEST(NearestPsd, KeepsSusceptanceOfCorrectedSample) {
    Rng r(6);
    for (int t = 0; t < 50; ++t) {
        ComplexMatrix y(3, 3);
        for (int i = 0; i < 9; ++i) y(i / 3, i % 3) = {r.normal(), r.normal()};
        const auto s = conductance_part(y);
        const ComplexMatrix corrected = nearest_psd(s.g) + s.b;
        EXPECT_LE((conductance_part(corrected).b - s.b).norm(), 1e-12);
        EXPECT_GE(min_eig(conductance_part(corrected).g), -1e-12);
    }
}

TEST(DefaultGrid, CoversZeroToNyquist) {
    const auto f = default_grid(1.0, 2500.0, 1.0, kTs);
    EXPECT_EQ(f.front(), 0.0);
    EXPECT_LT(f.back(), 0.5 / kTs);
    EXPECT_GT(f.back(), 0.499 / kTs);
    for (std::size_t k = 1; k < f.size(); ++k) EXPECT_GT(f[k], f[k - 1]);
    EXPECT_NE(std::find(f.begin(), f.end(), 1.5), f.end());
    EXPECT_NE(std::find(f.begin(), f.end(), 2500.0), f.end());
    EXPECT_THROW((void)default_grid(1.0, 10000.0, 1.0, kTs), SamplingError);
    EXPECT_THROW((void)default_grid(0.0, 100.0, 1.0, kTs), SamplingError);
}

TEST(EnforcePassivity, PassiveModelUnchanged) {
    const auto m = one_port(series_rl_tf(1.0, 1e-3));
    const auto grid = test_grid();
    const auto res = enforce_passivity(m, grid);
    EXPECT_TRUE(res.before.passive());
    EXPECT_EQ(res.rounds, 0);
    EXPECT_EQ(res.shift, 0.0);
    const auto a = sample_admittance(m, grid), b = sample_admittance(res.model, grid);
    for (std::size_t k = 0; k < grid.size(); ++k) EXPECT_EQ(a.y[k], b.y[k]);
}

TEST(EnforcePassivity, ConstructedViolatorOnePort) {
    const auto m = one_port(violator());
    ASSERT_TRUE(m.is_stable());
    const auto grid = test_grid();
    const auto before = check_passivity(sample_admittance(m, grid));
    ASSERT_FALSE(before.passive());
    ASSERT_LT(before.violations.size(), grid.size() / 10);

    const auto res = enforce_passivity(m, grid);
    const auto after = sample_admittance(res.model, grid);
    const auto orig = sample_admittance(m, grid);
    for (std::size_t k = 0; k < grid.size(); ++k) {
        EXPECT_GE(after.y[k](0, 0).real(), -1e-9) << grid[k];
        if (!before.violated(k))
            EXPECT_LE(std::abs(after.y[k](0, 0) - orig.y[k](0, 0)) / std::abs(orig.y[k](0, 0)), 0.05) << grid[k];
    }
    EXPECT_LE(res.max_perturbation, 0.05);
    EXPECT_TRUE(res.after.passive());
    EXPECT_TRUE(res.model.is_stable());
    EXPECT_EQ(res.model.at(0, 0).a, m.at(0, 0).a);
}

TEST(EnforcePassivity, RandomMultiportViolatorsStayStable) {
    Rng r(7);
    const auto grid = default_grid(20.0, 2000.0, 20.0, kTs);
    for (int t = 0; t < 5; ++t) {
        TFMatrix m;
        m.ports = {1, 2};
        m.ts = kTs;
        for (int e = 0; e < 4; ++e) {
            auto tf = testing_support::add(series_rl_tf(r.uniform(0.5, 2.0), r.uniform(5e-4, 2e-3)),
                          testing_support::resonator(e % 3 == 0 ? -0.3 : 0.05, r.uniform(200.0, 1500.0), 0.98));
            if (e == 2) tf = m.entries[1];  // reciprocal
            m.entries.push_back(tf);
        }
        ASSERT_FALSE(check_passivity(sample_admittance(m, grid)).passive());
        const auto res = enforce_passivity(m, grid);
        EXPECT_TRUE(res.model.is_stable());
        EXPECT_GE(res.after.worst, -1e-9);
        for (std::size_t e = 0; e < 4; ++e) EXPECT_EQ(res.model.entries[e].a, m.entries[e].a);
    }
}

TEST(EnforcePassivity, RejectsUnstableModels) {
    const auto m = one_port(make_tf({1.0, 0.0}, {-1.5}));
    EXPECT_THROW((void)enforce_passivity(m, test_grid()), EnforcementError);
    EXPECT_THROW((void)enforce_passivity(one_port(series_rl_tf(1.0, 1e-3)), std::vector<double>{}), EnforcementError);
}

TEST(RelativeDifference, PerSampleSpectralNorm) {
    AdmittanceSampleSet a, b;
    a.f_grid = b.f_grid = {1.0, 2.0};
    a.y = {ComplexMatrix::Identity(2, 2) * 2.0, ComplexMatrix::Zero(2, 2)};
    b.y = {ComplexMatrix::Identity(2, 2), ComplexMatrix::Identity(2, 2) * 0.5};
    const auto d = relative_difference(a, b);
    EXPECT_DOUBLE_EQ(d[0], 0.5);
    EXPECT_DOUBLE_EQ(d[1], 0.5);
    b.y.pop_back();
    b.f_grid.pop_back();
    EXPECT_THROW((void)relative_difference(a, b), SamplingError);
}

class TwoAreaFixture : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        cfg_ = pipeline::load_config(testing_support::fixture("two_area.cfg"));
        const auto c = pipeline::load_run_case(cfg_);
        const auto ext = net::external_area(c);
        const auto ports = ext.ids_of_kind(net::BusKind::boundary);
        const auto recs = emt::frequency_sweep(ext, ports, cfg_.sweep);
        model_ = ident::fit_mimo(recs, ports, cfg_.fit.order, cfg_.fit.options).model;
        for (auto& e : model_.entries) e = ident::enforce_stability(e);
        grid_ = default_grid(cfg_.sweep.f_start, cfg_.sweep.f_end, cfg_.sweep.f_step, cfg_.scenario.ts);
    }
    static pipeline::RunConfig cfg_;
    static TFMatrix model_;
    static std::vector<double> grid_;
};
pipeline::RunConfig TwoAreaFixture::cfg_;
TFMatrix TwoAreaFixture::model_;
std::vector<double> TwoAreaFixture::grid_;

TEST_F(TwoAreaFixture, FittedModelShowsViolatingBand) {
    const auto rep = check_passivity(sample_admittance(model_, grid_));
    EXPECT_FALSE(rep.passive()) << "order " << cfg_.fit.order << " fit has min eigenvalue " << rep.worst
                                << " on the grid";
}

TEST_F(TwoAreaFixture, EnforcedModelNonNegativeAcrossGrid) {
    const auto res = enforce_passivity(model_, grid_, cfg_.passivity);
    const auto rep = check_passivity(sample_admittance(res.model, grid_), cfg_.passivity.tol);
    for (double e : rep.min_eig) EXPECT_GE(e, -1e-9);
    EXPECT_TRUE(res.model.is_stable());
}
