#include "fdne/errors.hpp"
#include "fdne/pipeline.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace fdne;
using namespace fdne::pipeline;
using testing_support::fixture;

TEST(Metrics, RelativeErrorExample) {
    const std::vector<double> ref{3.0, 4.0}, act{3.0, 0.0};
    EXPECT_NEAR(relative_error(ref, act), 0.8, 1e-15);
    EXPECT_EQ(relative_error(ref, ref), 0.0);
}

TEST(Metrics, RelativeErrorScaleInvariant) {
    testing_support::Rng r(11);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = r.integer(1, 40);
        std::vector<double> a(n), b(n), as(n), bs(n);
        const double s = r.log_uniform(1e-6, 1e6) * (r.coin() ? 1.0 : -1.0);
        for (int i = 0; i < n; ++i) {
            a[i] = r.normal() + 0.1;
            b[i] = r.normal();
            as[i] = s * a[i];
            bs[i] = s * b[i];
        }
        EXPECT_NEAR(relative_error(as, bs), relative_error(a, b), 1e-12 * relative_error(a, b));
    }
}

TEST(Metrics, RmsError) {
    const std::vector<double> ref{1.0, 2.0, 3.0, 4.0}, act{1.0, 2.0, 3.0, 0.0};
    EXPECT_NEAR(rms_error(ref, act), 2.0, 1e-15);
    EXPECT_EQ(rms_error(ref, ref), 0.0);
}

TEST(Metrics, Errors) {
    const std::vector<double> two{1.0, 2.0}, three{1.0, 2.0, 3.0}, zeros{0.0, 0.0}, none;
    EXPECT_THROW((void)relative_error(two, three), MetricError);
    EXPECT_THROW((void)relative_error(zeros, two), MetricError);
    EXPECT_THROW((void)rms_error(none, none), MetricError);
    EXPECT_THROW((void)rms_error(two, three), MetricError);
}

TEST(Variants, ParseForms) {
    EXPECT_EQ(parse_variant("EMT"), Variant::emt);
    EXPECT_EQ(parse_variant("EMT+TSA"), Variant::emt_tsa);
    EXPECT_EQ(parse_variant("EMT+FDNE+TSA(AGG)"), Variant::emt_fdne_tsa_agg);
    EXPECT_EQ(parse_variant("emt-fdne-tsa"), Variant::emt_fdne_tsa);
    EXPECT_EQ(parse_variant("emt_fdne"), Variant::emt_fdne);
    EXPECT_EQ(parse_variant("emt_tsa_agg"), Variant::emt_tsa_agg);
    EXPECT_THROW((void)parse_variant("FDNE"), ConfigError);
    EXPECT_THROW((void)parse_variant(""), ConfigError);
}

TEST(Variants, RoundTripAndFlags) {
    for (Variant v : kAllVariants) {
        EXPECT_EQ(parse_variant(to_string(v)), v);
        EXPECT_EQ(parse_variant(slug(v)), v);
    }
    EXPECT_EQ(slug(Variant::emt_fdne_tsa_agg), "emt_fdne_tsa_agg");
    EXPECT_FALSE(uses_tsa(Variant::emt));
    EXPECT_TRUE(uses_tsa(Variant::emt_tsa));
    EXPECT_FALSE(uses_fdne(Variant::emt_tsa));
    EXPECT_TRUE(uses_fdne(Variant::emt_fdne));
    EXPECT_FALSE(uses_tsa(Variant::emt_fdne));
    EXPECT_TRUE(uses_aggregation(Variant::emt_fdne_tsa_agg));
    EXPECT_FALSE(uses_aggregation(Variant::emt_fdne_tsa));
}

TEST(Config, ParsesSections) {
    std::istringstream in(R"(# comment
[run]
case = cases/a.case
variant = emt+tsa
seed = 7
[Scenario]
fault_bus = 8   # trailing
duration = 2.5
[fit]
order = 12
form = covariance
[passivity]
hold_weight = 3
[coherency]
groups = 3 4; 5
)");
    const RunConfig cfg = parse_config(in, "/base");
    EXPECT_EQ(cfg.case_path, "/base/cases/a.case");
    EXPECT_EQ(cfg.variant, Variant::emt_tsa);
    EXPECT_EQ(cfg.seed, 7u);
    EXPECT_EQ(cfg.scenario.fault_bus, 8);
    EXPECT_EQ(cfg.scenario.duration, 2.5);
    EXPECT_EQ(cfg.fit.order, 12);
    EXPECT_EQ(cfg.fit.options.form, ident::RlsForm::covariance);
    EXPECT_EQ(cfg.passivity.hold_weight, 3.0);
    ASSERT_EQ(cfg.coherency.groups.size(), 2u);
    EXPECT_EQ(cfg.coherency.groups[0], (std::vector<int>{3, 4}));
    EXPECT_EQ(cfg.coherency.groups[1], (std::vector<int>{5}));
    EXPECT_EQ(cfg.sweep.ts, cfg.scenario.ts);
}

TEST(Config, ParseErrorsNameTheLine) {
    const auto fails = [](const std::string& text, const std::string& needle) {
        std::istringstream in(text);
        try {
            (void)parse_config(in, ".", "x.cfg");
        } catch (const ConfigError& e) {
            const std::string what = e.what();
            EXPECT_NE(what.find(needle), std::string::npos) << what;
            return;
        }
        ADD_FAILURE() << "no error for: " << text;
    };
    fails("[run\n", "x.cfg:1");
    fails("[run]\ncase\n", "expected key = value");
    fails("[scenario]\nduration = fast\n", "needs a number");
    fails("[fit]\norder = 2.5\n", "needs an integer");
    fails("[fit]\nbogus = 1\n", "unknown key 'bogus'");
    fails("[fit]\nform = qr\n", "square_root or covariance");
    fails("[coherency]\ngroups = 3 x\n", "bad machine id");
    fails("order = 3\n", "outside a known section");
    fails("[run]\n\n\nseed = -\n", "x.cfg:4");
}

TEST(Config, ValidateRejects) {
    RunConfig good;
    good.case_path = fixture("two_area.case");
    EXPECT_NO_THROW(good.validate());
    const auto bad = [&](auto mutate) {
        RunConfig c = good;
        mutate(c);
        EXPECT_THROW(c.validate(), ConfigError);
    };
    bad([](RunConfig& c) { c.case_path.clear(); });
    bad([](RunConfig& c) { c.scenario.ts = 0.0; });
    bad([](RunConfig& c) { c.scenario.duration = -1.0; });
    bad([](RunConfig& c) { c.fit.order = 41; });
    bad([](RunConfig& c) { c.fit.options.gamma = 1.5; });
    bad([](RunConfig& c) { c.coherency.tau = -0.1; });
    bad([](RunConfig& c) { c.coherency.participation = "/nonexistent/p.csv"; });
}

TEST(Config, MissingCaseNamesPath) {
    RunConfig cfg;
    cfg.case_path = "/nonexistent/dir/net.case";
    try {
        (void)load_run_case(cfg);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/net.case"), std::string::npos);
        EXPECT_EQ(e.stage(), std::string("config"));
    }
    EXPECT_THROW((void)load_config("/nonexistent/run.cfg"), ConfigError);
}

TEST(Config, FixtureLoads) {
    const RunConfig cfg = load_config(fixture("two_area.cfg"));
    EXPECT_NO_THROW(cfg.validate());
    EXPECT_EQ(cfg.case_path, fixture("two_area.case"));
    EXPECT_EQ(cfg.fit.order, 17);
    EXPECT_EQ(cfg.scenario.fault_bus, 8);
}

TEST(TimingTable, AddGet) {
    Timing t;
    t.add("fit", 1.5);
    t.add("sweep", 0.5);
    EXPECT_EQ(t.get("fit"), 1.5);
    EXPECT_EQ(t.get("absent"), 0.0);
    ASSERT_EQ(t.stages.size(), 2u);
    EXPECT_EQ(t.stages[0].first, "fit");
}

class TwoAreaRuns : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        cfg_ = new RunConfig(load_config(fixture("two_area.cfg")));
        cfg_->scenario.duration = 1.0;
        cfg_->scenario.fault_start = 0.3;
        cfg_->scenario.fault_duration = 0.05;
        case_ = new net::NetworkCase(load_run_case(*cfg_));
        pf_ = new net::PowerFlowResult(net::solve_power_flow(*case_));
        timing_ = new Timing;
        fdne_ = new FdneBuild(build_fdne(*case_, *cfg_, timing_));
        emt_ = new emt::TimeSeries(simulate_variant(*case_, *pf_, Variant::emt, cfg_->scenario));
    }
    static void TearDownTestSuite() {
        delete emt_;
        delete fdne_;
        delete timing_;
        delete pf_;
        delete case_;
        delete cfg_;
    }

    static emt::TimeSeries run(Variant v) {
        std::optional<tsa::TsaEquivalent> t;
        Equivalents eq;
        if (uses_fdne(v)) eq.fdne = fdne_;
        if (uses_tsa(v)) {
            t.emplace(build_tsa(*case_, *pf_, uses_aggregation(v), *cfg_));
            eq.tsa = &*t;
        }
        return simulate_variant(*case_, *pf_, v, cfg_->scenario, eq);
    }

    static inline RunConfig* cfg_ = nullptr;
    static inline net::NetworkCase* case_ = nullptr;
    static inline net::PowerFlowResult* pf_ = nullptr;
    static inline Timing* timing_ = nullptr;
    static inline FdneBuild* fdne_ = nullptr;
    static inline emt::TimeSeries* emt_ = nullptr;
};

TEST_F(TwoAreaRuns, ReferenceAgainstItselfIsExact) {
    const auto errs = compare_runs(*emt_, *emt_, cfg_->scenario);
    ASSERT_FALSE(errs.empty());
    for (const auto& e : errs) {
        EXPECT_EQ(e.relative, 0.0) << e.channel;
        EXPECT_EQ(e.rms, 0.0) << e.channel;
    }
}

TEST_F(TwoAreaRuns, FdneModelIsPassive) {
    EXPECT_TRUE(fdne_->after.passive());
    EXPECT_GT(timing_->get("fdne_fit"), 0.0);
}

TEST_F(TwoAreaRuns, EveryVariantHasMetricChannels) {
    for (Variant v : kAllVariants) {
        const emt::TimeSeries ts = (v == Variant::emt) ? *emt_ : run(v);
        EXPECT_EQ(ts.size(), emt_->size()) << to_string(v);
        EXPECT_TRUE(ts.has("p_b")) << to_string(v);
        ComparisonReport rep;
        rep.errors = compare_runs(*emt_, ts, cfg_->scenario);
        EXPECT_NO_THROW((void)rep.error("p_b")) << to_string(v);
        EXPECT_THROW((void)rep.error("nope"), MetricError);
        bool vmag = false, omega = false;
        for (const auto& e : rep.errors) {
            vmag |= e.channel.rfind("vmag", 0) == 0;
            omega |= e.channel.rfind("omega", 0) == 0;
            EXPECT_TRUE(std::isfinite(e.relative)) << to_string(v) << " " << e.channel;
        }
        EXPECT_TRUE(vmag && omega) << to_string(v);
    }
}

TEST_F(TwoAreaRuns, FdneVariantTracksReference) {
    const auto ts = run(Variant::emt_fdne_tsa);
    const auto errs = compare_runs(*emt_, ts, cfg_->scenario);
    for (const auto& e : errs) EXPECT_LT(e.relative, 0.05) << e.channel;
}

TEST_F(TwoAreaRuns, Deterministic) {
    const auto a = run(Variant::emt_fdne_tsa);
    const auto b = run(Variant::emt_fdne_tsa);
    for (const auto& e : compare_runs(a, b, cfg_->scenario)) EXPECT_EQ(e.rms, 0.0) << e.channel;
}

TEST_F(TwoAreaRuns, CompareRejectsMismatch) {
    emt::TimeSeries shorter = *emt_;
    for (auto& ch : shorter.channels) ch.pop_back();
    EXPECT_THROW((void)compare_runs(*emt_, shorter, cfg_->scenario), MetricError);
    Scenario empty = cfg_->scenario;
    empty.window_start = 0.9;
    empty.window_end = 0.5;
    EXPECT_THROW((void)compare_runs(*emt_, *emt_, empty), MetricError);
}

TEST_F(TwoAreaRuns, FaultOutsideStudyAreaRejected) {
    Scenario sc = cfg_->scenario;
    sc.fault_bus = 999;
    EXPECT_THROW((void)simulate_variant(*case_, *pf_, Variant::emt, sc), ConfigError);
    EXPECT_THROW((void)simulate_variant(*case_, *pf_, Variant::emt_fdne, cfg_->scenario), ConfigError);
}

TEST_F(TwoAreaRuns, ReportsRender) {
    ComparisonReport rep;
    rep.case_name = case_->name;
    rep.variant = Variant::emt_fdne_tsa;
    rep.scenario = cfg_->scenario;
    rep.errors = compare_runs(*emt_, *emt_, cfg_->scenario);
    rep.timing = *timing_;
    std::ostringstream csv, txt, tim;
    write_report_csv(csv, rep);
    write_report_text(txt, rep);
    write_timing_csv(tim, rep.timing);
    EXPECT_EQ(csv.str().rfind("channel,relative_error,rms_error\n", 0), 0u);
    EXPECT_NE(csv.str().find("p_b,0,0"), std::string::npos);
    EXPECT_NE(txt.str().find("fault at bus 8"), std::string::npos);
    EXPECT_EQ(tim.str().rfind("stage,seconds\n", 0), 0u);
}
