#pragma once

#include "fdne/emt.hpp"
#include "fdne/netmodel.hpp"
#include "fdne/passivity.hpp"
#include "fdne/rls.hpp"
#include "fdne/tsa.hpp"

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fdne::pipeline {

enum class Variant { emt, emt_tsa, emt_tsa_agg, emt_fdne, emt_fdne_tsa, emt_fdne_tsa_agg };

inline constexpr Variant kAllVariants[] = {Variant::emt,      Variant::emt_tsa,      Variant::emt_tsa_agg,
                                           Variant::emt_fdne, Variant::emt_fdne_tsa, Variant::emt_fdne_tsa_agg};

[[nodiscard]] std::string to_string(Variant v);
// Accepts "EMT+FDNE+TSA(AGG)" as well as lower-case forms with '-' or '_'.
[[nodiscard]] Variant parse_variant(const std::string& name);
// File-name form, e.g. "emt_fdne_tsa_agg".
[[nodiscard]] std::string slug(Variant v);
[[nodiscard]] bool uses_tsa(Variant v);
[[nodiscard]] bool uses_fdne(Variant v);
[[nodiscard]] bool uses_aggregation(Variant v);

// ||ref - act||_2 / ||ref||_2. Throws MetricError on length mismatch or a
// zero reference.
[[nodiscard]] double relative_error(std::span<const double> ref, std::span<const double> act);
[[nodiscard]] double rms_error(std::span<const double> ref, std::span<const double> act);

struct Scenario {
    BusId fault_bus = 0;  // 0: no fault
    double fault_start = 0.5;
    double fault_duration = 0.1;
    double fault_resistance = 1e-3;
    double duration = 5.0;
    double ts = 50e-6;
    double tsa_dt = 5e-3;
    double window_start = 0.0;
    double window_end = -1.0;  // < 0: end of the run
};

struct FitConfig {
    int order = 17;  // <= 0 selects per entry up to n_max
    int n_max = 24;
    ident::FitOptions options;
};

struct CoherencyConfig {
    std::string participation;  // CSV path, optional
    double tau = 0.1;
    // Explicit machine groups for the aggregated variants. When empty the
    // participation grouping is used, and without it every external machine
    // forms one group.
    std::vector<std::vector<int>> groups;
};

// Key/value sections:
//
//   [run]        case, variant, output, seed
//   [scenario]   fault_bus, fault_start, fault_duration, fault_resistance,
//                duration, ts, tsa_dt, window_start, window_end
//   [sweep]      f_start, f_end, f_step, amplitude, cycles_per_step, dwell,
//                discard_cycles
//   [fit]        order, n_max, gamma, delta, form (square_root|covariance)
//   [passivity]  tol, max_rounds, hold_weight
//   [coherency]  participation, tau, groups (e.g. "3 4; 5 6")
//
// Relative paths are taken from the config file's directory.
struct RunConfig {
    std::string case_path;
    Variant variant = Variant::emt_fdne_tsa;
    std::string output = "out";
    unsigned long seed = 1;
    Scenario scenario;
    emt::SweepSpec sweep;
    FitConfig fit;
    passivity::EnforceOptions passivity;
    CoherencyConfig coherency;

    // Throws ConfigError.
    void validate() const;
};

[[nodiscard]] RunConfig parse_config(std::istream& in, const std::string& base_dir = ".",
                                     const std::string& origin = "<stream>");
// Parses only; call validate() once any overrides are applied.
[[nodiscard]] RunConfig load_config(const std::string& path);
// Case from cfg.case_path; ConfigError naming the path when it is missing.
[[nodiscard]] net::NetworkCase load_run_case(const RunConfig& cfg);

// Wall-clock seconds per named stage, in insertion order.
struct Timing {
    std::vector<std::pair<std::string, double>> stages;

    void add(const std::string& stage, double seconds);
    [[nodiscard]] double get(const std::string& stage) const;  // 0 when absent
};

// External-area equivalents of a case.
struct FdneBuild {
    ident::MimoFit fit;
    ident::TFMatrix model;  // stable, passive
    passivity::PassivityReport before;
    passivity::PassivityReport after;
    bool enforced = false;
};
[[nodiscard]] FdneBuild build_fdne(const net::NetworkCase& c, const RunConfig& cfg, Timing* timing = nullptr);
[[nodiscard]] std::vector<std::vector<int>> aggregation_groups(const net::NetworkCase& c, const RunConfig& cfg);
[[nodiscard]] tsa::TsaEquivalent build_tsa(const net::NetworkCase& c, const net::PowerFlowResult& pf, bool aggregate,
                                           const RunConfig& cfg, Timing* timing = nullptr);

// Time-domain run of one variant. Channels: "v<bus>" and "vmag<bus>" per
// boundary bus, "p_b" (active power drawn by the external area), "q_b", and
// "omega<id>" per study machine. The EMT variant also records
// "omega<id>" for the external machines; TSA variants record theirs as
// "tsa_omega<id>".
struct Equivalents {
    const FdneBuild* fdne = nullptr;
    tsa::TsaEquivalent* tsa = nullptr;
};
[[nodiscard]] emt::TimeSeries simulate_variant(const net::NetworkCase& c, const net::PowerFlowResult& pf,
                                               Variant v, const Scenario& sc, const Equivalents& eq = {});

struct ChannelError {
    std::string channel;
    double relative = 0.0;
    double rms = 0.0;
};

struct ComparisonReport {
    std::string case_name;
    Variant variant = Variant::emt;
    Scenario scenario;
    unsigned long seed = 0;
    std::vector<ChannelError> errors;
    Timing timing;

    [[nodiscard]] const ChannelError& error(const std::string& channel) const;
};

// Compares the metric channels ("p_b", "vmag<bus>", "omega<id>") over the
// scenario window.
[[nodiscard]] std::vector<ChannelError> compare_runs(const emt::TimeSeries& ref, const emt::TimeSeries& act,
                                                     const Scenario& sc);

void write_report_csv(std::ostream& out, const ComparisonReport& r);
void write_report_text(std::ostream& out, const ComparisonReport& r);
void write_timing_csv(std::ostream& out, const Timing& t);

// Builds both equivalents once and records per-stage seconds.
[[nodiscard]] Timing timing_report(const RunConfig& cfg);

// Reference EMT run plus the configured variant; writes the model, reports
// and time series into cfg.output.
[[nodiscard]] ComparisonReport run_pipeline(const RunConfig& cfg);

}  // namespace fdne::pipeline
