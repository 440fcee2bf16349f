#include "fdne/case_io.hpp"
#include "fdne/errors.hpp"
#include "fdne/passivity.hpp"
#include "fdne/pipeline.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace fdne;

namespace {

struct Options {
    std::string case_path, config, out, variant, model;
    std::optional<int> order;
    std::optional<double> gamma, fmax;
    std::optional<unsigned long> seed;
};

void add_common(CLI::App* cmd, Options& o) {
    cmd->add_option("--case", o.case_path, "case file");
    cmd->add_option("--config", o.config, "run configuration file");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--variant", o.variant, "EMT, EMT+TSA, EMT+TSA(AGG), EMT+FDNE, EMT+FDNE+TSA, EMT+FDNE+TSA(AGG)");
    cmd->add_option("--order", o.order, "fit order (0 selects per entry)");
    cmd->add_option("--gamma", o.gamma, "RLS weighting factor");
    cmd->add_option("--fmax", o.fmax, "sweep end frequency, Hz");
    cmd->add_option("--seed", o.seed, "run seed recorded in the reports");
}

pipeline::RunConfig make_config(const Options& o, bool variant_flag = true) {
    pipeline::RunConfig cfg = o.config.empty() ? pipeline::RunConfig{} : pipeline::load_config(o.config);
    if (!o.case_path.empty()) cfg.case_path = o.case_path;
    if (!o.out.empty()) cfg.output = o.out;
    if (variant_flag && !o.variant.empty()) cfg.variant = pipeline::parse_variant(o.variant);
    if (o.order) cfg.fit.order = *o.order;
    if (o.gamma) cfg.fit.options.gamma = *o.gamma;
    if (o.fmax) cfg.sweep.f_end = *o.fmax;
    if (o.seed) cfg.seed = *o.seed;
    cfg.sweep.ts = cfg.scenario.ts;
    cfg.validate();
    fs::create_directories(cfg.output);
    return cfg;
}

std::ofstream open_out(const pipeline::RunConfig& cfg, const std::string& name) {
    const fs::path p = fs::path(cfg.output) / name;
    std::ofstream out(p);
    if (!out) throw ConfigError("cannot write '" + p.string() + "'");
    return out;
}

void write_fit_csv(std::ostream& out, const ident::MimoFit& f) {
    const auto& m = f.model;
    out << "row_bus,col_bus,order,rms,relative_rms\n" << std::setprecision(10);
    for (Eigen::Index q = 0; q < m.size(); ++q)
        for (Eigen::Index p = 0; p < m.size(); ++p)
            out << m.ports[q] << ',' << m.ports[p] << ',' << m.at(q, p).order() << ',' << f.rms(q, p) << ','
                << f.relative_rms(q, p) << '\n';
}

void write_passivity_text(std::ostream& out, const passivity::PassivityReport& before,
                          const passivity::PassivityReport& after, bool enforced) {
    out << "grid samples        " << before.f_hz.size() << "\n";
    out << "violations before   " << before.violations.size() << " (worst " << before.worst << ")\n";
    if (enforced)
        out << "violations after    " << after.violations.size() << " (worst " << after.worst << ")\n";
    else
        out << "model already passive, no enforcement\n";
}

int cmd_reduce(const Options& o) {
    const auto cfg = make_config(o);
    const auto c = pipeline::load_run_case(cfg);
    const auto ext = net::external_area(c);
    ext.validate(true);
    const auto boundary = ext.ids_of_kind(net::BusKind::boundary);
    std::vector<BusId> keep = boundary;
    for (const auto& g : ext.generators)
        if (std::find(keep.begin(), keep.end(), g.bus) == keep.end()) keep.push_back(g.bus);
    const auto red = net::kron_reduce(net::build_ybus(ext, c.base_frequency), keep);
    {
        auto out = open_out(cfg, "ybus_reduced.csv");
        out << "row_bus,col_bus,re_siemens,im_siemens\n" << std::setprecision(12);
        for (Eigen::Index i = 0; i < red.y.rows(); ++i)
            for (Eigen::Index j = 0; j < red.y.cols(); ++j)
                out << red.buses[i] << ',' << red.buses[j] << ',' << red.y(i, j).real() << ',' << red.y(i, j).imag()
                    << '\n';
    }
    const auto freqs = cfg.sweep.frequencies();
    const auto ports = net::analytic_port_admittance(ext, boundary, freqs);
    {
        auto out = open_out(cfg, "port_admittance.csv");
        net::write_admittance_csv(out, ports);
    }
    std::cout << "external area of " << c.name << ": " << ext.buses.size() << " buses reduced to " << keep.size()
              << " (" << boundary.size() << " boundary)\n";
    std::cout << "port admittance over " << freqs.size() << " frequencies written to " << cfg.output << '\n';
    return 0;
}

int cmd_sweep(const Options& o) {
    const auto cfg = make_config(o);
    const auto c = pipeline::load_run_case(cfg);
    const auto ext = net::external_area(c);
    const auto ports = ext.ids_of_kind(net::BusKind::boundary);
    const auto records = emt::frequency_sweep(ext, ports, cfg.sweep);
    for (std::size_t p = 0; p < records.size(); ++p) {
        auto out = open_out(cfg, "sweep_" + std::to_string(ports[p]) + ".csv");
        emt::write_csv(out, records[p]);
    }
    std::cout << records.size() << " sweep records of " << (records.empty() ? 0 : records.front().size())
              << " samples written to " << cfg.output << '\n';
    return 0;
}

int cmd_identify(const Options& o) {
    const auto cfg = make_config(o);
    const auto c = pipeline::load_run_case(cfg);
    const auto ext = net::external_area(c);
    const auto ports = ext.ids_of_kind(net::BusKind::boundary);
    const auto records = emt::frequency_sweep(ext, ports, cfg.sweep);
    const auto fit = ident::fit_mimo(records, ports, cfg.fit.order, cfg.fit.options, cfg.fit.n_max);
    ident::save_model((fs::path(cfg.output) / "model.txt").string(), fit.model);
    {
        auto out = open_out(cfg, "fit.csv");
        write_fit_csv(out, fit);
    }
    std::cout << "fitted " << ports.size() << "-port model, worst relative rms " << fit.relative_rms.maxCoeff()
              << (fit.model.is_stable() ? "" : " (unstable entries present)") << '\n';
    return 0;
}

int cmd_passify(const Options& o) {
    const auto cfg = make_config(o);
    const std::string path = o.model.empty() ? (fs::path(cfg.output) / "model.txt").string() : o.model;
    if (!fs::exists(path)) throw ConfigError("model file '" + path + "' does not exist");
    ident::TFMatrix m = ident::load_model(path);
    for (auto& e : m.entries)
        if (!e.is_stable()) e = ident::enforce_stability(e);
    const auto grid = passivity::default_grid(cfg.sweep.f_start, cfg.sweep.f_end, cfg.sweep.f_step, m.ts);
    const auto before = passivity::check_passivity(passivity::sample_admittance(m, grid), cfg.passivity.tol);
    passivity::PassivityReport after = before;
    bool enforced = false;
    if (!before.passive()) {
        auto res = passivity::enforce_passivity(m, grid, cfg.passivity);
        m = std::move(res.model);
        after = res.after;
        enforced = true;
    }
    ident::save_model((fs::path(cfg.output) / "model_passive.txt").string(), m);
    {
        auto out = open_out(cfg, "passivity_before.csv");
        passivity::write_report_csv(out, before);
    }
    {
        auto out = open_out(cfg, "passivity_after.csv");
        passivity::write_report_csv(out, after);
    }
    {
        auto out = open_out(cfg, "passify.txt");
        write_passivity_text(out, before, after, enforced);
    }
    write_passivity_text(std::cout, before, after, enforced);
    return after.passive() ? 0 : 2;
}

struct Built {
    std::optional<pipeline::FdneBuild> fdne;
    std::optional<tsa::TsaEquivalent> tsa;
};

void build_for(Built& b, const net::NetworkCase& c, const net::PowerFlowResult& pf, pipeline::Variant v,
               const pipeline::RunConfig& cfg, const std::string& model_path, pipeline::Timing* timing) {
    b.tsa.reset();
    if (pipeline::uses_tsa(v)) b.tsa.emplace(pipeline::build_tsa(c, pf, pipeline::uses_aggregation(v), cfg, timing));
    if (pipeline::uses_fdne(v) && !b.fdne) {
        if (model_path.empty()) {
            b.fdne.emplace(pipeline::build_fdne(c, cfg, timing));
        } else {
            if (!fs::exists(model_path)) throw ConfigError("model file '" + model_path + "' does not exist");
            pipeline::FdneBuild f;
            f.model = ident::load_model(model_path);
            b.fdne.emplace(std::move(f));
        }
    }
}

pipeline::Equivalents equivalents(Built& b) {
    pipeline::Equivalents eq;
    eq.fdne = b.fdne ? &*b.fdne : nullptr;
    eq.tsa = b.tsa ? &*b.tsa : nullptr;
    return eq;
}

int cmd_simulate(const Options& o) {
    const auto cfg = make_config(o);
    const auto c = pipeline::load_run_case(cfg);
    const auto pf = net::solve_power_flow(c);
    Built b;
    build_for(b, c, pf, cfg.variant, cfg, o.model, nullptr);
    const auto ts = pipeline::simulate_variant(c, pf, cfg.variant, cfg.scenario, equivalents(b));
    auto out = open_out(cfg, pipeline::slug(cfg.variant) + ".csv");
    emt::write_csv(out, ts);
    std::cout << pipeline::to_string(cfg.variant) << ": " << ts.size() << " samples of " << ts.names.size()
              << " channels written to " << cfg.output << '\n';
    return 0;
}

int cmd_compare(const Options& o) {
    const bool all = o.variant.empty() || o.variant == "all";
    const auto cfg = make_config(o, !all);
    std::vector<pipeline::Variant> variants;
    if (all) variants.assign(std::begin(pipeline::kAllVariants) + 1, std::end(pipeline::kAllVariants));
    else variants.push_back(cfg.variant);

    const auto c = pipeline::load_run_case(cfg);
    const auto pf = net::solve_power_flow(c);
    const auto ref = pipeline::simulate_variant(c, pf, pipeline::Variant::emt, cfg.scenario);
    Built b;
    auto csv = open_out(cfg, "compare.csv");
    auto txt = open_out(cfg, "compare.txt");
    csv << "variant,channel,relative_error,rms_error\n" << std::setprecision(10);
    for (const auto v : variants) {
        pipeline::ComparisonReport rep;
        rep.case_name = c.name;
        rep.variant = v;
        rep.scenario = cfg.scenario;
        rep.seed = cfg.seed;
        build_for(b, c, pf, v, cfg, o.model, &rep.timing);
        const auto act = v == pipeline::Variant::emt ? ref : pipeline::simulate_variant(c, pf, v, cfg.scenario, equivalents(b));
        rep.errors = pipeline::compare_runs(ref, act, cfg.scenario);
        for (const auto& e : rep.errors)
            csv << pipeline::to_string(v) << ',' << e.channel << ',' << e.relative << ',' << e.rms << '\n';
        pipeline::write_report_text(txt, rep);
        txt << '\n';
        std::cout << std::left << std::setw(20) << pipeline::to_string(v) << "p_b relative error "
                  << rep.error("p_b").relative << '\n';
    }
    return 0;
}

int cmd_pipeline(const Options& o) {
    const auto cfg = make_config(o);
    const auto rep = pipeline::run_pipeline(cfg);
    pipeline::write_report_text(std::cout, rep);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Network equivalents: reduction, identification, passivity and co-simulation"};
    app.require_subcommand(1);
    Options o;
    using Handler = int (*)(const Options&);
    const std::pair<const char*, const char*> verbs[] = {
        {"reduce", "Kron-reduce the external area and tabulate its port admittance"},
        {"sweep", "EMT frequency sweep of the external area ports"},
        {"identify", "sweep and fit the z-domain admittance model"},
        {"passify", "check and enforce passivity of a model (--model, default <out>/model.txt)"},
        {"simulate", "time-domain run of one variant"},
        {"compare", "error metrics of one or all variants against EMT"},
        {"pipeline", "full run of the configured variant with artifacts and reports"},
    };
    const Handler handlers[] = {cmd_reduce, cmd_sweep, cmd_identify, cmd_passify, cmd_simulate, cmd_compare, cmd_pipeline};
    std::vector<CLI::App*> cmds;
    for (const auto& [name, help] : verbs) {
        auto* cmd = app.add_subcommand(name, help);
        add_common(cmd, o);
        cmds.push_back(cmd);
    }
    for (auto* cmd : {cmds[3], cmds[4], cmds[5]}) cmd->add_option("--model", o.model, "model file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    try {
        for (std::size_t k = 0; k < cmds.size(); ++k)
            if (cmds[k]->parsed()) return handlers[k](o);
    } catch (const Error& e) {
        std::cerr << "[" << e.stage() << "] " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "[cli] " << e.what() << '\n';
        return 1;
    }
    return 1;
}
