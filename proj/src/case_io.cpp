#include "fdne/case_io.hpp"

#include "fdne/errors.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace fdne::net {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    for (std::string tok; is >> tok;) out.push_back(tok);
    return out;
}

double to_double(const std::string& tok, const std::string& where) {
    try {
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw CaseError(where + ": expected a number, got '" + tok + "'");
    }
}

int to_int(const std::string& tok, const std::string& where) {
    const double v = to_double(tok, where);
    if (v != static_cast<int>(v)) throw CaseError(where + ": expected an integer, got '" + tok + "'");
    return static_cast<int>(v);
}

BusKind parse_bus_kind(const std::string& s, const std::string& where) {
    if (s == "internal") return BusKind::internal;
    if (s == "boundary") return BusKind::boundary;
    if (s == "generator") return BusKind::generator;
    throw CaseError(where + ": unknown bus kind '" + s + "'");
}

Area parse_area(const std::string& s, const std::string& where) {
    if (s == "study") return Area::study;
    if (s == "external") return Area::external;
    throw CaseError(where + ": unknown area '" + s + "'");
}

BranchModel parse_model(const std::string& s, const std::string& where) {
    if (s == "series-rl") return BranchModel::series_rl;
    if (s == "pi-line") return BranchModel::pi_line;
    if (s == "shunt-rc") return BranchModel::shunt_rc;
    throw CaseError(where + ": unknown branch model '" + s + "'");
}

PfBusType parse_pf_type(const std::string& s, const std::string& where) {
    if (s == "slack") return PfBusType::slack;
    if (s == "pv") return PfBusType::pv;
    if (s == "pq") return PfBusType::pq;
    throw CaseError(where + ": unknown power-flow bus type '" + s + "'");
}

void expect_columns(const std::vector<std::string>& tok, std::size_t n, const std::string& where) {
    if (tok.size() != n)
        throw CaseError(where + ": expected " + std::to_string(n) + " columns, got " +
                        std::to_string(tok.size()));
}

}  // namespace

NetworkCase parse_case(std::istream& in, const std::string& origin) {
    NetworkCase c;
    bool xb_units = false;
    std::string section;
    struct PendingBranch {
        Branch b;
        double col_l, col_c;
    };
    std::vector<PendingBranch> pending;

    std::string raw;
    for (int line_no = 1; std::getline(in, raw); ++line_no) {
        const std::string where = origin + ":" + std::to_string(line_no);
        const std::string line = trim(raw.substr(0, raw.find('#')));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw CaseError(where + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        if (section == "case") {
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw CaseError(where + ": expected key = value");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key == "name") {
                c.name = value;
            } else if (key == "base_frequency") {
                c.base_frequency = to_double(value, where);
            } else if (key == "units") {
                if (value != "rlc" && value != "xb") throw CaseError(where + ": units must be rlc or xb");
                xb_units = value == "xb";
            } else {
                throw CaseError(where + ": unknown key '" + key + "'");
            }
            continue;
        }
        const auto tok = split_ws(line);
        if (section == "buses") {
            expect_columns(tok, 3, where);
            c.buses.push_back({to_int(tok[0], where), parse_bus_kind(tok[1], where), parse_area(tok[2], where)});
        } else if (section == "branches") {
            expect_columns(tok, 6, where);
            PendingBranch pb;
            pb.b.from = to_int(tok[0], where);
            pb.b.to = to_int(tok[1], where);
            pb.b.model = parse_model(tok[2], where);
            pb.b.r = to_double(tok[3], where);
            pb.col_l = to_double(tok[4], where);
            pb.col_c = to_double(tok[5], where);
            pending.push_back(pb);
        } else if (section == "sources") {
            expect_columns(tok, 5, where);
            Source s;
            s.bus = to_int(tok[0], where);
            if (tok[1] == "voltage") s.kind = SourceKind::voltage;
            else if (tok[1] == "current") s.kind = SourceKind::current;
            else throw CaseError(where + ": unknown source kind '" + tok[1] + "'");
            s.magnitude = to_double(tok[2], where);
            s.phase = to_double(tok[3], where) * std::numbers::pi / 180.0;
            s.frequency = to_double(tok[4], where);
            c.sources.push_back(s);
        } else if (section == "generators") {
            expect_columns(tok, 6, where);
            Generator g;
            g.id = to_int(tok[0], where);
            g.bus = to_int(tok[1], where);
            g.h = to_double(tok[2], where);
            g.d = to_double(tok[3], where);
            g.xd_prime = to_double(tok[4], where);
            g.ra = to_double(tok[5], where);
            c.generators.push_back(g);
        } else if (section == "powerflow") {
            expect_columns(tok, 6, where);
            PowerFlowBus p;
            p.bus = to_int(tok[0], where);
            p.type = parse_pf_type(tok[1], where);
            p.p = to_double(tok[2], where);
            p.q = to_double(tok[3], where);
            p.v = to_double(tok[4], where);
            p.angle = to_double(tok[5], where) * std::numbers::pi / 180.0;
            c.powerflow.push_back(p);
        } else {
            throw CaseError(where + ": data outside a known section");
        }
    }

    const double w0 = kTwoPi * c.base_frequency;
    for (auto& pb : pending) {
        if (xb_units) {
            pb.b.l = pb.col_l / w0;
            pb.b.c = pb.col_c / w0;
        } else {
            pb.b.l = pb.col_l;
            pb.b.c = pb.col_c;
        }
        c.branches.push_back(pb.b);
    }
    c.validate();
    return c;
}

NetworkCase load_case(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open case file '" + path + "'");
    return parse_case(in, path);
}

void write_admittance_csv(std::ostream& out, const AdmittanceSampleSet& s) {
    out << "f_hz,row,col,re_siemens,im_siemens\n";
    out << std::setprecision(17);
    for (std::size_t k = 0; k < s.size(); ++k) {
        const auto& y = s.y[k];
        for (Eigen::Index r = 0; r < y.rows(); ++r)
            for (Eigen::Index c = 0; c < y.cols(); ++c)
                out << s.f_grid[k] << ',' << r << ',' << c << ',' << y(r, c).real() << ','
                    << y(r, c).imag() << '\n';
    }
}

AdmittanceSampleSet read_admittance_csv(std::istream& in) {
    AdmittanceSampleSet s;
    std::string line;
    if (!std::getline(in, line)) return s;
    struct Row {
        double f;
        int r, c;
        Complex v;
    };
    std::vector<Row> rows;
    int m = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        const auto tok = split_ws(line);
        expect_columns(tok, 5, "admittance csv");
        Row row{to_double(tok[0], "csv"), to_int(tok[1], "csv"), to_int(tok[2], "csv"),
                Complex(to_double(tok[3], "csv"), to_double(tok[4], "csv"))};
        m = std::max({m, row.r + 1, row.c + 1});
        rows.push_back(row);
    }
    for (const auto& row : rows) {
        if (s.f_grid.empty() || s.f_grid.back() != row.f) {
            s.f_grid.push_back(row.f);
            s.y.push_back(ComplexMatrix::Zero(m, m));
        }
        s.y.back()(row.r, row.c) = row.v;
    }
    return s;
}

}  // namespace fdne::net
