#include "fdne/coherency.hpp"

#include "fdne/errors.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace fdne::coherency {

void ParticipationMatrix::validate_range() const {
    if (p.rows() < 1 || p.cols() < 1) throw DomainError("participation matrix is empty");
    if (static_cast<Eigen::Index>(machine_ids.size()) != p.rows())
        throw DomainError("machine id count does not match participation rows");
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        for (Eigen::Index k = 0; k < p.cols(); ++k)
            if (!(p(i, k) >= 0.0 && p(i, k) <= 1.0))
                throw DomainError("participation factor out of [0,1] at machine " +
                                  std::to_string(machine_ids[static_cast<std::size_t>(i)]));
}

void ParticipationMatrix::validate() const {
    validate_range();
    for (Eigen::Index k = 0; k < p.cols(); ++k)
        if (std::abs(p.col(k).maxCoeff() - 1.0) > 1e-12)
            throw DomainError("mode column " + std::to_string(k) + " is not normalized to max 1");
}

int CoherentGrouping::group_of(int machine_id) const {
    for (std::size_t g = 0; g < groups.size(); ++g)
        if (std::find(groups[g].begin(), groups[g].end(), machine_id) != groups[g].end())
            return static_cast<int>(g);
    return -1;
}

std::vector<double> localness_index(const ParticipationMatrix& pm) {
    pm.validate_range();
    const auto n = static_cast<double>(pm.p.rows());
    std::vector<double> out(static_cast<std::size_t>(pm.p.rows()), 0.0);
    for (Eigen::Index g = 0; g < pm.p.rows(); ++g)
        for (Eigen::Index mode = 0; mode < pm.p.cols(); ++mode)
            out[static_cast<std::size_t>(g)] += std::pow(1.0 - pm.p(g, mode), n);
    return out;
}

CoherentGrouping group_by_participation(const ParticipationMatrix& pm, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw DomainError("grouping threshold must lie in (0,1)");
    pm.validate();
    CoherentGrouping out;
    out.localness = localness_index(pm);
    out.machine_ids = pm.machine_ids;

    // Signature = sorted labels of strongly participating modes, so that a
    // column permutation of P leaves the grouping unchanged.
    std::map<std::vector<std::string>, std::vector<int>> by_signature;
    for (Eigen::Index g = 0; g < pm.p.rows(); ++g) {
        std::vector<std::string> sig;
        for (Eigen::Index mode = 0; mode < pm.p.cols(); ++mode) {
            if (pm.p(g, mode) < tau) continue;
            sig.push_back(static_cast<std::size_t>(mode) < pm.mode_labels.size()
                              ? pm.mode_labels[static_cast<std::size_t>(mode)]
                              : std::to_string(mode));
        }
        std::sort(sig.begin(), sig.end());
        by_signature[sig].push_back(pm.machine_ids[static_cast<std::size_t>(g)]);
    }
    for (auto& [sig, members] : by_signature) {
        std::sort(members.begin(), members.end());
        out.groups.push_back(members);
    }
    std::sort(out.groups.begin(), out.groups.end(),
              [](const auto& a, const auto& b) { return a.front() < b.front(); });
    return out;
}

ParticipationMatrix read_participation_csv(std::istream& in) {
    const auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) {
            const auto b = cell.find_first_not_of(" \t\r");
            const auto e = cell.find_last_not_of(" \t\r");
            cells.push_back(b == std::string::npos ? std::string{} : cell.substr(b, e - b + 1));
        }
        return cells;
    };
    ParticipationMatrix pm;
    std::string line;
    if (!std::getline(in, line)) throw DomainError("participation csv is empty");
    auto header = split(line);
    if (header.size() < 2) throw DomainError("participation csv needs at least one mode column");
    pm.mode_labels.assign(header.begin() + 1, header.end());

    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto cells = split(line);
        if (cells.size() != header.size()) throw DomainError("participation csv row has wrong width");
        try {
            pm.machine_ids.push_back(std::stoi(cells[0]));
            std::vector<double> r;
            for (std::size_t k = 1; k < cells.size(); ++k) r.push_back(std::stod(cells[k]));
            rows.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw DomainError("participation csv has a non-numeric cell: " + line);
        }
    }
    pm.p.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(pm.mode_labels.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t k = 0; k < rows[i].size(); ++k)
            pm.p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    pm.validate();
    return pm;
}

void write_grouping_csv(std::ostream& out, const CoherentGrouping& g) {
    out << "generator,group,localness\n";
    out.precision(17);
    for (std::size_t i = 0; i < g.machine_ids.size(); ++i)
        out << g.machine_ids[i] << ',' << g.group_of(g.machine_ids[i]) + 1 << ',' << g.localness[i] << '\n';
}

}  // namespace fdne::coherency
