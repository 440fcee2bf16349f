#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <string>
#include <vector>

namespace fdne::coherency {

// Normalized participation factors: rows are machines, columns are modes.
struct ParticipationMatrix {
    std::vector<int> machine_ids;
    std::vector<std::string> mode_labels;
    Eigen::MatrixXd p;

    // Throws DomainError when an entry leaves [0, 1] or a column maximum is not 1.
    void validate() const;
    void validate_range() const;  // entries only
};

struct CoherentGrouping {
    std::vector<std::vector<int>> groups;  // each sorted; ordered by smallest member
    std::vector<double> localness;         // aligned with ParticipationMatrix::machine_ids
    std::vector<int> machine_ids;
    int external_group = -1;               // index into groups, -1 until chosen

    [[nodiscard]] int group_of(int machine_id) const;
};

// L_g = sum over modes of (1 - P_{g,mode})^n with n the machine count.
// Only the entry range is checked.
[[nodiscard]] std::vector<double> localness_index(const ParticipationMatrix& pm);

// Machines whose strong-mode sets {mode : P >= tau} coincide share a group.
[[nodiscard]] CoherentGrouping group_by_participation(const ParticipationMatrix& pm,
                                                      double tau = 0.1);

// CSV: header "machine,<mode>,<mode>,...", one row per machine.
[[nodiscard]] ParticipationMatrix read_participation_csv(std::istream& in);
void write_grouping_csv(std::ostream& out, const CoherentGrouping& g);

}  // namespace fdne::coherency
