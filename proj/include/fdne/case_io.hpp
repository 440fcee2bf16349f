#pragma once

#include "fdne/netmodel.hpp"

#include <iosfwd>
#include <string>

namespace fdne::net {

// Case file format (line oriented, '#' starts a comment):
//
//   [case]                      key = value pairs
//   name = two_area
//   base_frequency = 60
//   units = rlc | xb            rlc: columns are R (ohm), L (H), C (F)
//                               xb:  columns are R, X, B at base frequency
//   [buses]        id kind area             kind: internal|boundary|generator
//                                           area: study|external
//   [branches]     from to model R L C      model: series-rl|pi-line|shunt-rc
//                                           to = 0 is ground; pi-line C is the
//                                           total charging, split per end
//   [sources]      bus kind magnitude phase_deg frequency_hz
//   [generators]   id bus H D xd_prime ra
//   [powerflow]    bus type P Q V angle_deg type: slack|pv|pq
[[nodiscard]] NetworkCase parse_case(std::istream& in, const std::string& origin = "<stream>");
[[nodiscard]] NetworkCase load_case(const std::string& path);

// CSV with columns f_hz,row,col,re_siemens,im_siemens.
void write_admittance_csv(std::ostream& out, const AdmittanceSampleSet& s);
[[nodiscard]] AdmittanceSampleSet read_admittance_csv(std::istream& in);

}  // namespace fdne::net
