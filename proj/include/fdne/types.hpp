#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

namespace fdne {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;

// Bus identifiers are positive integers; 0 denotes ground.
using BusId = int;
inline constexpr BusId kGround = 0;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Wraps an angle into (-pi, pi].
[[nodiscard]] inline double wrap_angle(double a) {
    constexpr double pi = std::numbers::pi;
    a = std::remainder(a, 2.0 * pi);
    if (a <= -pi) a += 2.0 * pi;
    return a;
}

// Complex m x m admittance matrices over a frequency grid.
// When `ts` > 0 the samples come from a z-domain model evaluated at
// z = exp(j 2 pi f ts); `ts` == 0 marks continuous-domain (analytic) samples.
struct AdmittanceSampleSet {
    std::vector<double> f_grid;
    std::vector<ComplexMatrix> y;
    double ts = 0.0;

    [[nodiscard]] std::size_t size() const { return f_grid.size(); }
    [[nodiscard]] Eigen::Index ports() const { return y.empty() ? 0 : y.front().rows(); }
};

}  // namespace fdne
