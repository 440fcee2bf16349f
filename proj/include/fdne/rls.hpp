#pragma once

#include "fdne/types.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace fdne::emt {
struct TimeSeries;
}

namespace fdne::ident {

// Y(z) = (b_0 + b_1 z^-1 + ... + b_n z^-n) / (1 + a_1 z^-1 + ... + a_n z^-n).
// `a` holds a_1..a_n and `b` holds b_0..b_n; a strictly proper model has b_0 = 0.
struct RationalTFz {
    Eigen::VectorXd a;
    Eigen::VectorXd b = Eigen::VectorXd::Zero(1);
    double ts = 0.0;

    [[nodiscard]] int order() const { return static_cast<int>(a.size()); }
    [[nodiscard]] static RationalTFz constant(double g, double ts);
    [[nodiscard]] Complex denominator(Complex zinv) const;
    [[nodiscard]] Complex numerator(Complex zinv) const;
    [[nodiscard]] Complex at_frequency(double f_hz) const;
    [[nodiscard]] Eigen::VectorXcd poles() const;
    [[nodiscard]] bool is_stable() const;
    void validate() const;
};

// covariance: gain/covariance/estimate recursion on P directly.
// square_root: the same estimator carried as an upper-triangular information
// factor R (R^T R = P^-1) and rotated output z, updated by Givens rotations;
// Theta solves R Theta = z. The factor is carried in extended precision.
enum class RlsForm { covariance, square_root };

using MatrixXld = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
using VectorXld = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

// Theta is ordered (a_1..a_n, b_0, b_1..b_n), b_0 present only with
// feedthrough. Past samples are kept newest first.
struct RlsState {
    int n = 0;
    bool feedthrough = true;
    double gamma = 1.0;
    long k = 0;
    RlsForm form = RlsForm::covariance;
    Eigen::VectorXd theta;
    Eigen::MatrixXd p;  // covariance form
    MatrixXld r;  // square-root form
    VectorXld z;  // square-root form
    Eigen::VectorXd u_past, y_past;

    [[nodiscard]] static RlsState init(int n, bool feedthrough = true, double gamma = 1.0, double delta = 1e6,
                                       RlsForm form = RlsForm::covariance);
    [[nodiscard]] Eigen::Index parameters() const { return theta.size(); }
    [[nodiscard]] Eigen::VectorXd regressor(double u_k) const;
    // Current estimate; in square-root form this solves for Theta and caches it.
    const Eigen::VectorXd& estimate();
    [[nodiscard]] Eigen::MatrixXd covariance() const;
    [[nodiscard]] RationalTFz model(double ts);
};

// One recursion step; with `update` false only the sample buffers advance.
void rls_step(RlsState& s, double u_k, double y_k, bool update = true);

// Regression rows for samples k >= n (and, with a mask, valid samples only).
struct Regression {
    Eigen::MatrixXd x;
    Eigen::VectorXd phi;
};
[[nodiscard]] Regression build_regression(std::span<const double> u, std::span<const double> y, int n,
                                          bool feedthrough = true, std::span<const double> valid = {});

// Least-squares Theta = (X^T X)^-1 X^T Phi through QR; throws
// IllConditionedError when cond(X) exceeds `max_condition`.
[[nodiscard]] Eigen::VectorXd batch_ls(const Eigen::MatrixXd& x, const Eigen::VectorXd& phi,
                                       double max_condition = 1e12);

struct FitOptions {
    double gamma = 1.0;
    double delta = 1e30;
    RlsForm form = RlsForm::square_root;
    bool feedthrough = true;
    bool normalize = true;  // scale u and y to unit RMS before the recursion
};

struct EntryFit {
    RationalTFz tf;
    double rms = 0.0;           // one-step prediction residual, current units
    double relative_rms = 0.0;  // rms / RMS of the current
};

// RLS over the record with u = voltage, y = current. `valid` (optional, same
// length) masks samples out of the update and out of the residual.
[[nodiscard]] EntryFit fit_entry(std::span<const double> v, std::span<const double> i, double ts, int n,
                                 const FitOptions& opt = {}, std::span<const double> valid = {});

// Scans n = 2, 4, ..., n_max, stopping when the relative residual falls below
// 1e-5 or improves by less than 10 %.
[[nodiscard]] EntryFit select_order(std::span<const double> v, std::span<const double> i, double ts,
                                    int n_max = 24, const FitOptions& opt = {},
                                    std::span<const double> valid = {});

// Square grid of nodal admittance entries; entry (q, p) maps a voltage at
// port p to the current into the network at port q.
struct TFMatrix {
    std::vector<BusId> ports;
    std::vector<RationalTFz> entries;  // row-major
    double ts = 0.0;

    [[nodiscard]] Eigen::Index size() const { return static_cast<Eigen::Index>(ports.size()); }
    [[nodiscard]] RationalTFz& at(Eigen::Index q, Eigen::Index p) { return entries[static_cast<std::size_t>(q * size() + p)]; }
    [[nodiscard]] const RationalTFz& at(Eigen::Index q, Eigen::Index p) const {
        return entries[static_cast<std::size_t>(q * size() + p)];
    }
    [[nodiscard]] ComplexMatrix at_frequency(double f_hz) const;
    [[nodiscard]] int max_order() const;
    [[nodiscard]] bool is_stable() const;
    void validate() const;
};

struct MimoFit {
    TFMatrix model;
    Eigen::MatrixXd rms;
    Eigen::MatrixXd relative_rms;
};

// `records[p]` is the sweep record exciting ports[p] (channels "v", "i<bus>"
// and optionally "valid"). n <= 0 selects each entry's order automatically.
[[nodiscard]] MimoFit fit_mimo(std::span<const emt::TimeSeries> records, std::span<const BusId> ports, int n,
                               const FitOptions& opt = {}, int n_max = 24);

// Reflects poles with |p| >= 1 to 1/conj(p) and rescales the numerator by the
// magnitude least-squares factor over `f_grid` (dense default when empty).
[[nodiscard]] RationalTFz enforce_stability(const RationalTFz& tf, std::span<const double> f_grid = {});

[[nodiscard]] Eigen::VectorXd poly_from_roots(const Eigen::VectorXcd& roots);

void write_model(std::ostream& out, const TFMatrix& m);
[[nodiscard]] TFMatrix read_model(std::istream& in);
void save_model(const std::string& path, const TFMatrix& m);
[[nodiscard]] TFMatrix load_model(const std::string& path);

}  // namespace fdne::ident
