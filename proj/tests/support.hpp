#pragma once

#include "fdne/netmodel.hpp"
#include "fdne/rls.hpp"

#include <random>
#include <string>
#include <vector>

namespace testing_support {

using fdne::BusId;
using fdne::Complex;
using fdne::ComplexMatrix;

constexpr double kTs = 50e-6;

inline std::string fixture(const std::string& name) { return std::string(FDNE_FIXTURE_DIR) + "/" + name; }

struct Rng {
    std::mt19937_64 gen;
    explicit Rng(unsigned long seed) : gen(seed) {}

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen); }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen); }
    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen); }
    bool coin(double p = 0.5) { return uniform(0.0, 1.0) < p; }
    double log_uniform(double lo, double hi) { return std::exp(uniform(std::log(lo), std::log(hi))); }
};

// Connected RLC network on buses 1..n (SI values around unit impedance at
// 60 Hz): a random spanning tree, a few extra links and a lossy shunt on
// every bus so the nodal matrix is never singular.
inline fdne::net::NetworkCase random_rlc(Rng& r, int n) {
    using namespace fdne::net;
    NetworkCase c;
    c.name = "random";
    for (int i = 1; i <= n; ++i) c.buses.push_back({i, BusKind::internal, Area::external});
    const double w = 2.0 * std::numbers::pi * 60.0;
    auto series = [&](BusId a, BusId b) {
        Branch br;
        br.from = a;
        br.to = b;
        br.model = r.coin() ? BranchModel::pi_line : BranchModel::series_rl;
        br.r = r.log_uniform(0.01, 1.0);
        br.l = r.log_uniform(0.1, 10.0) / w;
        if (br.model == BranchModel::pi_line) br.c = r.log_uniform(0.01, 1.0) / w;
        return br;
    };
    for (int i = 2; i <= n; ++i) c.branches.push_back(series(r.integer(1, i - 1), i));
    const int extra = r.integer(0, n);
    for (int k = 0; k < extra; ++k) {
        const int a = r.integer(1, n), b = r.integer(1, n);
        if (a != b) c.branches.push_back(series(a, b));
    }
    for (int i = 1; i <= n; ++i) {
        Branch sh;
        sh.from = i;
        sh.to = fdne::kGround;
        sh.model = BranchModel::shunt_rc;
        sh.r = r.log_uniform(1.0, 100.0);
        sh.c = r.coin() ? r.log_uniform(0.01, 1.0) / w : 0.0;
        c.branches.push_back(sh);
    }
    return c;
}

// Hand-stamped nodal matrix, written independently of build_ybus.
inline ComplexMatrix stamp_oracle(const fdne::net::NetworkCase& c, double f) {
    using namespace fdne::net;
    const auto ids = c.sorted_bus_ids();
    auto idx = [&](BusId b) {
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (ids[i] == b) return static_cast<int>(i);
        return -1;
    };
    const double w = 2.0 * std::numbers::pi * f;
    const auto n = static_cast<Eigen::Index>(ids.size());
    ComplexMatrix y = ComplexMatrix::Zero(n, n);
    for (const auto& br : c.branches) {
        const int a = idx(br.from), b = br.to == fdne::kGround ? -1 : idx(br.to);
        if (br.model == BranchModel::shunt_rc) {
            Complex ys(0.0, w * br.c);
            if (br.r > 0.0) ys += 1.0 / br.r;
            y(a, a) += ys;
            continue;
        }
        const Complex ys = 1.0 / Complex(br.r, w * br.l);
        const Complex yc = br.model == BranchModel::pi_line ? Complex(0.0, w * br.c / 2.0) : Complex(0.0, 0.0);
        y(a, a) += ys + yc;
        if (b >= 0) {
            y(b, b) += ys + yc;
            y(a, b) -= ys;
            y(b, a) -= ys;
        }
    }
    return y;
}

// Stable rational model of order n with random real/complex-pair poles of
// radius <= rmax.
inline fdne::ident::RationalTFz random_stable_tf(Rng& r, int n, double ts, double rmax = 0.9,
                                                 bool feedthrough = true) {
    Eigen::VectorXcd p(n);
    int k = 0;
    while (k < n) {
        const double rad = r.uniform(0.1, rmax);
        if (n - k >= 2 && r.coin()) {
            const double th = r.uniform(0.2, 2.9);
            p(k++) = std::polar(rad, th);
            p(k++) = std::polar(rad, -th);
        } else {
            p(k++) = r.coin() ? rad : -rad;
        }
    }
    fdne::ident::RationalTFz tf;
    tf.ts = ts;
    tf.a = fdne::ident::poly_from_roots(p);
    tf.b = Eigen::VectorXd(n + 1);
    for (int j = 0; j <= n; ++j) tf.b(j) = r.uniform(-1.0, 1.0);
    if (!feedthrough) tf.b(0) = 0.0;
    return tf;
}

// Direct-form difference equation, independent of the runtime.
inline std::vector<double> filter(const fdne::ident::RationalTFz& tf, const std::vector<double>& u) {
    std::vector<double> y(u.size(), 0.0);
    const int n = tf.order();
    for (std::size_t k = 0; k < u.size(); ++k) {
        double acc = 0.0;
        for (int j = 0; j <= n; ++j)
            if (k >= static_cast<std::size_t>(j)) acc += tf.b(j) * u[k - j];
        for (int j = 1; j <= n; ++j)
            if (k >= static_cast<std::size_t>(j)) acc -= tf.a(j - 1) * y[k - j];
        y[k] = acc;
    }
    return y;
}

inline std::vector<double> white(Rng& r, std::size_t n) {
    std::vector<double> u(n);
    for (auto& x : u) x = r.normal();
    return u;
}

inline fdne::ident::RationalTFz make_tf(std::vector<double> b, std::vector<double> a) {
    fdne::ident::RationalTFz tf;
    tf.ts = kTs;
    tf.b = Eigen::Map<Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
    tf.a = Eigen::Map<Eigen::VectorXd>(a.data(), static_cast<Eigen::Index>(a.size()));
    return tf;
}

inline fdne::ident::TFMatrix one_port(const fdne::ident::RationalTFz& tf) {
    fdne::ident::TFMatrix m;
    m.ports = {1};
    m.ts = tf.ts;
    m.entries = {tf};
    return m;
}

inline Eigen::VectorXd conv(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(x.size() + y.size() - 1);
    for (Eigen::Index i = 0; i < x.size(); ++i) out.segment(i, y.size()) += x(i) * y;
    return out;
}

inline Eigen::VectorXd monic(const Eigen::VectorXd& a) {
    Eigen::VectorXd out(a.size() + 1);
    out << 1.0, a;
    return out;
}

// x + y as one rational function over the product of the denominators.
inline fdne::ident::RationalTFz add(const fdne::ident::RationalTFz& x, const fdne::ident::RationalTFz& y) {
    const Eigen::VectorXd ax = monic(x.a), ay = monic(y.a);
    fdne::ident::RationalTFz out;
    out.ts = x.ts;
    out.b = conv(x.b, ay) + conv(y.b, ax);
    out.a = conv(ax, ay).tail(x.order() + y.order());
    return out;
}

// Trapezoidal series RL branch, exact in discrete time.
inline fdne::ident::RationalTFz series_rl_tf(double r, double l) {
    const double k = 2.0 * l / kTs;
    const double d0 = r + k, d1 = r - k;
    return make_tf({1.0 / d0, 1.0 / d0}, {d1 / d0});
}

// Resonator whose real part peaks at `gain` near f0: gain (1 - rho)(1 - z^-2) / (1 - 2 rho cos th z^-1 + rho^2 z^-2).
inline fdne::ident::RationalTFz resonator(double gain, double f0, double rho) {
    const double th = fdne::kTwoPi * f0 * kTs;
    const double g = gain * (1.0 - rho);
    return make_tf({g, 0.0, -g}, {-2.0 * rho * std::cos(th), rho * rho});
}

// Passive RL with a slightly negative conductance band around 500 Hz.
inline fdne::ident::RationalTFz violator() {
    const auto base = series_rl_tf(1.0, 1e-3);
    const double g500 = base.at_frequency(500.0).real();
    return add(base, resonator(-1.05 * g500, 500.0, 0.99));
}

inline double rel_diff(const ComplexMatrix& a, const ComplexMatrix& b) {
    const double nb = b.norm();
    return nb > 0.0 ? (a - b).norm() / nb : (a - b).norm();
}

}  // namespace testing_support
