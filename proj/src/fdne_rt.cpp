#include "fdne/fdne_rt.hpp"

#include "fdne/errors.hpp"

#include <cmath>

namespace fdne::rt {

PhasorValue PhasorValue::from_complex(Complex z, double f_hz) {
    PhasorValue p;
    p.magnitude = std::abs(z);
    p.angle = p.magnitude > 0.0 ? wrap_angle(std::arg(z)) : 0.0;
    p.frequency = f_hz;
    return p;
}

void PhasorValue::validate() const {
    if (!(magnitude >= 0.0) || !std::isfinite(magnitude)) throw InterfaceError("phasor magnitude must be finite and >= 0");
    if (!(angle > -std::numbers::pi && angle <= std::numbers::pi)) throw InterfaceError("phasor angle outside (-pi, pi]");
}

FdneRuntime::FdneRuntime(ident::TFMatrix model) : model_(std::move(model)) {
    model_.validate();
    const Eigen::Index m = ports();
    depth_ = std::max(model_.max_order(), 1);
    g0_.resize(m, m);
    for (Eigen::Index q = 0; q < m; ++q)
        for (Eigen::Index p = 0; p < m; ++p) g0_(q, p) = model_.at(q, p).b(0);
    reset();
}

void FdneRuntime::reset() {
    const auto m = static_cast<std::size_t>(ports());
    const auto d = static_cast<std::size_t>(depth_);
    v_hist_.assign(m, std::vector<long double>(d, 0.0L));
    y_hist_.assign(m * m, std::vector<long double>(d, 0.0L));
    head_ = 0;
    k_ = 0;
}

std::size_t FdneRuntime::slot(int j) const {
    const auto d = static_cast<std::size_t>(depth_);
    return (head_ + d - static_cast<std::size_t>(j - 1)) % d;
}

long double FdneRuntime::entry_history(Eigen::Index q, Eigen::Index p) const {
    const auto& tf = model_.at(q, p);
    const auto& vh = v_hist_[static_cast<std::size_t>(p)];
    const auto& yh = y_hist_[static_cast<std::size_t>(q * ports() + p)];
    long double acc = 0.0L;
    for (int j = 1; j <= tf.order(); ++j) {
        const std::size_t s = slot(j);
        acc += static_cast<long double>(tf.b(j)) * vh[s] - static_cast<long double>(tf.a(j - 1)) * yh[s];
    }
    return acc;
}

Eigen::VectorXd FdneRuntime::history() const {
    const Eigen::Index m = ports();
    Eigen::VectorXd h = Eigen::VectorXd::Zero(m);
    for (Eigen::Index q = 0; q < m; ++q) {
        long double acc = 0.0L;
        for (Eigen::Index p = 0; p < m; ++p) acc += entry_history(q, p);
        h(q) = static_cast<double>(acc);
    }
    return h;
}

Eigen::VectorXd FdneRuntime::commit(const Eigen::VectorXd& v) {
    const Eigen::Index m = ports();
    if (v.size() != m) throw RuntimeDivergenceError("port voltage vector has the wrong size");
    std::vector<long double> y(static_cast<std::size_t>(m * m));
    Eigen::VectorXd i = Eigen::VectorXd::Zero(m);
    for (Eigen::Index q = 0; q < m; ++q) {
        long double acc = 0.0L;
        for (Eigen::Index p = 0; p < m; ++p) {
            const long double yqp = static_cast<long double>(g0_(q, p)) * v(p) + entry_history(q, p);
            y[static_cast<std::size_t>(q * m + p)] = yqp;
            acc += yqp;
        }
        i(q) = static_cast<double>(acc);
    }
    if (!i.allFinite())
        throw RuntimeDivergenceError("non-finite port current at step " + std::to_string(k_));
    head_ = (head_ + 1) % static_cast<std::size_t>(depth_);
    for (Eigen::Index p = 0; p < m; ++p) v_hist_[static_cast<std::size_t>(p)][head_] = v(p);
    for (std::size_t e = 0; e < y.size(); ++e) y_hist_[e][head_] = y[e];
    ++k_;
    return i;
}

Eigen::VectorXd FdneRuntime::step(const Eigen::VectorXd& v) { return commit(v); }

void FdneRuntime::init_steady_state(const ComplexVector& v, double f_hz, double t_next) {
    const Eigen::Index m = ports();
    if (v.size() != m) throw RuntimeDivergenceError("phasor vector has the wrong size");
    reset();
    const double ts = model_.ts;
    const double w = kTwoPi * f_hz;
    const ComplexMatrix y = model_.at_frequency(f_hz);
    for (int j = 1; j <= depth_; ++j) {
        const std::size_t s = slot(j);
        const Complex rot = std::polar(1.0, w * (t_next - j * ts));
        for (Eigen::Index p = 0; p < m; ++p) {
            v_hist_[static_cast<std::size_t>(p)][s] = (v(p) * rot).real();
            for (Eigen::Index q = 0; q < m; ++q)
                y_hist_[static_cast<std::size_t>(q * m + p)][s] = (y(q, p) * v(p) * rot).real();
        }
    }
}

Compensation fundamental_compensation(std::span<const Complex> s_b, std::span<const PhasorValue> v_b,
                                      const ComplexMatrix& y_c60) {
    const auto m = static_cast<Eigen::Index>(v_b.size());
    if (static_cast<Eigen::Index>(s_b.size()) != m || y_c60.rows() != m || y_c60.cols() != m)
        throw CompensationError("compensation inputs disagree in port count");
    ComplexVector v(m);
    Compensation c;
    c.i_b.resize(m);
    for (Eigen::Index p = 0; p < m; ++p) {
        const auto& ph = v_b[static_cast<std::size_t>(p)];
        if (!(ph.magnitude > 0.0)) throw CompensationError("boundary voltage magnitude is zero at port " + std::to_string(p));
        v(p) = ph.complex();
        c.i_b(p) = std::conj(s_b[static_cast<std::size_t>(p)] / v(p));
    }
    c.i_inj = c.i_b - y_c60 * v;
    return c;
}

}  // namespace fdne::rt
