#pragma once

#include "fdne/rls.hpp"
#include "fdne/types.hpp"

#include <span>
#include <vector>

namespace fdne::rt {

struct PhasorValue {
    double magnitude = 0.0;
    double angle = 0.0;  // rad, (-pi, pi]
    double frequency = 60.0;

    [[nodiscard]] static PhasorValue from_complex(Complex z, double f_hz);
    [[nodiscard]] Complex complex() const { return std::polar(magnitude, angle); }
    void validate() const;
};

// Runs a TFMatrix as coupled difference equations. Port current into the
// model is i_q(k) = sum_p y_qp(k), each y_qp obeying its own recursion.
class FdneRuntime {
public:
    explicit FdneRuntime(ident::TFMatrix model);

    [[nodiscard]] const ident::TFMatrix& model() const { return model_; }
    [[nodiscard]] Eigen::Index ports() const { return model_.size(); }

    // Full step: returns i(k) for the port voltages v(k) and advances.
    Eigen::VectorXd step(const Eigen::VectorXd& v);

    // Nodal form of the same step: i(k) = feedthrough() * v(k) + history(),
    // then commit(v(k)) advances the buffers and returns i(k).
    [[nodiscard]] const Eigen::MatrixXd& feedthrough() const { return g0_; }
    [[nodiscard]] Eigen::VectorXd history() const;
    Eigen::VectorXd commit(const Eigen::VectorXd& v);

    void reset();

    // Seeds the buffers with the periodic response to v(t) = Re(V e^{j 2 pi f t})
    // so that the next step, taken at `t_next`, continues it without a transient.
    void init_steady_state(const ComplexVector& v, double f_hz, double t_next = 0.0);

    [[nodiscard]] long steps() const { return k_; }

private:
    [[nodiscard]] long double entry_history(Eigen::Index q, Eigen::Index p) const;
    [[nodiscard]] std::size_t slot(int j) const;  // buffer index of sample k - j

    ident::TFMatrix model_;
    int depth_ = 0;
    Eigen::MatrixXd g0_;
    std::vector<std::vector<long double>> v_hist_;  // per port
    std::vector<std::vector<long double>> y_hist_;  // per entry, row-major
    std::size_t head_ = 0;                          // slot of sample k - 1
    long k_ = 0;
};

// Boundary current phasors drawn by the external area, I_b = conj(S / V),
// and the compensation I_inj = I_b - Y_c(f0) V that carries the operating
// point while the model runs. Throws CompensationError for |V| = 0.
struct Compensation {
    ComplexVector i_b;
    ComplexVector i_inj;
};
[[nodiscard]] Compensation fundamental_compensation(std::span<const Complex> s_b, std::span<const PhasorValue> v_b,
                                                    const ComplexMatrix& y_c60);

}  // namespace fdne::rt
