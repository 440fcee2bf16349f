#include "fdne/rls.hpp"

#include "fdne/emt.hpp"
#include "fdne/errors.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace fdne::ident {

RationalTFz RationalTFz::constant(double g, double ts) {
    RationalTFz tf;
    tf.b = Eigen::VectorXd::Constant(1, g);
    tf.ts = ts;
    return tf;
}

Complex RationalTFz::denominator(Complex zinv) const {
    Complex acc = 0.0;
    for (Eigen::Index i = a.size() - 1; i >= 0; --i) acc = (acc + a(i)) * zinv;
    return 1.0 + acc;
}

Complex RationalTFz::numerator(Complex zinv) const {
    Complex acc = 0.0;
    for (Eigen::Index i = b.size() - 1; i >= 0; --i) acc = acc * zinv + b(i);
    return acc;
}

Complex RationalTFz::at_frequency(double f_hz) const {
    const Complex zinv = std::polar(1.0, -kTwoPi * f_hz * ts);
    return numerator(zinv) / denominator(zinv);
}

Eigen::VectorXcd RationalTFz::poles() const {
    const auto n = a.size();
    if (n == 0) return {};
    Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(n, n);
    comp.row(0) = -a.transpose();
    for (Eigen::Index i = 1; i < n; ++i) comp(i, i - 1) = 1.0;
    return Eigen::EigenSolver<Eigen::MatrixXd>(comp, false).eigenvalues();
}

bool RationalTFz::is_stable() const {
    const auto p = poles();
    for (Eigen::Index i = 0; i < p.size(); ++i)
        if (!(std::abs(p(i)) < 1.0)) return false;
    return true;
}

void RationalTFz::validate() const {
    if (b.size() != a.size() + 1)
        throw ModelFormatError("numerator needs order + 1 coefficients, got " + std::to_string(b.size()) +
                               " for order " + std::to_string(a.size()));
    if (!a.allFinite() || !b.allFinite()) throw ModelFormatError("non-finite transfer-function coefficient");
    if (!(ts > 0.0)) throw ModelFormatError("transfer function needs ts > 0");
}

RlsState RlsState::init(int n, bool feedthrough, double gamma, double delta, RlsForm form) {
    if (n < 0) throw IllConditionedError("negative model order");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw IllConditionedError("weighting factor must lie in (0, 1]");
    if (!(delta > 0.0)) throw IllConditionedError("initial covariance scale must be positive");
    RlsState s;
    s.n = n;
    s.feedthrough = feedthrough;
    s.gamma = gamma;
    s.form = form;
    const Eigen::Index np = 2 * n + (feedthrough ? 1 : 0);
    s.theta = Eigen::VectorXd::Zero(np);
    if (form == RlsForm::covariance) {
        s.p = Eigen::MatrixXd::Identity(np, np) * delta;
    } else {
        s.r = MatrixXld::Identity(np, np) / std::sqrt(static_cast<long double>(delta));
        s.z = VectorXld::Zero(np);
    }
    s.u_past = Eigen::VectorXd::Zero(n);
    s.y_past = Eigen::VectorXd::Zero(n);
    return s;
}

Eigen::VectorXd RlsState::regressor(double u_k) const {
    Eigen::VectorXd x(parameters());
    x.head(n) = -y_past;
    Eigen::Index off = n;
    if (feedthrough) x(off++) = u_k;
    x.segment(off, n) = u_past;
    return x;
}

const Eigen::VectorXd& RlsState::estimate() {
    if (form == RlsForm::square_root && parameters() > 0)
        theta = r.triangularView<Eigen::Upper>().solve(z).cast<double>();
    return theta;
}

Eigen::MatrixXd RlsState::covariance() const {
    if (form == RlsForm::covariance) return p;
    const Eigen::Index np = parameters();
    const MatrixXld rinv = r.triangularView<Eigen::Upper>().solve(MatrixXld::Identity(np, np));
    return (rinv * rinv.transpose()).cast<double>();
}

RationalTFz RlsState::model(double ts) {
    estimate();
    RationalTFz tf;
    tf.ts = ts;
    tf.a = theta.head(n);
    tf.b = Eigen::VectorXd::Zero(n + 1);
    Eigen::Index off = n;
    if (feedthrough) tf.b(0) = theta(off++);
    tf.b.tail(n) = theta.segment(off, n);
    return tf;
}

namespace {

void covariance_update(RlsState& s, const Eigen::VectorXd& x, double y_k) {
    const Eigen::VectorXd px = s.p * x;
    const double denom = s.gamma + x.dot(px);
    const double err = y_k - x.dot(s.theta);
    s.theta.noalias() += px * (err / denom);
    s.p.noalias() -= px * (px.transpose() / denom);
    if (s.gamma != 1.0) s.p /= s.gamma;
    const Eigen::Index np = s.parameters();
    for (Eigen::Index c = 0; c < np; ++c)
        for (Eigen::Index r = c + 1; r < np; ++r) {
            const double m = 0.5 * (s.p(r, c) + s.p(c, r));
            s.p(r, c) = m;
            s.p(c, r) = m;
        }
    if (!std::isfinite(denom) || !std::isfinite(err) || !s.theta.allFinite())
        throw DivergenceError(s.k, "RLS estimate became non-finite at sample " + std::to_string(s.k));
}

void square_root_update(RlsState& s, const Eigen::VectorXd& xd, double y_in) {
    using LD = long double;
    const Eigen::Index np = s.parameters();
    if (s.gamma != 1.0) {
        const LD w = std::sqrt(static_cast<LD>(s.gamma));
        s.r *= w;
        s.z *= w;
    }
    VectorXld x = xd.cast<LD>();
    LD y_k = y_in;
    for (Eigen::Index j = 0; j < np; ++j) {
        const LD xj = x(j);
        if (xj == 0.0L) continue;
        const LD rjj = s.r(j, j);
        const LD h = std::sqrt(rjj * rjj + xj * xj);
        const LD c = rjj / h, sn = xj / h;
        s.r(j, j) = h;
        for (Eigen::Index i = j + 1; i < np; ++i) {
            const LD rji = s.r(j, i);
            s.r(j, i) = c * rji + sn * x(i);
            x(i) = -sn * rji + c * x(i);
        }
        const LD zj = s.z(j);
        s.z(j) = c * zj + sn * y_k;
        y_k = -sn * zj + c * y_k;
    }
    if (!std::isfinite(y_k) || !std::isfinite(s.r(np - 1, np - 1)))
        throw DivergenceError(s.k, "RLS estimate became non-finite at sample " + std::to_string(s.k));
}

}  // namespace

void rls_step(RlsState& s, double u_k, double y_k, bool update) {
    if (update && s.parameters() > 0) {
        if (s.form == RlsForm::covariance) covariance_update(s, s.regressor(u_k), y_k);
        else square_root_update(s, s.regressor(u_k), y_k);
    }
    if (s.n > 0) {
        for (Eigen::Index i = s.n - 1; i > 0; --i) {
            s.u_past(i) = s.u_past(i - 1);
            s.y_past(i) = s.y_past(i - 1);
        }
        s.u_past(0) = u_k;
        s.y_past(0) = y_k;
    }
    ++s.k;
}

Regression build_regression(std::span<const double> u, std::span<const double> y, int n, bool feedthrough,
                            std::span<const double> valid) {
    if (u.size() != y.size()) throw IllConditionedError("input and output lengths differ");
    if (!valid.empty() && valid.size() != u.size()) throw IllConditionedError("mask length differs from data");
    const auto nn = static_cast<std::size_t>(n);
    std::vector<std::size_t> rows;
    for (std::size_t k = nn; k < u.size(); ++k)
        if (valid.empty() || valid[k] != 0.0) rows.push_back(k);
    const Eigen::Index np = 2 * n + (feedthrough ? 1 : 0);
    Regression r;
    r.x.resize(static_cast<Eigen::Index>(rows.size()), np);
    r.phi.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t row = 0; row < rows.size(); ++row) {
        const std::size_t k = rows[row];
        const auto ri = static_cast<Eigen::Index>(row);
        for (std::size_t j = 1; j <= nn; ++j) r.x(ri, static_cast<Eigen::Index>(j - 1)) = -y[k - j];
        Eigen::Index off = n;
        if (feedthrough) r.x(ri, off++) = u[k];
        for (std::size_t j = 1; j <= nn; ++j) r.x(ri, off + static_cast<Eigen::Index>(j - 1)) = u[k - j];
        r.phi(ri) = y[k];
    }
    return r;
}

Eigen::VectorXd batch_ls(const Eigen::MatrixXd& x, const Eigen::VectorXd& phi, double max_condition) {
    if (x.rows() != phi.size()) throw IllConditionedError("regressor and output lengths differ");
    if (x.rows() < x.cols())
        throw IllConditionedError("underdetermined regression: " + std::to_string(x.rows()) + " rows for " +
                                  std::to_string(x.cols()) + " unknowns");
    if (x.cols() == 0) return {};
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(x);
    const Eigen::MatrixXd r = qr.matrixQR().topRows(x.cols()).triangularView<Eigen::Upper>();
    const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(r).singularValues();
    const double cond = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : INFINITY;
    if (!(cond <= max_condition)) {
        std::ostringstream msg;
        msg << "rank-deficient regression, condition estimate " << std::setprecision(3) << cond;
        throw IllConditionedError(msg.str());
    }
    return qr.solve(phi);
}

namespace {

double rms_of(std::span<const double> x, std::span<const double> valid) {
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        if (!valid.empty() && valid[k] == 0.0) continue;
        acc += x[k] * x[k];
        ++count;
    }
    return count == 0 ? 0.0 : std::sqrt(acc / static_cast<double>(count));
}

}  // namespace

EntryFit fit_entry(std::span<const double> v, std::span<const double> i, double ts, int n, const FitOptions& opt,
                   std::span<const double> valid) {
    if (v.size() != i.size()) throw IllConditionedError("voltage and current records differ in length");
    if (!valid.empty() && valid.size() != v.size()) throw IllConditionedError("mask length differs from data");
    if (n < 0) throw IllConditionedError("order must be non-negative");
    const double su = opt.normalize ? rms_of(v, valid) : 1.0;
    const double sy = opt.normalize ? rms_of(i, valid) : 1.0;
    const double cu = su > 0.0 ? 1.0 / su : 1.0;
    const double cy = sy > 0.0 ? 1.0 / sy : 1.0;

    RlsState s = RlsState::init(n, opt.feedthrough, opt.gamma, opt.delta, opt.form);
    for (std::size_t k = 0; k < v.size(); ++k) rls_step(s, v[k] * cu, i[k] * cy, valid.empty() || valid[k] != 0.0);

    EntryFit out;
    out.tf = s.model(ts);
    out.tf.b *= cu / cy;

    // Residual of the one-step predictor with the final coefficients.
    const auto nn = static_cast<std::size_t>(n);
    double acc = 0.0, ref = 0.0;
    std::size_t count = 0;
    for (std::size_t k = 0; k < v.size(); ++k) {
        if (!valid.empty() && valid[k] == 0.0) continue;
        double pred = out.tf.b(0) * v[k];
        for (std::size_t j = 1; j <= nn && j <= k; ++j)
            pred += out.tf.b(static_cast<Eigen::Index>(j)) * v[k - j] - out.tf.a(static_cast<Eigen::Index>(j - 1)) * i[k - j];
        const double e = i[k] - pred;
        acc += e * e;
        ref += i[k] * i[k];
        ++count;
    }
    if (count == 0) throw IllConditionedError("record has no valid samples");
    out.rms = std::sqrt(acc / static_cast<double>(count));
    const double iref = std::sqrt(ref / static_cast<double>(count));
    out.relative_rms = iref > 0.0 ? out.rms / iref : out.rms;
    return out;
}

EntryFit select_order(std::span<const double> v, std::span<const double> i, double ts, int n_max,
                      const FitOptions& opt, std::span<const double> valid) {
    if (n_max < 2) throw IllConditionedError("automatic order scan needs n_max >= 2");
    EntryFit best;
    bool have = false;
    for (int n = 2; n <= n_max; n += 2) {
        EntryFit fit = fit_entry(v, i, ts, n, opt, valid);
        if (have && fit.relative_rms > 0.9 * best.relative_rms) {
            if (fit.relative_rms < best.relative_rms) best = std::move(fit);
            break;
        }
        best = std::move(fit);
        have = true;
        if (best.relative_rms < 1e-5) break;
    }
    return best;
}

ComplexMatrix TFMatrix::at_frequency(double f_hz) const {
    const Eigen::Index m = size();
    ComplexMatrix y(m, m);
    for (Eigen::Index q = 0; q < m; ++q)
        for (Eigen::Index p = 0; p < m; ++p) y(q, p) = at(q, p).at_frequency(f_hz);
    return y;
}

int TFMatrix::max_order() const {
    int n = 0;
    for (const auto& e : entries) n = std::max(n, e.order());
    return n;
}

bool TFMatrix::is_stable() const {
    for (const auto& e : entries)
        if (!e.is_stable()) return false;
    return true;
}

void TFMatrix::validate() const {
    if (ports.empty()) throw ModelFormatError("model has no ports");
    if (entries.size() != ports.size() * ports.size())
        throw ModelFormatError("model needs " + std::to_string(ports.size() * ports.size()) + " entries");
    for (const auto& e : entries) {
        e.validate();
        if (e.ts != ts) throw ModelFormatError("model entries disagree on ts");
    }
}

MimoFit fit_mimo(std::span<const emt::TimeSeries> records, std::span<const BusId> ports, int n,
                 const FitOptions& opt, int n_max) {
    const auto m = static_cast<Eigen::Index>(ports.size());
    if (m == 0) throw CoverageError("no ports to fit");
    MimoFit out;
    out.model.ports.assign(ports.begin(), ports.end());
    out.model.entries.resize(static_cast<std::size_t>(m * m));
    out.rms = Eigen::MatrixXd::Zero(m, m);
    out.relative_rms = Eigen::MatrixXd::Zero(m, m);
    for (Eigen::Index p = 0; p < m; ++p) {
        for (Eigen::Index q = 0; q < m; ++q) {
            const std::string pair = "(" + std::to_string(ports[static_cast<std::size_t>(q)]) + ", " +
                                     std::to_string(ports[static_cast<std::size_t>(p)]) + ")";
            if (static_cast<std::size_t>(p) >= records.size())
                throw CoverageError("no sweep record exciting port " + std::to_string(ports[static_cast<std::size_t>(p)]) +
                                    " for entry " + pair);
            const auto& rec = records[static_cast<std::size_t>(p)];
            const std::string ich = "i" + std::to_string(ports[static_cast<std::size_t>(q)]);
            if (!rec.has("v") || !rec.has(ich)) throw CoverageError("sweep record lacks channels for entry " + pair);
            std::span<const double> valid;
            if (rec.has("valid")) valid = rec["valid"];
            if (out.model.ts == 0.0) out.model.ts = rec.ts;
            if (rec.ts != out.model.ts) throw CoverageError("sweep records disagree on ts");
            EntryFit fit = n > 0 ? fit_entry(rec["v"], rec[ich], rec.ts, n, opt, valid)
                                 : select_order(rec["v"], rec[ich], rec.ts, n_max, opt, valid);
            out.model.at(q, p) = fit.tf;
            out.rms(q, p) = fit.rms;
            out.relative_rms(q, p) = fit.relative_rms;
        }
    }
    return out;
}

Eigen::VectorXd poly_from_roots(const Eigen::VectorXcd& roots) {
    // Coefficients of prod (1 - r z^-1), returned without the leading 1.
    Eigen::VectorXcd c = Eigen::VectorXcd::Zero(roots.size() + 1);
    c(0) = 1.0;
    for (Eigen::Index k = 0; k < roots.size(); ++k)
        for (Eigen::Index j = k + 1; j >= 1; --j) c(j) -= roots(k) * c(j - 1);
    return c.tail(roots.size()).real();
}

RationalTFz enforce_stability(const RationalTFz& tf, std::span<const double> f_grid) {
    tf.validate();
    Eigen::VectorXcd p = tf.poles();
    bool changed = false;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (std::abs(p(i)) < 1.0) continue;
        changed = true;
        p(i) = 1.0 / std::conj(p(i));
        if (std::abs(p(i)) > 1.0 - 1e-6) p(i) *= (1.0 - 1e-6) / std::abs(p(i));
    }
    if (!changed) return tf;

    RationalTFz out = tf;
    out.a = poly_from_roots(p);
    std::vector<double> grid(f_grid.begin(), f_grid.end());
    if (grid.empty()) {
        const double nyq = 0.5 / tf.ts;
        for (int k = 1; k <= 1000; ++k) grid.push_back(0.95 * nyq * k / 1000.0);
    }
    double num = 0.0, den = 0.0;
    for (double f : grid) {
        const double m_in = std::abs(tf.at_frequency(f));
        const double m_out = std::abs(out.at_frequency(f));
        if (!std::isfinite(m_in)) continue;
        num += m_in * m_out;
        den += m_out * m_out;
    }
    if (den > 0.0) out.b *= num / den;
    return out;
}

void write_model(std::ostream& out, const TFMatrix& m) {
    m.validate();
    out << "fdne-model 1\n";
    out << std::setprecision(17);
    out << "ports " << m.ports.size();
    for (BusId b : m.ports) out << ' ' << b;
    out << "\nts " << m.ts << '\n';
    for (Eigen::Index q = 0; q < m.size(); ++q)
        for (Eigen::Index p = 0; p < m.size(); ++p) {
            const auto& e = m.at(q, p);
            out << "entry " << q << ' ' << p << " order " << e.order() << "\na";
            for (Eigen::Index i = 0; i < e.a.size(); ++i) out << ' ' << e.a(i);
            out << "\nb";
            for (Eigen::Index i = 0; i < e.b.size(); ++i) out << ' ' << e.b(i);
            out << '\n';
        }
}

TFMatrix read_model(std::istream& in) {
    const auto expect = [&](const std::string& word) {
        std::string tok;
        if (!(in >> tok) || tok != word) throw ModelFormatError("expected '" + word + "' in model file, got '" + tok + "'");
    };
    const auto number = [&]() {
        std::string tok;
        if (!(in >> tok)) throw ModelFormatError("model file ended early");
        try {
            std::size_t used = 0;
            const double v = std::stod(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
            return v;
        } catch (const std::logic_error&) {
            throw ModelFormatError("bad number '" + tok + "' in model file");
        }
    };
    expect("fdne-model");
    if (number() != 1.0) throw ModelFormatError("unsupported model file version");
    TFMatrix m;
    expect("ports");
    const auto count = static_cast<std::size_t>(number());
    for (std::size_t i = 0; i < count; ++i) m.ports.push_back(static_cast<BusId>(number()));
    expect("ts");
    m.ts = number();
    m.entries.resize(count * count);
    for (std::size_t e = 0; e < count * count; ++e) {
        expect("entry");
        const auto q = static_cast<Eigen::Index>(number());
        const auto p = static_cast<Eigen::Index>(number());
        if (q < 0 || p < 0 || q >= m.size() || p >= m.size()) throw ModelFormatError("entry index out of range");
        expect("order");
        const auto n = static_cast<Eigen::Index>(number());
        auto& tf = m.at(q, p);
        tf.ts = m.ts;
        expect("a");
        tf.a.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) tf.a(i) = number();
        expect("b");
        tf.b.resize(n + 1);
        for (Eigen::Index i = 0; i <= n; ++i) tf.b(i) = number();
    }
    m.validate();
    return m;
}

void save_model(const std::string& path, const TFMatrix& m) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write model file '" + path + "'");
    write_model(out, m);
}

TFMatrix load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open model file '" + path + "'");
    return read_model(in);
}

}  // namespace fdne::ident
