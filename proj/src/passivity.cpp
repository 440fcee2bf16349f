#include "fdne/passivity.hpp"

#include "fdne/errors.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

namespace fdne::passivity {

namespace {

std::string hz(double f) {
    std::ostringstream os;
    os << std::setprecision(10) << f << " Hz";
    return os.str();
}

}  // namespace

AdmittanceSampleSet sample_admittance(const ident::TFMatrix& m, std::span<const double> f_grid) {
    m.validate();
    AdmittanceSampleSet s;
    s.ts = m.ts;
    const double nyq = 0.5 / m.ts;
    const Eigen::Index np = m.size();
    for (std::size_t k = 0; k < f_grid.size(); ++k) {
        const double f = f_grid[k];
        if (!(f >= 0.0 && f < nyq)) throw SamplingError("grid frequency " + hz(f) + " outside [0, Nyquist)");
        if (k > 0 && !(f > f_grid[k - 1])) throw SamplingError("frequency grid not strictly increasing at " + hz(f));
        const Complex zinv = std::polar(1.0, -kTwoPi * f * m.ts);
        ComplexMatrix y(np, np);
        for (Eigen::Index q = 0; q < np; ++q)
            for (Eigen::Index p = 0; p < np; ++p) {
                const auto& tf = m.at(q, p);
                const Complex den = tf.denominator(zinv);
                const Complex val = tf.numerator(zinv) / den;
                if (den == 0.0 || !std::isfinite(val.real()) || !std::isfinite(val.imag()))
                    throw SamplingError("entry (" + std::to_string(q) + ", " + std::to_string(p) +
                                        ") has a pole on the unit circle at " + hz(f));
                y(q, p) = val;
            }
        s.f_grid.push_back(f);
        s.y.push_back(std::move(y));
    }
    return s;
}

ConductanceSplit conductance_part(const ComplexMatrix& y) {
    if (y.rows() != y.cols()) throw SamplingError("admittance sample is not square");
    const ComplexMatrix yh = y.adjoint();
    return {0.5 * (y + yh), 0.5 * (y - yh)};
}

bool PassivityReport::violated(std::size_t k) const {
    return std::binary_search(violations.begin(), violations.end(), k);
}

namespace {

double min_eigenvalue(const ComplexMatrix& g) {
    if (g.rows() == 1) return g(0, 0).real();
    return Eigen::SelfAdjointEigenSolver<ComplexMatrix>(g, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

}  // namespace

PassivityReport check_passivity(const AdmittanceSampleSet& s, double tol) {
    if (!(tol >= 0.0)) throw SamplingError("passivity tolerance must be non-negative");
    PassivityReport r;
    r.tol = tol;
    r.f_hz = s.f_grid;
    for (std::size_t k = 0; k < s.size(); ++k) {
        const double e = min_eigenvalue(conductance_part(s.y[k]).g);
        r.min_eig.push_back(e);
        if (e < -tol) r.violations.push_back(k);
        r.worst = std::min(r.worst, e);
    }
    return r;
}

void write_report_csv(std::ostream& out, const PassivityReport& r) {
    out << "f_hz,min_eig,violated\n" << std::setprecision(12);
    for (std::size_t k = 0; k < r.f_hz.size(); ++k)
        out << r.f_hz[k] << ',' << r.min_eig[k] << ',' << (r.min_eig[k] < -r.tol ? 1 : 0) << '\n';
}

ComplexMatrix nearest_psd(const ComplexMatrix& g) {
    if (g.rows() != g.cols()) throw SamplingError("nearest_psd needs a square matrix");
    if (g.rows() == 1) return ComplexMatrix::Constant(1, 1, std::max(g(0, 0).real(), 0.0));
    const ComplexMatrix h = 0.5 * (g + g.adjoint());
    Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(h);
    const Eigen::VectorXd lam = es.eigenvalues();
    // Eigenvalues within rounding of zero count as clipped already, which
    // keeps the projection idempotent in floating point.
    const double noise = 64.0 * std::numeric_limits<double>::epsilon() * lam.cwiseAbs().maxCoeff();
    if (lam.minCoeff() >= -noise) return g;
    const ComplexMatrix& u = es.eigenvectors();
    ComplexMatrix out = u * lam.cwiseMax(0.0).cast<Complex>().asDiagonal() * u.adjoint();
    return 0.5 * (out + out.adjoint());
}

std::vector<double> default_grid(double f_start, double f_end, double f_step, double ts) {
    if (!(f_step > 0.0 && f_start > 0.0 && f_end >= f_start && ts > 0.0))
        throw SamplingError("grid needs 0 < f_start <= f_end, f_step > 0 and ts > 0");
    const double nyq = 0.5 / ts;
    if (!(f_end < nyq)) throw SamplingError("sweep end " + hz(f_end) + " at or above Nyquist");
    std::vector<double> f;
    for (double x = 0.0; x < f_start - 1e-9 * f_step; x += f_step) f.push_back(x);
    const double half = 0.5 * f_step;
    const auto inner = static_cast<long>(std::floor((f_end - f_start) / half + 1e-9));
    for (long i = 0; i <= inner; ++i) f.push_back(f_start + static_cast<double>(i) * half);
    const double top = nyq * (1.0 - 1e-3);
    for (double x = f.back() + f_step; x < top; x += f_step) f.push_back(x);
    f.push_back(top);
    return f;
}

std::vector<double> relative_difference(const AdmittanceSampleSet& a, const AdmittanceSampleSet& b) {
    if (a.size() != b.size()) throw SamplingError("sample sets differ in length");
    std::vector<double> d(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double ref = a.y[k].operatorNorm();
        const double diff = (a.y[k] - b.y[k]).operatorNorm();
        d[k] = ref > 0.0 ? diff / ref : diff;
    }
    return d;
}

namespace {

// Lawson-Hanson: min ||e u - f|| subject to u >= 0.
Eigen::VectorXd nnls(const Eigen::MatrixXd& e, const Eigen::VectorXd& f) {
    const Eigen::Index m = e.cols();
    Eigen::VectorXd u = Eigen::VectorXd::Zero(m);
    std::vector<char> passive(static_cast<std::size_t>(m), 0);
    const double tol = 1e-12 * std::max(1.0, e.cwiseAbs().maxCoeff()) * static_cast<double>(e.rows());
    std::vector<Eigen::Index> set;
    for (int outer = 0; outer < 3 * static_cast<int>(e.rows()) + 30; ++outer) {
        const Eigen::VectorXd w = e.transpose() * (f - e * u);
        Eigen::Index best = -1;
        double wmax = tol;
        for (Eigen::Index j = 0; j < m; ++j)
            if (!passive[static_cast<std::size_t>(j)] && w(j) > wmax) {
                wmax = w(j);
                best = j;
            }
        if (best < 0) break;
        passive[static_cast<std::size_t>(best)] = 1;
        set.push_back(best);
        for (int inner = 0; inner < 100; ++inner) {
            Eigen::MatrixXd ep(e.rows(), static_cast<Eigen::Index>(set.size()));
            for (std::size_t c = 0; c < set.size(); ++c) ep.col(static_cast<Eigen::Index>(c)) = e.col(set[c]);
            const Eigen::VectorXd z = ep.colPivHouseholderQr().solve(f);
            if (z.minCoeff() > 0.0) {
                for (std::size_t c = 0; c < set.size(); ++c) u(set[c]) = z(static_cast<Eigen::Index>(c));
                break;
            }
            double alpha = 1.0;
            for (std::size_t c = 0; c < set.size(); ++c) {
                const double zc = z(static_cast<Eigen::Index>(c)), uc = u(set[c]);
                if (zc <= 0.0) alpha = std::min(alpha, uc / (uc - zc));
            }
            std::vector<Eigen::Index> keep;
            for (std::size_t c = 0; c < set.size(); ++c) {
                double& uc = u(set[c]);
                uc += alpha * (z(static_cast<Eigen::Index>(c)) - uc);
                if (uc <= tol) {
                    uc = 0.0;
                    passive[static_cast<std::size_t>(set[c])] = 0;
                } else {
                    keep.push_back(set[c]);
                }
            }
            set = std::move(keep);
            if (set.empty()) break;
        }
    }
    return u;
}

// min ||x|| subject to g x >= h, through the dual NNLS. Empty optional when
// the constraints are inconsistent.
std::optional<Eigen::VectorXd> least_distance(const Eigen::MatrixXd& g, const Eigen::VectorXd& h) {
    const Eigen::Index n = g.cols();
    if (g.rows() == 0 || h.maxCoeff() <= 0.0) return Eigen::VectorXd::Zero(n);
    Eigen::MatrixXd e(n + 1, g.rows());
    e.topRows(n) = g.transpose();
    e.row(n) = h.transpose();
    Eigen::VectorXd f = Eigen::VectorXd::Zero(n + 1);
    f(n) = 1.0;
    const Eigen::VectorXd r = e * nnls(e, f) - f;
    if (!(std::abs(r(n)) > 1e-12)) return std::nullopt;
    return Eigen::VectorXd(-r.head(n) / r(n));
}

// Weighted basis of one entry's numerator on the grid, in orthonormal form:
// rows (2k, 2k+1) of u hold wk [Re, Im] of z^-i / A(z) rotated by v s^-1.
struct EntryBasis {
    Eigen::MatrixXd u;
    Eigen::MatrixXd coef;  // numerator change = coef * y
};

EntryBasis entry_basis(const ident::RationalTFz& tf, const AdmittanceSampleSet& s, const std::vector<double>& w) {
    const Eigen::Index nb = tf.b.size();
    Eigen::MatrixXd x(static_cast<Eigen::Index>(2 * s.size()), nb);
    for (std::size_t k = 0; k < s.size(); ++k) {
        const Complex zinv = std::polar(1.0, -kTwoPi * s.f_grid[k] * tf.ts);
        Complex basis = 1.0 / tf.denominator(zinv);
        const auto r = static_cast<Eigen::Index>(2 * k);
        for (Eigen::Index i = 0; i < nb; ++i) {
            x(r, i) = w[k] * basis.real();
            x(r + 1, i) = w[k] * basis.imag();
            basis *= zinv;
        }
    }
    Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    Eigen::Index rank = 0;
    while (rank < sv.size() && sv(rank) > 1e-13 * sv(0)) ++rank;
    if (rank == 0) throw EnforcementError("numerator basis vanishes on the grid");
    EntryBasis b;
    b.u = svd.matrixU().leftCols(rank);
    b.coef = svd.matrixV().leftCols(rank) * sv.head(rank).cwiseInverse().asDiagonal();
    return b;
}

}  // namespace

EnforcementResult enforce_passivity(const ident::TFMatrix& m, std::span<const double> f_grid, const EnforceOptions& opt) {
    if (f_grid.empty()) throw EnforcementError("empty enforcement grid");
    if (!m.is_stable()) throw EnforcementError("passivity enforcement needs a stable model");
    EnforcementResult res;
    res.model = m;
    const AdmittanceSampleSet original = sample_admittance(m, f_grid);
    res.before = check_passivity(original, opt.tol);
    res.after = res.before;
    if (res.before.passive()) return res;

    const Eigen::Index np = m.size();
    const auto entries = static_cast<std::size_t>(np * np);
    std::vector<double> w(original.size());
    for (std::size_t k = 0; k < original.size(); ++k)
        w[k] = 1.0 / std::max(original.y[k].operatorNorm(), opt.weight_floor);
    std::vector<char> watched(original.size(), 0);

    for (int round = 0; round < opt.max_rounds; ++round) {
        const AdmittanceSampleSet cur = sample_admittance(res.model, f_grid);
        const PassivityReport rep = check_passivity(cur, opt.tol);
        if (rep.passive()) break;
        const double target = opt.tol + opt.margin * -rep.worst;
        const ComplexMatrix floor = ComplexMatrix::Identity(np, np) * target;
        std::vector<double> wr(cur.size());
        for (std::size_t k = 0; k < cur.size(); ++k) wr[k] = w[k] * opt.hold_weight;
        std::vector<ComplexMatrix> dg(cur.size(), ComplexMatrix::Zero(np, np));
        for (std::size_t k : rep.violations) {
            const ComplexMatrix g = conductance_part(cur.y[k]).g;
            dg[k] = nearest_psd(g - floor) + floor - g;
            wr[k] = w[k];
            watched[k] = 1;
        }

        // Unconstrained optimum y0 of the weighted refit towards the clipped
        // samples, per entry, in the orthonormal coordinates.
        std::vector<EntryBasis> basis;
        std::vector<Eigen::Index> offset{0};
        Eigen::VectorXd y0;
        {
            std::vector<Eigen::VectorXd> parts;
            for (std::size_t e = 0; e < entries; ++e) {
                const auto q = static_cast<Eigen::Index>(e) / np, p = static_cast<Eigen::Index>(e) % np;
                basis.push_back(entry_basis(res.model.at(q, p), cur, wr));
                Eigen::VectorXd t(static_cast<Eigen::Index>(2 * cur.size()));
                for (std::size_t k = 0; k < cur.size(); ++k) {
                    t(static_cast<Eigen::Index>(2 * k)) = wr[k] * dg[k](q, p).real();
                    t(static_cast<Eigen::Index>(2 * k + 1)) = wr[k] * dg[k](q, p).imag();
                }
                parts.push_back(basis.back().u.transpose() * t);
                offset.push_back(offset.back() + parts.back().size());
            }
            y0.resize(offset.back());
            for (std::size_t e = 0; e < entries; ++e) y0.segment(offset[e], parts[e].size()) = parts[e];
        }

        // Every sample that has violated so far keeps each eigenvalue below the
        // target at least at the target, to first order in the change.
        std::vector<Eigen::VectorXd> rows;
        std::vector<double> rhs;
        for (std::size_t k = 0; k < cur.size(); ++k) {
            if (!watched[k]) continue;
            const ComplexMatrix g = conductance_part(cur.y[k]).g;
            Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(g);
            for (Eigen::Index j = 0; j < np; ++j) {
                const double lam = es.eigenvalues()(j);
                if (j > 0 && lam >= target) break;
                const Eigen::VectorXcd v = es.eigenvectors().col(j);
                Eigen::VectorXd row = Eigen::VectorXd::Zero(offset.back());
                for (std::size_t e = 0; e < entries; ++e) {
                    const auto q = static_cast<Eigen::Index>(e) / np, p = static_cast<Eigen::Index>(e) % np;
                    const Complex c = std::conj(v(q)) * v(p) / wr[k];
                    const auto& u = basis[e].u;
                    row.segment(offset[e], u.cols()) = c.real() * u.row(static_cast<Eigen::Index>(2 * k)).transpose() -
                                                       c.imag() * u.row(static_cast<Eigen::Index>(2 * k + 1)).transpose();
                }
                const double norm = row.norm();
                if (norm == 0.0) continue;
                rows.push_back(row / norm);
                rhs.push_back((target - lam) / norm);
            }
        }
        Eigen::MatrixXd gm(static_cast<Eigen::Index>(rows.size()), offset.back());
        Eigen::VectorXd hv(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            gm.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
            hv(static_cast<Eigen::Index>(i)) = rhs[i];
        }
        const auto dz = least_distance(gm, hv - gm * y0);
        if (!dz) break;
        const Eigen::VectorXd y = y0 + *dz;
        for (std::size_t e = 0; e < entries; ++e) {
            const auto q = static_cast<Eigen::Index>(e) / np, p = static_cast<Eigen::Index>(e) % np;
            const Eigen::VectorXd db = basis[e].coef * y.segment(offset[e], basis[e].coef.cols());
            if (!db.allFinite()) throw EnforcementError("numerator refit produced non-finite coefficients");
            res.model.at(q, p).b += db;
        }
        ++res.rounds;
    }

    // The shift is repeated when coefficient rounding leaves a residue.
    for (int pass = 0; pass < 3; ++pass) {
        const PassivityReport rep = check_passivity(sample_admittance(res.model, f_grid), opt.tol);
        if (rep.passive()) break;
        const double s = -rep.worst;
        res.shift += s;
        for (Eigen::Index q = 0; q < np; ++q) {
            auto& tf = res.model.at(q, q);
            tf.b(0) += s;
            tf.b.tail(tf.order()) += s * tf.a;
        }
    }
    const AdmittanceSampleSet fin = sample_admittance(res.model, f_grid);
    res.after = check_passivity(fin, opt.tol);
    if (!res.after.passive()) {
        std::ostringstream msg;
        msg << "model still violates passivity after " << res.rounds << " rounds and a shift of " << res.shift
            << " S, worst eigenvalue " << res.after.worst;
        throw EnforcementError(msg.str());
    }
    const auto diff = relative_difference(original, fin);
    for (std::size_t k = 0; k < diff.size(); ++k)
        if (!res.before.violated(k)) res.max_perturbation = std::max(res.max_perturbation, diff[k]);
    return res;
}

}  // namespace fdne::passivity
