#include "hetshadow/chart.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace hetshadow {

namespace {
constexpr double kDegenerateTol = 1e-12;
constexpr double kChartSingularTol = 1e-8;
constexpr double kMassTol = 1e-8;

cplx Ai(const LatticeModel& m, int l, int k) {  // 1-based accessor
    return m.a(l - 1, k - 1);
}
double Ci(const LatticeModel& m, int l, int k) { return m.c(l - 1, k - 1); }
}  // namespace

// ---------------------------------------------------------------------------
// Pairwise quadratic data
// ---------------------------------------------------------------------------

QuadParams quad_params(const LatticeModel& model, int j, int k) {
    if (j == k) throw ChartError("quad_params requires j != k");
    QuadParams qp = classify_pair(0.5 * (Ai(model, k, k) + Ai(model, j, j)).real(),
                                  Ai(model, k, j));
    qp.constant_term = 0.25 * (Ai(model, k, k) - Ai(model, j, j)).real();
    return qp;
}

QuadParams classify_pair(double alpha, cplx a) {
    QuadParams qp;
    qp.alpha = alpha;
    qp.a = a;
    double disc = std::norm(a) - alpha * alpha;
    if (std::abs(disc) < kDegenerateTol)
        throw ChartError("degenerate spectrum: |a|^2 == alpha^2");
    if (disc > 0) {
        qp.kind = PairKind::Saddle;
        qp.lambda_or_nu = std::sqrt(disc);
    } else {
        qp.kind = PairKind::Center;
        qp.lambda_or_nu = std::sqrt(-disc);
    }
    return qp;
}

namespace {
cplx principal_unit_root(cplx w2) {
    cplx w = std::sqrt(w2);
    w /= std::abs(w);
    if (w.real() < 0 || (w.real() == 0 && w.imag() < 0)) w = -w;
    return w;
}
}  // namespace

cplx conformal_omega(double alpha, cplx a) {
    QuadParams qp = classify_pair(alpha, a);
    if (qp.kind != PairKind::Saddle) throw ChartError("conformal_omega requires a saddle pair");
    cplx w2 = cplx{0.0, 1.0} * std::conj(a) / (qp.lambda_or_nu + cplx{0.0, 1.0} * alpha);
    return principal_unit_root(w2);
}

double conformal_a1(cplx omega) { return -2.0 * (omega * omega).real(); }

CenterChange nonconformal_change(double alpha, cplx a) {
    QuadParams qp = classify_pair(alpha, a);
    if (qp.kind != PairKind::Center) throw ChartError("nonconformal_change requires a center pair");
    double nu = qp.lambda_or_nu;
    // B from the germ cdot = i alpha c - i a conj(c) acting on (Re c, Im c):
    //   B = [[ Im a, -(alpha + Re a)], [alpha - Re a, -Im a]].
    double b11 = a.imag(), b12 = -(alpha + a.real());
    double b21 = alpha - a.real(), b22 = -a.imag();
    // eigenvector w = (w1, w2) for +i nu: (B - i nu) w = 0
    cplx w1, w2;
    if (std::abs(b12) > std::abs(b21)) {
        w1 = b12;
        w2 = cplx{-b11, nu};  // w = (b12, i nu - b11)
    } else {
        w1 = cplx{-b22, nu};  // w = (i nu - b22, b21)
        w2 = b21;
    }
    // columns u = Re w, v = Im w give B u = -nu v, B v = nu u
    double u1 = w1.real(), u2 = w2.real();
    double v1 = w1.imag(), v2 = w2.imag();
    double det = u1 * v2 - v1 * u2;
    if (std::abs(det) < kDegenerateTol) throw ChartError("nonconformal_change: defective pair");
    if (det < 0) {
        v1 = -v1;
        v2 = -v2;
        det = -det;
    }
    double s = 1.0 / std::sqrt(det);
    u1 *= s, u2 *= s, v1 *= s, v2 *= s;
    if (u1 < 0 || (u1 == 0 && u2 < 0)) {
        u1 = -u1, u2 = -u2, v1 = -v1, v2 = -v2;
    }
    CenterChange cc;
    cc.U = {u1, v1, u2, v2};
    double d = u1 * v2 - v1 * u2;
    cc.Uinv = {v2 / d, -v1 / d, -u2 / d, u1 / d};
    // signed rotation rate of U^-1 B U (the area normalization fixes |nu|,
    // the germ fixes the sense)
    double m10 = cc.Uinv[2] * (b11 * cc.U[0] + b12 * cc.U[2]) +
                 cc.Uinv[3] * (b21 * cc.U[0] + b22 * cc.U[2]);
    cc.nu = m10 >= 0 ? nu : -nu;
    return cc;
}

// ---------------------------------------------------------------------------
// Frames
// ---------------------------------------------------------------------------

namespace {

// Germ linear coefficients for mode k in the j-chart (1-based).
void germ_coeffs(const LatticeModel& m, int j, int k, cplx& p, cplx& q) {
    double delta = m.kind == ModelKind::NonHamiltonian && m.has_C()
                       ? m.rho * (Ci(m, j, k) - Ci(m, j, j))
                       : 0.0;
    p = cplx{delta, Ai(m, j, j).real()};
    q = cplx{0.0, -1.0} * Ai(m, k, j);
}

SaddleBasis make_saddle_basis(const LatticeModel& m, int j, int k) {
    cplx p, q;
    germ_coeffs(m, j, k, p, q);
    double pi = p.imag(), pr = p.real();
    double disc = std::norm(q) - pi * pi;
    if (disc <= kDegenerateTol)
        throw ChartError("adjacent pair is not a saddle in the j-chart");
    double lam = std::sqrt(disc);
    SaddleBasis sb;
    sb.mu_plus = pr + lam;
    sb.mu_minus = pr - lam;
    if (!(sb.mu_plus > 0 && sb.mu_minus < 0))
        throw ChartError("saddle rates lost their signs (radial term too strong)");
    // omega^2 = q / (mu_plus - p) = q / (lam - i pi)
    sb.omega = principal_unit_root(q / cplx{lam, -pi});
    return sb;
}

}  // namespace

ChartFrame make_chart_frame(const LatticeModel& model, int j) {
    if (j < 1 || j > model.n) throw ChartError("chart index out of range");
    ChartFrame f;
    f.model = &model;
    f.j = j;
    f.n = model.n;
    f.has_minus = j - 1 >= 1;
    f.has_plus = j + 1 <= model.n;
    if (f.has_minus) f.minus = make_saddle_basis(model, j, j - 1);
    if (f.has_plus) f.plus = make_saddle_basis(model, j, j + 1);
    for (int k = 1; k <= model.n; ++k) {
        if (k == j || k == j - 1 || k == j + 1) continue;
        f.center_modes.push_back(k);
        cplx p, q;
        germ_coeffs(model, j, k, p, q);
        if (std::abs(q) < kDegenerateTol) {
            CenterChange cc;  // uncoupled mode rotates as is
            cc.nu = p.imag();
            f.center_change.push_back(cc);
        } else {
            // spec convention carries (alpha, a) of the pair germ: the
            // nonconformal_change B matches cdot = i alpha c - i a conj(c)
            f.center_change.push_back(nonconformal_change(p.imag(), cplx{0.0, 1.0} * q));
        }
    }
    int at = 0;
    if (f.has_minus) {
        f.idx_xm = at++;
        f.idx_ym = at++;
    }
    if (f.has_plus) {
        f.idx_xp = at++;
        f.idx_yp = at++;
    }
    for (size_t i = 0; i < f.center_modes.size(); ++i) {
        f.idx_center.push_back(at);
        at += 2;
    }
    f.dim = at;
    if (f.dim != 2 * (model.n - 1)) throw ChartError("chart layout dimension mismatch");
    return f;
}

std::array<double, 2> saddle_decompose(cplx c, cplx omega) {
    double wr = omega.real(), wi = omega.imag();
    if (std::abs(wr) < kDegenerateTol || std::abs(wi) < kDegenerateTol)
        throw ChartError("degenerate conformal basis (omega^2 = +-1)");
    double sum = c.real() / wr, diff = c.imag() / wi;
    return {0.5 * (sum + diff), 0.5 * (sum - diff)};
}

cplx saddle_compose(double x, double y, cplx omega) {
    return omega * x + std::conj(omega) * y;
}

std::vector<double> chart_to_flat(const ChartFrame& f, const ChartState& s) {
    std::vector<double> y(f.dim, 0.0);
    if (f.has_minus) {
        y[f.idx_xm] = s.x_minus;
        y[f.idx_ym] = s.y_minus;
    }
    if (f.has_plus) {
        y[f.idx_xp] = s.x_plus;
        y[f.idx_yp] = s.y_plus;
    }
    for (int i = 0; i < f.center_count(); ++i) {
        y[f.idx_center[i]] = s.c_star[i].real();
        y[f.idx_center[i] + 1] = s.c_star[i].imag();
    }
    return y;
}

ChartState flat_to_chart(const ChartFrame& f, const std::vector<double>& y, double theta) {
    ChartState s;
    s.j = f.j;
    s.theta = theta;
    if (f.has_minus) {
        s.x_minus = y[f.idx_xm];
        s.y_minus = y[f.idx_ym];
    }
    if (f.has_plus) {
        s.x_plus = y[f.idx_xp];
        s.y_plus = y[f.idx_yp];
    }
    s.c_star.resize(f.center_count());
    for (int i = 0; i < f.center_count(); ++i)
        s.c_star[i] = cplx{y[f.idx_center[i]], y[f.idx_center[i] + 1]};
    return s;
}

namespace {
cplx apply2(const std::array<double, 4>& M, cplx z) {
    return {M[0] * z.real() + M[1] * z.imag(), M[2] * z.real() + M[3] * z.imag()};
}
}  // namespace

ChartState to_chart(const ChartFrame& f, const cvec& b) {
    const LatticeModel& m = *f.model;
    if (static_cast<int>(b.size()) != m.n) throw ChartError("state dimension mismatch");
    cplx bj = b[f.j - 1];
    if (std::abs(bj) <= kChartSingularTol)
        throw ChartError("chart singularity: |b_j| too small");
    double M = total_mass(b);
    if (std::abs(M - 1.0) > kMassTol) throw ChartError("to_chart requires unit total mass");
    ChartState s;
    s.j = f.j;
    s.theta = std::arg(bj);
    if (s.theta < 0) s.theta += 2.0 * M_PI;
    cplx phase = std::conj(bj) / std::abs(bj);
    if (f.has_minus) {
        auto xy = saddle_decompose(b[f.j - 2] * phase, f.minus.omega);
        s.x_minus = xy[0];
        s.y_minus = xy[1];
    }
    if (f.has_plus) {
        auto xy = saddle_decompose(b[f.j] * phase, f.plus.omega);
        s.x_plus = xy[0];
        s.y_plus = xy[1];
    }
    s.c_star.resize(f.center_count());
    for (int i = 0; i < f.center_count(); ++i)
        s.c_star[i] = apply2(f.center_change[i].Uinv, b[f.center_modes[i] - 1] * phase);
    return s;
}

cvec chart_raw_modes(const ChartFrame& f, const ChartState& s) {
    cvec c(f.n + 1, cplx{0.0, 0.0});  // 1-based; c[j] = r_j
    double sum = 0.0;
    if (f.has_minus) {
        c[f.j - 1] = saddle_compose(s.x_minus, s.y_minus, f.minus.omega);
        sum += std::norm(c[f.j - 1]);
    }
    if (f.has_plus) {
        c[f.j + 1] = saddle_compose(s.x_plus, s.y_plus, f.plus.omega);
        sum += std::norm(c[f.j + 1]);
    }
    for (int i = 0; i < f.center_count(); ++i) {
        c[f.center_modes[i]] = apply2(f.center_change[i].U, s.c_star[i]);
        sum += std::norm(c[f.center_modes[i]]);
    }
    if (sum > 1.0 + 1e-9) throw ChartError("off-sphere chart state: negative radicand for r_j");
    c[f.j] = std::sqrt(std::max(0.0, 1.0 - sum));
    return c;
}

cvec from_chart(const ChartFrame& f, const ChartState& s) {
    cvec raw = chart_raw_modes(f, s);
    cplx ph = std::polar(1.0, s.theta);
    cvec b(f.n);
    for (int k = 1; k <= f.n; ++k) b[k - 1] = raw[k] * ph;
    return b;
}

// ---------------------------------------------------------------------------
// Reduced two-mode field
// ---------------------------------------------------------------------------

cplx reduced_field(const LatticeModel& model, int j, int k, cplx c) {
    double cc = std::norm(c);
    if (cc > 1.0 + 1e-9) throw ChartError("reduced_field requires |c| <= 1");
    double r2 = std::max(0.0, 1.0 - cc);
    cplx Fk = Ai(model, k, j) * r2 + Ai(model, k, k) * c * c;
    cplx Fj = Ai(model, j, j) * r2 + Ai(model, j, k) * c * c;
    cplx out = cplx{0.0, -1.0} * Fk * std::conj(c) + cplx{0.0, 1.0} * Fj.real() * c;
    if (model.kind == ModelKind::NonHamiltonian && model.rho != 0.0 && model.has_C()) {
        double Gk = Ci(model, j, k) * r2 + Ci(model, k, k) * cc;
        double R = -(Ci(model, j, j) * r2 * r2 + (Ci(model, j, k) + Ci(model, k, j)) * r2 * cc +
                     Ci(model, k, k) * cc * cc);
        out += model.rho * (Gk + R) * c;
    }
    return out;
}

std::array<std::array<double, 2>, 2> heteroclinic_lines(const LatticeModel& model, int j) {
    if (j + 1 > model.n) throw ChartError("no adjacent pair above j");
    if (std::abs(Ai(model, j, j) - Ai(model, j + 1, j + 1)) > 1e-12)
        throw ChartError("no straight heteroclinic lines: unequal diagonal entries");
    QuadParams qp = quad_params(model, j, j + 1);
    if (qp.kind != PairKind::Saddle)
        throw ChartError("no heteroclinic lines: pair is not a saddle");
    // zero set of alpha |c|^2 / 2 - Re(a c^2) / 2 through the origin
    double psi = std::arg(qp.a);
    double ratio = qp.alpha / std::abs(qp.a);
    double delta = std::acos(std::clamp(ratio, -1.0, 1.0));
    std::array<std::array<double, 2>, 2> lines;
    double phis[2] = {(delta - psi) / 2.0, (-delta - psi) / 2.0};
    for (int i = 0; i < 2; ++i) {
        double cx = std::cos(phis[i]), cy = std::sin(phis[i]);
        if (cx < 0 || (cx == 0 && cy < 0)) {
            cx = -cx;
            cy = -cy;
        }
        lines[i] = {cx, cy};
    }
    if (lines[0][1] < lines[1][1]) std::swap(lines[0], lines[1]);
    return lines;
}

// ---------------------------------------------------------------------------
// Chart vector field
// ---------------------------------------------------------------------------

ChartVectorField::ChartVectorField(ChartFrame frame) : frame_(std::move(frame)) {
    p_.assign(frame_.n + 1, cplx{});
    q_.assign(frame_.n + 1, cplx{});
    for (int k = 1; k <= frame_.n; ++k) {
        if (k == frame_.j) continue;
        germ_coeffs(*frame_.model, frame_.j, k, p_[k], q_[k]);
    }
    if (frame_.model->kind == ModelKind::Hamiltonian || frame_.model->rho == 0.0 ||
        !frame_.model->has_C())
        build_polynomial();
}

namespace {

// small complex polynomial over the flat chart coordinates, degree <= 3
struct CPoly {
    std::map<std::array<int, 8>, cplx> terms;

    static CPoly linear(int coord, cplx coef) {
        CPoly p;
        std::array<int, 8> e{};
        e[coord] = 1;
        p.terms[e] = coef;
        return p;
    }
    CPoly conjugated() const {
        CPoly out;
        for (const auto& [e, c] : terms) out.terms[e] = std::conj(c);
        return out;
    }
    CPoly operator*(const CPoly& other) const {
        CPoly out;
        for (const auto& [ea, ca] : terms)
            for (const auto& [eb, cb] : other.terms) {
                std::array<int, 8> e{};
                for (int i = 0; i < 8; ++i) e[i] = ea[i] + eb[i];
                out.terms[e] += ca * cb;
            }
        return out;
    }
    CPoly& operator+=(const CPoly& other) {
        for (const auto& [e, c] : other.terms) terms[e] += c;
        return *this;
    }
    CPoly operator+(const CPoly& other) const {
        CPoly out = *this;
        out += other;
        return out;
    }
    CPoly operator*(cplx s) const {
        CPoly out;
        for (const auto& [e, c] : terms) out.terms[e] = c * s;
        return out;
    }
    CPoly real_part() const {
        CPoly out;
        for (const auto& [e, c] : terms) out.terms[e] = cplx{c.real(), 0.0};
        return out;
    }
};

}  // namespace

void ChartVectorField::build_polynomial() {
    const ChartFrame& f = frame_;
    const LatticeModel& m = *f.model;
    const int j = f.j, n = f.n;

    // c_m as complex-linear forms in the flat coordinates
    std::vector<CPoly> c(n + 1);
    for (int k = 1; k <= n; ++k) {
        if (k == j) continue;
        if (k == j - 1 && f.has_minus) {
            c[k] = CPoly::linear(f.idx_xm, f.minus.omega);
            c[k] += CPoly::linear(f.idx_ym, std::conj(f.minus.omega));
        } else if (k == j + 1 && f.has_plus) {
            c[k] = CPoly::linear(f.idx_xp, f.plus.omega);
            c[k] += CPoly::linear(f.idx_yp, std::conj(f.plus.omega));
        } else {
            for (int i = 0; i < f.center_count(); ++i)
                if (f.center_modes[i] == k) {
                    const auto& U = f.center_change[i].U;
                    c[k] = CPoly::linear(f.idx_center[i], cplx{U[0], U[2]});
                    c[k] += CPoly::linear(f.idx_center[i] + 1, cplx{U[1], U[3]});
                }
        }
    }

    CPoly S;  // sum |c_k|^2
    for (int k = 1; k <= n; ++k)
        if (k != j) S += c[k] * c[k].conjugated();
    std::vector<CPoly> Fexc(n + 1);  // sum_{m != j} a_km c_m^2
    for (int k = 1; k <= n; ++k) {
        for (int mm = 1; mm <= n; ++mm)
            if (mm != j) Fexc[k] += (c[mm] * c[mm]) * Ai(m, k, mm);
    }
    CPoly reFj = (S * (-Ai(m, j, j)) + Fexc[j]).real_part();

    rows_.assign(f.dim, {});
    auto add_terms = [&](int row, const CPoly& poly, auto pick) {
        for (const auto& [e, coef] : poly.terms) {
            double v = pick(coef);
            if (v != 0.0) rows_[row].push_back({v, e});
        }
    };
    auto re = [](cplx z) { return z.real(); };
    auto im = [](cplx z) { return z.imag(); };

    for (int k = 1; k <= n; ++k) {
        if (k == j) continue;
        // full complex row: p c + q conj(c) - i (F~_k) conj(c) + i Re(F~_j) c
        CPoly row = c[k] * p_[k];
        row += c[k].conjugated() * q_[k];
        CPoly Ftilde = S * (-Ai(m, k, j)) + Fexc[k];
        row += (Ftilde * c[k].conjugated()) * cplx{0.0, -1.0};
        row += (reFj * c[k]) * cplx{0.0, 1.0};

        if (k == j - 1 && f.has_minus) {
            double wr = f.minus.omega.real(), wi = f.minus.omega.imag();
            // x = (Re/wr + Im/wi)/2, y = (Re/wr - Im/wi)/2 per monomial
            for (const auto& [e, coef] : row.terms) {
                double x = 0.5 * (coef.real() / wr + coef.imag() / wi);
                double yv = 0.5 * (coef.real() / wr - coef.imag() / wi);
                if (x != 0.0) rows_[f.idx_xm].push_back({x, e});
                if (yv != 0.0) rows_[f.idx_ym].push_back({yv, e});
            }
        } else if (k == j + 1 && f.has_plus) {
            double wr = f.plus.omega.real(), wi = f.plus.omega.imag();
            for (const auto& [e, coef] : row.terms) {
                double x = 0.5 * (coef.real() / wr + coef.imag() / wi);
                double yv = 0.5 * (coef.real() / wr - coef.imag() / wi);
                if (x != 0.0) rows_[f.idx_xp].push_back({x, e});
                if (yv != 0.0) rows_[f.idx_yp].push_back({yv, e});
            }
        } else {
            for (int i = 0; i < f.center_count(); ++i)
                if (f.center_modes[i] == k) {
                    const auto& Ui = f.center_change[i].Uinv;
                    // X = Uinv00 Re(row) + Uinv01 Im(row), Y likewise
                    for (const auto& [e, coef] : row.terms) {
                        double xv = Ui[0] * coef.real() + Ui[1] * coef.imag();
                        double yv = Ui[2] * coef.real() + Ui[3] * coef.imag();
                        if (xv != 0.0) rows_[f.idx_center[i]].push_back({xv, e});
                        if (yv != 0.0) rows_[f.idx_center[i] + 1].push_back({yv, e});
                    }
                }
        }
    }
    // drop numerically-zero leftovers
    for (auto& row : rows_) {
        std::vector<Term> keep;
        double big = 0.0;
        for (const auto& t : row) big = std::max(big, std::abs(t.coef));
        for (const auto& t : row)
            if (std::abs(t.coef) > 1e-14 * big) keep.push_back(t);
        row = std::move(keep);
    }
    poly_ = true;
}

void ChartVectorField::eval(const double* y, double* dydt) const {
    if (poly_) {
        const ChartFrame& f = frame_;
        // chart validity: sum of the true mode moduli must keep r_j^2 >= 0
        double S = 0.0;
        if (f.has_minus) {
            double a2 = 2.0 * (f.minus.omega * f.minus.omega).real();
            S += y[f.idx_xm] * y[f.idx_xm] + a2 * y[f.idx_xm] * y[f.idx_ym] +
                 y[f.idx_ym] * y[f.idx_ym];
        }
        if (f.has_plus) {
            double a2 = 2.0 * (f.plus.omega * f.plus.omega).real();
            S += y[f.idx_xp] * y[f.idx_xp] + a2 * y[f.idx_xp] * y[f.idx_yp] +
                 y[f.idx_yp] * y[f.idx_yp];
        }
        for (int i = 0; i < f.center_count(); ++i) {
            const auto& U = f.center_change[i].U;
            double X = y[f.idx_center[i]], Y = y[f.idx_center[i] + 1];
            double re = U[0] * X + U[1] * Y, im = U[2] * X + U[3] * Y;
            S += re * re + im * im;
        }
        if (S > 1.0 + 1e-9) throw ChartError("chart field: state left the chart (r_j^2 < 0)");
        for (int r = 0; r < f.dim; ++r) {
            double acc = 0.0;
            for (const auto& t : rows_[r]) {
                double v = t.coef;
                for (int i = 0; i < f.dim; ++i)
                    for (int e = 0; e < t.expo[i]; ++e) v *= y[i];
                acc += v;
            }
            dydt[r] = acc;
        }
        return;
    }
    eval_generic(y, dydt);
}

void ChartVectorField::eval_generic(const double* y, double* dydt) const {
    const ChartFrame& f = frame_;
    const LatticeModel& m = *f.model;
    const int j = f.j, n = f.n;

    // raw complex modes (1-based); slot j unused here
    cvec c(n + 1, cplx{0.0, 0.0});
    if (f.has_minus) c[j - 1] = saddle_compose(y[f.idx_xm], y[f.idx_ym], f.minus.omega);
    if (f.has_plus) c[j + 1] = saddle_compose(y[f.idx_xp], y[f.idx_yp], f.plus.omega);
    for (int i = 0; i < f.center_count(); ++i)
        c[f.center_modes[i]] =
            apply2(f.center_change[i].U, cplx{y[f.idx_center[i]], y[f.idx_center[i] + 1]});

    double S = 0.0;  // sum of |c_k|^2 over k != j
    for (int k = 1; k <= n; ++k)
        if (k != j) S += std::norm(c[k]);
    if (S > 1.0 + 1e-9) throw ChartError("chart field: state left the chart (r_j^2 < 0)");
    double r2 = 1.0 - S;

    // second-order pieces, assembled without forming (1 - small) differences
    cvec Fexc(n + 1, cplx{0.0, 0.0});  // sum_{m != j} a_km c_m^2
    for (int k = 1; k <= n; ++k) {
        cplx acc{0.0, 0.0};
        for (int mm = 1; mm <= n; ++mm)
            if (mm != j) acc += Ai(m, k, mm) * c[mm] * c[mm];
        Fexc[k] = acc;
    }
    double reFjTilde = (-Ai(m, j, j) * S + Fexc[j]).real();  // Re(F_j - a_jj)

    const bool with_rho = m.kind == ModelKind::NonHamiltonian && m.rho != 0.0 && m.has_C();
    std::vector<double> mu(n + 1, 0.0);
    double RplusCjj = 0.0;
    if (with_rho) {
        for (int k = 1; k <= n; ++k)
            if (k != j) mu[k] = std::norm(c[k]);
        // R + C_jj = C_jj S (2 - S) - r^2 (sum_m C_mj mu_m + sum_l C_jl mu_l)
        //            - sum_{m,l != j} C_ml mu_m mu_l
        double lin = 0.0, quad = 0.0;
        for (int k = 1; k <= n; ++k) {
            if (k == j) continue;
            lin += (Ci(m, k, j) + Ci(m, j, k)) * mu[k];
            for (int l = 1; l <= n; ++l)
                if (l != j) quad += Ci(m, k, l) * mu[k] * mu[l];
        }
        RplusCjj = Ci(m, j, j) * S * (2.0 - S) - r2 * lin - quad;
    }

    auto nonlinear = [&](int k) -> cplx {
        // N_k = -i (F_k - a_kj) conj(c_k) + i Re(F_j - a_jj) c_k + rho (...) c_k
        cplx FkTilde = -Ai(m, k, j) * S + Fexc[k];
        cplx Nk = cplx{0.0, -1.0} * FkTilde * std::conj(c[k]) +
                  cplx{0.0, 1.0} * reFjTilde * c[k];
        if (with_rho) {
            double GkTilde = -Ci(m, j, k) * S;
            for (int mm = 1; mm <= n; ++mm)
                if (mm != j) GkTilde += Ci(m, mm, k) * mu[mm];
            Nk += m.rho * (GkTilde + RplusCjj) * c[k];
        }
        return Nk;
    };

    if (f.has_minus) {
        auto nxy = saddle_decompose(nonlinear(j - 1), f.minus.omega);
        dydt[f.idx_xm] = f.minus.mu_plus * y[f.idx_xm] + nxy[0];
        dydt[f.idx_ym] = f.minus.mu_minus * y[f.idx_ym] + nxy[1];
    }
    if (f.has_plus) {
        auto nxy = saddle_decompose(nonlinear(j + 1), f.plus.omega);
        dydt[f.idx_xp] = f.plus.mu_plus * y[f.idx_xp] + nxy[0];
        dydt[f.idx_yp] = f.plus.mu_minus * y[f.idx_yp] + nxy[1];
    }
    for (int i = 0; i < f.center_count(); ++i) {
        int k = f.center_modes[i];
        cplx cdot = p_[k] * c[k] + q_[k] * std::conj(c[k]) + nonlinear(k);
        cplx out = apply2(f.center_change[i].Uinv, cdot);
        dydt[f.idx_center[i]] = out.real();
        dydt[f.idx_center[i] + 1] = out.imag();
    }
}

void ChartVectorField::eval_linear(const double* y, double* dydt) const {
    const ChartFrame& f = frame_;
    if (f.has_minus) {
        dydt[f.idx_xm] = f.minus.mu_plus * y[f.idx_xm];
        dydt[f.idx_ym] = f.minus.mu_minus * y[f.idx_ym];
    }
    if (f.has_plus) {
        dydt[f.idx_xp] = f.plus.mu_plus * y[f.idx_xp];
        dydt[f.idx_yp] = f.plus.mu_minus * y[f.idx_yp];
    }
    for (int i = 0; i < f.center_count(); ++i) {
        int k = f.center_modes[i];
        cplx c = apply2(f.center_change[i].U, cplx{y[f.idx_center[i]], y[f.idx_center[i] + 1]});
        cplx cdot = p_[k] * c + q_[k] * std::conj(c);
        cplx out = apply2(f.center_change[i].Uinv, cdot);
        dydt[f.idx_center[i]] = out.real();
        dydt[f.idx_center[i] + 1] = out.imag();
    }
}

// ---------------------------------------------------------------------------
// Transition map
// ---------------------------------------------------------------------------

ChartState transition_map(const LatticeModel& model, int j, const ChartState& s) {
    ChartFrame fj = make_chart_frame(model, j);
    ChartFrame fn = make_chart_frame(model, j + 1);
    return transition_map(fj, fn, s);
}

ChartState transition_map(const ChartFrame& fj, const ChartFrame& fn, const ChartState& s) {
    const int j = fj.j;
    if (s.j != j) throw ChartError("transition_map: state belongs to a different chart");
    if (fn.j != j + 1) throw ChartError("transition_map: frames are not consecutive");
    if (!fj.has_plus) throw ChartError("transition_map: no next chart");

    cvec raw = chart_raw_modes(fj, s);  // raw[j] = r_j
    cplx cj1 = raw[j + 1];
    if (std::abs(cj1) <= 1e-10)
        throw ChartError("transition singularity: z_+ = 0");
    cplx phase = std::abs(cj1) / cj1;  // e^{i(theta_j - theta_{j+1})}

    // new raw modes in the (j+1)-chart: c~_k = phase * c_k; the slot raw[j]
    // already holds the recovered radius r_j, so it turns into c~_j here
    cvec craw(fn.n + 1, cplx{0.0, 0.0});
    for (int k = 1; k <= fn.n; ++k) {
        if (k == j + 1) continue;
        craw[k] = phase * raw[k];
    }

    ChartState out;
    out.j = j + 1;
    out.theta = s.theta + std::arg(cj1);
    out.theta = std::fmod(out.theta, 2.0 * M_PI);
    if (out.theta < 0) out.theta += 2.0 * M_PI;
    if (fn.has_minus) {
        if (std::abs(fn.minus.omega - fj.plus.omega) < 1e-12) {
            // matching bases: the displayed multiplicative form keeps the
            // tiny x~_- component clear of macro-term cancellation
            double rj = raw[j].real(), mod = std::abs(cj1);
            out.x_minus = rj * s.y_plus / mod;
            out.y_minus = rj * s.x_plus / mod;
        } else {
            auto xy = saddle_decompose(craw[j], fn.minus.omega);
            out.x_minus = xy[0];
            out.y_minus = xy[1];
        }
    }
    if (fn.has_plus) {
        auto xy = saddle_decompose(craw[j + 2], fn.plus.omega);
        out.x_plus = xy[0];
        out.y_plus = xy[1];
    }
    out.c_star.resize(fn.center_count());
    for (int i = 0; i < fn.center_count(); ++i)
        out.c_star[i] = apply2(fn.center_change[i].Uinv, craw[fn.center_modes[i]]);
    return out;
}

// ---------------------------------------------------------------------------
// Block diagonality
// ---------------------------------------------------------------------------

BlockDiagonalReport block_diagonal_check(const ChartFrame& frame, int samples,
                                         const std::function<void(const double*, double*)>& field,
                                         double tol, double fd_step) {
    BlockDiagonalReport rep;
    rep.tol = tol;
    ChartVectorField default_field(frame);
    auto f = field ? field : default_field.as_field();
    const int d = frame.dim;

    auto jacobian = [&](const std::vector<double>& y0) {
        std::vector<double> J(static_cast<size_t>(d) * d);
        std::vector<double> yp(y0), ym(y0), fp(d), fm(d);
        for (int col = 0; col < d; ++col) {
            yp = y0;
            ym = y0;
            yp[col] += fd_step;
            ym[col] -= fd_step;
            f(yp.data(), fp.data());
            f(ym.data(), fm.data());
            for (int row = 0; row < d; ++row)
                J[static_cast<size_t>(row) * d + col] = (fp[row] - fm[row]) / (2.0 * fd_step);
        }
        return J;
    };

    auto in_block = [&](int idx, char block) {
        switch (block) {
            case '-': return idx == frame.idx_xm || idx == frame.idx_ym;
            case '+': return idx == frame.idx_xp || idx == frame.idx_yp;
            default: return idx >= 0 && !(idx == frame.idx_xm || idx == frame.idx_ym ||
                                          idx == frame.idx_xp || idx == frame.idx_yp);
        }
    };
    auto center_mode_of = [&](int idx) {
        for (int i = 0; i < frame.center_count(); ++i)
            if (idx == frame.idx_center[i] || idx == frame.idx_center[i] + 1)
                return frame.center_modes[i];
        return -1;
    };

    // forbidden entries at a point on V_- (ingoing) or V_+ (outgoing)
    auto scan = [&](const std::vector<double>& J, bool ingoing) {
        double worst = 0.0;
        for (int r = 0; r < d; ++r) {
            for (int col = 0; col < d; ++col) {
                double v = std::abs(J[static_cast<size_t>(r) * d + col]);
                bool forbidden = false;
                if (ingoing) {
                    // rows g_-: columns z_+, c_*; rows g_+: columns z_-, c_*;
                    // rows g_k: everything except its own mode
                    if (in_block(r, '-') && (in_block(col, '+') || in_block(col, 'c')))
                        forbidden = true;
                    if (in_block(r, '+') && (in_block(col, '-') || in_block(col, 'c')))
                        forbidden = true;
                    if (in_block(r, 'c') &&
                        (in_block(col, '-') || in_block(col, '+') ||
                         (in_block(col, 'c') && center_mode_of(col) != center_mode_of(r))))
                        forbidden = true;
                } else {
                    if (in_block(r, '+') && (in_block(col, '-') || in_block(col, 'c')))
                        forbidden = true;
                    if (in_block(r, '-') && (in_block(col, '+') || in_block(col, 'c')))
                        forbidden = true;
                    if (in_block(r, 'c') &&
                        (in_block(col, '-') || in_block(col, '+') ||
                         (in_block(col, 'c') && center_mode_of(col) != center_mode_of(r))))
                        forbidden = true;
                }
                if (forbidden) worst = std::max(worst, v);
            }
        }
        return worst;
    };

    for (int sidx = 1; sidx <= samples; ++sidx) {
        double amp = 0.8 * sidx / samples;
        if (frame.has_minus) {
            std::vector<double> y(d, 0.0);
            y[frame.idx_ym] = amp;
            rep.worst_in = std::max(rep.worst_in, scan(jacobian(y), true));
        }
        if (frame.has_plus) {
            std::vector<double> y(d, 0.0);
            y[frame.idx_xp] = amp;
            rep.worst_out = std::max(rep.worst_out, scan(jacobian(y), false));
        }
    }
    return rep;
}

}  // namespace hetshadow
