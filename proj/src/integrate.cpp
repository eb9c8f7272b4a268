#include "hetshadow/integrate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace hetshadow {

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                 b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// 5th-minus-4th order error weights
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
// dense output weights
constexpr double d1 = -12715105075.0 / 11282082432.0;
constexpr double d3 = 87487479700.0 / 32700410799.0;
constexpr double d4 = -10690763975.0 / 1880347072.0;
constexpr double d5 = 701980252875.0 / 199316789632.0;
constexpr double d6 = -1453857185.0 / 822651844.0;
constexpr double d7 = 69997945.0 / 29380423.0;

struct Stepper {
    const VectorField& f;
    int dim;
    std::vector<double> k1, k2, k3, k4, k5, k6, k7, ytmp, ynew, yerr;

    Stepper(const VectorField& field, int d)
        : f(field), dim(d), k1(d), k2(d), k3(d), k4(d), k5(d), k6(d), k7(d), ytmp(d), ynew(d),
          yerr(d) {}

    // One trial step from (t, y) with step h; k1 must hold f(y) on entry
    // (FSAL). On exit ynew/yerr/k7 are filled.
    void attempt(const std::vector<double>& y, double h) {
        for (int i = 0; i < dim; ++i) ytmp[i] = y[i] + h * a21 * k1[i];
        f(ytmp.data(), k2.data());
        for (int i = 0; i < dim; ++i) ytmp[i] = y[i] + h * (a31 * k1[i] + a32 * k2[i]);
        f(ytmp.data(), k3.data());
        for (int i = 0; i < dim; ++i)
            ytmp[i] = y[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
        f(ytmp.data(), k4.data());
        for (int i = 0; i < dim; ++i)
            ytmp[i] = y[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
        f(ytmp.data(), k5.data());
        for (int i = 0; i < dim; ++i)
            ytmp[i] =
                y[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
        f(ytmp.data(), k6.data());
        for (int i = 0; i < dim; ++i)
            ynew[i] = y[i] + h * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
        f(ynew.data(), k7.data());
        for (int i = 0; i < dim; ++i)
            yerr[i] = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] +
                           e7 * k7[i]);
    }

    std::vector<double> atols;  // per-component absolute tolerances

    double error_norm(const std::vector<double>& y, double rtol, double atol) const {
        double acc = 0.0;
        for (int i = 0; i < dim; ++i) {
            double a = atols.empty() ? atol : atols[i];
            double sk = a + rtol * std::max(std::abs(y[i]), std::abs(ynew[i]));
            double r = yerr[i] / sk;
            acc += r * r;
        }
        return std::sqrt(acc / dim);
    }

    DenseStep dense(double t, double h, const std::vector<double>& y) const {
        DenseStep s;
        s.t0 = t;
        s.h = h;
        s.rcont.resize(5 * static_cast<size_t>(dim));
        for (int i = 0; i < dim; ++i) {
            double ydiff = ynew[i] - y[i];
            double bspl = h * k1[i] - ydiff;
            s.rcont[i] = y[i];
            s.rcont[dim + i] = ydiff;
            s.rcont[2 * dim + i] = bspl;
            s.rcont[3 * dim + i] = ydiff - h * k7[i] - bspl;
            s.rcont[4 * dim + i] = h * (d1 * k1[i] + d3 * k3[i] + d4 * k4[i] + d5 * k5[i] +
                                        d6 * k6[i] + d7 * k7[i]);
        }
        return s;
    }
};

std::vector<double> eval_step(const DenseStep& s, int dim, double t) {
    double theta = (t - s.t0) / s.h;
    double theta1 = 1.0 - theta;
    std::vector<double> y(dim);
    for (int i = 0; i < dim; ++i) {
        y[i] = s.rcont[i] +
               theta * (s.rcont[dim + i] +
                        theta1 * (s.rcont[2 * dim + i] +
                                  theta * (s.rcont[3 * dim + i] + theta1 * s.rcont[4 * dim + i])));
    }
    return y;
}

}  // namespace

std::vector<double> Trajectory::eval(double t) const {
    double lo = std::min(t_begin(), t_end()), hi = std::max(t_begin(), t_end());
    if (t < lo - 1e-12 || t > hi + 1e-12)
        throw IntegrateError("dense evaluation outside the integrated span");
    // locate the covering step (steps are time-ordered in integration direction)
    size_t a = 0, b = steps.size();
    bool forward = t_end() >= t_begin();
    while (b - a > 1) {
        size_t m = (a + b) / 2;
        if (forward ? (steps[m].t0 <= t) : (steps[m].t0 >= t))
            a = m;
        else
            b = m;
    }
    auto y = eval_step(steps[a], dim, t);
    if (!scale.empty())
        for (int i = 0; i < dim; ++i) y[i] *= scale[i];
    return y;
}

Trajectory integrate(const VectorField& field, int dim, const std::vector<double>& y0,
                     double t0, double t1, const IntegrateOptions& opts) {
    if (opts.rtol <= 0 || opts.atol <= 0) throw IntegrateError("tolerances must be positive");
    if (static_cast<int>(y0.size()) != dim) throw IntegrateError("state dimension mismatch");
    const bool scaled = !opts.scale.empty();
    if (scaled && static_cast<int>(opts.scale.size()) != dim)
        throw IntegrateError("scale dimension mismatch");

    // In scaled mode integrate u with y = S u.
    VectorField f = field;
    std::vector<double> u0 = y0;
    if (scaled) {
        std::vector<double> S = opts.scale;
        for (double s : S)
            if (!(s > 0)) throw IntegrateError("scale entries must be positive");
        for (int i = 0; i < dim; ++i) u0[i] = y0[i] / S[i];
        f = [field, S, dim](const double* u, double* dudt) {
            std::vector<double> y(dim), dy(dim);
            for (int i = 0; i < dim; ++i) y[i] = u[i] * S[i];
            field(y.data(), dy.data());
            for (int i = 0; i < dim; ++i) dudt[i] = dy[i] / S[i];
        };
    }

    const double span = t1 - t0;
    if (span == 0.0) {
        Trajectory traj;
        traj.dim = dim;
        traj.times = {t0};
        traj.states = {y0};
        traj.stats.scaled = scaled;
        return traj;
    }
    const double dir = span > 0 ? 1.0 : -1.0;
    const double hmax = std::abs(span) * opts.max_step_fraction;

    Trajectory traj;
    traj.dim = dim;
    traj.scale = opts.scale;
    traj.stats.scaled = scaled;
    traj.times.push_back(t0);
    traj.states.push_back(y0);

    Stepper st(f, dim);
    if (scaled && opts.min_abs_error > 0) {
        st.atols.resize(dim);
        for (int i = 0; i < dim; ++i)
            st.atols[i] = std::max(opts.atol, opts.min_abs_error / opts.scale[i]);
    }
    std::vector<double> y = u0;
    double t = t0;
    f(y.data(), st.k1.data());

    // initial step guess from the derivative magnitude
    double ynorm = 0, fnorm = 0;
    for (int i = 0; i < dim; ++i) {
        ynorm = std::max(ynorm, std::abs(y[i]));
        fnorm = std::max(fnorm, std::abs(st.k1[i]));
    }
    double h = dir * std::min(hmax, fnorm > 0 ? std::max(1e-8, 0.01 * (ynorm + 1.0) / fnorm)
                                              : std::abs(span) * 0.01);

    while ((t1 - t) * dir > 0) {
        if (std::abs(h) > hmax) h = dir * hmax;
        if ((t + h - t1) * dir > 0) h = t1 - t;
        if (std::abs(h) < std::max(opts.min_step, 1e-14 * std::abs(span)))
            throw IntegrateError("stiffness: step size underflow at t = " + std::to_string(t));
        if (traj.stats.accepted + traj.stats.rejected > opts.max_steps)
            throw IntegrateError("step budget exhausted");

        st.attempt(y, h);
        double err = st.error_norm(y, opts.rtol, opts.atol);
        if (err <= 1.0) {
            traj.steps.push_back(st.dense(t, h, y));
            t += h;
            y = st.ynew;
            std::swap(st.k1, st.k7);  // FSAL
            traj.times.push_back(t);
            if (scaled) {
                std::vector<double> yo(dim);
                for (int i = 0; i < dim; ++i) yo[i] = y[i] * opts.scale[i];
                traj.states.push_back(yo);
            } else {
                traj.states.push_back(y);
            }
            ++traj.stats.accepted;
            double big = 0;
            for (int i = 0; i < dim; ++i)
                big = std::max(big, std::abs(scaled ? y[i] * opts.scale[i] : y[i]));
            if (big > opts.divergence_norm)
                throw IntegrateError("divergence: state left the safety ball");
        } else {
            ++traj.stats.rejected;
        }
        double factor = opts.safety * std::pow(std::max(err, 1e-10), -0.2);
        factor = std::clamp(factor, 0.2, 5.0);
        h *= factor;
    }
    return traj;
}

std::vector<double> flow_map(const VectorField& field, int dim, const std::vector<double>& y0,
                             double T, const IntegrateOptions& opts) {
    if (T == 0.0) return y0;
    Trajectory traj = integrate(field, dim, y0, 0.0, T, opts);
    return traj.states.back();
}

Crossing event_crossing(const VectorField& field, int dim, const std::vector<double>& y0,
                        const std::function<double(const double*)>& event, int direction,
                        double horizon, const IntegrateOptions& opts) {
    // integrate in chunks so that the scan stops at the first crossing rather
    // than chasing the trajectory to the end of the horizon
    const int chunks = 64;
    const double dt = horizon / chunks;
    std::vector<double> y = y0;
    double t_base = 0.0;
    double g_prev = event(y.data());
    for (int chunk = 0; chunk < chunks; ++chunk) {
        Trajectory traj;
        try {
            traj = integrate(field, dim, y, t_base, t_base + dt, opts);
        } catch (const IntegrateError& e) {
            throw IntegrateError(std::string("event not reached: ") + e.what());
        }
        for (size_t k = 1; k < traj.times.size(); ++k) {
            double g = event(traj.states[k].data());
            bool crossed = (g_prev <= 0 && g >= 0 && direction >= 0) ||
                           (g_prev >= 0 && g <= 0 && direction <= 0);
            if (crossed && g_prev != g) {
                double lo = traj.times[k - 1], hi = traj.times[k];
                for (int iter = 0; iter < 200; ++iter) {
                    double mid = 0.5 * (lo + hi);
                    auto ymid = traj.eval(mid);
                    double gm = event(ymid.data());
                    if ((g_prev <= 0) == (gm <= 0))
                        lo = mid;
                    else
                        hi = mid;
                    if (std::abs(gm) < 1e-10 &&
                        hi - lo < 1e-12 * std::max(1.0, std::abs(hi)))
                        break;
                }
                Crossing c;
                c.t = 0.5 * (lo + hi);
                c.state = traj.eval(c.t);
                return c;
            }
            g_prev = g;
        }
        y = traj.states.back();
        t_base += dt;
    }
    throw IntegrateError("event not reached within horizon");
}

void write_trajectory_csv(const std::string& path, const Trajectory& traj,
                          const std::vector<std::string>& columns,
                          const std::function<std::vector<double>(double, const std::vector<double>&)>&
                              row_transform) {
    std::ofstream out(path);
    if (!out) throw IntegrateError("cannot write " + path);
    out.precision(16);
    out << "t";
    for (const auto& c : columns) out << "," << c;
    out << "\n";
    for (size_t k = 0; k < traj.times.size(); ++k) {
        std::vector<double> row =
            row_transform ? row_transform(traj.times[k], traj.states[k]) : traj.states[k];
        out << traj.times[k];
        for (double v : row) out << "," << v;
        out << "\n";
    }
}

}  // namespace hetshadow
