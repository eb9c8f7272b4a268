#include "hetshadow/enclosure.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "hetshadow/integrate.hpp"
#include "hetshadow/parallel.hpp"
#include "json.hpp"

namespace hetshadow {

using json = nlohmann::json;

const char* to_string(SaddleVar v) {
    switch (v) {
        case SaddleVar::XMinus: return "x-";
        case SaddleVar::YMinus: return "y-";
        case SaddleVar::XPlus: return "x+";
        case SaddleVar::YPlus: return "y+";
    }
    return "?";
}

const char* to_string(Suitability s) {
    switch (s) {
        case Suitability::VerySuitable: return "very-suitable";
        case Suitability::PotentiallySuitable: return "potentially-suitable";
        case Suitability::Unsuitable: return "unsuitable";
    }
    return "?";
}

std::string MonomialIndex::str() const {
    std::ostringstream os;
    auto pow = [&](const char* sym, int e) {
        if (e == 0) return;
        os << sym;
        if (e > 1) os << "^" << e;
        os << " ";
    };
    pow("x-", m_xm);
    pow("y-", m_ym);
    pow("x+", m_xp);
    pow("y+", m_yp);
    pow("c", m_c);
    std::string s = os.str();
    if (s.empty()) return "1";
    s.pop_back();
    return s;
}

MonomialConstants monomial_constants(const MonomialIndex& m) {
    MonomialConstants mc;
    mc.lambda_m = m.m_xm - m.m_ym + m.m_xp - m.m_yp;
    mc.kappa_m = m.m_c + 2 * m.m_xm + m.m_xp + m.m_yp;
    mc.theta_m = m.m_xp + m.m_ym + m.m_yp;
    return mc;
}

int s_m(const MonomialIndex& m, int k, int k_c) { return k * m.m_xm + m.m_yp + k_c * m.m_c; }

int lambda_v(SaddleVar v) {
    return (v == SaddleVar::XMinus || v == SaddleVar::XPlus) ? 1 : -1;
}

int d_v(SaddleVar v) {
    switch (v) {
        case SaddleVar::XMinus: return 2;
        case SaddleVar::YMinus: return 0;
        case SaddleVar::XPlus: return 1;
        case SaddleVar::YPlus: return 1;
    }
    return 0;
}

bool is_resonant(const MonomialIndex& m, SaddleVar v) {
    return monomial_constants(m).lambda_m == lambda_v(v);
}

int a_vm(SaddleVar v, const MonomialIndex& m) {
    MonomialConstants mc = monomial_constants(m);
    int lv = lambda_v(v);
    return mc.lambda_m > lv ? mc.kappa_m - mc.lambda_m + lv : mc.kappa_m;
}

Suitability suitability(SaddleVar v, const MonomialIndex& m) {
    if (!is_resonant(m, v))
        throw EnclosureError("suitability requires a resonant (v, m) pair");
    int a = a_vm(v, m), d = d_v(v);
    if (a > d) return Suitability::VerySuitable;
    if (a == d) return Suitability::PotentiallySuitable;
    return Suitability::Unsuitable;
}

std::vector<ClassificationRow> enumerate_and_classify(int max_degree, SaddleVar v) {
    if (max_degree > 9) throw EnclosureError("enumeration capped at degree 9");
    std::vector<ClassificationRow> rows;
    // class M1: m_s >= 3, m_c = 0
    for (int a = 0; a <= max_degree; ++a)
        for (int b = 0; a + b <= max_degree; ++b)
            for (int c = 0; a + b + c <= max_degree; ++c)
                for (int d = 0; a + b + c + d <= max_degree; ++d) {
                    MonomialIndex m{a, b, c, d, 0};
                    if (!m.in_class1() || !is_resonant(m, v)) continue;
                    rows.push_back({v, m, 1, suitability(v, m)});
                }
    // class M2: m_s = 1, m_c >= 3
    for (int slot = 0; slot < 4; ++slot)
        for (int mc = 3; mc + 1 <= max_degree; ++mc) {
            MonomialIndex m{slot == 0, slot == 1, slot == 2, slot == 3, mc};
            if (!is_resonant(m, v)) continue;
            rows.push_back({v, m, 2, suitability(v, m)});
        }
    return rows;
}

void write_classification_json(const std::string& path,
                               const std::vector<ClassificationRow>& rows) {
    json arr = json::array();
    for (const auto& r : rows) {
        arr.push_back({{"variable", to_string(r.v)},
                       {"monomial", r.m.str()},
                       {"exponents", {r.m.m_xm, r.m.m_ym, r.m.m_xp, r.m.m_yp, r.m.m_c}},
                       {"class", r.klass},
                       {"a_vm", a_vm(r.v, r.m)},
                       {"d_v", d_v(r.v)},
                       {"suitability", to_string(r.s)}});
    }
    std::ofstream out(path);
    if (!out) throw EnclosureError("cannot write " + path);
    out << arr.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Enclosure bound
// ---------------------------------------------------------------------------

double enclosure_bound(double lambda, double D,
                       const std::vector<std::pair<double, double>>& forcing_terms, double T) {
    if (D < 0) throw EnclosureError("enclosure_bound: D must be >= 0");
    double c = D;
    for (auto [li, Di] : forcing_terms) {
        if (Di < 0) throw EnclosureError("enclosure_bound: D_i must be >= 0");
        if (li == lambda) throw EnclosureError("degenerate forcing: lambda_i == lambda");
        c += li < lambda ? Di : Di * std::exp((li - lambda) * T);
    }
    return c;
}

EnclosureCheck verify_ode_enclosure(double lambda, double D,
                                    const std::vector<std::pair<double, double>>& forcing_terms,
                                    double T, const std::vector<double>& sample_ics,
                                    std::uint64_t seed) {
    double c = enclosure_bound(lambda, D, forcing_terms, T);
    EnclosureCheck result;

    // sign patterns: +1, -1, and a few random piecewise switchings
    std::mt19937_64 eng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int pattern = 0; pattern < 5; ++pattern) {
        double segment = pattern < 2 ? 2.0 * T : 0.05 * T + 0.2 * T * unif(eng);
        double phase_seed = unif(eng);
        auto sign_at = [=](double t) {
            if (pattern == 0) return 1.0;
            if (pattern == 1) return -1.0;
            long cell = static_cast<long>((t / segment) + phase_seed * 17.0);
            return (cell % 2 == 0) ? 1.0 : -1.0;
        };
        for (double y0 : sample_ics) {
            // time as an explicit state component
            auto field = [&](const double* y, double* dy) {
                double t = y[1];
                double s = sign_at(t);
                double force = D * std::exp(lambda * t);
                for (auto [li, Di] : forcing_terms) force += Di * std::exp(li * t);
                dy[0] = lambda * y[0] + s * force;
                dy[1] = 1.0;
            };
            IntegrateOptions opts;
            opts.rtol = 1e-10;
            opts.atol = 1e-14;
            opts.divergence_norm = 1e60;
            Trajectory traj = integrate(field, 2, {y0, 0.0}, 0.0, T, opts);
            for (size_t i = 0; i < traj.times.size(); ++i) {
                double t = traj.times[i];
                if (t <= 0) continue;
                double dev = std::abs(traj.states[i][0] - std::exp(lambda * t) * y0);
                // absolute slack absorbs the integrator's own error on the
                // linear solution (relevant when the forcing vanishes)
                double bound = t * std::exp(lambda * t) * c * (1.0 + 1e-6) +
                               1e-9 * std::exp(lambda * t) * (std::abs(y0) + 1.0);
                double ratio = bound > 0 ? dev / bound : (dev > 0 ? 1e300 : 0.0);
                if (ratio > result.worst_ratio) {
                    result.worst_ratio = ratio;
                    result.witness_t = t;
                }
                if (dev > bound) result.contained = false;
            }
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Synthetic systems
// ---------------------------------------------------------------------------

double SyntheticSystem::monomial_value(const MonomialIndex& m, const double* y, int dim) {
    double v = 1.0;
    for (int i = 0; i < m.m_xm; ++i) v *= y[0];
    for (int i = 0; i < m.m_ym; ++i) v *= y[1];
    for (int i = 0; i < m.m_xp; ++i) v *= y[2];
    for (int i = 0; i < m.m_yp; ++i) v *= y[3];
    if (m.m_c > 0) {
        int nc = (dim - 4) / 2;
        if (nc == 0) return 0.0;
        double sum2 = 0.0;
        for (int l = 0; l < nc; ++l) {
            double re = y[4 + 2 * l], im = y[5 + 2 * l];
            sum2 += re * re + im * im;
        }
        int mc = m.m_c;
        if (mc % 2 == 1) {
            v *= y[4];  // Re c_1 realizes the odd center factor
            mc -= 1;
        }
        for (int i = 0; i < mc / 2; ++i) v *= sum2;
    }
    return v;
}

SyntheticSystem::SyntheticSystem(std::vector<Term> terms, std::vector<double> nu, double rho)
    : terms_(std::move(terms)), nu_(std::move(nu)), rho_(rho) {
    center_g_.resize(nu_.size());
    for (const auto& t : terms_) {
        if (!is_resonant(t.m, t.v))
            throw EnclosureError("synthetic system: non-resonant monomial for " +
                                 std::string(to_string(t.v)) + ": " + t.m.str());
        if (!t.m.in_class1() && !t.m.in_class2())
            throw EnclosureError("synthetic system: monomial outside M1 and M2: " + t.m.str());
        if (t.m.m_c > 0 && nu_.empty())
            throw EnclosureError("synthetic system: center monomial without center modes");
    }
}

SyntheticSystem build_synthetic_nf_system(std::vector<SyntheticSystem::Term> terms,
                                          std::vector<double> nu, double rho) {
    return SyntheticSystem(std::move(terms), std::move(nu), rho);
}

void SyntheticSystem::eval(const double* y, double* dy) const {
    dy[0] = y[0];
    dy[1] = -y[1];
    dy[2] = y[2];
    dy[3] = -y[3];
    const int d = dim();
    for (const auto& t : terms_) {
        int row = static_cast<int>(t.v);
        dy[row] += rho_ * t.g * monomial_value(t.m, y, d);
    }
    for (int l = 0; l < center_count(); ++l) {
        cplx c{y[4 + 2 * l], y[5 + 2 * l]};
        cplx rate{0.0, nu_[l]};
        if (center_g_[l]) rate += cplx{0.0, 1.0} * rho_ * center_g_[l](y, d);
        cplx cdot = rate * c;
        dy[4 + 2 * l] = cdot.real();
        dy[5 + 2 * l] = cdot.imag();
    }
}

double SyntheticSystem::estimate_G(const WTubeParams& p, int samples, std::uint64_t seed) const {
    bool any = false;
    for (const auto& g : center_g_)
        if (g) any = true;
    if (!any) return 0.0;
    std::mt19937_64 eng(seed);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    double worst = 0.0;
    const int d = dim();
    std::vector<double> y(d);
    for (int s = 0; s < samples; ++s) {
        // sample the W tube at a random time in [0, T]
        double t = 0.5 * (unif(eng) + 1.0) * p.T;
        y[0] = unif(eng) * std::exp(t - 2.0 * p.T) * std::pow(p.T, p.k);
        y[1] = unif(eng) * std::exp(-t) * 2.0 * p.sigma;
        y[2] = unif(eng) * std::exp(t - p.T) * 2.0 * p.sigma;
        y[3] = unif(eng) * std::exp(-t - p.T) * p.K * p.sigma * (t + std::exp(-p.q_yplus * p.T));
        for (int l = 0; l < center_count(); ++l) {
            double amp = std::abs(unif(eng)) * std::pow(p.T, p.k_c) * std::exp(-p.T);
            double ph = unif(eng) * M_PI;
            y[4 + 2 * l] = amp * std::cos(ph);
            y[5 + 2 * l] = amp * std::sin(ph);
        }
        double znorm = 0.0;
        for (int i = 0; i < 4; ++i) znorm += std::abs(y[i]);
        for (int l = 0; l < center_count(); ++l)
            znorm += std::hypot(y[4 + 2 * l], y[5 + 2 * l]);
        if (znorm == 0.0) continue;
        for (const auto& g : center_g_) {
            if (!g) continue;
            worst = std::max(worst, std::abs(g(y.data(), d)) / znorm);
        }
    }
    return 1.1 * worst;
}

std::vector<SyntheticSystem::Term> all_resonant_cubic_terms() {
    std::vector<SyntheticSystem::Term> terms;
    int sign = 1;
    for (SaddleVar v :
         {SaddleVar::XMinus, SaddleVar::YMinus, SaddleVar::XPlus, SaddleVar::YPlus}) {
        for (int a = 0; a <= 3; ++a)
            for (int b = 0; a + b <= 3; ++b)
                for (int c = 0; a + b + c <= 3; ++c) {
                    int d = 3 - a - b - c;
                    MonomialIndex m{a, b, c, d, 0};
                    if (!is_resonant(m, v)) continue;
                    terms.push_back({v, m, static_cast<double>(sign)});
                    sign = -sign;
                }
    }
    return terms;
}

// ---------------------------------------------------------------------------
// Tube verification
// ---------------------------------------------------------------------------

namespace {

struct FenIc {
    double a0, eta, d0;
    std::vector<cplx> c0;
};

FenIc draw_ic(const WTubeParams& p, int n_center, std::mt19937_64& eng) {
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    FenIc ic;
    ic.a0 = unif(eng) * 0.5 * std::pow(p.T, p.k);
    ic.eta = unif(eng) * 1.5 * p.sigma;
    ic.d0 = unif(eng) * 1.5 * p.sigma;
    for (int l = 0; l < n_center; ++l) {
        double u = unif(eng) * std::pow(p.T, p.k_c);
        double ph = unif(eng) * M_PI;
        ic.c0.push_back(std::polar(std::abs(u) * std::exp(-p.T), ph));
    }
    return ic;
}

std::vector<double> fen_initial_state(const SyntheticSystem& sys, const WTubeParams& p,
                                      const FenIc& ic) {
    std::vector<double> y(sys.dim(), 0.0);
    y[0] = ic.a0 * std::exp(-2.0 * p.T);
    y[1] = ic.eta;
    y[2] = ic.d0 * std::exp(-p.T);
    y[3] = 0.0;
    for (int l = 0; l < sys.center_count(); ++l) {
        y[4 + 2 * l] = ic.c0[l].real();
        y[5 + 2 * l] = ic.c0[l].imag();
    }
    return y;
}

std::vector<double> fen_scales(const SyntheticSystem& sys, const WTubeParams& p) {
    std::vector<double> s(sys.dim(), 1.0);
    s[0] = std::max(std::exp(-2.0 * p.T) * std::pow(p.T, p.k), 1e-300);
    s[1] = std::max(p.sigma, 1e-300);
    s[2] = std::max(p.sigma * std::exp(-p.T), 1e-300);
    s[3] = std::max(p.sigma * std::exp(-p.T) * std::max(1.0, p.K * p.T), 1e-300);
    for (int l = 0; l < sys.center_count(); ++l)
        s[4 + 2 * l] = s[5 + 2 * l] =
            std::max(std::pow(p.T, p.k_c) * std::exp(-p.T), 1e-300);
    return s;
}

}  // namespace

TubeReport verify_theorem_fen(SyntheticSystem& field, const WTubeParams& params, int ic_count,
                              const std::vector<double>& rho_grid, std::uint64_t seed) {
    TubeReport rep;
    const WTubeParams& p = params;
    const double A = p.A;

    std::vector<FenIc> ics;
    std::mt19937_64 eng(seed);
    for (int i = 0; i < ic_count; ++i) ics.push_back(draw_ic(p, field.center_count(), eng));

    struct Run {
        int ic;
        double rho;
    };
    std::vector<Run> runs;
    for (size_t r = 0; r < rho_grid.size(); ++r)
        for (int i = 0; i < ic_count; ++i) runs.push_back({i, rho_grid[r]});
    rep.runs = static_cast<int>(runs.size());

    std::vector<double> margins(runs.size(), 1.0);
    std::vector<TubeWitness> witnesses(runs.size());
    std::vector<char> failed(runs.size(), 0);

    parallel_for(static_cast<long>(runs.size()), [&](long idx) {
        const Run& run = runs[idx];
        SyntheticSystem sys = field;  // per-task copy: rho differs
        sys.set_rho(run.rho);
        const FenIc& ic = ics[run.ic];
        IntegrateOptions opts;
        opts.rtol = 1e-10;
        opts.atol = 1e-13;
        opts.scale = fen_scales(sys, p);
        opts.divergence_norm = 1e6;
        Trajectory traj;
        try {
            traj = integrate(sys.as_field(), sys.dim(), fen_initial_state(sys, p, ic), 0.0, p.T,
                             opts);
        } catch (const std::exception& e) {
            failed[idx] = 1;
            witnesses[idx] = {0.0, run.rho, run.ic, std::string("integration: ") + e.what()};
            margins[idx] = -1.0;
            return;
        }
        double margin = 1.0;
        TubeWitness w;
        bool bad = false;
        auto check = [&](double t, const std::vector<double>& y) {
            struct Bound {
                double dev, tube;
                const char* name;
            };
            double eT = std::exp(-p.T), e2T = std::exp(-2.0 * p.T);
            Bound bounds[4] = {
                {std::abs(y[0] - ic.a0 * e2T * std::exp(t)),
                 e2T * std::exp(t) * std::pow(p.T, p.k) / A, "x-"},
                {std::abs(y[1] - ic.eta * std::exp(-t)), std::exp(-t) * p.sigma * p.K / A, "y-"},
                {std::abs(y[2] - ic.d0 * eT * std::exp(t)), eT * std::exp(t) * p.sigma / A, "x+"},
                {std::abs(y[3]), std::exp(-t) * eT * p.K * p.sigma * t / A, "y+"},
            };
            for (auto& b : bounds) {
                double m = b.tube > 0 ? (b.tube - b.dev) / b.tube : (b.dev > 0 ? -1.0 : 1.0);
                if (t == 0.0 && b.tube == 0.0) m = 1.0;  // y+ tube starts at zero width
                if (m < margin) {
                    margin = m;
                    w = {t, run.rho, run.ic, b.name};
                }
                if (b.dev > b.tube * (1.0 + 1e-9) && !(t == 0.0 && b.dev == 0.0)) bad = true;
            }
        };
        for (size_t i = 0; i < traj.times.size(); ++i) check(traj.times[i], traj.states[i]);
        margins[idx] = margin;
        if (bad) {
            failed[idx] = 1;
            witnesses[idx] = w;
        }
    });

    for (size_t i = 0; i < runs.size(); ++i) {
        rep.worst_margin = std::min(rep.worst_margin, margins[i]);
        if (failed[i]) {
            rep.contained = false;
            rep.failures.push_back(witnesses[i]);
        }
    }
    return rep;
}

TubeReport verify_center_modulus(SyntheticSystem& field, const WTubeParams& params, int ic_count,
                                 std::uint64_t seed, double G_override) {
    TubeReport rep;
    const WTubeParams& p = params;
    double G = G_override >= 0.0 ? G_override : field.estimate_G(p, 1000, seed ^ 0xabcdef);
    double band = std::exp(10.0 * G * p.sigma);

    std::vector<FenIc> ics;
    std::mt19937_64 eng(seed);
    for (int i = 0; i < ic_count; ++i) ics.push_back(draw_ic(p, field.center_count(), eng));
    rep.runs = ic_count;

    std::vector<double> margins(ics.size(), 1.0);
    std::vector<char> failed(ics.size(), 0);
    std::vector<TubeWitness> witnesses(ics.size());

    parallel_for(static_cast<long>(ics.size()), [&](long idx) {
        SyntheticSystem sys = field;
        const FenIc& ic = ics[idx];
        IntegrateOptions opts;
        opts.rtol = 1e-10;
        opts.atol = 1e-13;
        opts.scale = fen_scales(sys, p);
        opts.divergence_norm = 1e6;
        Trajectory traj;
        try {
            traj = integrate(sys.as_field(), sys.dim(), fen_initial_state(sys, p, ic), 0.0, p.T,
                             opts);
        } catch (const std::exception& e) {
            failed[idx] = 1;
            witnesses[idx] = {0.0, sys.rho(), static_cast<int>(idx),
                              std::string("integration: ") + e.what()};
            margins[idx] = -1.0;
            return;
        }
        double margin = 1.0;
        bool bad = false;
        TubeWitness w;
        const bool conserved = band <= 1.0 + 1e-15;
        for (size_t i = 0; i < traj.times.size(); ++i) {
            for (int l = 0; l < sys.center_count(); ++l) {
                double mod0 = std::norm(ic.c0[l]);
                if (mod0 == 0.0) continue;
                double re = traj.states[i][4 + 2 * l], im = traj.states[i][5 + 2 * l];
                double mod = re * re + im * im;
                double m;
                bool outside;
                if (conserved) {
                    double rel = std::abs(mod - mod0) / mod0;
                    m = 1.0 - rel / 1e-9;
                    outside = rel > 1e-9;
                } else {
                    double lo = mod0 / band, hi = mod0 * band;
                    m = std::min(std::log(mod / lo), std::log(hi / mod)) / std::log(band);
                    outside = !(mod > lo && mod < hi);
                }
                if (m < margin) {
                    margin = m;
                    w = {traj.times[i], sys.rho(), static_cast<int>(idx),
                         "center modulus mode " + std::to_string(l + 1)};
                }
                if (outside) bad = true;
            }
        }
        margins[idx] = margin;
        if (bad) {
            failed[idx] = 1;
            witnesses[idx] = w;
        }
    });

    for (size_t i = 0; i < ics.size(); ++i) {
        rep.worst_margin = std::min(rep.worst_margin, margins[i]);
        if (failed[i]) {
            rep.contained = false;
            rep.failures.push_back(witnesses[i]);
        }
    }
    return rep;
}

void write_tube_report_json(const std::string& path, const TubeReport& fen,
                            const TubeReport& center, const WTubeParams& params) {
    auto to_json = [](const TubeReport& r) {
        json j{{"contained", r.contained}, {"worst_margin", r.worst_margin}, {"runs", r.runs}};
        json fails = json::array();
        for (const auto& f : r.failures)
            fails.push_back({{"t", f.t}, {"rho", f.rho}, {"ic", f.ic_index}, {"what", f.what}});
        j["failures"] = fails;
        return j;
    };
    json j{{"params",
            {{"T", params.T},
             {"sigma", params.sigma},
             {"K", params.K},
             {"k", params.k},
             {"k_c", params.k_c},
             {"A", params.A}}},
           {"saddle_tubes", to_json(fen)},
           {"center_modulus", to_json(center)}};
    std::ofstream out(path);
    if (!out) throw EnclosureError("cannot write " + path);
    out << j.dump(2) << "\n";
}

}  // namespace hetshadow
