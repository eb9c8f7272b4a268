#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hetshadow/model.hpp"

namespace hetshadow {

struct EnclosureError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Monomial calculus
// ---------------------------------------------------------------------------

enum class SaddleVar { XMinus, YMinus, XPlus, YPlus };
const char* to_string(SaddleVar v);

// exponent vector (m_{x-}, m_{y-}, m_{x+}, m_{y+}, m_c)
struct MonomialIndex {
    int m_xm = 0, m_ym = 0, m_xp = 0, m_yp = 0, m_c = 0;

    int saddle_degree() const { return m_xm + m_ym + m_xp + m_yp; }
    int total_degree() const { return saddle_degree() + m_c; }
    bool in_class1() const { return saddle_degree() >= 3 && m_c == 0; }
    bool in_class2() const { return saddle_degree() == 1 && m_c >= 3; }
    bool operator==(const MonomialIndex&) const = default;
    std::string str() const;
};

// lambda_m, kappa_m, theta_m; s_m depends on the supplied (k, k_c)
struct MonomialConstants {
    int lambda_m = 0;  // m_xm - m_ym + m_xp - m_yp
    int kappa_m = 0;   // m_c + 2 m_xm + m_xp + m_yp
    int theta_m = 0;   // m_xp + m_ym + m_yp
};
MonomialConstants monomial_constants(const MonomialIndex& m);
int s_m(const MonomialIndex& m, int k, int k_c);

int lambda_v(SaddleVar v);  // +1 for x's, -1 for y's
int d_v(SaddleVar v);       // tube exponents: d(x-)=2, d(y-)=0, d(x+)=1, d(y+)=1

bool is_resonant(const MonomialIndex& m, SaddleVar v);

enum class Suitability { VerySuitable, PotentiallySuitable, Unsuitable };
const char* to_string(Suitability s);

// a(v, m) = kappa - lambda_m + lambda_v when lambda_m > lambda_v, else kappa.
int a_vm(SaddleVar v, const MonomialIndex& m);

// Requires is_resonant(m, v); compares a(v,m) against d(v).
Suitability suitability(SaddleVar v, const MonomialIndex& m);

struct ClassificationRow {
    SaddleVar v;
    MonomialIndex m;
    int klass = 0;  // 1 or 2
    Suitability s = Suitability::VerySuitable;
};

// All resonant monomials for v in M_1 and M_2 up to the given total degree.
std::vector<ClassificationRow> enumerate_and_classify(int max_degree, SaddleVar v);

void write_classification_json(const std::string& path,
                               const std::vector<ClassificationRow>& rows);

// ---------------------------------------------------------------------------
// Linear enclosure bound
// ---------------------------------------------------------------------------

// Coefficient c(T) of E_y(t) = t e^{lambda t} c(T) for the inclusion
// ydot in lambda y + [-1,1] D e^{lambda t} + sum_i [-1,1] D_i e^{lambda_i t}.
double enclosure_bound(double lambda, double D,
                       const std::vector<std::pair<double, double>>& forcing_terms, double T);

struct EnclosureCheck {
    bool contained = true;
    double worst_ratio = 0.0;  // max |y - e^{lt} y0| / E_y over the run
    double witness_t = 0.0;
};

// Integrates ydot = lambda y + s(t) for worst-case and random sign patterns
// of the forcing and checks containment in E_y(t) (1 + 1e-6).
EnclosureCheck verify_ode_enclosure(double lambda, double D,
                                    const std::vector<std::pair<double, double>>& forcing_terms,
                                    double T, const std::vector<double>& sample_ics,
                                    std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Synthetic normal-form systems
// ---------------------------------------------------------------------------

struct WTubeParams {
    double T = 10.0;
    double sigma = 0.05;
    double K = 1.0;
    int k = 1, k_c = 0;
    double q_yplus = 1.0;
    double A = 3.0;
};

// xdot_- = x_- + rho f_{x-}(z), ..., cdot_l = i c_l (nu_l + rho g_l(z)),
// layout [x-, y-, x+, y+, Re c_1, Im c_1, ...]; unit saddle rates.
class SyntheticSystem {
  public:
    struct Term {
        SaddleVar v;
        MonomialIndex m;
        double g = 0.0;
    };
    using CenterPerturbation = std::function<cplx(const double* y, int dim)>;

    SyntheticSystem(std::vector<Term> terms, std::vector<double> nu, double rho);

    int center_count() const { return static_cast<int>(nu_.size()); }
    int dim() const { return 4 + 2 * center_count(); }
    double rho() const { return rho_; }
    void set_rho(double r) { rho_ = r; }
    void set_center_perturbation(int l, CenterPerturbation g) { center_g_[l] = std::move(g); }
    const std::vector<Term>& terms() const { return terms_; }

    void eval(const double* y, double* dy) const;
    std::function<void(const double*, double*)> as_field() const {
        return [this](const double* y, double* dy) { eval(y, dy); };
    }
    // |g_l(z)| / |z| sampled bound over the tube region, inflated by 1.1
    double estimate_G(const WTubeParams& p, int samples, std::uint64_t seed) const;

    static double monomial_value(const MonomialIndex& m, const double* y, int dim);

  private:
    std::vector<Term> terms_;
    std::vector<double> nu_;
    double rho_;
    std::vector<CenterPerturbation> center_g_;
};

SyntheticSystem build_synthetic_nf_system(std::vector<SyntheticSystem::Term> terms,
                                          std::vector<double> nu, double rho);

// All resonant class-M1 cubic terms with alternating +-1 coefficients.
std::vector<SyntheticSystem::Term> all_resonant_cubic_terms();

// ---------------------------------------------------------------------------
// Tube verification
// ---------------------------------------------------------------------------

struct TubeWitness {
    double t = 0.0, rho = 0.0;
    int ic_index = -1;
    std::string what;
};

struct TubeReport {
    bool contained = true;
    double worst_margin = 1.0;  // min over runs of (bound - |dev|)/bound
    std::vector<TubeWitness> failures;
    int runs = 0;
};

// Containment of x_-, y_-, x_+, y_+ in the four conclusion tubes for initial
// conditions drawn per the theorem, over a rho grid.
TubeReport verify_theorem_fen(SyntheticSystem& field, const WTubeParams& params, int ic_count,
                              const std::vector<double>& rho_grid, std::uint64_t seed = 0);

// Center modulus two-sided bound |c(0)|^2 e^{-10 G sigma} < |c(t)|^2 < ... .
// G is sampled from the field unless G_override >= 0 is supplied; with no
// perturbations at all the moduli are conserved and checked to 1e-9 relative.
TubeReport verify_center_modulus(SyntheticSystem& field, const WTubeParams& params, int ic_count,
                                 std::uint64_t seed = 0, double G_override = -1.0);

void write_tube_report_json(const std::string& path, const TubeReport& fen,
                            const TubeReport& center, const WTubeParams& params);

}  // namespace hetshadow
