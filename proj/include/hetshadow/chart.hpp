#pragma once

#include <array>
#include <functional>
#include <optional>
#include <vector>

#include "hetshadow/model.hpp"

namespace hetshadow {

struct ChartError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Pairwise quadratic data
// ---------------------------------------------------------------------------

enum class PairKind { Saddle, Center };

struct QuadParams {
    double alpha = 0.0;       // inner energy coefficient
    cplx a{0.0, 0.0};         // interaction coefficient
    double lambda_or_nu = 0;  // sqrt(|a|^2 - alpha^2) or sqrt(alpha^2 - |a|^2)
    PairKind kind = PairKind::Center;
    double constant_term = 0.0;  // (a_kk - a_jj)/4, reported separately
};

// (alpha, a) of the reduced quadratic form for modes (j, k), 1-based indices:
// alpha = (a_kk + a_jj)/2, a = a_kj; constant term (a_kk - a_jj)/4.
QuadParams quad_params(const LatticeModel& model, int j, int k);

// Classification by the sign of |a|^2 - alpha^2; degenerate spectrum errors.
QuadParams classify_pair(double alpha, cplx a);

// omega with omega^2 = i conj(a) / (lambda + i alpha), |omega| = 1,
// root chosen with Re >= 0 (tie-break Im >= 0). Requires a saddle pair.
cplx conformal_omega(double alpha, cplx a);

// The lemma constant a1 = -2 Re(omega^2).
double conformal_a1(cplx omega);

// Real change (Re c, Im c) = U (X, Y) turning the center germ into
// Xdot = -nu Y, Ydot = nu X, normalized so that det U = 1 and the first
// column has positive first entry. Requires a center pair.
struct CenterChange {
    std::array<double, 4> U{1, 0, 0, 1};     // row-major 2x2
    std::array<double, 4> Uinv{1, 0, 0, 1};
    double nu = 0.0;
};
CenterChange nonconformal_change(double alpha, cplx a);

// ---------------------------------------------------------------------------
// Charts
// ---------------------------------------------------------------------------

// Saddle basis of the true linearization of mode k in the j-chart:
//   cdot = p c + q conj(c), p = i a_jj + rho (C_jk - C_jj), q = -i a_kj.
// The invariant lines are spanned by omega (rate mu_plus > 0) and, for
// real interaction coefficients, conj(omega) (rate mu_minus < 0).
struct SaddleBasis {
    cplx omega{1.0, 0.0};
    double mu_plus = 0.0, mu_minus = 0.0;
};

// Everything fixed per (model, chart index); modes are 1-based.
struct ChartFrame {
    const LatticeModel* model = nullptr;
    int j = 0;  // 1-based
    int n = 0;
    bool has_minus = false, has_plus = false;
    SaddleBasis minus, plus;
    std::vector<int> center_modes;          // 1-based, excludes j-1, j, j+1
    std::vector<CenterChange> center_change;
    // flat real layout of dimension 2(n-1)
    int dim = 0;
    int idx_xm = -1, idx_ym = -1, idx_xp = -1, idx_yp = -1;
    std::vector<int> idx_center;  // index of Re C_l per center mode

    int center_count() const { return static_cast<int>(center_modes.size()); }
};

ChartFrame make_chart_frame(const LatticeModel& model, int j);

// State in the j-chart normal-form coordinates. Saddle neighbours are
// decomposed in the SaddleBasis; center modes carry the U^-1 change.
struct ChartState {
    int j = 0;
    double theta = 0.0;
    double x_minus = 0, y_minus = 0, x_plus = 0, y_plus = 0;
    std::vector<cplx> c_star;  // aligned with ChartFrame::center_modes
};

std::vector<double> chart_to_flat(const ChartFrame& frame, const ChartState& s);
ChartState flat_to_chart(const ChartFrame& frame, const std::vector<double>& y,
                         double theta = 0.0);

ChartState to_chart(const ChartFrame& frame, const cvec& b);
cvec from_chart(const ChartFrame& frame, const ChartState& s);

// Raw complex chart coordinates c_k for all modes k != j (1-based mode ->
// value); c_j slot holds the recovered radius r_j.
cvec chart_raw_modes(const ChartFrame& frame, const ChartState& s);

// x,y with c = omega x + conj(omega) y.
std::array<double, 2> saddle_decompose(cplx c, cplx omega);
cplx saddle_compose(double x, double y, cplx omega);

// ---------------------------------------------------------------------------
// Dynamics
// ---------------------------------------------------------------------------

// Reduced two-mode field on the (j,k) invariant plane in the c variable.
cplx reduced_field(const LatticeModel& model, int j, int k, cplx c);

// The two invariant straight lines of the reduced field through the origin
// (unit directions, x >= 0 normalization). Requires a saddle pair with
// equal diagonal entries.
std::array<std::array<double, 2>, 2> heteroclinic_lines(const LatticeModel& model, int j);

// Full phase-reduced vector field of the j-chart in normal-form flat
// coordinates. Evaluates the exact pushforward of the ambient field with the
// linear part applied in diagonal form. For Hamiltonian models the field is
// an exact odd cubic polynomial and is expanded once into monomial terms;
// termwise evaluation keeps the tiny saddle components free of macro-term
// cancellation, which matters for the nano-scale chain bookkeeping.
class ChartVectorField {
  public:
    explicit ChartVectorField(ChartFrame frame);
    const ChartFrame& frame() const { return frame_; }
    int dim() const { return frame_.dim; }
    void eval(const double* y, double* dydt) const;
    void eval_linear(const double* y, double* dydt) const;
    std::function<void(const double*, double*)> as_field() const {
        return [this](const double* y, double* dy) { eval(y, dy); };
    }
    bool polynomial() const { return poly_; }

  private:
    ChartFrame frame_;
    std::vector<cplx> p_, q_;  // germ linear coefficients per mode (1-based)
    bool poly_ = false;
    struct Term {
        double coef;
        std::array<int, 8> expo;
    };
    std::vector<std::vector<Term>> rows_;  // per flat coordinate
    void build_polynomial();
    void eval_generic(const double* y, double* dydt) const;
};

// Transition map between the j-th and (j+1)-th charts.
ChartState transition_map(const LatticeModel& model, int j, const ChartState& s);
ChartState transition_map(const ChartFrame& from, const ChartFrame& to, const ChartState& s);

// ---------------------------------------------------------------------------
// Block-diagonality verification
// ---------------------------------------------------------------------------

struct BlockDiagonalReport {
    double worst_in = 0.0;   // max forbidden Jacobian entry along H_in samples
    double worst_out = 0.0;  // same along H_out
    double tol = 1e-6;
    bool pass() const { return worst_in < tol && worst_out < tol; }
};

// field must act on the frame's flat layout; defaults to the model field.
BlockDiagonalReport block_diagonal_check(
    const ChartFrame& frame, int samples_along_heteroclinic,
    const std::function<void(const double*, double*)>& field = nullptr, double tol = 1e-6,
    double fd_step = 1e-5);

}  // namespace hetshadow
