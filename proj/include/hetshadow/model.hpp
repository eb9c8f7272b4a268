#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hetshadow {

using cplx = std::complex<double>;
using cvec = std::vector<cplx>;

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class ModelKind { Hamiltonian, NonHamiltonian };

// Lattice vector field on C^n:
//   db_l/dt = -i (sum_m a_{lm} b_m^2) conj(b_l)
//             + rho (sum_j C_{jl} |b_j|^2) b_l + rho R b_l,
// with R = -sum_{j,l} C_{jl} |b_j|^2 |b_l|^2, so that M = 1 is invariant.
// The rho terms vanish for the Hamiltonian kind.
struct LatticeModel {
    int n = 0;
    ModelKind kind = ModelKind::Hamiltonian;
    std::vector<cplx> A;    // n x n, row-major, a(l,m) = A[l*n + m]
    std::vector<double> C;  // n x n, row-major; empty means zero
    double rho = 0.0;

    cplx a(int l, int m) const { return A[static_cast<size_t>(l) * n + m]; }
    double c(int j, int l) const {
        return C.empty() ? 0.0 : C[static_cast<size_t>(j) * n + l];
    }
    bool has_C() const { return !C.empty(); }

    // max |a_{lm} - conj(a_{ml})|
    double hermitian_defect() const;
    // dominance ordering |a_{lm}| < |a_{ll}| < |a_{l,l+1}| for |l-m| >= 2
    bool dominance_ordering(double tol = 0.0) const;
    // constant diagonals a_{jj} = alpha, a_{j+1,j} = a
    bool constant_diagonals(double tol = 1e-12) const;

    void validate() const;
};

// Tridiagonal example lattice: a_{ll} = 1, a_{l,l+1} = a_{l+1,l} = -2.
LatticeModel ck_model(int n);

// Non-Hamiltonian example on top of the tridiagonal lattice:
// rho = 0.03, C_{j,j} = C_{j,j+1} = (-1)^j, C_{j+1,j} = 2 (1-based j).
LatticeModel nonhamiltonian_example_model(int n, double rho = 0.03);

// Model config file I/O (JSON; complex entries written as "re,im" pairs).
LatticeModel load_model(const std::string& path);
void save_model(const LatticeModel& model, const std::string& path);
LatticeModel parse_model_spec(const std::string& spec);  // path, "ck:N" or "fig:N"

double total_mass(const cvec& b);

// Vector field evaluation; throws on non-finite input.
cvec eval_field(const LatticeModel& model, const cvec& b);

// Quartic energy H(b) = 1/4 sum conj(b_l)^2 a_{lm} b_m^2 (real for Hermitian A).
double energy(const LatticeModel& model, const cvec& b);

// Analytic dM/dt = 2 rho R (M - 1); zero for the Hamiltonian kind.
double mass_derivative(const LatticeModel& model, const cvec& b);

// dM/dt computed from the field, 2 Re<f(b), b>; used as a cross-check.
double mass_derivative_from_field(const LatticeModel& model, const cvec& b);

struct HypothesisReport {
    double phase_equivariance = 0.0;  // max ||f(e^{it}b) - e^{it}f(b)|| / ||b||^3
    double hyperplane = 0.0;          // max |f_l| with b_l = 0
    double sign_symmetry = 0.0;       // max ||f(s.b) - s.f(b)||
    double mass_invariance = 0.0;     // max |2 Re<f(b),b>| on M=1
    double mass_rate_defect = 0.0;    // max rel. |analytic - field| mass rate
    double hermitian_defect = 0.0;    // exact matrix check (Hamiltonian kind)
    int samples = 0;

    double worst() const;
    bool pass(double tol) const { return worst() < tol; }
};

HypothesisReport check_hypotheses(const LatticeModel& model, int sample_count,
                                  std::uint64_t seed = 0);

// Random state helpers (deterministic given seed).
cvec random_state(int n, std::uint64_t seed, bool unit_mass = true);

}  // namespace hetshadow
