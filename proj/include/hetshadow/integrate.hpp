#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hetshadow {

struct IntegrateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Autonomous first-order system dy/dt = f(y) on R^dim.
using VectorField = std::function<void(const double* y, double* dydt)>;

struct IntegrateOptions {
    double rtol = 1e-10;
    double atol = 1e-12;
    double safety = 0.9;
    double min_step = 1e-12;          // absolute floor; underflow below 1e-14*span errors
    double max_step_fraction = 0.1;   // max step = fraction of the span
    double divergence_norm = 10.0;    // abort when max|y_i| exceeds this
    long max_steps = 2'000'000;
    // Optional fixed diagonal rescaling y = S u (S > 0 per component). The
    // integration runs on u; states in the trajectory are reported in y units.
    std::vector<double> scale;
    // Per-component absolute error floor in y units; keeps the controller
    // from demanding precision below the field's evaluation noise when a
    // scale entry is tiny.
    double min_abs_error = 0.0;
};

struct IntegrationStats {
    long accepted = 0;
    long rejected = 0;
    double max_mass_drift = 0.0;    // filled by callers monitoring invariants
    double max_energy_drift = 0.0;
    bool scaled = false;
};

// One accepted step with the data needed for 4th-order dense output.
struct DenseStep {
    double t0 = 0.0, h = 0.0;
    std::vector<double> rcont;  // 5*dim interpolation coefficients
};

struct Trajectory {
    int dim = 0;
    std::vector<double> times;                // strictly increasing node times
    std::vector<std::vector<double>> states;  // states at node times
    std::vector<DenseStep> steps;
    std::vector<double> scale;                // per-component units, empty = unscaled
    IntegrationStats stats;

    // Dense evaluation anywhere inside the integrated span.
    std::vector<double> eval(double t) const;
    double t_begin() const { return times.front(); }
    double t_end() const { return times.back(); }
};

// Adaptive Dormand-Prince 5(4) over [t0, t1] (t1 > t0 or t1 < t0).
Trajectory integrate(const VectorField& field, int dim, const std::vector<double>& y0,
                     double t0, double t1, const IntegrateOptions& opts = {});

// Endpoint-only convenience wrapper.
std::vector<double> flow_map(const VectorField& field, int dim, const std::vector<double>& y0,
                             double T, const IntegrateOptions& opts = {});

// First crossing of event(y) = 0 with the requested sign of d(event)/dt:
// direction > 0 rising, < 0 falling, 0 any. Root located by bisection on the
// dense output, |event| < 1e-10 * scale at the returned point.
struct Crossing {
    double t = 0.0;
    std::vector<double> state;
};
Crossing event_crossing(const VectorField& field, int dim, const std::vector<double>& y0,
                        const std::function<double(const double*)>& event, int direction,
                        double horizon, const IntegrateOptions& opts = {});

// CSV export with caller-supplied column names.
void write_trajectory_csv(const std::string& path, const Trajectory& traj,
                          const std::vector<std::string>& columns,
                          const std::function<std::vector<double>(double, const std::vector<double>&)>&
                              row_transform = nullptr);

}  // namespace hetshadow
