#pragma once

#include <array>
#include <memory>
#include <vector>

#include "hetshadow/chart.hpp"

namespace hetshadow {

// One resonant normalization step for a chart: a cubic polynomial change of
// variables z = w + h(w) chosen so that the conjugated field has no
// non-resonant cubic terms. The conjugation is applied exactly (the new
// coordinates are a legitimate chart), so higher-order tails remain but the
// dangerous saddle couplings of the raw chart field are gone. h preserves
// the sign symmetry, the invariant center hyperplanes and the straightened
// heteroclinic half-lines.
class CubicChartNF {
  public:
    static CubicChartNF build(const ChartFrame& frame, double gap_threshold = 0.4);

    const ChartFrame& frame() const { return frame_; }
    int dim() const { return dim_; }
    bool active() const { return active_; }

    // conjugated vector field in w coordinates
    void eval(const double* w, double* dw) const;
    std::function<void(const double*, double*)> as_field() const {
        return [this](const double* w, double* dw) { eval(w, dw); };
    }
    void eval_linear(const double* w, double* dw) const { base_->eval_linear(w, dw); }

    std::vector<double> from_nf(const std::vector<double>& w) const;  // w -> z
    std::vector<double> to_nf(const std::vector<double>& z) const;    // z -> w

    // max |cubic coefficient| of the conjugated field over non-resonant
    // monomials; diagnostic for tests
    double residual_nonresonant() const { return residual_; }

  private:
    ChartFrame frame_;
    std::shared_ptr<ChartVectorField> base_;
    int dim_ = 0;
    bool active_ = false;
    double residual_ = 0.0;
    std::vector<std::array<int, 8>> mono_;  // cubic exponent table
    std::vector<double> h_;                 // dim x M, row-major

    void h_eval(const double* w, double* out) const;
    void h_jacobian(const double* w, double* J) const;  // dim x dim
};

}  // namespace hetshadow
