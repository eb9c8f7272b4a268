#pragma once

#include <string>
#include <vector>

#include "hetshadow/model.hpp"
#include "hetshadow/shadow.hpp"

namespace hetshadow {

// Minimal self-contained SVG writer in world coordinates.
class SvgCanvas {
  public:
    SvgCanvas(double x0, double y0, double x1, double y1, int width_px = 640,
              int height_px = 640);
    void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& color,
                  double width = 1.0, double opacity = 1.0);
    void line(double x0, double y0, double x1, double y1, const std::string& color,
              double width = 1.0);
    void circle(double cx, double cy, double r, const std::string& stroke,
                const std::string& fill = "none", double width = 1.0);
    void dot(double cx, double cy, double r_px, const std::string& fill);
    void text(double x, double y, const std::string& s, int size_px = 12,
              const std::string& color = "#222222");
    void save(const std::string& path) const;

  private:
    double x0_, y0_, x1_, y1_;
    int w_, h_;
    std::vector<std::string> elems_;
    double px(double x) const { return (x - x0_) / (x1_ - x0_) * w_; }
    double py(double y) const { return (y1_ - y) / (y1_ - y0_) * h_; }
    double scale() const { return w_ / (x1_ - x0_); }
};

// Phase portrait of the reduced (j,k) field on the unit disk: equilibria,
// invariant straight lines when present, streamline traces. Also emits a CSV
// of the sampled field.
void render_portrait(const LatticeModel& model, int j, int k, const std::string& svg_path,
                     const std::string& csv_path, int grid = 24);

// Stacked per-mode mass curves |b_l(t)|^2 of a shadowing orbit.
void render_mass_cascade(const LatticeModel& model, const ShadowingOrbit& orbit,
                         const std::string& svg_path);

}  // namespace hetshadow
