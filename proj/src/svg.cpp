#include "hetshadow/svg.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "hetshadow/chart.hpp"
#include "hetshadow/integrate.hpp"

namespace hetshadow {

SvgCanvas::SvgCanvas(double x0, double y0, double x1, double y1, int width_px, int height_px)
    : x0_(x0), y0_(y0), x1_(x1), y1_(y1), w_(width_px), h_(height_px) {}

void SvgCanvas::polyline(const std::vector<std::pair<double, double>>& pts,
                         const std::string& color, double width, double opacity) {
    if (pts.size() < 2) return;
    std::ostringstream os;
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << width
       << "\" stroke-opacity=\"" << opacity << "\" points=\"";
    for (const auto& [x, y] : pts) os << px(x) << "," << py(y) << " ";
    os << "\"/>";
    elems_.push_back(os.str());
}

void SvgCanvas::line(double xa, double ya, double xb, double yb, const std::string& color,
                     double width) {
    std::ostringstream os;
    os << "<line x1=\"" << px(xa) << "\" y1=\"" << py(ya) << "\" x2=\"" << px(xb) << "\" y2=\""
       << py(yb) << "\" stroke=\"" << color << "\" stroke-width=\"" << width << "\"/>";
    elems_.push_back(os.str());
}

void SvgCanvas::circle(double cx, double cy, double r, const std::string& stroke,
                       const std::string& fill, double width) {
    std::ostringstream os;
    os << "<circle cx=\"" << px(cx) << "\" cy=\"" << py(cy) << "\" r=\"" << r * scale()
       << "\" stroke=\"" << stroke << "\" fill=\"" << fill << "\" stroke-width=\"" << width
       << "\"/>";
    elems_.push_back(os.str());
}

void SvgCanvas::dot(double cx, double cy, double r_px, const std::string& fill) {
    std::ostringstream os;
    os << "<circle cx=\"" << px(cx) << "\" cy=\"" << py(cy) << "\" r=\"" << r_px
       << "\" fill=\"" << fill << "\"/>";
    elems_.push_back(os.str());
}

void SvgCanvas::text(double x, double y, const std::string& s, int size_px,
                     const std::string& color) {
    std::ostringstream os;
    os << "<text x=\"" << px(x) << "\" y=\"" << py(y) << "\" font-size=\"" << size_px
       << "\" font-family=\"sans-serif\" fill=\"" << color << "\">" << s << "</text>";
    elems_.push_back(os.str());
}

void SvgCanvas::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w_ << "\" height=\"" << h_
        << "\" viewBox=\"0 0 " << w_ << " " << h_ << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (const auto& e : elems_) out << e << "\n";
    out << "</svg>\n";
}

// ---------------------------------------------------------------------------
// Phase portraits
// ---------------------------------------------------------------------------

namespace {

// critical points of the reduced field by damped Newton from grid seeds
std::vector<cplx> find_equilibria(const LatticeModel& model, int j, int k) {
    std::vector<cplx> roots;
    auto f = [&](cplx c) { return reduced_field(model, j, k, c); };
    for (int gx = -6; gx <= 6; ++gx) {
        for (int gy = -6; gy <= 6; ++gy) {
            cplx c{gx / 6.2, gy / 6.2};
            if (std::abs(c) > 0.98) continue;
            bool ok = true;
            for (int it = 0; it < 60; ++it) {
                cplx val = f(c);
                if (std::abs(val) < 1e-13) break;
                double h = 1e-7;
                cplx fx = (f(c + h) - f(c - h)) / (2.0 * h);
                cplx fy = (f(c + cplx{0, h}) - f(c - cplx{0, h})) / (2.0 * h);
                // solve the 2x2 real system [fx fy] d = -val
                double a = fx.real(), b = fy.real(), cc = fx.imag(), d = fy.imag();
                double det = a * d - b * cc;
                if (std::abs(det) < 1e-14) {
                    ok = false;
                    break;
                }
                double dx = (-val.real() * d + val.imag() * b) / det;
                double dy = (val.real() * cc - val.imag() * a) / det;
                cplx step{dx, dy};
                if (std::abs(step) > 0.3) step *= 0.3 / std::abs(step);
                c += step;
                if (std::abs(c) > 1.05) {
                    ok = false;
                    break;
                }
            }
            if (!ok || std::abs(f(c)) > 1e-10 || std::abs(c) > 1.0 + 1e-9) continue;
            bool dup = false;
            for (cplx r : roots)
                if (std::abs(r - c) < 1e-6) dup = true;
            if (!dup) roots.push_back(c);
        }
    }
    return roots;
}

}  // namespace

void render_portrait(const LatticeModel& model, int j, int k, const std::string& svg_path,
                     const std::string& csv_path, int grid) {
    SvgCanvas canvas(-1.18, -1.18, 1.18, 1.18, 720, 720);
    canvas.circle(0, 0, 1.0, "#444444", "none", 1.5);

    // invariant straight lines when the construction applies
    bool lines_drawn = false;
    try {
        if (k == j + 1) {
            auto lines = heteroclinic_lines(model, j);
            for (const auto& d : lines)
                canvas.line(-d[0], -d[1], d[0], d[1], "#c03030", 1.5);
            lines_drawn = true;
        }
    } catch (const ChartError&) {
        // curved or absent heteroclinics; streamlines still show the portrait
    }

    // streamline traces
    auto field2 = [&](const double* y, double* dy) {
        cplx c{y[0], y[1]};
        if (std::norm(c) > 1.0) {
            dy[0] = dy[1] = 0.0;
            return;
        }
        cplx v = reduced_field(model, j, k, c);
        dy[0] = v.real();
        dy[1] = v.imag();
    };
    IntegrateOptions opts;
    opts.rtol = 1e-8;
    opts.atol = 1e-10;
    opts.divergence_norm = 4.0;
    for (int gx = -4; gx <= 4; ++gx) {
        for (int gy = -4; gy <= 4; ++gy) {
            cplx seed{gx / 4.6, gy / 4.6};
            if (std::abs(seed) > 0.97 || std::abs(seed) < 0.03) continue;
            for (double dir : {1.0, -1.0}) {
                try {
                    Trajectory traj =
                        integrate(field2, 2, {seed.real(), seed.imag()}, 0.0, dir * 6.0, opts);
                    std::vector<std::pair<double, double>> pts;
                    for (const auto& s : traj.states) {
                        if (s[0] * s[0] + s[1] * s[1] > 1.0) break;
                        pts.push_back({s[0], s[1]});
                    }
                    canvas.polyline(pts, "#3060b0", 0.7, 0.55);
                } catch (const std::exception&) {
                    // streamline left the disk; skip
                }
            }
        }
    }

    // equilibria on top
    for (cplx r : find_equilibria(model, j, k)) canvas.dot(r.real(), r.imag(), 4.0, "#202020");
    canvas.dot(0.0, 0.0, 4.0, "#c03030");
    canvas.text(-1.1, 1.1, "reduced field, modes (" + std::to_string(j) + "," +
                               std::to_string(k) + ")" + (lines_drawn ? ", invariant lines" : ""));
    canvas.save(svg_path);

    if (!csv_path.empty()) {
        std::ofstream csv(csv_path);
        if (!csv) throw std::runtime_error("cannot write " + csv_path);
        csv.precision(16);
        csv << "re_c,im_c,re_cdot,im_cdot\n";
        for (int gx = 0; gx < grid; ++gx)
            for (int gy = 0; gy < grid; ++gy) {
                double x = -1.0 + 2.0 * gx / (grid - 1);
                double y = -1.0 + 2.0 * gy / (grid - 1);
                if (x * x + y * y > 1.0) continue;
                cplx v = reduced_field(model, j, k, cplx{x, y});
                csv << x << "," << y << "," << v.real() << "," << v.imag() << "\n";
            }
    }
}

void render_mass_cascade(const LatticeModel& model, const ShadowingOrbit& orbit,
                         const std::string& svg_path) {
    const char* palette[] = {"#c03030", "#3060b0", "#2c9a52", "#9034a0",
                             "#c08020", "#108080", "#804040", "#404080"};
    double t1 = orbit.ambient.times.empty() ? 1.0 : orbit.ambient.times.back();
    SvgCanvas canvas(-0.06 * t1, -0.12, 1.04 * t1, 1.1, 900, 520);
    canvas.line(0, 0, t1, 0, "#444444", 1.0);
    canvas.line(0, 0, 0, 1.0, "#444444", 1.0);
    canvas.line(0, 1.0, t1, 1.0, "#bbbbbb", 0.6);
    for (int l = 0; l < model.n; ++l) {
        std::vector<std::pair<double, double>> pts;
        for (size_t i = 0; i < orbit.ambient.times.size(); ++i) {
            const auto& y = orbit.ambient.states[i];
            pts.push_back({orbit.ambient.times[i],
                           y[2 * l] * y[2 * l] + y[2 * l + 1] * y[2 * l + 1]});
        }
        canvas.polyline(pts, palette[l % 8], 1.6);
        canvas.text(0.02 * t1 + l * 0.1 * t1, 1.07, "|b" + std::to_string(l + 1) + "|^2", 13,
                    palette[l % 8]);
    }
    canvas.save(svg_path);
}

}  // namespace hetshadow
