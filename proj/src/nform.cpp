#include "hetshadow/nform.hpp"

#include <cmath>
#include <cstring>

namespace hetshadow {

namespace {

// cubic exponent table over the four saddle coordinates only; center
// couplings are harmless at this order and normalizing them would shrink the
// validity ball of the change
std::vector<std::array<int, 8>> saddle_cubics(const ChartFrame& f) {
    std::vector<int> coords;
    if (f.has_minus) {
        coords.push_back(f.idx_xm);
        coords.push_back(f.idx_ym);
    }
    if (f.has_plus) {
        coords.push_back(f.idx_xp);
        coords.push_back(f.idx_yp);
    }
    std::vector<std::array<int, 8>> out;
    for (size_t a = 0; a < coords.size(); ++a)
        for (size_t b = a; b < coords.size(); ++b)
            for (size_t c = b; c < coords.size(); ++c) {
                std::array<int, 8> m{};
                ++m[coords[a]];
                ++m[coords[b]];
                ++m[coords[c]];
                out.push_back(m);
            }
    return out;
}

double mono_value(const std::array<int, 8>& m, const double* w, int dim) {
    double v = 1.0;
    for (int i = 0; i < dim; ++i)
        for (int e = 0; e < m[i]; ++e) v *= w[i];
    return v;
}

}  // namespace

CubicChartNF CubicChartNF::build(const ChartFrame& frame, double gap_threshold) {
    CubicChartNF nf;
    nf.frame_ = frame;
    nf.base_ = std::make_shared<ChartVectorField>(frame);
    const int d = frame.dim;
    nf.dim_ = d;
    nf.mono_ = saddle_cubics(frame);
    const int M = static_cast<int>(nf.mono_.size());
    nf.h_.assign(static_cast<size_t>(d) * M, 0.0);
    if (M == 0) {
        nf.active_ = false;
        return nf;
    }

    std::vector<int> coords;
    std::vector<double> rate;  // diagonal linear rates of the saddle coords
    if (frame.has_minus) {
        coords.push_back(frame.idx_xm);
        rate.push_back(frame.minus.mu_plus);
        coords.push_back(frame.idx_ym);
        rate.push_back(frame.minus.mu_minus);
    }
    if (frame.has_plus) {
        coords.push_back(frame.idx_xp);
        rate.push_back(frame.plus.mu_plus);
        coords.push_back(frame.idx_yp);
        rate.push_back(frame.plus.mu_minus);
    }
    auto rate_of = [&](int coord) {
        for (size_t i = 0; i < coords.size(); ++i)
            if (coords[i] == coord) return rate[i];
        return 0.0;
    };

    // cubic coefficients of the raw field on the saddle subspace, by odd
    // polarization (exact for the cubic lattice fields; small-amplitude
    // sampling suppresses any quintic radial terms)
    auto nonlinear_odd = [&](const std::vector<double>& z) {
        std::vector<double> f(d), l(d), zm(d), fm(d);
        nf.base_->eval(z.data(), f.data());
        for (int i = 0; i < d; ++i) zm[i] = -z[i];
        nf.base_->eval(zm.data(), fm.data());
        nf.base_->eval_linear(z.data(), l.data());
        std::vector<double> out(d);
        for (int i = 0; i < d; ++i) out[i] = 0.5 * (f[i] - fm[i]) - l[i];
        return out;
    };
    const double t = 0.05, t3 = t * t * t;
    auto idx_of = [&](int i, int j, int k) {
        std::array<int, 8> key{};
        ++key[i];
        ++key[j];
        ++key[k];
        for (int m = 0; m < M; ++m)
            if (nf.mono_[m] == key) return m;
        return -1;
    };
    std::vector<double> C(static_cast<size_t>(d) * M, 0.0);
    std::vector<double> z(d, 0.0);
    auto sample = [&](int i, double si, int j, double sj, int k, double sk) {
        std::fill(z.begin(), z.end(), 0.0);
        z[i] += si * t;
        z[j] += sj * t;
        z[k] += sk * t;
        auto v = nonlinear_odd(z);
        for (auto& x : v) x /= t3;
        return v;
    };
    const int nc = static_cast<int>(coords.size());
    for (int a = 0; a < nc; ++a) {
        int i = coords[a];
        auto ciii = sample(i, 1, i, 0, i, 0);
        int mi = idx_of(i, i, i);
        for (int r = 0; r < d; ++r) C[static_cast<size_t>(r) * M + mi] = ciii[r];
    }
    for (int a = 0; a < nc; ++a) {
        for (int b = a + 1; b < nc; ++b) {
            int i = coords[a], j = coords[b];
            auto s1 = sample(i, 1, j, 1, i, 0);
            auto s2 = sample(i, 1, j, -1, i, 0);
            int miij = idx_of(i, i, j), mijj = idx_of(i, j, j);
            int miii = idx_of(i, i, i), mjjj = idx_of(j, j, j);
            for (int r = 0; r < d; ++r) {
                double ciii = C[static_cast<size_t>(r) * M + miii];
                double cjjj = C[static_cast<size_t>(r) * M + mjjj];
                C[static_cast<size_t>(r) * M + miij] = 0.5 * (s1[r] - s2[r]) - cjjj;
                C[static_cast<size_t>(r) * M + mijj] = 0.5 * (s1[r] + s2[r]) - ciii;
            }
        }
    }
    for (int a = 0; a < nc; ++a)
        for (int b = a + 1; b < nc; ++b)
            for (int c2 = b + 1; c2 < nc; ++c2) {
                int i = coords[a], j = coords[b], k = coords[c2];
                auto s = sample(i, 1, j, 1, k, 1);
                int mijk = idx_of(i, j, k);
                for (int r = 0; r < d; ++r) {
                    double acc = s[r];
                    for (auto [u, v, w] :
                         {std::array<int, 3>{i, i, i}, {j, j, j}, {k, k, k}, {i, i, j},
                          {i, j, j}, {i, i, k}, {i, k, k}, {j, j, k}, {j, k, k}})
                        acc -= C[static_cast<size_t>(r) * M + idx_of(u, v, w)];
                    C[static_cast<size_t>(r) * M + mijk] = acc;
                }
            }

    // the homological operator is diagonal here: gap(v, m) = <m, mu> - mu_v;
    // non-resonant coefficients are removed by h_{v,m} = C_{v,m} / gap
    double residual = 0.0;
    for (int a = 0; a < nc; ++a) {
        int v = coords[a];
        for (int m = 0; m < M; ++m) {
            double gap = -rate_of(v);
            for (int i = 0; i < d; ++i)
                if (nf.mono_[m][i]) gap += nf.mono_[m][i] * rate_of(i);
            double c = C[static_cast<size_t>(v) * M + m];
            if (std::abs(gap) > gap_threshold)
                nf.h_[static_cast<size_t>(v) * M + m] = c / gap;
            else
                residual = std::max(residual, std::abs(c));
        }
    }

    // sign symmetry: a monomial in row v must be odd in v's mode block and
    // even in the other one (automatic for these fields; enforced exactly)
    auto block_of = [&](int coord) {
        if (coord == frame.idx_xm || coord == frame.idx_ym) return 0;
        return 1;
    };
    for (int a = 0; a < nc; ++a) {
        int v = coords[a];
        for (int m = 0; m < M; ++m) {
            int deg[2] = {0, 0};
            for (int b = 0; b < nc; ++b) deg[block_of(coords[b])] += nf.mono_[m][coords[b]];
            bool ok = deg[block_of(v)] % 2 == 1 && deg[1 - block_of(v)] % 2 == 0;
            if (!ok) nf.h_[static_cast<size_t>(v) * M + m] = 0.0;
        }
    }

    nf.residual_ = residual;
    nf.active_ = true;
    return nf;
}

void CubicChartNF::h_eval(const double* w, double* out) const {
    const int d = dim_, M = static_cast<int>(mono_.size());
    for (int v = 0; v < d; ++v) out[v] = 0.0;
    for (int m = 0; m < M; ++m) {
        double val = mono_value(mono_[m], w, d);
        if (val == 0.0) continue;
        for (int v = 0; v < d; ++v) {
            double hv = h_[static_cast<size_t>(v) * M + m];
            if (hv != 0.0) out[v] += hv * val;
        }
    }
}

void CubicChartNF::h_jacobian(const double* w, double* J) const {
    const int d = dim_, M = static_cast<int>(mono_.size());
    std::fill(J, J + static_cast<size_t>(d) * d, 0.0);
    for (int m = 0; m < M; ++m) {
        for (int i = 0; i < d; ++i) {
            if (mono_[m][i] == 0) continue;
            std::array<int, 8> key = mono_[m];
            --key[i];
            double val = mono_[m][i] * mono_value(key, w, d);
            if (val == 0.0) continue;
            for (int v = 0; v < d; ++v) {
                double hv = h_[static_cast<size_t>(v) * M + m];
                if (hv != 0.0) J[static_cast<size_t>(v) * d + i] += hv * val;
            }
        }
    }
}

std::vector<double> CubicChartNF::from_nf(const std::vector<double>& w) const {
    if (!active_) return w;
    std::vector<double> z(w), hw(dim_);
    h_eval(w.data(), hw.data());
    for (int i = 0; i < dim_; ++i) z[i] += hw[i];
    return z;
}

std::vector<double> CubicChartNF::to_nf(const std::vector<double>& z) const {
    if (!active_) return z;
    std::vector<double> w(z), hw(dim_);
    for (int it = 0; it < 16; ++it) {
        h_eval(w.data(), hw.data());
        double delta = 0.0;
        for (int i = 0; i < dim_; ++i) {
            double next = z[i] - hw[i];
            delta = std::max(delta, std::abs(next - w[i]));
            w[i] = next;
        }
        if (delta < 1e-16) break;
    }
    return w;
}

void CubicChartNF::eval(const double* w, double* dw) const {
    const int d = dim_;
    if (!active_) {
        base_->eval(w, dw);
        return;
    }
    std::vector<double> z(d), hw(d), fz(d);
    h_eval(w, hw.data());
    for (int i = 0; i < d; ++i) z[i] = w[i] + hw[i];
    base_->eval(z.data(), fz.data());
    // solve (I + Dh(w)) dw = f(z) by Gaussian elimination with pivoting
    std::vector<double> Jm(static_cast<size_t>(d) * d);
    h_jacobian(w, Jm.data());
    for (int i = 0; i < d; ++i) Jm[static_cast<size_t>(i) * d + i] += 1.0;
    for (int col = 0; col < d; ++col) {
        int best = col;
        for (int r = col + 1; r < d; ++r)
            if (std::abs(Jm[static_cast<size_t>(r) * d + col]) >
                std::abs(Jm[static_cast<size_t>(best) * d + col]))
                best = r;
        if (best != col) {
            for (int c = 0; c < d; ++c)
                std::swap(Jm[static_cast<size_t>(col) * d + c],
                          Jm[static_cast<size_t>(best) * d + c]);
            std::swap(fz[col], fz[best]);
        }
        double pivot = Jm[static_cast<size_t>(col) * d + col];
        if (std::abs(pivot) < 1e-8)
            throw ChartError("normal-form chart folded (left its validity ball)");
        for (int r = col + 1; r < d; ++r) {
            double factor = Jm[static_cast<size_t>(r) * d + col] / pivot;
            if (factor == 0.0) continue;
            for (int c = col; c < d; ++c)
                Jm[static_cast<size_t>(r) * d + c] -=
                    factor * Jm[static_cast<size_t>(col) * d + c];
            fz[r] -= factor * fz[col];
        }
    }
    for (int r = d - 1; r >= 0; --r) {
        double acc = fz[r];
        for (int c = r + 1; c < d; ++c) acc -= Jm[static_cast<size_t>(r) * d + c] * dw[c];
        dw[r] = acc / Jm[static_cast<size_t>(r) * d + r];
    }
}

}  // namespace hetshadow
