#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "hetshadow/chart.hpp"
#include "hetshadow/model.hpp"

using namespace hetshadow;

TEST_CASE("pair parameters of the tridiagonal lattice") {
    LatticeModel model = ck_model(5);
    SUBCASE("adjacent pair") {
        QuadParams qp = quad_params(model, 2, 3);
        CHECK(qp.alpha == doctest::Approx(1.0));
        CHECK(std::abs(qp.a - cplx{-2.0, 0.0}) < 1e-15);
        CHECK(qp.kind == PairKind::Saddle);
        CHECK(qp.lambda_or_nu == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));
        CHECK(qp.constant_term == 0.0);
    }
    SUBCASE("far pair is a center with unit frequency") {
        QuadParams qp = quad_params(model, 1, 4);
        CHECK(qp.alpha == doctest::Approx(1.0));
        CHECK(std::abs(qp.a) == 0.0);
        CHECK(qp.kind == PairKind::Center);
        CHECK(qp.lambda_or_nu == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("unequal diagonals report the constant term") {
        LatticeModel m = ck_model(4);
        m.A[0] = cplx{0.4, 0.0};
        QuadParams qp = quad_params(m, 1, 2);
        CHECK(qp.constant_term == doctest::Approx((1.0 - 0.4) / 4.0));
    }
}

TEST_CASE("classification edge cases") {
    CHECK_THROWS_AS(classify_pair(1.0, std::polar(1.0, M_PI / 7.0)), ChartError);
    SUBCASE("kind and rate depend only on |a|") {
        QuadParams a = classify_pair(1.0, cplx{-2.0, 0.0});
        for (double phi : {0.3, 1.2, 2.9}) {
            QuadParams b = classify_pair(1.0, std::polar(2.0, phi));
            CHECK(b.kind == a.kind);
            CHECK(b.lambda_or_nu == doctest::Approx(a.lambda_or_nu).epsilon(1e-14));
        }
    }
}

TEST_CASE("conformal basis") {
    SUBCASE("displayed formula value for (1, -2)") {
        cplx w = conformal_omega(1.0, cplx{-2.0, 0.0});
        cplx w2 = w * w;
        CHECK(std::abs(w2 - cplx{-0.5, -std::sqrt(3.0) / 2.0}) < 1e-14);
        CHECK(std::abs(std::abs(w) - 1.0) < 1e-14);
        CHECK(w.real() >= 0.0);
        CHECK(conformal_a1(w) == doctest::Approx(1.0).epsilon(1e-14));
    }
    SUBCASE("unit modulus for random saddle pairs") {
        std::mt19937_64 eng(7);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        for (int s = 0; s < 100; ++s) {
            double alpha = 2.0 * unif(eng) - 1.0;
            cplx a = std::polar(std::abs(alpha) + 0.5 + unif(eng), 2 * M_PI * unif(eng));
            cplx w = conformal_omega(alpha, a);
            CHECK(std::abs(std::abs(w) - 1.0) < 1e-14);
        }
    }
    SUBCASE("modulus identity of the decomposition") {
        // |omega x + conj(omega) y|^2 = x^2 + 2 Re(omega^2) x y + y^2
        std::mt19937_64 eng(8);
        std::uniform_real_distribution<double> unif(-1.0, 1.0);
        for (int s = 0; s < 50; ++s) {
            cplx w = conformal_omega(unif(eng), cplx{1.6 + unif(eng) * 0.4, unif(eng)});
            double x = unif(eng), y = unif(eng);
            double lhs = std::norm(saddle_compose(x, y, w));
            double rhs = x * x + 2.0 * (w * w).real() * x * y + y * y;
            CHECK(std::abs(lhs - rhs) < 1e-13);
        }
    }
    CHECK_THROWS_AS(conformal_omega(2.0, cplx{1.0, 0.0}), ChartError);
}

TEST_CASE("nonconformal change normalizes the center germ") {
    double alpha = 1.0;
    cplx a{0.3, 0.2};
    CenterChange cc = nonconformal_change(alpha, a);
    double det = cc.U[0] * cc.U[3] - cc.U[1] * cc.U[2];
    CHECK(det == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cc.U[0] >= 0.0);
    CHECK(std::abs(std::abs(cc.nu) - classify_pair(alpha, a).lambda_or_nu) < 1e-12);
    // the germ cdot = i alpha c - i a conj(c) becomes Xdot = -nu Y, Ydot = nu X
    auto germ = [&](cplx c) { return cplx{0, 1} * (alpha * c) - cplx{0, 1} * a * std::conj(c); };
    std::mt19937_64 eng(4);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    for (int s = 0; s < 20; ++s) {
        double X = unif(eng), Y = unif(eng);
        cplx c{cc.U[0] * X + cc.U[1] * Y, cc.U[2] * X + cc.U[3] * Y};
        cplx cdot = germ(c);
        double Xdot = cc.Uinv[0] * cdot.real() + cc.Uinv[1] * cdot.imag();
        double Ydot = cc.Uinv[2] * cdot.real() + cc.Uinv[3] * cdot.imag();
        CHECK(Xdot == doctest::Approx(-cc.nu * Y).epsilon(1e-10));
        CHECK(Ydot == doctest::Approx(cc.nu * X).epsilon(1e-10));
    }
}

TEST_CASE("chart round trips") {
    for (auto model : {ck_model(5), nonhamiltonian_example_model(5)}) {
        SUBCASE("the invariant circle maps to the origin") {
            ChartFrame f = make_chart_frame(model, 1);
            cvec b(5, cplx{0, 0});
            double phi = 0.83;
            b[0] = std::polar(1.0, phi);
            ChartState s = to_chart(f, b);
            CHECK(std::abs(s.theta - phi) < 1e-12);
            CHECK(s.x_plus == 0.0);
            CHECK(s.y_plus == 0.0);
            for (auto c : s.c_star) CHECK(std::abs(c) == 0.0);
        }
        SUBCASE("random on-sphere states round trip") {
            int done = 0;
            for (int trial = 0; done < 100; ++trial) {
                REQUIRE(trial < 2000);
                cvec b = random_state(5, 40 + trial, true);
                int j = 1 + trial % 5;
                if (std::abs(b[j - 1]) < 0.3) continue;
                ChartFrame f = make_chart_frame(model, j);
                ChartState s = to_chart(f, b);
                cvec back = from_chart(f, s);
                for (int l = 0; l < 5; ++l) CHECK(std::abs(back[l] - b[l]) < 1e-10);
                ++done;
            }
        }
    }
}

TEST_CASE("chart state built on the outgoing line inverts exactly") {
    LatticeModel model = ck_model(4);
    int j = 1;
    double sigma = 0.05;
    ChartFrame f = make_chart_frame(model, j);
    ChartState s;
    s.j = j;
    s.theta = 0.0;
    s.x_plus = sigma;
    s.c_star.assign(f.center_count(), cplx{0, 0});
    cvec b = from_chart(f, s);
    CHECK(std::abs(total_mass(b) - 1.0) < 1e-14);
    ChartState back = to_chart(f, b);
    CHECK(back.x_plus == doctest::Approx(sigma).epsilon(1e-12));
    CHECK(std::abs(back.y_plus) < 1e-13);
    CHECK(std::abs(back.x_minus) + std::abs(back.y_minus) == 0.0);
}

TEST_CASE("chart singularity and off-sphere errors") {
    LatticeModel model = ck_model(4);
    ChartFrame f = make_chart_frame(model, 2);
    cvec b = random_state(4, 3, true);
    b[1] = 0.0;
    CHECK_THROWS_AS(to_chart(f, b), ChartError);
    cvec big = random_state(4, 3, false);
    for (auto& z : big) z *= 2.0;
    CHECK_THROWS_AS(to_chart(f, big), ChartError);
}

TEST_CASE("reduced field") {
    LatticeModel model = ck_model(4);
    SUBCASE("origin is the equilibrium") {
        CHECK(std::abs(reduced_field(model, 2, 3, cplx{0, 0})) == 0.0);
    }
    SUBCASE("the straight lines Im c = +-sqrt(3) Re c are invariant") {
        for (double slope : {std::sqrt(3.0), -std::sqrt(3.0)}) {
            cplx dir{1.0, slope};
            dir /= std::abs(dir);
            for (int i = 1; i <= 50; ++i) {
                cplx c = dir * (0.9 * i / 50.0);
                cplx v = reduced_field(model, 2, 3, c);
                double cross = v.real() * dir.imag() - v.imag() * dir.real();
                CHECK(std::abs(cross) < 1e-10);
            }
        }
    }
    SUBCASE("the unit circle is invariant") {
        for (auto m : {ck_model(4), nonhamiltonian_example_model(4)}) {
            for (double phi : {0.1, 1.4, 2.2, 4.4}) {
                cplx c = std::polar(1.0, phi);
                cplx v = reduced_field(m, 1, 2, c);
                CHECK(std::abs(2.0 * (std::conj(c) * v).real()) < 1e-12);
            }
        }
    }
    SUBCASE("linearization matches the classification") {
        for (auto [j, k] : std::vector<std::pair<int, int>>{{2, 3}, {1, 3}}) {
            QuadParams qp = quad_params(model, j, k);
            double h = 1e-6;
            auto f = [&](cplx c) { return reduced_field(model, j, k, c); };
            cplx fx = (f(cplx{h, 0}) - f(cplx{-h, 0})) / (2 * h);
            cplx fy = (f(cplx{0, h}) - f(cplx{0, -h})) / (2 * h);
            double tr = fx.real() + fy.imag();
            double det = fx.real() * fy.imag() - fy.real() * fx.imag();
            CHECK(std::abs(tr) < 1e-8);
            double expected = qp.kind == PairKind::Saddle ? -qp.lambda_or_nu * qp.lambda_or_nu
                                                          : qp.lambda_or_nu * qp.lambda_or_nu;
            CHECK(det == doctest::Approx(expected).epsilon(1e-8));
        }
    }
    CHECK_THROWS_AS(reduced_field(model, 1, 2, cplx{1.2, 0.0}), ChartError);
}

TEST_CASE("heteroclinic line directions") {
    SUBCASE("tridiagonal values") {
        auto lines = heteroclinic_lines(ck_model(4), 2);
        CHECK(lines[0][0] == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(lines[0][1] == doctest::Approx(std::sqrt(3.0) / 2).epsilon(1e-12));
        CHECK(lines[1][0] == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(lines[1][1] == doctest::Approx(-std::sqrt(3.0) / 2).epsilon(1e-12));
    }
    SUBCASE("pure interaction gives the diagonals") {
        LatticeModel m = ck_model(3);
        // alpha = 0, a = 1 for the (1,2)-pair
        for (int l = 0; l < 3; ++l) m.A[static_cast<size_t>(l) * 3 + l] = 0.0;
        m.A[1] = m.A[3] = cplx{1.0, 0.0};
        auto lines = heteroclinic_lines(m, 1);
        CHECK(std::abs(std::abs(lines[0][0]) - std::abs(lines[0][1])) < 1e-12);
        CHECK(std::abs(std::abs(lines[1][0]) - std::abs(lines[1][1])) < 1e-12);
        CHECK(lines[0][1] * lines[1][1] < 0);  // one at +45, one at -45 degrees
    }
    SUBCASE("negating a rotates the pair by 90 degrees") {
        LatticeModel m = ck_model(3);
        m.A[1] = m.A[3] = m.A[5] = m.A[7] = cplx{2.0, 0.0};
        auto rotated = heteroclinic_lines(m, 1);
        auto original = heteroclinic_lines(ck_model(3), 1);
        // directions (cos, sin) -> (-sin, cos) up to ray normalization
        auto matches = [&](const std::array<double, 2>& d) {
            for (const auto& o : original) {
                double rx = -o[1], ry = o[0];
                if (std::abs(std::abs(rx * d[1] - ry * d[0])) < 1e-12) return true;
            }
            return false;
        };
        CHECK(matches(rotated[0]));
        CHECK(matches(rotated[1]));
    }
    SUBCASE("unequal diagonals refuse straight lines") {
        LatticeModel m = ck_model(3);
        m.A[0] = cplx{0.7, 0.0};
        CHECK_THROWS_AS(heteroclinic_lines(m, 1), ChartError);
    }
}

TEST_CASE("transition map") {
    LatticeModel model = ck_model(5);
    int j = 2;
    double sigma = 0.05;
    ChartFrame fj = make_chart_frame(model, j);
    ChartFrame fn = make_chart_frame(model, j + 1);

    SUBCASE("the outgoing half-line maps onto the ingoing one") {
        for (double s : {0.01, 0.05, 0.1}) {
            ChartState st;
            st.j = j;
            st.x_plus = s;
            st.c_star.assign(fj.center_count(), cplx{0, 0});
            ChartState out = transition_map(model, j, st);
            CHECK(std::abs(out.y_minus - std::sqrt(1.0 - s * s)) < 1e-12);
            CHECK(std::abs(out.x_minus) < 1e-13);
            CHECK(std::abs(out.x_plus) + std::abs(out.y_plus) < 1e-13);
            for (auto c : out.c_star) CHECK(std::abs(c) < 1e-13);
        }
    }
    SUBCASE("zero modes stay zero") {
        ChartState st;
        st.j = j;
        st.x_plus = sigma;
        st.y_minus = 0.01;
        st.c_star.assign(fj.center_count(), cplx{0, 0});
        st.c_star[1] = cplx{1e-3, 2e-3};  // mode 5, a future mode
        ChartState out = transition_map(model, j, st);
        // mode 4 was zero, so the created plus block of chart 3 is zero
        CHECK(std::abs(out.x_plus) + std::abs(out.y_plus) == 0.0);
        // mode 1 becomes a past mode carrying the z_- modulus
        for (int i = 0; i < fn.center_count(); ++i)
            if (fn.center_modes[i] == 1)
                CHECK(std::abs(out.c_star[i]) == doctest::Approx(0.01).epsilon(1e-12));
        // mode 5 keeps its modulus under the phase factor
        for (int i = 0; i < fn.center_count(); ++i)
            if (fn.center_modes[i] == 5)
                CHECK(std::abs(std::abs(out.c_star[i]) - std::abs(st.c_star[1])) < 1e-14);
    }
    SUBCASE("consistency with the ambient identification") {
        std::mt19937_64 eng(11);
        std::uniform_real_distribution<double> unif(-1.0, 1.0);
        for (int s = 0; s < 25; ++s) {
            ChartState st;
            st.j = j;
            st.theta = 0.0;
            st.x_plus = sigma * (1.0 + 0.1 * unif(eng));
            st.y_plus = 0.02 * unif(eng);
            st.x_minus = 0.02 * unif(eng);
            st.y_minus = 0.02 * unif(eng);
            st.c_star = {cplx{0.02 * unif(eng), 0.02 * unif(eng)},
                         cplx{0.02 * unif(eng), 0.02 * unif(eng)}};
            cvec b1 = from_chart(fj, st);
            ChartState out = transition_map(model, j, st);
            cvec b2 = from_chart(fn, out);
            for (int l = 0; l < 5; ++l) CHECK(std::abs(b2[l] - b1[l]) < 1e-9);
        }
    }
    SUBCASE("transition refuses a vanishing plus block") {
        ChartState st;
        st.j = j;
        st.c_star.assign(fj.center_count(), cplx{0, 0});
        CHECK_THROWS_AS(transition_map(model, j, st), ChartError);
    }
    SUBCASE("Jacobian at a point of the outgoing line has the four-block structure") {
        ChartState st;
        st.j = j;
        st.x_plus = sigma;
        st.c_star.assign(fj.center_count(), cplx{0, 0});
        std::vector<double> y0 = chart_to_flat(fj, st);
        const double h = 1e-5;
        std::vector<std::vector<double>> J(fn.dim, std::vector<double>(fj.dim));
        for (int col = 0; col < fj.dim; ++col) {
            auto yp = y0, ym = y0;
            yp[col] += h;
            ym[col] -= h;
            auto outp = chart_to_flat(fn, transition_map(fj, fn, flat_to_chart(fj, yp)));
            auto outm = chart_to_flat(fn, transition_map(fj, fn, flat_to_chart(fj, ym)));
            for (int r = 0; r < fn.dim; ++r) J[r][col] = (outp[r] - outm[r]) / (2 * h);
        }
        // allowed blocks: c_k -> c_k (k past/future), z_- -> c_{j-1},
        // z_+ -> z_-, c_{j+2} -> z_+
        auto allowed = [&](int row, int col) {
            auto col_mode = [&](int c) {
                if (c == fj.idx_xm || c == fj.idx_ym) return j - 1;
                if (c == fj.idx_xp || c == fj.idx_yp) return j + 1;
                for (int i = 0; i < fj.center_count(); ++i)
                    if (c == fj.idx_center[i] || c == fj.idx_center[i] + 1)
                        return fj.center_modes[i];
                return -1;
            };
            auto row_mode = [&](int r) {
                if (r == fn.idx_xm || r == fn.idx_ym) return j;
                if (r == fn.idx_xp || r == fn.idx_yp) return j + 2;
                for (int i = 0; i < fn.center_count(); ++i)
                    if (r == fn.idx_center[i] || r == fn.idx_center[i] + 1)
                        return fn.center_modes[i];
                return -2;
            };
            int cm = col_mode(col), rm = row_mode(row);
            if (cm == j - 1 && rm == j - 1) return true;   // z_- becomes a past mode
            if (cm == j + 1 && rm == j) return true;       // z_+ becomes tilde z_-
            if (cm == j + 2 && rm == j + 2) return true;   // future mode becomes tilde z_+
            return cm == rm;                               // every other mode in place
        };
        for (int r = 0; r < fn.dim; ++r)
            for (int c = 0; c < fj.dim; ++c)
                if (!allowed(r, c)) CHECK(std::abs(J[r][c]) < 1e-7);
    }
}

TEST_CASE("ambient phase consistency of the transition") {
    // from_chart(j+1, J(s)) equals from_chart(j, s) as ambient points
    LatticeModel model = nonhamiltonian_example_model(5);
    ChartFrame fj = make_chart_frame(model, 2), fn = make_chart_frame(model, 3);
    ChartState st;
    st.j = 2;
    st.theta = 1.234;
    st.x_plus = 0.07;
    st.y_plus = -0.01;
    st.y_minus = 0.03;
    st.c_star = {cplx{0.01, -0.02}, cplx{0.005, 0.001}};
    cvec b1 = from_chart(fj, st);
    cvec b2 = from_chart(fn, transition_map(model, 2, st));
    for (int l = 0; l < 5; ++l) CHECK(std::abs(b2[l] - b1[l]) < 1e-9);
}

TEST_CASE("block diagonal dynamics along the heteroclinic segments") {
    for (auto model : {ck_model(5), nonhamiltonian_example_model(5)}) {
        ChartFrame f = make_chart_frame(model, 3);
        BlockDiagonalReport rep = block_diagonal_check(f, 8);
        CHECK(rep.worst_in < 1e-7);
        CHECK(rep.worst_out < 1e-7);
        CHECK(rep.pass());
    }
    SUBCASE("an odd coupling term breaks the check") {
        LatticeModel model = ck_model(5);
        ChartFrame f = make_chart_frame(model, 3);
        ChartVectorField base(f);
        auto broken = [&](const double* y, double* dy) {
            base.eval(y, dy);
            dy[f.idx_xm] += 0.01 * y[f.idx_xp];  // forbidden z_+ -> g_- coupling
        };
        BlockDiagonalReport rep = block_diagonal_check(f, 8, broken);
        CHECK(rep.worst_in > 1e-3);
        CHECK(!rep.pass());
    }
}

TEST_CASE("chart field linearization carries the germ rates") {
    LatticeModel model = ck_model(5);
    ChartFrame f = make_chart_frame(model, 3);
    ChartVectorField field(f);
    std::vector<double> y(f.dim, 0.0), dy(f.dim);
    const double h = 1e-7;
    y[f.idx_xp] = h;
    field.eval(y.data(), dy.data());
    CHECK(dy[f.idx_xp] / h == doctest::Approx(std::sqrt(3.0)).epsilon(1e-6));
    y[f.idx_xp] = 0;
    y[f.idx_yp] = h;
    field.eval(y.data(), dy.data());
    CHECK(dy[f.idx_yp] / h == doctest::Approx(-std::sqrt(3.0)).epsilon(1e-6));
}
