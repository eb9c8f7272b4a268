#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "hetshadow/enclosure.hpp"

using namespace hetshadow;

TEST_CASE("monomial constants") {
    SUBCASE("y- x+^2") {
        MonomialIndex m{0, 1, 2, 0, 0};
        MonomialConstants c = monomial_constants(m);
        CHECK(c.lambda_m == 1);
        CHECK(c.kappa_m == 2);
        CHECK(c.theta_m == 3);
    }
    SUBCASE("y-^2 x+") {
        MonomialIndex m{0, 2, 1, 0, 0};
        MonomialConstants c = monomial_constants(m);
        CHECK(c.lambda_m == -1);
        CHECK(c.kappa_m == 1);
        CHECK(c.theta_m == 3);
    }
    SUBCASE("zero monomial") {
        MonomialConstants c = monomial_constants(MonomialIndex{});
        CHECK(c.lambda_m == 0);
        CHECK(c.kappa_m == 0);
        CHECK(c.theta_m == 0);
    }
    SUBCASE("s_m uses the supplied exponents") {
        CHECK(s_m(MonomialIndex{1, 0, 0, 1, 2}, 3, 2) == 3 + 1 + 4);
    }
}

TEST_CASE("resonance") {
    MonomialIndex ym_xp2{0, 1, 2, 0, 0};
    CHECK(is_resonant(ym_xp2, SaddleVar::XMinus));
    CHECK(is_resonant(ym_xp2, SaddleVar::XPlus));
    CHECK(!is_resonant(ym_xp2, SaddleVar::YPlus));
    for (int mc : {0, 1, 4}) {
        MonomialIndex pure_center{0, 0, 0, 0, mc};
        CHECK(!is_resonant(pure_center, SaddleVar::YMinus));
    }
}

TEST_CASE("suitability of the two boundary monomials") {
    CHECK(suitability(SaddleVar::XMinus, MonomialIndex{0, 1, 2, 0, 0}) ==
          Suitability::PotentiallySuitable);
    CHECK(suitability(SaddleVar::YPlus, MonomialIndex{0, 2, 1, 0, 0}) ==
          Suitability::PotentiallySuitable);
    CHECK_THROWS_AS(suitability(SaddleVar::YPlus, MonomialIndex{0, 1, 2, 0, 0}),
                    EnclosureError);
}

TEST_CASE("every class-M2 resonant monomial is very suitable") {
    for (SaddleVar v :
         {SaddleVar::XMinus, SaddleVar::YMinus, SaddleVar::XPlus, SaddleVar::YPlus}) {
        for (int slot = 0; slot < 4; ++slot) {
            for (int mc : {3, 4, 5}) {
                MonomialIndex m{slot == 0, slot == 1, slot == 2, slot == 3, mc};
                if (!is_resonant(m, v)) continue;
                CHECK(suitability(v, m) == Suitability::VerySuitable);
            }
        }
    }
}

TEST_CASE("classification table reproduces the appendix") {
    int potentially = 0;
    for (SaddleVar v :
         {SaddleVar::XMinus, SaddleVar::YMinus, SaddleVar::XPlus, SaddleVar::YPlus}) {
        auto rows = enumerate_and_classify(9, v);
        CHECK(!rows.empty());
        for (const auto& r : rows) {
            CHECK(r.s != Suitability::Unsuitable);
            if (r.s == Suitability::PotentiallySuitable) {
                ++potentially;
                CHECK(r.klass == 1);
                bool xm = r.v == SaddleVar::XMinus && r.m == MonomialIndex{0, 1, 2, 0, 0};
                bool yp = r.v == SaddleVar::YPlus && r.m == MonomialIndex{0, 2, 1, 0, 0};
                CHECK((xm || yp));
            }
        }
    }
    CHECK(potentially == 2);
    SUBCASE("low-degree slices") {
        for (SaddleVar v : {SaddleVar::YMinus, SaddleVar::XPlus}) {
            for (const auto& r : enumerate_and_classify(5, v))
                CHECK(r.s == Suitability::VerySuitable);
        }
        int ps = 0;
        for (const auto& r : enumerate_and_classify(5, SaddleVar::XMinus))
            if (r.s == Suitability::PotentiallySuitable) ++ps;
        CHECK(ps == 1);
    }
    CHECK_THROWS_AS(enumerate_and_classify(10, SaddleVar::XMinus), EnclosureError);
}

TEST_CASE("enclosure bound coefficient") {
    CHECK(enclosure_bound(1.0, 1.0, {}, 5.0) == doctest::Approx(1.0));
    CHECK(enclosure_bound(1.0, 0.0, {{3.0, 1.0}}, 2.0) ==
          doctest::Approx(std::exp(4.0)).epsilon(1e-14));
    CHECK(enclosure_bound(1.0, 0.0, {{0.0, 2.0}}, 77.0) == doctest::Approx(2.0));
    CHECK_THROWS_AS(enclosure_bound(1.0, 0.0, {{1.0, 1.0}}, 2.0), EnclosureError);
    SUBCASE("monotone in the forcing sizes and in T") {
        double base = enclosure_bound(1.0, 0.5, {{2.0, 1.0}, {0.0, 1.0}}, 3.0);
        CHECK(enclosure_bound(1.0, 0.5, {{2.0, 1.5}, {0.0, 1.0}}, 3.0) > base);
        CHECK(enclosure_bound(1.0, 0.5, {{2.0, 1.0}, {0.0, 1.5}}, 3.0) > base);
        CHECK(enclosure_bound(1.0, 0.5, {{2.0, 1.0}, {0.0, 1.0}}, 4.0) > base);
    }
}

TEST_CASE("integrated enclosure containment") {
    SUBCASE("constant-sign forcing is tight at small times") {
        EnclosureCheck chk = verify_ode_enclosure(1.0, 1.0, {}, 3.0, {0.0, 0.5}, 1);
        CHECK(chk.contained);
        CHECK(chk.worst_ratio > 0.9);  // the D-term bound is attained
        CHECK(chk.worst_ratio <= 1.0 + 1e-6);
    }
    SUBCASE("zero forcing reduces to the linear solution") {
        EnclosureCheck chk = verify_ode_enclosure(0.7, 0.0, {}, 4.0, {1.0}, 2);
        CHECK(chk.contained);
    }
    SUBCASE("sign-switching forcing with mixed rates stays contained") {
        EnclosureCheck chk =
            verify_ode_enclosure(1.0, 0.3, {{2.0, 0.4}, {-1.0, 0.8}}, 4.0, {0.0, -0.2, 0.7}, 3);
        CHECK(chk.contained);
    }
}

TEST_CASE("synthetic normal-form systems") {
    SUBCASE("empty spec is the linear saddle times center system") {
        SyntheticSystem sys = build_synthetic_nf_system({}, {2.0}, 1.0);
        std::vector<double> y{0.1, -0.2, 0.3, 0.4, 0.5, 0.6}, dy(6);
        sys.eval(y.data(), dy.data());
        CHECK(dy[0] == doctest::Approx(0.1));
        CHECK(dy[1] == doctest::Approx(0.2));
        CHECK(dy[2] == doctest::Approx(0.3));
        CHECK(dy[3] == doctest::Approx(-0.4));
        CHECK(dy[4] == doctest::Approx(-2.0 * 0.6));
        CHECK(dy[5] == doctest::Approx(2.0 * 0.5));
    }
    SUBCASE("a single resonant cubic lands in the right component") {
        SyntheticSystem sys =
            build_synthetic_nf_system({{SaddleVar::XMinus, MonomialIndex{0, 1, 2, 0, 0}, 1.0}},
                                      {}, 0.5);
        std::vector<double> y{0.0, 0.3, 0.2, 0.0}, dy(4);
        sys.eval(y.data(), dy.data());
        CHECK(dy[0] == doctest::Approx(0.5 * 0.3 * 0.04));
        CHECK(dy[1] == doctest::Approx(-0.3));
    }
    SUBCASE("invalid terms are rejected") {
        CHECK_THROWS_AS(build_synthetic_nf_system(
                            {{SaddleVar::YPlus, MonomialIndex{0, 1, 2, 0, 0}, 1.0}}, {}, 1.0),
                        EnclosureError);  // non-resonant for y+
        CHECK_THROWS_AS(build_synthetic_nf_system(
                            {{SaddleVar::XMinus, MonomialIndex{0, 0, 3, 0, 0}, 1.0}}, {}, 1.0),
                        EnclosureError);  // lambda_m = 3
    }
    SUBCASE("class violations are rejected") {
        // m_s = 2 resonant for nothing; m_s = 1 with m_c = 1 violates M2
        CHECK_THROWS_AS(build_synthetic_nf_system(
                            {{SaddleVar::XPlus, MonomialIndex{0, 0, 1, 0, 1}, 1.0}}, {1.0}, 1.0),
                        EnclosureError);
    }
    SUBCASE("the all-cubics field is odd under the global sign flip") {
        SyntheticSystem sys = build_synthetic_nf_system(all_resonant_cubic_terms(), {1.0}, 1.0);
        std::vector<double> y{0.2, -0.1, 0.15, 0.05, 0.3, -0.2}, ym(6), dy(6), dym(6);
        for (int i = 0; i < 6; ++i) ym[i] = -y[i];
        sys.eval(y.data(), dy.data());
        sys.eval(ym.data(), dym.data());
        for (int i = 0; i < 6; ++i) CHECK(dym[i] == doctest::Approx(-dy[i]).epsilon(1e-14));
    }
}

TEST_CASE("tube containment for the synthetic system") {
    WTubeParams p;
    p.sigma = 0.01;
    p.T = 12.0;
    p.K = 1.0;
    p.k = 1;
    p.k_c = 0;
    p.A = 3.0;

    SUBCASE("linear system is centred in its tubes") {
        SyntheticSystem sys = build_synthetic_nf_system({}, {1.0}, 0.0);
        TubeReport rep = verify_theorem_fen(sys, p, 5, {0.0}, 7);
        CHECK(rep.contained);
        CHECK(rep.worst_margin > 0.999);
    }
    SUBCASE("all resonant cubics stay contained in the smallness regime") {
        SyntheticSystem sys =
            build_synthetic_nf_system(all_resonant_cubic_terms(), {1.0, std::sqrt(2.0)}, 1.0);
        TubeReport rep = verify_theorem_fen(sys, p, 6, {0.0, 0.5, 1.0}, 11);
        CHECK(rep.contained);
        CHECK(rep.worst_margin > 0.0);
    }
    SUBCASE("a pushed sigma only flags the report") {
        WTubeParams loose = p;
        loose.sigma = 0.5;
        loose.T = 6.0;
        SyntheticSystem sys =
            build_synthetic_nf_system(all_resonant_cubic_terms(), {1.0}, 1.0);
        TubeReport rep = verify_theorem_fen(sys, loose, 4, {1.0}, 5);
        CHECK(rep.runs == 4);  // completed without throwing
    }
}

TEST_CASE("center modulus band") {
    WTubeParams p;
    p.sigma = 0.01;
    p.T = 12.0;
    p.K = 1.0;

    SUBCASE("unperturbed centers conserve the modulus") {
        SyntheticSystem sys = build_synthetic_nf_system({}, {1.0, 1.3}, 1.0);
        TubeReport rep = verify_center_modulus(sys, p, 5, 3, 0.5);
        CHECK(rep.contained);
    }
    SUBCASE("a coupling bounded by the x+ tube stays inside the band") {
        SyntheticSystem sys = build_synthetic_nf_system(all_resonant_cubic_terms(), {1.0}, 1.0);
        sys.set_center_perturbation(0, [](const double* y, int) { return cplx{y[2], 0.0}; });
        TubeReport rep = verify_center_modulus(sys, p, 6, 9);
        CHECK(rep.contained);
    }
    SUBCASE("adversarial drift at the sampled bound stays within the budget") {
        SyntheticSystem sys = build_synthetic_nf_system({}, {1.0}, 1.0);
        // worst sign: pure imaginary g drives |c| monotonically
        sys.set_center_perturbation(0, [](const double* y, int dim) {
            double z = std::abs(y[0]) + std::abs(y[1]) + std::abs(y[2]) + std::abs(y[3]);
            for (int l = 4; l < dim; l += 2) z += std::hypot(y[l], y[l + 1]);
            return cplx{0.0, -0.9 * z};
        });
        TubeReport rep = verify_center_modulus(sys, p, 6, 13);
        CHECK(rep.contained);
    }
}
