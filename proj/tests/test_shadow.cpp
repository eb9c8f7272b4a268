#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "hetshadow/nform.hpp"
#include "hetshadow/shadow.hpp"

using namespace hetshadow;

TEST_CASE("exponent sequence") {
    CHECK(exponent_sequence(0) == std::pair<long, long>{1, 0});
    CHECK(exponent_sequence(1) == std::pair<long, long>{3, 1});
    CHECK(exponent_sequence(3) == std::pair<long, long>{15, 7});
    SUBCASE("recurrence matches the closed forms up to stage 12") {
        for (int j = 0; j <= 12; ++j) {
            auto [k, kc] = exponent_sequence(j);
            CHECK(k == (1L << (j + 1)) - 1);
            CHECK(kc == (1L << j) - 1);
            if (j > 0) {
                auto [kp, kcp] = exponent_sequence(j - 1);
                CHECK(k == 2 * kp + 1);
                CHECK(kc == 2 * kcp + 1);
            }
        }
    }
}

TEST_CASE("anchor points sit on the invariant half-lines") {
    LatticeModel model = ck_model(4);
    double sigma = 0.05;
    SUBCASE("outgoing anchors") {
        for (int j = 1; j <= 3; ++j) {
            AnchorPoints ap = anchor_points(model, j, sigma);
            REQUIRE(ap.B.has_value());
            CHECK(ap.B->x_plus == sigma);
            CHECK(ap.B->y_plus == 0.0);
            CHECK(ap.B->x_minus == 0.0);
            CHECK(ap.B->y_minus == 0.0);
            CHECK(ap.line_residual_B < 1e-10);
        }
    }
    SUBCASE("ingoing anchors") {
        for (int j = 2; j <= 4; ++j) {
            AnchorPoints ap = anchor_points(model, j, sigma);
            CHECK(ap.A.y_minus == sigma);
            CHECK(ap.line_residual_A < 1e-10);
        }
    }
    SUBCASE("the last chart has no outgoing anchor") {
        CHECK(!anchor_points(model, 4, sigma).B.has_value());
    }
}

TEST_CASE("travel time lands the outgoing anchor on the next ingoing one") {
    // the anchors live in the cubic normal-form coordinates of their charts;
    // the flight itself runs in the raw chart
    LatticeModel model = ck_model(3);
    ChainConfig config;
    config.n = 3;
    config.sigma = 0.05;
    ConstantsEstimate est = estimate_constants(model, config, 60);
    REQUIRE(est.t_travel.size() == 2);
    for (int p = 1; p <= 2; ++p) {
        ChartFrame fp = make_chart_frame(model, p);
        ChartFrame fn = make_chart_frame(model, p + 1);
        CubicChartNF nf_p = CubicChartNF::build(fp);
        CubicChartNF nf_n = CubicChartNF::build(fn);
        ChartVectorField field(fp);
        AnchorPoints ap = anchor_points(model, p, config.sigma);
        IntegrateOptions opts;
        opts.rtol = 1e-12;
        opts.atol = 1e-14;
        auto b_raw = nf_p.from_nf(chart_to_flat(fp, *ap.B));
        auto moved = flow_map(field.as_field(), fp.dim, b_raw, est.t_travel[p - 1], opts);
        ChartState arrived_raw = transition_map(fp, fn, flat_to_chart(fp, moved));
        auto arrived = flat_to_chart(fn, nf_n.to_nf(chart_to_flat(fn, arrived_raw)));
        CHECK(std::abs(arrived.y_minus - config.sigma) < 1e-8);
        CHECK(std::abs(arrived.x_minus) < 1e-10);
        CHECK(std::abs(arrived.x_plus) + std::abs(arrived.y_plus) < 1e-10);
    }
}

TEST_CASE("constants estimate is finite and ordered") {
    LatticeModel model = ck_model(3);
    ChainConfig config;
    config.n = 3;
    config.sigma = 0.05;
    ConstantsEstimate est = estimate_constants(model, config, 100);
    CHECK(est.L_T > est.l_T);
    CHECK(est.l_T > 0);
    CHECK(est.Lc_T > est.lc_T);
    CHECK(est.Lc_phi >= 1.0);
    CHECK(est.L_ct == doctest::Approx(est.Lc_phi * est.Lc_T));
    CHECK(est.K1 > 0.5);
    CHECK(std::isfinite(est.D2_T));
    CHECK(est.G >= 0);
    // the transition expands the future mode into the new saddle block with a
    // rate comparable to 1/sigma
    CHECK(est.L_T > 1.0);
}

TEST_CASE("radii ledger formulas") {
    ChainConfig config;
    config.n = 3;
    config.sigma = 0.05;
    config.T = 10.0;
    ConstantsEstimate c;
    c.L_T = 2.0;
    c.Lc_T = 1.1;
    c.Lc_phi = 1.2;
    c.L_ct = c.Lc_phi * c.Lc_T;
    c.K1 = 0.9;

    SUBCASE("stage zero") {
        StageRadii r = radii_ledger(0, config, c);
        CHECK(r.gamma_in_xm == doctest::Approx(config.T / 2));
        CHECK(r.gamma_in_ym == doctest::Approx(config.T));
        CHECK(r.gamma_in_cp == doctest::Approx(1.0));
        CHECK(r.r_in_xp == doctest::Approx(1.5 * config.sigma));
        CHECK(r.r_out_xp == doctest::Approx(config.sigma / 100));
        CHECK(r.gamma_out_yp == doctest::Approx(c.K1 * config.T));
        CHECK(r.gamma_out_cp == doctest::Approx(c.Lc_phi * r.gamma_in_cp));
        CHECK(r.r_out_cf == doctest::Approx(r.r_in_cf / c.Lc_phi));
    }
    SUBCASE("r_out(x+) is sigma/100 at every stage") {
        for (int j = 0; j < 4; ++j)
            CHECK(radii_ledger(j, config, c).r_out_xp == doctest::Approx(config.sigma / 100));
    }
    SUBCASE("L_ct >= 1 branch carries the L_ct^{n-1} factor") {
        StageRadii r = radii_ledger(0, config, c);
        double expect = std::pow(c.L_ct, config.n - 1) * c.L_T * c.Lc_phi * 1.5 * config.sigma;
        CHECK(r.r_in_cf == doctest::Approx(expect));
    }
    SUBCASE("L_ct < 1 branch drops it") {
        ConstantsEstimate small = c;
        small.Lc_phi = 1.0;
        small.Lc_T = 0.8;
        small.L_ct = 0.8;
        StageRadii r = radii_ledger(0, config, small);
        CHECK(r.r_in_cf == doctest::Approx(small.L_T * small.Lc_phi * 1.5 * config.sigma));
        // and the cascade divides by L_ct per stage
        StageRadii r1 = radii_ledger(1, config, small);
        CHECK(r1.r_in_cf == doctest::Approx(r.r_in_cf / small.L_ct));
    }
    SUBCASE("ledger identities used by the proofs") {
        for (int j = 0; j < 3; ++j) {
            StageRadii r = radii_ledger(j, config, c);
            CHECK(c.Lc_phi * r.gamma_in_cp == doctest::Approx(r.gamma_out_cp));
            CHECK(r.r_out_cf * c.Lc_phi == doctest::Approx(r.r_in_cf));
        }
    }
}

TEST_CASE("micro and nano scales separate at large T") {
    ChainConfig config;
    config.n = 3;
    config.sigma = 0.05;
    config.T = 40.0;
    ConstantsEstimate c;
    c.L_T = 25.0;
    c.Lc_T = 1.1;
    c.Lc_phi = 1.1;
    c.L_ct = c.Lc_phi * c.Lc_T;
    c.K1 = 1.0;
    double E = std::exp(-config.T), E2 = E * E;
    double max_nano = 0, min_micro = 1e300;
    for (int j = 0; j < 3; ++j) {
        StageRadii r = radii_ledger(j, config, c);
        max_nano = std::max({max_nano, r.gamma_in_xm * E2, r.gamma_in_ym * E2,
                             r.gamma_out_yp * E2});
        min_micro = std::min({min_micro, r.gamma_in_cp * E, r.r_in_xp * E, r.r_in_cf * E,
                              r.gamma_out_zm * E, r.gamma_out_cp * E, r.r_out_cf * E});
    }
    CHECK(max_nano < 1e-3 * min_micro);
}

TEST_CASE("h-set construction for the three-mode chain") {
    LatticeModel model = ck_model(3);
    ChainConfig config;
    config.n = 3;
    config.sigma = 0.05;
    config.T = 12.0;
    ConstantsEstimate est = estimate_constants(model, config, 100);
    ChainStructures cs = build_hsets(model, config, est);
    REQUIRE(cs.stages.size() == 3);

    SUBCASE("the contracted sets pin the dropped coordinates") {
        // ~N_in fixes y_+ = 0
        const StageSets& st = cs.stages[0];
        REQUIRE(st.Nt_in.drops.size() == 1);
        CHECK(st.Nt_in.drops[0].sub == "yp");
        CHECK(st.Nt_in.drops[0].value[0] == 0.0);
        // ~N_out fixes x_+ = sigma (internal value 0 about the center sigma)
        REQUIRE(st.Nt_out.has_value());
        CHECK(st.Nt_out->drops[0].block == "xp");
        const ChartFrame f = make_chart_frame(model, 1);
        CHECK(st.N_out.center[f.idx_xp] == doctest::Approx(config.sigma));
    }
    SUBCASE("exit structure composes along the chain") {
        auto links = make_chain_links(model, cs);
        CHECK(links.size() == 2 * 3 - 1);
        for (const auto& l : links) {
            int u_src = l.source.exit_dimension();
            int u_dst = l.target.exit_dimension();
            CHECK(u_src == u_dst);
        }
    }
    SUBCASE("supports stay inside the chart validity ball") {
        for (const auto& st : cs.stages) {
            double acc = 0;
            for (const auto& b : st.N_in.blocks) acc += 2 * b.radius * b.radius;
            for (int i = 0; i < st.N_in.dim; ++i)
                acc += 2 * st.N_in.center[i] * st.N_in.center[i];
            CHECK(acc < 1.0);
        }
    }
    SUBCASE("terminal stage has no exit directions") {
        const StageSets& last = cs.stages[2];
        CHECK(last.N_in.exit_dimension() == 0);
        CHECK(last.N_out.exit_dimension() == 0);
        CHECK(!last.B.has_value());
    }
}
