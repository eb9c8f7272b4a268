#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "hetshadow/integrate.hpp"
#include "hetshadow/model.hpp"

using namespace hetshadow;

namespace {

VectorField rotation(double nu) {
    return [nu](const double* y, double* dy) {
        dy[0] = -nu * y[1];
        dy[1] = nu * y[0];
    };
}

const VectorField saddle = [](const double* y, double* dy) {
    dy[0] = y[0];
    dy[1] = -y[1];
};

VectorField ambient_field(const LatticeModel& model) {
    int n = model.n;
    return [&model, n](const double* y, double* dy) {
        cvec b(n);
        for (int l = 0; l < n; ++l) b[l] = cplx{y[2 * l], y[2 * l + 1]};
        cvec f = eval_field(model, b);
        for (int l = 0; l < n; ++l) {
            dy[2 * l] = f[l].real();
            dy[2 * l + 1] = f[l].imag();
        }
    };
}

}  // namespace

TEST_CASE("one rotation period returns to the start") {
    double nu = 1.7;
    IntegrateOptions opts;
    opts.rtol = 1e-10;
    opts.atol = 1e-13;
    auto y = flow_map(rotation(nu), 2, {1.0, 0.0}, 2.0 * M_PI / nu, opts);
    CHECK(std::abs(y[0] - 1.0) < 1e-9);
    CHECK(std::abs(y[1]) < 1e-9);
}

TEST_CASE("saddle flow matches the closed form") {
    double T = 10.0, sigma = 0.05;
    IntegrateOptions opts;
    opts.rtol = 1e-11;
    opts.atol = 1e-18;
    auto y = flow_map(saddle, 2, {std::exp(-T), sigma}, T, opts);
    CHECK(std::abs(y[0] - 1.0) < 1e-8);
    CHECK(std::abs(y[1] - sigma * std::exp(-T)) < 1e-8 * sigma * std::exp(-T) + 1e-15);
}

TEST_CASE("flow map composition and reversibility") {
    LatticeModel model = ck_model(4);
    auto field = ambient_field(model);
    cvec b = random_state(4, 21, true);
    std::vector<double> y0(8);
    for (int l = 0; l < 4; ++l) {
        y0[2 * l] = b[l].real();
        y0[2 * l + 1] = b[l].imag();
    }
    IntegrateOptions opts;
    opts.rtol = 1e-11;
    opts.atol = 1e-13;

    SUBCASE("T = 0 is the identity") {
        auto y = flow_map(field, 8, y0, 0.0, opts);
        CHECK(y == y0);
    }
    SUBCASE("semigroup") {
        auto a = flow_map(field, 8, flow_map(field, 8, y0, 1.3, opts), 0.9, opts);
        auto bb = flow_map(field, 8, y0, 2.2, opts);
        for (int i = 0; i < 8; ++i) CHECK(std::abs(a[i] - bb[i]) < 1e-8);
    }
    SUBCASE("backward integration undoes forward") {
        auto fwd = flow_map(field, 8, y0, 3.0, opts);
        auto back = flow_map(field, 8, fwd, -3.0, opts);
        for (int i = 0; i < 8; ++i) CHECK(std::abs(back[i] - y0[i]) < 1e-7);
    }
}

TEST_CASE("mass and energy drift stay small over long integrations") {
    for (auto model : {ck_model(4), nonhamiltonian_example_model(4)}) {
        cvec b = random_state(4, 33, true);
        std::vector<double> y0(8);
        for (int l = 0; l < 4; ++l) {
            y0[2 * l] = b[l].real();
            y0[2 * l + 1] = b[l].imag();
        }
        IntegrateOptions opts;
        opts.rtol = 1e-10;
        opts.atol = 1e-13;
        Trajectory traj = integrate(ambient_field(model), 8, y0, 0.0, 100.0, opts);
        double h0 = energy(model, b);
        double mass_drift = 0, energy_drift = 0;
        for (const auto& y : traj.states) {
            cvec bt(4);
            for (int l = 0; l < 4; ++l) bt[l] = cplx{y[2 * l], y[2 * l + 1]};
            mass_drift = std::max(mass_drift, std::abs(total_mass(bt) - 1.0));
            if (model.kind == ModelKind::Hamiltonian)
                energy_drift = std::max(energy_drift, std::abs(energy(model, bt) - h0));
        }
        CHECK(mass_drift < 1e-8);
        if (model.kind == ModelKind::Hamiltonian) CHECK(energy_drift < 1e-7);
    }
}

TEST_CASE("step-halving order check on the linear test") {
    // fixed-step mode via max_step_fraction: halving the step cuts the
    // endpoint error by far more than 4x for a 5th-order pair
    auto endpoint_error = [&](double hfrac) {
        IntegrateOptions opts;
        opts.rtol = 10.0;  // force acceptance: error controlled by step cap
        opts.atol = 10.0;
        opts.max_step_fraction = hfrac;
        auto y = flow_map(rotation(1.0), 2, {1.0, 0.0}, 2.0 * M_PI, opts);
        return std::hypot(y[0] - 1.0, y[1]);
    };
    double e1 = endpoint_error(0.02);
    double e2 = endpoint_error(0.01);
    CHECK(e1 / e2 >= 4.0);
}

TEST_CASE("tightening rtol does not worsen the endpoint") {
    auto endpoint_error = [&](double rtol) {
        IntegrateOptions opts;
        opts.rtol = rtol;
        opts.atol = 1e-16;
        auto y = flow_map(rotation(1.0), 2, {1.0, 0.0}, 2.0 * M_PI, opts);
        return std::hypot(y[0] - 1.0, y[1]);
    };
    CHECK(endpoint_error(1e-10) <= endpoint_error(1e-6) * 1.5);
}

TEST_CASE("dense output interpolates to high order") {
    IntegrateOptions opts;
    opts.rtol = 1e-10;
    opts.atol = 1e-13;
    Trajectory traj = integrate(rotation(1.0), 2, {1.0, 0.0}, 0.0, 5.0, opts);
    for (double t : {0.37, 1.91, 3.1415, 4.99}) {
        auto y = traj.eval(t);
        CHECK(std::abs(y[0] - std::cos(t)) < 1e-8);
        CHECK(std::abs(y[1] - std::sin(t)) < 1e-8);
    }
}

TEST_CASE("event crossing") {
    IntegrateOptions opts;
    opts.rtol = 1e-12;
    opts.atol = 1e-16;
    SUBCASE("linear growth hits a section at the known time") {
        double T = 8.0, sigma = 0.05;
        VectorField growth = [](const double* y, double* dy) { dy[0] = y[0]; };
        Crossing c = event_crossing(growth, 1, {std::exp(-T)},
                                    [sigma](const double* y) { return y[0] - sigma; }, +1, 20.0,
                                    opts);
        CHECK(std::abs(c.t - (T + std::log(sigma))) < 1e-9);
        CHECK(std::abs(c.state[0] - sigma) < 1e-10);
    }
    SUBCASE("center orbit never reaches a distant section") {
        CHECK_THROWS_AS(event_crossing(rotation(1.0), 2, {0.3, 0.0},
                                       [](const double* y) { return y[0] - 2.0; }, +1, 20.0,
                                       opts),
                        IntegrateError);
    }
}

TEST_CASE("scaled integration reproduces the unscaled flow") {
    double T = 12.0;
    IntegrateOptions opts;
    opts.rtol = 1e-11;
    opts.atol = 1e-13;
    IntegrateOptions sopts = opts;
    sopts.scale = {std::exp(-T), 1.0};
    std::vector<double> y0{std::exp(-T) * 0.7, 0.03};
    auto a = flow_map(saddle, 2, y0, 2.0, opts);
    auto b = flow_map(saddle, 2, y0, 2.0, sopts);
    // different step sequences, agreement at the tolerance level
    CHECK(std::abs(a[0] - b[0]) < 1e-9 * std::abs(a[0]));
    CHECK(std::abs(a[1] - b[1]) < 1e-9 * std::abs(a[1]));
}

TEST_CASE("failure modes raise typed errors") {
    SUBCASE("divergence guard") {
        VectorField blowup = [](const double* y, double* dy) { dy[0] = y[0] * y[0]; };
        CHECK_THROWS_AS(integrate(blowup, 1, {1.0}, 0.0, 5.0, {}), IntegrateError);
    }
    SUBCASE("bad tolerances") {
        IntegrateOptions opts;
        opts.rtol = -1;
        CHECK_THROWS_AS(integrate(rotation(1.0), 2, {1, 0}, 0, 1, opts), IntegrateError);
    }
}
