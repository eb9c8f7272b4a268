#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "hetshadow/integrate.hpp"
#include "hetshadow/model.hpp"

using namespace hetshadow;

namespace {

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

std::vector<double> flatten(const cvec& b) {
    std::vector<double> y(2 * b.size());
    for (size_t l = 0; l < b.size(); ++l) {
        y[2 * l] = b[l].real();
        y[2 * l + 1] = b[l].imag();
    }
    return y;
}

}  // namespace

TEST_CASE("single excited mode of the tridiagonal lattice") {
    LatticeModel model = ck_model(5);
    cvec b(5, cplx{0.0, 0.0});
    b[0] = 1.0;
    cvec f = eval_field(model, b);
    CHECK(std::abs(f[0] - cplx{0.0, -1.0}) < 1e-15);
    for (int l = 1; l < 5; ++l) CHECK(std::abs(f[l]) == 0.0);
}

TEST_CASE("zero modes stay zero exactly") {
    for (auto model : {ck_model(4), nonhamiltonian_example_model(4)}) {
        for (int k = 0; k < 4; ++k) {
            cvec b = random_state(4, 17 + k, false);
            b[k] = 0.0;
            cvec f = eval_field(model, b);
            CHECK(f[k] == cplx{0.0, 0.0});
        }
    }
}

TEST_CASE("rho = 0 collapses to the Hamiltonian field") {
    LatticeModel nh = nonhamiltonian_example_model(4);
    nh.rho = 0.0;
    LatticeModel h = ck_model(4);
    cvec b = random_state(4, 5, true);
    cvec f1 = eval_field(nh, b);
    cvec f2 = eval_field(h, b);
    for (int l = 0; l < 4; ++l) CHECK(std::abs(f1[l] - f2[l]) == 0.0);
}

TEST_CASE("phase equivariance on random states") {
    LatticeModel model = nonhamiltonian_example_model(5);
    std::mt19937_64 eng(3);
    std::uniform_real_distribution<double> angle(0, 2 * M_PI);
    for (int s = 0; s < 100; ++s) {
        cvec b = random_state(5, 100 + s, false);
        cplx ph = std::polar(1.0, angle(eng));
        cvec rb(5);
        for (int l = 0; l < 5; ++l) rb[l] = ph * b[l];
        cvec f = eval_field(model, b), fr = eval_field(model, rb);
        double norm3 = std::pow(std::sqrt(total_mass(b)), 3.0);
        for (int l = 0; l < 5; ++l) CHECK(std::abs(fr[l] - ph * f[l]) < 1e-12 * norm3);
    }
}

TEST_CASE("analytic mass derivative matches the field") {
    LatticeModel model = nonhamiltonian_example_model(4);
    SUBCASE("Hamiltonian kind gives zero") {
        LatticeModel h = ck_model(4);
        cvec b = random_state(4, 2, false);
        CHECK(mass_derivative(h, b) == 0.0);
        CHECK(std::abs(mass_derivative_from_field(h, b)) < 1e-12);
    }
    SUBCASE("unit mass slice is invariant") {
        cvec b = random_state(4, 9, true);
        CHECK(std::abs(mass_derivative(model, b)) < 1e-14);
        CHECK(std::abs(mass_derivative_from_field(model, b)) < 1e-12);
    }
    SUBCASE("agreement on random non-unit states") {
        for (int s = 0; s < 50; ++s) {
            cvec b = random_state(4, 1000 + s, false);
            double a = mass_derivative(model, b);
            double f = mass_derivative_from_field(model, b);
            CHECK(std::abs(a - f) < 1e-10 * std::max(1.0, std::abs(a)));
        }
    }
}

TEST_CASE("mass rate matches finite differences along an integration step") {
    // the example model of the figure caption, scaled to mass 2
    LatticeModel model = nonhamiltonian_example_model(5);
    cvec b = random_state(5, 4, true);
    for (auto& z : b) z *= std::sqrt(2.0);
    REQUIRE(std::abs(total_mass(b) - 2.0) < 1e-12);

    double analytic = mass_derivative(model, b);
    IntegrateOptions opts;
    opts.rtol = 1e-12;
    opts.atol = 1e-14;
    double h = 1e-4;
    auto fwd = flow_map(ambient_field(model), 10, flatten(b), h, opts);
    auto bwd = flow_map(ambient_field(model), 10, flatten(b), -h, opts);
    auto mass_of = [](const std::vector<double>& y) {
        double m = 0;
        for (size_t i = 0; i < y.size(); i += 2) m += y[i] * y[i] + y[i + 1] * y[i + 1];
        return m;
    };
    double fd = (mass_of(fwd) - mass_of(bwd)) / (2 * h);
    CHECK(std::abs(fd - analytic) < 1e-6 * std::max(1.0, std::abs(analytic)));
    CHECK(std::abs(fd - analytic) < 1e-6 * std::abs(analytic) + 1e-9);
}

TEST_CASE("hypothesis checks pass for both example families") {
    for (auto model : {ck_model(5), nonhamiltonian_example_model(5)}) {
        HypothesisReport rep = check_hypotheses(model, 100, 0);
        CHECK(rep.worst() < 1e-12);
    }
}

TEST_CASE("broken Hermitian entry is flagged exactly") {
    LatticeModel model = ck_model(4);
    model.A[1] = cplx{-2.0, 0.3};  // a_{12} != conj(a_{21})
    CHECK(model.hermitian_defect() == doctest::Approx(0.3).epsilon(1e-12));
    CHECK_THROWS_AS(model.validate(), ModelError);
}

TEST_CASE("sign flips are exact symmetries of the polynomial field") {
    LatticeModel model = ck_model(4);
    cvec b = random_state(4, 11, true);
    cvec f = eval_field(model, b);
    cvec bs = b;
    bs[0] = -bs[0];
    cvec fs = eval_field(model, bs);
    CHECK(std::abs(fs[0] + f[0]) == 0.0);
    for (int l = 1; l < 4; ++l) CHECK(std::abs(fs[l] - f[l]) == 0.0);
}

TEST_CASE("config round trip") {
    LatticeModel model = nonhamiltonian_example_model(4);
    std::string path = "/tmp/hetshadow_test_model.json";
    save_model(model, path);
    LatticeModel loaded = load_model(path);
    CHECK(loaded.n == model.n);
    CHECK(loaded.kind == model.kind);
    CHECK(loaded.rho == model.rho);
    for (int l = 0; l < 4; ++l)
        for (int m = 0; m < 4; ++m) {
            CHECK(std::abs(loaded.a(l, m) - model.a(l, m)) == 0.0);
            CHECK(loaded.c(l, m) == model.c(l, m));
        }
    CHECK_THROWS_AS(load_model("/tmp/does_not_exist_hetshadow.json"), ModelError);
}

TEST_CASE("builtin model specs") {
    CHECK(parse_model_spec("ck:4").kind == ModelKind::Hamiltonian);
    CHECK(parse_model_spec("fig:5").kind == ModelKind::NonHamiltonian);
    CHECK(parse_model_spec("fig:5").rho == doctest::Approx(0.03));
}

TEST_CASE("dominance ordering and constant diagonals of the examples") {
    LatticeModel model = ck_model(6);
    CHECK(model.dominance_ordering());
    CHECK(model.constant_diagonals());
    model.A[2] = cplx{5.0, 0.0};  // a_{13} large breaks dominance
    model.A[2 * 6] = cplx{5.0, 0.0};
    CHECK(!model.dominance_ordering());
}
