#include "hetshadow/model.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

namespace hetshadow {

using json = nlohmann::json;

double LatticeModel::hermitian_defect() const {
    double worst = 0.0;
    for (int l = 0; l < n; ++l)
        for (int m = 0; m < n; ++m)
            worst = std::max(worst, std::abs(a(l, m) - std::conj(a(m, l))));
    return worst;
}

bool LatticeModel::dominance_ordering(double tol) const {
    for (int l = 0; l < n; ++l) {
        double diag = std::abs(a(l, l));
        if (l + 1 < n && !(diag < std::abs(a(l, l + 1)) + tol)) return false;
        for (int m = 0; m < n; ++m)
            if (std::abs(l - m) >= 2 && !(std::abs(a(l, m)) < diag + tol)) return false;
    }
    return true;
}

bool LatticeModel::constant_diagonals(double tol) const {
    for (int l = 1; l < n; ++l)
        if (std::abs(a(l, l) - a(0, 0)) > tol) return false;
    for (int l = 0; l + 1 < n; ++l)
        if (std::abs(a(l + 1, l) - a(1, 0)) > tol) return false;
    return true;
}

void LatticeModel::validate() const {
    if (n < 3) throw ModelError("mode count must be >= 3");
    if (A.size() != static_cast<size_t>(n) * n) throw ModelError("matrix A has wrong size");
    if (!C.empty() && C.size() != static_cast<size_t>(n) * n)
        throw ModelError("matrix C has wrong size");
    if (rho < 0) throw ModelError("rho must be >= 0");
    if (kind == ModelKind::Hamiltonian && hermitian_defect() > 1e-12)
        throw ModelError("Hamiltonian kind requires a Hermitian matrix A");
}

LatticeModel ck_model(int n) {
    LatticeModel model;
    model.n = n;
    model.kind = ModelKind::Hamiltonian;
    model.A.assign(static_cast<size_t>(n) * n, cplx{0.0, 0.0});
    for (int l = 0; l < n; ++l) {
        model.A[static_cast<size_t>(l) * n + l] = 1.0;
        if (l + 1 < n) {
            model.A[static_cast<size_t>(l) * n + l + 1] = -2.0;
            model.A[static_cast<size_t>(l + 1) * n + l] = -2.0;
        }
    }
    return model;
}

LatticeModel nonhamiltonian_example_model(int n, double rho) {
    LatticeModel model = ck_model(n);
    model.kind = ModelKind::NonHamiltonian;
    model.rho = rho;
    model.C.assign(static_cast<size_t>(n) * n, 0.0);
    for (int j = 0; j < n; ++j) {
        double sign = ((j + 1) % 2 == 0) ? 1.0 : -1.0;  // (-1)^j with 1-based j
        model.C[static_cast<size_t>(j) * n + j] = sign;
        if (j + 1 < n) model.C[static_cast<size_t>(j) * n + j + 1] = sign;
        if (j + 1 < n) model.C[static_cast<size_t>(j + 1) * n + j] = 2.0;
    }
    return model;
}

// ---------------------------------------------------------------------------
// Config I/O
// ---------------------------------------------------------------------------

namespace {

cplx parse_complex_pair(const std::string& s) {
    auto comma = s.find(',');
    if (comma == std::string::npos) throw ModelError("expected \"re,im\" pair, got: " + s);
    return {std::stod(s.substr(0, comma)), std::stod(s.substr(comma + 1))};
}

std::string format_complex_pair(cplx z) {
    std::ostringstream os;
    os.precision(17);
    os << z.real() << "," << z.imag();
    return os.str();
}

}  // namespace

LatticeModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ModelError("cannot open model file: " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ModelError(std::string("model file parse error: ") + e.what());
    }
    LatticeModel model;
    try {
        model.n = j.at("n").get<int>();
        std::string kind = j.at("kind").get<std::string>();
        if (kind == "hamiltonian")
            model.kind = ModelKind::Hamiltonian;
        else if (kind == "nonhamiltonian")
            model.kind = ModelKind::NonHamiltonian;
        else
            throw ModelError("unknown model kind: " + kind);
        for (const auto& row : j.at("A"))
            for (const auto& entry : row) model.A.push_back(parse_complex_pair(entry.get<std::string>()));
        if (j.contains("C"))
            for (const auto& row : j.at("C"))
                for (const auto& entry : row) model.C.push_back(entry.get<double>());
        model.rho = j.value("rho", 0.0);
    } catch (const json::exception& e) {
        throw ModelError(std::string("model config error: ") + e.what());
    }
    model.validate();
    return model;
}

void save_model(const LatticeModel& model, const std::string& path) {
    json j;
    j["n"] = model.n;
    j["kind"] = (model.kind == ModelKind::Hamiltonian) ? "hamiltonian" : "nonhamiltonian";
    json rows = json::array();
    for (int l = 0; l < model.n; ++l) {
        json row = json::array();
        for (int m = 0; m < model.n; ++m) row.push_back(format_complex_pair(model.a(l, m)));
        rows.push_back(row);
    }
    j["A"] = rows;
    if (model.has_C()) {
        json crows = json::array();
        for (int l = 0; l < model.n; ++l) {
            json row = json::array();
            for (int m = 0; m < model.n; ++m) row.push_back(model.c(l, m));
            crows.push_back(row);
        }
        j["C"] = crows;
        j["rho"] = model.rho;
    }
    std::ofstream out(path);
    if (!out) throw ModelError("cannot write model file: " + path);
    out << j.dump(2) << "\n";
}

LatticeModel parse_model_spec(const std::string& spec) {
    auto colon = spec.find(':');
    if (colon != std::string::npos) {
        std::string name = spec.substr(0, colon);
        if (name == "ck" || name == "fig") {
            int n = std::stoi(spec.substr(colon + 1));
            if (n < 3) throw ModelError("builtin models require n >= 3");
            return name == "ck" ? ck_model(n) : nonhamiltonian_example_model(n);
        }
    }
    return load_model(spec);
}

// ---------------------------------------------------------------------------
// Field evaluation
// ---------------------------------------------------------------------------

double total_mass(const cvec& b) {
    double m = 0.0;
    for (cplx z : b) m += std::norm(z);
    return m;
}

namespace {

bool finite(const cvec& b) {
    for (cplx z : b)
        if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return false;
    return true;
}

double r_quartic(const LatticeModel& model, const std::vector<double>& mass) {
    double r = 0.0;
    for (int j = 0; j < model.n; ++j)
        for (int l = 0; l < model.n; ++l) r -= model.c(j, l) * mass[j] * mass[l];
    return r;
}

}  // namespace

cvec eval_field(const LatticeModel& model, const cvec& b) {
    if (!finite(b)) throw ModelError("eval_field: non-finite state");
    const int n = model.n;
    cvec sq(n);
    for (int m = 0; m < n; ++m) sq[m] = b[m] * b[m];

    cvec out(n);
    for (int l = 0; l < n; ++l) {
        cplx acc{0.0, 0.0};
        for (int m = 0; m < n; ++m) acc += model.a(l, m) * sq[m];
        out[l] = cplx{0.0, -1.0} * acc * std::conj(b[l]);
    }

    if (model.kind == ModelKind::NonHamiltonian && model.rho != 0.0 && model.has_C()) {
        std::vector<double> mass(n);
        for (int m = 0; m < n; ++m) mass[m] = std::norm(b[m]);
        double R = r_quartic(model, mass);
        for (int l = 0; l < n; ++l) {
            double coupling = 0.0;
            for (int j = 0; j < n; ++j) coupling += model.c(j, l) * mass[j];
            out[l] += model.rho * (coupling + R) * b[l];
        }
    }
    return out;
}

double energy(const LatticeModel& model, const cvec& b) {
    cplx h{0.0, 0.0};
    cvec sq(model.n);
    for (int m = 0; m < model.n; ++m) sq[m] = b[m] * b[m];
    for (int l = 0; l < model.n; ++l)
        for (int m = 0; m < model.n; ++m)
            h += std::conj(sq[l]) * model.a(l, m) * sq[m];
    return 0.25 * h.real();
}

double mass_derivative(const LatticeModel& model, const cvec& b) {
    if (model.kind == ModelKind::Hamiltonian || model.rho == 0.0 || !model.has_C()) return 0.0;
    std::vector<double> mass(model.n);
    for (int m = 0; m < model.n; ++m) mass[m] = std::norm(b[m]);
    double R = r_quartic(model, mass);
    return 2.0 * model.rho * R * (total_mass(b) - 1.0);
}

double mass_derivative_from_field(const LatticeModel& model, const cvec& b) {
    cvec f = eval_field(model, b);
    double rate = 0.0;
    for (int l = 0; l < model.n; ++l) rate += 2.0 * (f[l] * std::conj(b[l])).real();
    return rate;
}

// ---------------------------------------------------------------------------
// Hypothesis checks
// ---------------------------------------------------------------------------

cvec random_state(int n, std::uint64_t seed, bool unit_mass) {
    std::mt19937_64 eng(seed ^ 0x9e3779b97f4a7c15ull);
    std::normal_distribution<double> gauss(0.0, 1.0);
    cvec b(n);
    for (int l = 0; l < n; ++l) b[l] = cplx{gauss(eng), gauss(eng)};
    if (unit_mass) {
        double m = std::sqrt(total_mass(b));
        for (auto& z : b) z /= m;
    }
    return b;
}

double HypothesisReport::worst() const {
    double w = std::max(phase_equivariance, hyperplane);
    w = std::max(w, sign_symmetry);
    w = std::max(w, mass_invariance);
    w = std::max(w, mass_rate_defect);
    w = std::max(w, hermitian_defect);
    return w;
}

HypothesisReport check_hypotheses(const LatticeModel& model, int sample_count,
                                  std::uint64_t seed) {
    if (sample_count < 1) throw ModelError("check_hypotheses: sample_count must be >= 1");
    HypothesisReport rep;
    rep.samples = sample_count;
    if (model.kind == ModelKind::Hamiltonian) rep.hermitian_defect = model.hermitian_defect();

    std::mt19937_64 eng(seed);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
    std::uniform_int_distribution<int> coin(0, 1);
    std::uniform_int_distribution<int> mode(0, model.n - 1);

    for (int s = 0; s < sample_count; ++s) {
        cvec b = random_state(model.n, seed + 1 + s, true);
        cvec f = eval_field(model, b);

        // (i) phase equivariance, normalized by ||b||^3 (the field is cubic)
        double theta = angle(eng);
        cplx ph = std::polar(1.0, theta);
        cvec rotated(model.n);
        for (int l = 0; l < model.n; ++l) rotated[l] = ph * b[l];
        cvec frot = eval_field(model, rotated);
        double viol = 0.0;
        for (int l = 0; l < model.n; ++l) viol = std::max(viol, std::abs(frot[l] - ph * f[l]));
        rep.phase_equivariance = std::max(rep.phase_equivariance, viol);

        // (ii) hyperplane invariance
        cvec bz = b;
        bz[mode(eng)] = 0.0;
        cvec fz = eval_field(model, bz);
        for (int l = 0; l < model.n; ++l)
            if (bz[l] == cplx{0.0, 0.0}) rep.hyperplane = std::max(rep.hyperplane, std::abs(fz[l]));

        // (iii) sign symmetry
        cvec bs(model.n);
        std::vector<double> sign(model.n);
        for (int l = 0; l < model.n; ++l) {
            sign[l] = coin(eng) ? 1.0 : -1.0;
            bs[l] = sign[l] * b[l];
        }
        cvec fs = eval_field(model, bs);
        double sviol = 0.0;
        for (int l = 0; l < model.n; ++l) sviol = std::max(sviol, std::abs(fs[l] - sign[l] * f[l]));
        rep.sign_symmetry = std::max(rep.sign_symmetry, sviol);

        // (iv) M = 1 invariance; b already has unit mass
        rep.mass_invariance =
            std::max(rep.mass_invariance, std::abs(mass_derivative_from_field(model, b)));

        // analytic vs field mass rate on a non-unit state
        cvec b2 = random_state(model.n, seed + 77777 + s, false);
        double analytic = mass_derivative(model, b2);
        double from_field = mass_derivative_from_field(model, b2);
        double scale = std::max({1.0, std::abs(analytic), std::abs(from_field)});
        rep.mass_rate_defect = std::max(rep.mass_rate_defect, std::abs(analytic - from_field) / scale);
    }
    return rep;
}

}  // namespace hetshadow
