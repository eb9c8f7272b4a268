// hetshadow: lattice heteroclinic-chain verification toolkit.
//
// Subcommands: verify-model, portrait, classify, enclosure, covering, shadow.
// Exit codes: 0 checks passed, 1 checks failed, 2 configuration errors.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "hetshadow/chart.hpp"
#include "hetshadow/enclosure.hpp"
#include "hetshadow/integrate.hpp"
#include "hetshadow/model.hpp"
#include "hetshadow/shadow.hpp"
#include "hetshadow/svg.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace hetshadow;
using json = nlohmann::json;

namespace {

struct CommonArgs {
    std::string model_spec;
    std::string out_dir = ".";
    std::uint64_t seed = 0;
};

LatticeModel resolve_model(const CommonArgs& args) { return parse_model_spec(args.model_spec); }

std::string out_path(const CommonArgs& args, const std::string& file) {
    fs::create_directories(args.out_dir);
    return (fs::path(args.out_dir) / file).string();
}

int cmd_verify_model(const CommonArgs& args, int samples) {
    LatticeModel model = resolve_model(args);
    HypothesisReport rep = check_hypotheses(model, samples, args.seed);

    json j{{"samples", rep.samples},
           {"phase_equivariance", rep.phase_equivariance},
           {"hyperplane_invariance", rep.hyperplane},
           {"sign_symmetry", rep.sign_symmetry},
           {"mass_invariance", rep.mass_invariance},
           {"mass_rate_defect", rep.mass_rate_defect},
           {"hermitian_defect", rep.hermitian_defect},
           {"dominance_ordering", model.dominance_ordering()},
           {"constant_diagonals", model.constant_diagonals()}};
    const double tol = 1e-10;
    json fails = json::array();
    auto flag = [&](const char* name, double v) {
        if (v >= tol) fails.push_back({{"hypothesis", name}, {"violation", v}});
    };
    flag("phase_equivariance", rep.phase_equivariance);
    flag("hyperplane_invariance", rep.hyperplane);
    flag("sign_symmetry", rep.sign_symmetry);
    flag("mass_invariance", rep.mass_invariance);
    flag("mass_rate_agreement", rep.mass_rate_defect);
    flag("hermitian", rep.hermitian_defect);
    j["failures"] = fails;
    j["pass"] = fails.empty();

    std::ofstream(out_path(args, "hypotheses.json")) << j.dump(2) << "\n";
    std::cout << j.dump(2) << "\n";
    return fails.empty() ? 0 : 1;
}

int cmd_portrait(const CommonArgs& args, int j, int k, int grid) {
    LatticeModel model = resolve_model(args);
    if (j < 1 || j > model.n || k < 1 || k > model.n || j == k) {
        std::cerr << "portrait: invalid mode pair (" << j << "," << k << ")\n";
        return 2;
    }
    std::string svg = out_path(args, "portrait_" + std::to_string(j) + "_" + std::to_string(k) +
                                         ".svg");
    std::string csv = out_path(args, "portrait_" + std::to_string(j) + "_" + std::to_string(k) +
                                         ".csv");
    render_portrait(model, j, k, svg, csv, grid);
    std::cout << "wrote " << svg << " and " << csv << "\n";
    return 0;
}

int cmd_classify(const CommonArgs& args, int max_degree) {
    std::vector<ClassificationRow> all;
    int potentially = 0, unsuitable = 0;
    for (SaddleVar v :
         {SaddleVar::XMinus, SaddleVar::YMinus, SaddleVar::XPlus, SaddleVar::YPlus}) {
        auto rows = enumerate_and_classify(max_degree, v);
        for (const auto& r : rows) {
            if (r.s == Suitability::PotentiallySuitable) ++potentially;
            if (r.s == Suitability::Unsuitable) ++unsuitable;
        }
        all.insert(all.end(), rows.begin(), rows.end());
    }
    std::string path = out_path(args, "classification.json");
    write_classification_json(path, all);
    std::cout << all.size() << " resonant monomials up to degree " << max_degree << ": "
              << unsuitable << " unsuitable, " << potentially << " potentially suitable\n";
    for (const auto& r : all)
        if (r.s == Suitability::PotentiallySuitable)
            std::cout << "  potentially suitable: " << to_string(r.v) << " <- " << r.m.str()
                      << "\n";
    std::cout << "wrote " << path << "\n";
    return unsuitable == 0 ? 0 : 1;
}

int cmd_enclosure(const CommonArgs& args, double sigma, double T, int ics) {
    WTubeParams params;
    params.sigma = sigma;
    params.T = T;
    params.k = 1;
    params.k_c = 0;
    params.K = 1.0;
    params.A = 3.0;
    SyntheticSystem sys = build_synthetic_nf_system(all_resonant_cubic_terms(),
                                                    {1.0, std::sqrt(2.0)}, 1.0);
    sys.set_center_perturbation(
        0, [](const double* y, int) { return cplx{y[2], -0.6 * (y[1] + y[3])}; });
    sys.set_center_perturbation(
        1, [](const double* y, int) { return cplx{y[1] + y[0], 0.5 * y[2]}; });
    TubeReport fen = verify_theorem_fen(sys, params, ics, {0.0, 0.5, 1.0}, args.seed);
    TubeReport center = verify_center_modulus(sys, params, ics, args.seed);
    std::string path = out_path(args, "enclosure.json");
    write_tube_report_json(path, fen, center, params);
    std::cout << "saddle tubes: " << (fen.contained ? "contained" : "violated")
              << " (worst margin " << fen.worst_margin << ")\n"
              << "center moduli: " << (center.contained ? "contained" : "violated")
              << " (worst margin " << center.worst_margin << ")\n"
              << "wrote " << path << "\n";
    return fen.contained && center.contained ? 0 : 1;
}

int cmd_covering(const CommonArgs& args, int n, double sigma, double T, int grid) {
    LatticeModel model = args.model_spec.empty() ? ck_model(n) : resolve_model(args);
    ChainConfig config;
    config.n = model.n;
    config.sigma = sigma;
    config.T = T;
    config.seed = args.seed;
    if (grid > 0) {
        config.grid_face = grid;
        config.grid_interior = std::max(2, grid - 2);
    }
    ChainReport report = verify_chain(model, config);
    std::string path = out_path(args, "chain_report.json");
    std::ofstream(path) << report.to_json() << "\n";
    std::cout << (report.pass ? "chain verified" : "chain FAILED") << " at T = " << report.T
              << "\n";
    for (const auto& l : report.links)
        std::cout << "  " << (l.verdict.pass ? "pass " : "FAIL ") << l.label
                  << "  entry " << l.verdict.entry_margin << "  exit " << l.verdict.exit_margin
                  << "  w=" << l.verdict.degree_sign << "\n";
    std::cout << report.note << "\nwrote " << path << "\n";
    return report.pass ? 0 : 1;
}

int cmd_shadow(const CommonArgs& args, int n, double sigma, double T, int grid) {
    LatticeModel model = args.model_spec.empty() ? ck_model(n) : resolve_model(args);
    ChainConfig config;
    config.n = model.n;
    config.sigma = sigma;
    config.T = T;
    config.seed = args.seed;
    if (grid > 0) {
        config.grid_face = grid;
        config.grid_interior = std::max(2, grid - 2);
    }
    ChainReport report = verify_chain(model, config);
    std::ofstream(out_path(args, "chain_report.json")) << report.to_json() << "\n";
    if (!report.pass) {
        std::cout << "chain verification failed: " << report.note << "\n";
        return 1;
    }
    ShadowingOrbit orbit = shoot_shadowing_orbit(model, config, report);
    write_orbit_csv(out_path(args, "orbit.csv"), model, orbit);
    write_mass_profile_csv(out_path(args, "mass_profile.csv"), model, orbit);
    render_mass_cascade(model, orbit, out_path(args, "mass_cascade.svg"));

    json j{{"found", orbit.found},
           {"note", orbit.note},
           {"sequential_dominance", orbit.sequential_dominance},
           {"max_mode_mass", orbit.max_mode_mass},
           {"max_deviation", orbit.max_deviation},
           {"sets", orbit.sets_entered}};
    json entered = json::array();
    for (char e : orbit.entered) entered.push_back(static_cast<bool>(e));
    j["entered"] = entered;
    std::ofstream(out_path(args, "shadow_report.json")) << j.dump(2) << "\n";
    std::cout << (orbit.found ? "shadowing orbit found" : "search FAILED: " + orbit.note)
              << "\n";
    if (!orbit.max_mode_mass.empty())
        std::cout << "max |b_n(t)|^2 = " << orbit.max_mode_mass.back() << "\n";
    return orbit.found ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lattice heteroclinic-chain verification toolkit"};
    app.require_subcommand(1);

    CommonArgs args;
    int j = 1, k = 2, grid = 0, samples = 100, max_degree = 9, ics = 20, n = 3;
    double sigma = 0.05, T = 0.0;

    auto add_common = [&](CLI::App* cmd, bool need_model) {
        auto* opt = cmd->add_option("--model", args.model_spec,
                                    "model file path, or builtin ck:N / fig:N");
        if (need_model) opt->required();
        cmd->add_option("--out", args.out_dir, "output directory");
        cmd->add_option("--seed", args.seed, "rng seed");
    };

    auto* vm = app.add_subcommand("verify-model", "check the structural hypotheses");
    add_common(vm, true);
    vm->add_option("--samples", samples, "random sample count");

    auto* pt = app.add_subcommand("portrait", "reduced-field phase portrait");
    add_common(pt, true);
    pt->add_option("--j", j, "chart mode")->required();
    pt->add_option("--k", k, "partner mode")->required();
    pt->add_option("--grid", grid, "CSV sampling grid")->default_val(24);

    auto* cl = app.add_subcommand("classify", "monomial suitability table");
    add_common(cl, false);
    cl->add_option("--degree", max_degree, "max total degree (<= 9)");

    auto* en = app.add_subcommand("enclosure", "synthetic normal-form tube verification");
    add_common(en, false);
    en->add_option("--sigma", sigma, "tube scale")->default_val(0.01);
    en->add_option("--T", T, "horizon")->default_val(12.0);
    en->add_option("--ics", ics, "initial conditions per rho");

    auto* cv = app.add_subcommand("covering", "verify the chain covering relations");
    add_common(cv, false);
    cv->add_option("--n", n, "mode count for the builtin model");
    cv->add_option("--sigma", sigma, "section scale");
    cv->add_option("--T", T, "passage horizon (0 = search)");
    cv->add_option("--grid", grid, "face grid density");

    auto* sh = app.add_subcommand("shadow", "find a shadowing orbit");
    add_common(sh, false);
    sh->add_option("--n", n, "mode count for the builtin model");
    sh->add_option("--sigma", sigma, "section scale");
    sh->add_option("--T", T, "passage horizon (0 = search)");
    sh->add_option("--grid", grid, "face grid density");

    CLI11_PARSE(app, argc, argv);

    try {
        if (vm->parsed()) return cmd_verify_model(args, samples);
        if (pt->parsed()) return cmd_portrait(args, j, k, grid);
        if (cl->parsed()) return cmd_classify(args, max_degree);
        if (en->parsed()) return cmd_enclosure(args, sigma, T, ics);
        if (cv->parsed()) return cmd_covering(args, n, sigma, T, grid);
        if (sh->parsed()) return cmd_shadow(args, n, sigma, T, grid);
    } catch (const ModelError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
