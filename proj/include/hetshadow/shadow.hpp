#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hetshadow/chart.hpp"
#include "hetshadow/hset.hpp"
#include "hetshadow/integrate.hpp"
#include "hetshadow/model.hpp"

namespace hetshadow {

struct ShadowError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ChainConfig {
    int n = 3;
    double sigma = 0.05;
    double T = 0.0;  // 0 selects the first passing candidate
    std::vector<double> T_candidates{8, 10, 12, 14, 16, 18};
    int grid_face = 5;
    int grid_interior = 3;
    int search_budget = 2500;
    double rtol = 1e-10, atol = 1e-12;
    std::uint64_t seed = 0;

    void validate() const;
};

// Lipschitz-type constants of the transition maps and the passage flow.
struct ConstantsEstimate {
    double L_T = 0, l_T = 0;    // saddle-involving blocks of D(transition)
    double Lc_T = 0, lc_T = 0;  // past/future center blocks
    double D2_T = 0;            // second derivative bound (sampled, x2 safety)
    double G = 0;               // center coupling bound sup |g_l(z)|/|z|
    double K = 0;               // cubic coefficient bound of the chart fields
    double Lc_phi = 1;          // exp(10 G sigma)
    double L_ct = 1;            // Lc_phi * Lc_T
    double K1 = 1;              // entry-inequality constant (10% slack)
    double r_T = 0.2;           // domain radius of the transition maps
    std::vector<double> t_travel;  // heteroclinic travel times, one per transition
};

// Anchor points of the j-th chart: A_j on the ingoing heteroclinic with
// y_- = sigma (absent for j = 1, replaced by the origin), B_j on the
// outgoing one with x_+ = sigma (absent for j = n).
struct AnchorPoints {
    ChartState A;
    std::optional<ChartState> B;
    double line_residual_A = 0, line_residual_B = 0;
};
AnchorPoints anchor_points(const LatticeModel& model, int j, double sigma);

// k_j = 2^{j+1} - 1, k_{c,j} = 2^j - 1 via the recurrence
// k_{j+1} = 2 k_j + 1, k_{c,j+1} = 2 k_{c,j} + 1 from (k_0, k_{c,0}) = (1, 0).
std::pair<long, long> exponent_sequence(int j);

ConstantsEstimate estimate_constants(const LatticeModel& model, const ChainConfig& config,
                                     int sample_count = 200);

// Radii coefficients of the four stage-j h-sets; the scale classes are
// micro = e^{-T} and nano = e^{-2T} as annotated.
struct StageRadii {
    long k = 1, k_c = 0;
    double gamma_in_cp = 0;   // micro
    double gamma_in_ym = 0;   // nano (diameter about the macro center sigma)
    double gamma_in_xm = 0;   // nano
    double r_in_xp = 0;       // micro
    double r_in_yp = 0;       // micro
    double r_in_cf = 0;       // micro
    double gamma_out_zm = 0;  // micro
    double gamma_out_yp = 0;  // nano
    double gamma_out_cp = 0;  // micro
    double r_out_cf = 0;      // micro
    double r_out_xp = 0;      // macro window about the center sigma
};
StageRadii radii_ledger(int j, const ChainConfig& config, const ConstantsEstimate& constants);

// Concrete stage data: anchors, passage times, and the four h-sets in the
// chart's flat normal-form coordinates.
struct StageSets {
    int chart = 0;  // 1-based
    long k_eff = 1, kc_eff = 0;
    double t_pass = 0;    // passage time of the flow link
    double t_travel = 0;  // travel time to the next chart (0 for the last)
    ChartState A;
    std::optional<ChartState> B;
    HSet N_in, N_out;
    ContractedHSet Nt_in;
    std::optional<ContractedHSet> Nt_out;
};

struct ChainStructures {
    ChainConfig config;
    ConstantsEstimate constants;
    std::vector<StageSets> stages;  // one per chart 1..n
};

// Builds the per-chart h-set quadruples. Exponents are clamped so every
// support stays inside the chart validity ball at the working T; passage
// times shrink below T where the unstable tube would leave the chart.
ChainStructures build_hsets(const LatticeModel& model, const ChainConfig& config,
                            const ConstantsEstimate& constants);

std::vector<ChainLink> make_chain_links(const LatticeModel& model,
                                        const ChainStructures& structures);

struct ChainReport {
    bool pass = false;
    int n = 0;
    double sigma = 0, T = 0;
    ConstantsEstimate constants;
    std::vector<StageRadii> paper_ledger;  // stage 0..n-1 formula values
    std::vector<double> t_pass, t_travel;
    std::vector<long> k_eff, kc_eff;
    struct LinkRecord {
        std::string label;
        CoveringVerdict verdict;
    };
    std::vector<LinkRecord> links;
    std::string note;

    std::string to_json() const;
};

// Verifies every covering link of the chain at config.T, or searches the
// T candidates when config.T == 0.
ChainReport verify_chain(const LatticeModel& model, const ChainConfig& config);

struct ShadowingOrbit {
    bool found = false;
    cvec b0;
    Trajectory ambient;            // ambient trajectory over the whole chain
    std::vector<double> leg_times;  // chain node times along the trajectory
    std::vector<std::string> sets_entered;
    std::vector<char> entered;     // membership verdict per chain set
    std::vector<double> max_mode_mass;  // max_t |b_l(t)|^2 per mode
    bool sequential_dominance = false;
    double max_deviation = 0;  // from the heteroclinic chain, mass profile
    std::string note;
};

ShadowingOrbit shoot_shadowing_orbit(const LatticeModel& model, const ChainConfig& config,
                                     const ChainReport& report);

void write_orbit_csv(const std::string& path, const LatticeModel& model,
                     const ShadowingOrbit& orbit);
void write_mass_profile_csv(const std::string& path, const LatticeModel& model,
                            const ShadowingOrbit& orbit);

}  // namespace hetshadow
