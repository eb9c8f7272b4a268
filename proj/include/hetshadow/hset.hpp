#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hetshadow {

struct HSetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// h-sets with product structure
// ---------------------------------------------------------------------------

enum class BlockRole { Exit, Entry };

// A sub-element is one scalar coordinate or one complex pair; its internal
// norm is |.| or the modulus. A block is a group of sub-elements sharing one
// radius, measured in the max norm over its sub-elements.
struct SubElement {
    std::string name;
    int coord0 = 0;
    int ncoords = 1;  // 1 scalar, 2 complex pair
};

struct Block {
    std::string name;
    BlockRole role = BlockRole::Entry;
    double radius = 0.0;
    std::vector<SubElement> subs;

    int dimension() const {
        int d = 0;
        for (const auto& s : subs) d += s.ncoords;
        return d;
    }
};

struct HSet {
    std::string name;
    int dim = 0;
    std::vector<double> center;
    std::vector<Block> blocks;

    int exit_dimension() const;
    int entry_dimension() const;
    const Block& block(const std::string& name) const;
    void validate() const;  // blocks partition [0, dim), radii > 0
};

// Contraction of a sub-element of an exit block to a fixed internal value.
struct Contraction {
    std::string block, sub;
    std::vector<double> value;  // internal units, ||value|| <= 1
};

struct ContractedHSet {
    HSet parent;
    std::vector<Contraction> drops;

    // exit sub-elements still free, in block order
    struct FreeExit {
        int block_index;
        std::vector<int> sub_indices;
    };
    std::vector<FreeExit> free_exits() const;
    int exit_dimension() const;
};

ContractedHSet as_contracted(const HSet& set);  // no drops
ContractedHSet contract(const HSet& set, const std::string& block, const std::string& sub,
                        const std::vector<double>& internal_value);
ContractedHSet contract(const ContractedHSet& set, const std::string& block,
                        const std::string& sub, const std::vector<double>& internal_value);
// Whole-block convenience for 1-sub blocks.
ContractedHSet contract(const HSet& set, const std::string& block,
                        const std::vector<double>& internal_value);

enum class Membership { Interior, BoundaryExit, BoundaryEntry, Outside };
const char* to_string(Membership m);

Membership membership(const HSet& set, const std::vector<double>& point, double tol = 1e-12);
Membership membership(const ContractedHSet& set, const std::vector<double>& point,
                      double tol = 1e-12);

// ---------------------------------------------------------------------------
// Covering relations
// ---------------------------------------------------------------------------

using PointMap = std::function<std::vector<double>(const std::vector<double>&)>;

enum class JacobianMode { Central, Forward };

struct CoveringOptions {
    int grid_face = 5;       // samples per dimension on exit faces
    int grid_interior = 3;   // samples per dimension for the entry check
    double margin_min = 1e-9;
    std::vector<double> homotopy_times{0.0, 0.25, 0.5, 0.75, 1.0};
    JacobianMode jacobian_mode = JacobianMode::Central;
    double jacobian_step_fraction = 0.05;  // FD step as a fraction of the radius
};

struct CoveringVerdict {
    bool pass = false;
    int degree_sign = 0;       // w = sgn prod det A_j
    double entry_margin = 0;   // min over grid/t of 1 - |internal entry norm|
    double exit_margin = 0;    // min over faces/t of |internal exit norm| - 1
    bool center_image_ok = false;  // a_j condition of the product theorem
    long points_checked = 0;
    long map_failures = 0;     // map threw (left chart, diverged, ...)
    std::string worst_entry_block, worst_exit_block;
    std::string note;
};

CoveringVerdict check_covering(const PointMap& f, const ContractedHSet& N, const HSet& M,
                               const CoveringOptions& opts = {});

// ---------------------------------------------------------------------------
// Chains
// ---------------------------------------------------------------------------

struct ChainLink {
    std::string label;
    ContractedHSet source;
    HSet target;
    PointMap map;
};

struct ChainVerdict {
    bool pass = false;
    std::vector<CoveringVerdict> links;
    int first_failed_link = -1;  // index into links, -1 when all pass
};

// Verifies shape compatibility (matching exit structure across each link)
// and runs every covering check.
ChainVerdict check_chain(const std::vector<ChainLink>& chain, const CoveringOptions& opts = {});

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

std::string hset_to_json(const HSet& set);
std::string verdict_to_json(const CoveringVerdict& v);

}  // namespace hetshadow
