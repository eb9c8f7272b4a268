#include "hetshadow/hset.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hetshadow/parallel.hpp"
#include "json.hpp"

namespace hetshadow {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Basic structure
// ---------------------------------------------------------------------------

int HSet::exit_dimension() const {
    int d = 0;
    for (const auto& b : blocks)
        if (b.role == BlockRole::Exit) d += b.dimension();
    return d;
}

int HSet::entry_dimension() const {
    int d = 0;
    for (const auto& b : blocks)
        if (b.role == BlockRole::Entry) d += b.dimension();
    return d;
}

const Block& HSet::block(const std::string& bname) const {
    for (const auto& b : blocks)
        if (b.name == bname) return b;
    throw HSetError("no block named " + bname + " in h-set " + name);
}

void HSet::validate() const {
    std::vector<bool> used(dim, false);
    for (const auto& b : blocks) {
        if (b.radius <= 0) throw HSetError("block " + b.name + " has non-positive radius");
        for (const auto& s : b.subs)
            for (int c = s.coord0; c < s.coord0 + s.ncoords; ++c) {
                if (c < 0 || c >= dim || used[c])
                    throw HSetError("blocks do not partition the coordinates");
                used[c] = true;
            }
    }
    for (bool u : used)
        if (!u) throw HSetError("blocks do not cover all coordinates");
    if (static_cast<int>(center.size()) != dim) throw HSetError("center dimension mismatch");
    if (exit_dimension() + entry_dimension() != dim)
        throw HSetError("u(N) + s(N) must equal the ambient dimension");
}

namespace {

double sub_norm(const SubElement& s, const double* delta) {
    if (s.ncoords == 1) return std::abs(delta[s.coord0]);
    return std::hypot(delta[s.coord0], delta[s.coord0 + 1]);
}

double block_internal_norm(const Block& b, const std::vector<double>& delta) {
    double worst = 0.0;
    for (const auto& s : b.subs) worst = std::max(worst, sub_norm(s, delta.data()));
    return worst / b.radius;
}

}  // namespace

ContractedHSet as_contracted(const HSet& set) { return ContractedHSet{set, {}}; }

static const SubElement& find_sub(const Block& b, const std::string& sub) {
    for (const auto& s : b.subs)
        if (s.name == sub) return s;
    throw HSetError("no sub-element " + sub + " in block " + b.name);
}

ContractedHSet contract(const ContractedHSet& set, const std::string& block,
                        const std::string& sub, const std::vector<double>& internal_value) {
    const Block& b = set.parent.block(block);
    if (b.role != BlockRole::Entry && b.role != BlockRole::Exit) throw HSetError("bad role");
    if (b.role == BlockRole::Entry)
        throw HSetError("cannot contract entry block " + block);
    const SubElement& s = find_sub(b, sub);
    if (static_cast<int>(internal_value.size()) != s.ncoords)
        throw HSetError("contraction value dimension mismatch");
    double nv = s.ncoords == 1 ? std::abs(internal_value[0])
                               : std::hypot(internal_value[0], internal_value[1]);
    if (nv > 1.0 + 1e-12) throw HSetError("contraction value outside the unit ball");
    for (const auto& d : set.drops)
        if (d.block == block && d.sub == sub) throw HSetError("sub-element already contracted");
    ContractedHSet out = set;
    out.drops.push_back({block, sub, internal_value});
    return out;
}

ContractedHSet contract(const HSet& set, const std::string& block, const std::string& sub,
                        const std::vector<double>& internal_value) {
    return contract(as_contracted(set), block, sub, internal_value);
}

ContractedHSet contract(const HSet& set, const std::string& block,
                        const std::vector<double>& internal_value) {
    const Block& b = set.block(block);
    if (b.subs.size() != 1) throw HSetError("whole-block contraction needs a 1-sub block");
    return contract(set, block, b.subs[0].name, internal_value);
}

std::vector<ContractedHSet::FreeExit> ContractedHSet::free_exits() const {
    std::vector<FreeExit> out;
    for (size_t bi = 0; bi < parent.blocks.size(); ++bi) {
        const Block& b = parent.blocks[bi];
        if (b.role != BlockRole::Exit) continue;
        FreeExit fe;
        fe.block_index = static_cast<int>(bi);
        for (size_t si = 0; si < b.subs.size(); ++si) {
            bool dropped = false;
            for (const auto& d : drops)
                if (d.block == b.name && d.sub == b.subs[si].name) dropped = true;
            if (!dropped) fe.sub_indices.push_back(static_cast<int>(si));
        }
        if (!fe.sub_indices.empty()) out.push_back(fe);
    }
    return out;
}

int ContractedHSet::exit_dimension() const {
    int d = 0;
    for (const auto& fe : free_exits())
        for (int si : fe.sub_indices) d += parent.blocks[fe.block_index].subs[si].ncoords;
    return d;
}

const char* to_string(Membership m) {
    switch (m) {
        case Membership::Interior: return "interior";
        case Membership::BoundaryExit: return "boundary(exit)";
        case Membership::BoundaryEntry: return "boundary(entry)";
        case Membership::Outside: return "outside";
    }
    return "?";
}

Membership membership(const HSet& set, const std::vector<double>& point, double tol) {
    if (static_cast<int>(point.size()) != set.dim) throw HSetError("membership: dimension mismatch");
    std::vector<double> delta(set.dim);
    for (int i = 0; i < set.dim; ++i) delta[i] = point[i] - set.center[i];
    bool exit_face = false, entry_face = false;
    for (const auto& b : set.blocks) {
        double nrm = block_internal_norm(b, delta);
        if (nrm > 1.0 + tol) return Membership::Outside;
        if (nrm >= 1.0 - tol)
            (b.role == BlockRole::Exit ? exit_face : entry_face) = true;
    }
    if (exit_face) return Membership::BoundaryExit;
    if (entry_face) return Membership::BoundaryEntry;
    return Membership::Interior;
}

Membership membership(const ContractedHSet& set, const std::vector<double>& point, double tol) {
    // the slice constraint first
    for (const auto& d : set.drops) {
        const Block& b = set.parent.block(d.block);
        const SubElement& s = find_sub(b, d.sub);
        for (int c = 0; c < s.ncoords; ++c) {
            double expect = set.parent.center[s.coord0 + c] + b.radius * d.value[c];
            if (std::abs(point[s.coord0 + c] - expect) > tol * std::max(1.0, b.radius))
                return Membership::Outside;
        }
    }
    return membership(set.parent, point, tol);
}

// ---------------------------------------------------------------------------
// Grids
// ---------------------------------------------------------------------------

namespace {

// internal offsets for one sub-element: interior samples or norm-1 face
std::vector<std::vector<double>> sub_samples(const SubElement& s, int per_dim, bool face) {
    std::vector<std::vector<double>> out;
    if (s.ncoords == 1) {
        if (face) {
            out.push_back({-1.0});
            out.push_back({1.0});
        } else {
            for (int i = 0; i < per_dim; ++i) {
                double v = per_dim == 1 ? 0.0 : -1.0 + 2.0 * i / (per_dim - 1);
                out.push_back({v});
            }
        }
    } else {
        if (face) {
            int nang = std::max(8, 4 * per_dim);
            for (int i = 0; i < nang; ++i) {
                double a = 2.0 * M_PI * i / nang;
                out.push_back({std::cos(a), std::sin(a)});
            }
        } else {
            // polar sampling of the unit disk, never empty
            out.push_back({0.0, 0.0});
            int nr = std::max(1, per_dim - 1);
            int na = std::max(4, per_dim + 1);
            for (int i = 1; i <= nr; ++i) {
                double r = static_cast<double>(i) / nr;
                for (int a = 0; a < na; ++a) {
                    double th = 2.0 * M_PI * a / na + (i % 2) * M_PI / na;
                    out.push_back({r * std::cos(th), r * std::sin(th)});
                }
            }
        }
    }
    return out;
}

struct SubRef {
    const Block* block;
    const SubElement* sub;
    bool fixed = false;              // contracted
    std::vector<double> fixed_value;  // internal
};

std::vector<SubRef> collect_subs(const ContractedHSet& set) {
    std::vector<SubRef> refs;
    for (const auto& b : set.parent.blocks)
        for (const auto& s : b.subs) {
            SubRef r{&b, &s, false, {}};
            for (const auto& d : set.drops)
                if (d.block == b.name && d.sub == s.name) {
                    r.fixed = true;
                    r.fixed_value = d.value;
                }
            refs.push_back(r);
        }
    return refs;
}

// cartesian product of per-sub internal offsets -> absolute points
void product_points(const ContractedHSet& set, const std::vector<SubRef>& refs,
                    const std::vector<std::vector<std::vector<double>>>& choices,
                    std::vector<std::vector<double>>& out) {
    for (const auto& c : choices)
        if (c.empty()) return;
    std::vector<size_t> idx(refs.size(), 0);
    const std::vector<double>& c = set.parent.center;
    while (true) {
        std::vector<double> p = c;
        for (size_t r = 0; r < refs.size(); ++r) {
            const auto& offs = choices[r][idx[r]];
            for (int k = 0; k < refs[r].sub->ncoords; ++k)
                p[refs[r].sub->coord0 + k] += refs[r].block->radius * offs[k];
        }
        out.push_back(std::move(p));
        size_t r = 0;
        while (r < refs.size() && ++idx[r] == choices[r].size()) {
            idx[r] = 0;
            ++r;
        }
        if (r == refs.size()) break;
    }
}

std::vector<std::vector<double>> support_grid(const ContractedHSet& set, int per_dim) {
    auto refs = collect_subs(set);
    std::vector<std::vector<std::vector<double>>> choices;
    for (const auto& r : refs) {
        if (r.fixed)
            choices.push_back({r.fixed_value});
        else
            choices.push_back(sub_samples(*r.sub, per_dim, false));
    }
    std::vector<std::vector<double>> out;
    product_points(set, refs, choices, out);
    return out;
}

// points on the face where the given free-exit block has internal norm 1:
// union over its free sub-elements placed at norm 1
std::vector<std::vector<double>> exit_face_grid(const ContractedHSet& set,
                                                const ContractedHSet::FreeExit& fe, int per_dim,
                                                int interior_per_dim) {
    auto refs = collect_subs(set);
    const Block& blk = set.parent.blocks[fe.block_index];
    std::vector<std::vector<double>> out;
    for (int si : fe.sub_indices) {
        const SubElement& face_sub = blk.subs[si];
        std::vector<std::vector<std::vector<double>>> choices;
        for (const auto& r : refs) {
            if (r.fixed) {
                choices.push_back({r.fixed_value});
            } else if (r.block == &blk && r.sub == &face_sub) {
                choices.push_back(sub_samples(*r.sub, per_dim, true));
            } else if (r.block == &blk) {
                choices.push_back(sub_samples(*r.sub, std::max(2, per_dim - 1), false));
            } else {
                choices.push_back(sub_samples(*r.sub, interior_per_dim, false));
            }
        }
        product_points(set, refs, choices, out);
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Covering check
// ---------------------------------------------------------------------------

namespace {

struct ExitPairing {
    // flat list: (N block, N sub) -> slice of M exit coordinate indices
    struct Pair {
        const Block* n_block;
        std::vector<const SubElement*> n_subs;
        const Block* m_block;
    };
    std::vector<Pair> pairs;
};

ExitPairing pair_exits(const ContractedHSet& N, const HSet& M) {
    ExitPairing ep;
    auto fes = N.free_exits();
    std::vector<const Block*> m_exits;
    for (const auto& b : M.blocks)
        if (b.role == BlockRole::Exit) m_exits.push_back(&b);
    if (fes.size() != m_exits.size())
        throw HSetError("covering: exit block counts differ (" + std::to_string(fes.size()) +
                        " vs " + std::to_string(m_exits.size()) + ")");
    for (size_t i = 0; i < fes.size(); ++i) {
        ExitPairing::Pair p;
        p.n_block = &N.parent.blocks[fes[i].block_index];
        int ndim = 0;
        for (int si : fes[i].sub_indices) {
            p.n_subs.push_back(&p.n_block->subs[si]);
            ndim += p.n_block->subs[si].ncoords;
        }
        p.m_block = m_exits[i];
        if (ndim != p.m_block->dimension())
            throw HSetError("covering: exit block " + p.n_block->name + " -> " +
                            p.m_block->name + " dimension mismatch");
        ep.pairs.push_back(p);
    }
    return ep;
}

// 2x2 or 1x1 determinant of the exit-to-exit Jacobian block, internal units
double exit_block_det(const std::vector<double>& J, int dimN, const ExitPairing::Pair& p,
                      double Rn, double Rm) {
    std::vector<int> cols, rows;
    for (const auto* s : p.n_subs)
        for (int k = 0; k < s->ncoords; ++k) cols.push_back(s->coord0 + k);
    for (const auto& s : p.m_block->subs)
        for (int k = 0; k < s.ncoords; ++k) rows.push_back(s.coord0 + k);
    double scale = Rn / Rm;
    if (cols.size() == 1) return J[rows[0] * dimN + cols[0]] * scale;
    double a = J[rows[0] * dimN + cols[0]], b = J[rows[0] * dimN + cols[1]];
    double c = J[rows[1] * dimN + cols[0]], d = J[rows[1] * dimN + cols[1]];
    return (a * d - b * c) * scale * scale;
}

}  // namespace

CoveringVerdict check_covering(const PointMap& f, const ContractedHSet& N, const HSet& M,
                               const CoveringOptions& opts) {
    CoveringVerdict verdict;
    N.parent.validate();
    M.validate();
    ExitPairing pairing = pair_exits(N, M);
    const int dimN = N.parent.dim, dimM = M.dim;

    // center of the contracted source and its image
    std::vector<double> c0 = N.parent.center;
    for (const auto& d : N.drops) {
        const Block& b = N.parent.block(d.block);
        const SubElement& s = find_sub(b, d.sub);
        for (int k = 0; k < s.ncoords; ++k)
            c0[s.coord0 + k] = N.parent.center[s.coord0 + k] + b.radius * d.value[k];
    }
    std::vector<double> fc;
    try {
        fc = f(c0);
    } catch (const std::exception& e) {
        verdict.note = std::string("map failed at the source center: ") + e.what();
        return verdict;
    }
    if (static_cast<int>(fc.size()) != dimM) throw HSetError("map image dimension mismatch");

    // Jacobian at the center (absolute units)
    std::vector<double> J(static_cast<size_t>(dimM) * dimN, 0.0);
    {
        std::vector<double> steps(dimN, 1e-6);
        for (const auto& b : N.parent.blocks)
            for (const auto& s : b.subs)
                for (int k = 0; k < s.ncoords; ++k)
                    steps[s.coord0 + k] = opts.jacobian_step_fraction * b.radius;
        for (int col = 0; col < dimN; ++col) {
            std::vector<double> yp = c0, ym = c0;
            yp[col] += steps[col];
            ym[col] -= steps[col];
            try {
                std::vector<double> fp = f(yp);
                if (opts.jacobian_mode == JacobianMode::Forward) {
                    for (int r = 0; r < dimM; ++r)
                        J[static_cast<size_t>(r) * dimN + col] = (fp[r] - fc[r]) / steps[col];
                } else {
                    std::vector<double> fm = f(ym);
                    for (int r = 0; r < dimM; ++r)
                        J[static_cast<size_t>(r) * dimN + col] =
                            (fp[r] - fm[r]) / (2.0 * steps[col]);
                }
            } catch (const std::exception& e) {
                verdict.note = std::string("map failed while sampling the Jacobian: ") + e.what();
                return verdict;
            }
        }
    }

    // degree data: signs of the exit-to-exit blocks
    int w = 1;
    for (const auto& p : pairing.pairs) {
        double det = exit_block_det(J, dimN, p, p.n_block->radius, p.m_block->radius);
        if (std::abs(det) < 1e-10)
            throw HSetError("degree undefined: singular exit Jacobian block " + p.n_block->name);
        w *= det > 0 ? 1 : -1;
    }
    verdict.degree_sign = w;

    // one of the two center conditions of the product theorem per exit block:
    // either a_j lies inside the target window, or the window center is in
    // the image of the affinized block map
    verdict.center_image_ok = true;
    for (const auto& p : pairing.pairs) {
        std::vector<double> delta(dimM, 0.0);
        for (int i = 0; i < dimM; ++i) delta[i] = fc[i] - M.center[i];
        if (block_internal_norm(*p.m_block, delta) < 1.0) continue;
        // x~c in A_j(ball): solve A_j xi = x~c - a_j in internal units
        std::vector<int> cols, rows;
        for (const auto* s : p.n_subs)
            for (int k = 0; k < s->ncoords; ++k) cols.push_back(s->coord0 + k);
        for (const auto& s : p.m_block->subs)
            for (int k = 0; k < s.ncoords; ++k) rows.push_back(s.coord0 + k);
        std::vector<double> xi(dimN, 0.0);  // preimage offset in N coordinates
        if (cols.size() == 1) {
            double a = J[static_cast<size_t>(rows[0]) * dimN + cols[0]];
            xi[cols[0]] = (M.center[rows[0]] - fc[rows[0]]) / a;
        } else {
            double a = J[static_cast<size_t>(rows[0]) * dimN + cols[0]];
            double b = J[static_cast<size_t>(rows[0]) * dimN + cols[1]];
            double c = J[static_cast<size_t>(rows[1]) * dimN + cols[0]];
            double d = J[static_cast<size_t>(rows[1]) * dimN + cols[1]];
            double det = a * d - b * c;
            double r0 = M.center[rows[0]] - fc[rows[0]];
            double r1 = M.center[rows[1]] - fc[rows[1]];
            xi[cols[0]] = (d * r0 - b * r1) / det;
            xi[cols[1]] = (-c * r0 + a * r1) / det;
        }
        if (block_internal_norm(*p.n_block, xi) >= 1.0) verdict.center_image_ok = false;
    }

    // the affinization keeps full rows on entries and block-diagonal exit rows
    auto affine = [&](const std::vector<double>& p) {
        std::vector<double> out(fc);
        std::vector<double> d(dimN);
        for (int i = 0; i < dimN; ++i) d[i] = p[i] - c0[i];
        for (int r = 0; r < dimM; ++r)
            for (int col = 0; col < dimN; ++col) out[r] += J[static_cast<size_t>(r) * dimN + col] * d[col];
        // overwrite exit rows with the block-diagonal part
        for (const auto& pr : pairing.pairs) {
            std::vector<int> cols;
            for (const auto* s : pr.n_subs)
                for (int k = 0; k < s->ncoords; ++k) cols.push_back(s->coord0 + k);
            for (const auto& s : pr.m_block->subs)
                for (int k = 0; k < s.ncoords; ++k) {
                    int r = s.coord0 + k;
                    double acc = fc[r];
                    for (int col : cols) acc += J[static_cast<size_t>(r) * dimN + col] * d[col];
                    out[r] = acc;
                }
        }
        return out;
    };

    // ------- entry condition over the support grid -------
    auto interior = support_grid(N, opts.grid_interior);
    // ------- exit condition over the faces -------
    auto fes = N.free_exits();
    std::vector<std::vector<std::vector<double>>> faces;
    for (size_t i = 0; i < fes.size(); ++i)
        faces.push_back(exit_face_grid(N, fes[i], opts.grid_face, opts.grid_interior));

    struct Task {
        const std::vector<double>* point;
        int face_index;  // -1 interior
    };
    std::vector<Task> tasks;
    for (const auto& p : interior) tasks.push_back({&p, -1});
    for (size_t i = 0; i < faces.size(); ++i)
        for (const auto& p : faces[i]) tasks.push_back({&p, static_cast<int>(i)});
    verdict.points_checked = static_cast<long>(tasks.size());

    std::vector<double> entry_margins(tasks.size(), 1e300);
    std::vector<double> exit_margins(tasks.size(), 1e300);
    std::vector<char> failures(tasks.size(), 0);
    std::vector<int> entry_worst_block(tasks.size(), -1);

    parallel_for(static_cast<long>(tasks.size()), [&](long ti) {
        const Task& task = tasks[ti];
        std::vector<double> image;
        try {
            image = f(*task.point);
        } catch (const std::exception&) {
            failures[ti] = 1;
            return;
        }
        std::vector<double> aimg = affine(*task.point);
        for (double t : opts.homotopy_times) {
            std::vector<double> q(dimM);
            for (int i = 0; i < dimM; ++i) q[i] = (1.0 - t) * image[i] + t * aimg[i];
            std::vector<double> delta(dimM);
            for (int i = 0; i < dimM; ++i) delta[i] = q[i] - M.center[i];
            // entry inequalities hold for every point of the support
            for (size_t bi = 0; bi < M.blocks.size(); ++bi) {
                const Block& b = M.blocks[bi];
                if (b.role != BlockRole::Entry) continue;
                double m = 1.0 - block_internal_norm(b, delta);
                if (m < entry_margins[ti]) {
                    entry_margins[ti] = m;
                    entry_worst_block[ti] = static_cast<int>(bi);
                }
            }
            // exit inequality only for the face's own paired target block
            if (task.face_index >= 0) {
                const auto& pr = pairing.pairs[task.face_index];
                double m = block_internal_norm(*pr.m_block, delta) - 1.0;
                exit_margins[ti] = std::min(exit_margins[ti], m);
            }
        }
    });

    double entry_margin = 1e300, exit_margin = 1e300;
    long map_failures = 0;
    for (size_t i = 0; i < tasks.size(); ++i) {
        if (failures[i]) {
            ++map_failures;
            continue;
        }
        if (entry_margins[i] < entry_margin && entry_worst_block[i] >= 0)
            verdict.worst_entry_block = M.blocks[entry_worst_block[i]].name;
        entry_margin = std::min(entry_margin, entry_margins[i]);
        if (exit_margins[i] < exit_margin && tasks[i].face_index >= 0)
            verdict.worst_exit_block = pairing.pairs[tasks[i].face_index].m_block->name;
        exit_margin = std::min(exit_margin, exit_margins[i]);
    }
    verdict.map_failures = map_failures;
    // a side without any block (or any face) imposes no condition
    bool entry_vacuous = entry_margin == 1e300;
    bool exit_vacuous = exit_margin == 1e300;
    verdict.entry_margin = entry_vacuous ? 1.0 : entry_margin;
    verdict.exit_margin = exit_vacuous ? 1.0 : exit_margin;
    if (entry_vacuous) verdict.worst_entry_block = "(none)";
    if (exit_vacuous) verdict.worst_exit_block = "(none)";

    verdict.pass = map_failures == 0 && verdict.center_image_ok &&
                   verdict.entry_margin > opts.margin_min &&
                   verdict.exit_margin > opts.margin_min;
    return verdict;
}

ChainVerdict check_chain(const std::vector<ChainLink>& chain, const CoveringOptions& opts) {
    ChainVerdict cv;
    cv.pass = true;
    for (size_t i = 0; i < chain.size(); ++i) {
        // shape compatibility across the chain: contraction happens between
        // stages, exit structure must match within each link (checked inside)
        CoveringVerdict v;
        try {
            v = check_covering(chain[i].map, chain[i].source, chain[i].target, opts);
        } catch (const std::exception& e) {
            v.pass = false;
            v.note = e.what();
        }
        if (!v.pass && cv.first_failed_link < 0) cv.first_failed_link = static_cast<int>(i);
        cv.pass = cv.pass && v.pass;
        cv.links.push_back(std::move(v));
    }
    return cv;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

std::string hset_to_json(const HSet& set) {
    json j{{"name", set.name}, {"dim", set.dim}, {"center", set.center}};
    json blocks = json::array();
    for (const auto& b : set.blocks) {
        json subs = json::array();
        for (const auto& s : b.subs)
            subs.push_back({{"name", s.name}, {"coord0", s.coord0}, {"ncoords", s.ncoords}});
        blocks.push_back({{"name", b.name},
                          {"role", b.role == BlockRole::Exit ? "exit" : "entry"},
                          {"radius", b.radius},
                          {"subs", subs}});
    }
    j["blocks"] = blocks;
    return j.dump(2);
}

std::string verdict_to_json(const CoveringVerdict& v) {
    json j{{"pass", v.pass},
           {"degree_sign", v.degree_sign},
           {"entry_margin", v.entry_margin},
           {"exit_margin", v.exit_margin},
           {"center_image_ok", v.center_image_ok},
           {"points_checked", v.points_checked},
           {"map_failures", v.map_failures},
           {"note", v.note}};
    return j.dump(2);
}

}  // namespace hetshadow
