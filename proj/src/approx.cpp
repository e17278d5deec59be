#include "afp/approx.hpp"

#include <algorithm>

namespace afp {

namespace {

BigInt floor_div(const Ratio& x, const Ratio& unit) {
    Ratio q = x / unit;  // nonnegative here
    return q.num() / q.den();
}

BigInt ceil_div(const Ratio& x, const Ratio& unit) {
    Ratio q = x / unit;
    BigInt f = q.num() / q.den();
    if (f * q.den() != q.num()) ++f;
    return f;
}

bool on_grid(const Ratio& x, const Ratio& unit) { return (x / unit).is_integer(); }

long to_long(const BigInt& v) { return static_cast<long>(v); }

struct DiffuseGeometry {
    std::vector<int> atoms;  // touched atoms, sorted
    std::vector<Ratio> cum;  // cum[0] = 0 .. cum[r] = central
    Ratio central;
};

DiffuseGeometry geometry_of(const Algebra& a, const EmbeddingSpec& e, const AbelianD& d, int i) {
    DiffuseGeometry g;
    g.central = a.summands[i].central_trace;
    g.cum.push_back(Ratio::zero());
    for (int k = 0; k < d.size(); ++k) {
        Ratio m = e.alpha[k][i];
        if (!m.is_positive()) continue;
        g.atoms.push_back(k);
        g.cum.push_back(g.cum.back() + m);
    }
    return g;
}

// Is p_k a minimal projection of the algebra: one atomic summand spanning
// the atom with partial multiplicity 1.
bool atom_minimal_in(const Algebra& a, const EmbeddingSpec& e, const AbelianD& d, int atom) {
    int found = -1;
    for (size_t i = 0; i < a.summands.size(); ++i) {
        if (!e.mass(a, atom, static_cast<int>(i)).is_positive()) continue;
        if (found >= 0) return false;
        found = static_cast<int>(i);
    }
    if (found < 0) return false;
    const Summand& s = a.summands[found];
    return s.is_atomic() && e.lambda[atom][found] == 1 && s.min_trace == d.atoms[atom];
}

Ratio max_other_minimal(const Algebra& other, const EmbeddingSpec& eother, int atom) {
    Ratio best;
    for (size_t i = 0; i < other.summands.size(); ++i) {
        const Summand& s = other.summands[i];
        if (!s.is_atomic() || eother.lambda[atom][i] <= 0) continue;
        if (s.min_trace > best) best = s.min_trace;
    }
    return best;
}

}  // namespace

int stage_offset(const Algebra& a, const AbelianD& d, const EmbeddingSpec& ea,
                 const Algebra& other, const EmbeddingSpec& eother) {
    require_valid_embedding(a, d, ea, "A");
    require_valid_embedding(other, d, eother, "other input");
    int needed = 1;
    for (size_t i = 0; i < a.summands.size(); ++i) {
        const Summand& s = a.summands[i];
        if (!s.is_diffuse()) continue;
        Ratio bound;  // largest admissible block trace for this summand
        bool first = true;
        for (int k = 0; k < d.size(); ++k) {
            Ratio alpha = ea.alpha[k][i];
            if (!alpha.is_positive()) continue;
            Ratio t_k = d.atoms[k];
            Ratio local = alpha / Ratio(4);
            Ratio quarter = t_k / Ratio(4);
            if (quarter < local) local = quarter;
            if (!atom_minimal_in(other, eother, d, k)) {
                Ratio gap = (t_k - max_other_minimal(other, eother, k)) / Ratio(2);
                if (gap < local) local = gap;
            }
            if (first || local < bound) bound = local;
            first = false;
        }
        if (first) throw ValidationError("diffuse summand touches no atom");
        if (!bound.is_positive())
            throw ValidationError("no admissible stage block trace at summand " +
                                  std::to_string(i));
        int level = 1;
        Ratio delta = s.central_trace / Ratio(2);
        while (delta > bound) {
            delta = delta / Ratio(2);
            ++level;
        }
        needed = std::max(needed, level);
    }
    return needed - 1;
}

StagePlan build_stage(const Algebra& a, const AbelianD& d, const EmbeddingSpec& ea,
                      const Algebra& other, const EmbeddingSpec& eother, int i) {
    if (i < 1) throw ValidationError("stage index must be >= 1");
    a.validate();
    require_valid_embedding(a, d, ea, "A");

    StagePlan plan;
    plan.requested = i;
    plan.offset = stage_offset(a, d, ea, other, eother);
    plan.stage_index = plan.offset + i;
    const int level = plan.stage_index;

    std::vector<std::vector<long>> lambda_cols;   // per stage summand: per atom
    std::vector<Summand> stage_summands;

    auto push = [&](const Summand& s, std::vector<long> lam, int origin, bool replaces) {
        stage_summands.push_back(s);
        lambda_cols.push_back(std::move(lam));
        plan.origin.push_back(origin);
        plan.replaces_diffuse.push_back(replaces);
    };

    for (size_t idx = 0; idx < a.summands.size(); ++idx) {
        const Summand& s = a.summands[idx];
        if (s.is_atomic()) {
            std::vector<long> lam(d.size(), 0);
            for (int k = 0; k < d.size(); ++k) lam[k] = ea.lambda[k][idx];
            push(s, std::move(lam), static_cast<int>(idx), false);
            continue;
        }
        if (s.kind == SummandKind::FreeGroupFactor)
            throw ValidationError("cannot stage a free group factor summand");

        DiffuseGeometry g = geometry_of(a, ea, d, static_cast<int>(idx));
        const int r = static_cast<int>(g.atoms.size());
        Ratio delta = g.central;
        for (int l = 0; l < level; ++l) delta = delta / Ratio(2);

        // Columns of the spanning block per touched atom; one grid cell is
        // sacrificed at every internal boundary.
        std::vector<long> lam(d.size(), 0);
        long m = 0;
        for (int j = 1; j <= r; ++j) {
            BigInt full = floor_div(g.cum[j], delta) - ceil_div(g.cum[j - 1], delta);
            if (j < r && on_grid(g.cum[j], delta)) --full;
            if (full < 1)
                throw InternalError("stage block has no full column under atom " +
                                    std::to_string(g.atoms[j - 1]));
            lam[g.atoms[j - 1]] = to_long(full);
            m += to_long(full);
        }
        push(Summand::matrix(m, delta), lam, static_cast<int>(idx), true);

        for (int j = 1; j < r; ++j) {
            BigInt s_cell = ceil_div(g.cum[j], delta);
            Ratio left = g.cum[j] - Ratio(BigInt(s_cell - 1)) * delta;
            Ratio right = Ratio(s_cell) * delta - g.cum[j];
            std::vector<long> la(d.size(), 0);
            la[g.atoms[j - 1]] = 1;
            push(Summand::matrix(1, left), std::move(la), static_cast<int>(idx), true);
            if (right.is_positive()) {
                std::vector<long> lb(d.size(), 0);
                lb[g.atoms[j]] = 1;
                push(Summand::matrix(1, right), std::move(lb), static_cast<int>(idx), true);
            }
        }
    }

    plan.algebra = Algebra(stage_summands);
    plan.embedding = EmbeddingSpec::zeros(d.size(), static_cast<int>(stage_summands.size()));
    for (size_t j = 0; j < stage_summands.size(); ++j)
        for (int k = 0; k < d.size(); ++k) plan.embedding.lambda[k][j] = lambda_cols[j][k];
    require_valid_embedding(plan.algebra, d, plan.embedding, "stage algebra");
    return plan;
}

BratteliDiagram stage_refinement(const StagePlan& from, const StagePlan& to) {
    if (to.stage_index != from.stage_index + 1)
        throw ValidationError("stage_refinement expects consecutive stages");

    // Group stage summands by original summand, preserving order.
    auto group = [](const StagePlan& p) {
        std::map<int, std::vector<int>> g;
        for (size_t j = 0; j < p.origin.size(); ++j) g[p.origin[j]].push_back(static_cast<int>(j));
        return g;
    };
    std::map<int, std::vector<int>> gf = group(from), gt = group(to);
    if (gf.size() != gt.size()) throw ValidationError("stage plans describe different inputs");

    BratteliDiagram diagram;
    for (const auto& [orig, src_ids] : gf) {
        const auto& dst_ids = gt.at(orig);
        if (!from.replaces_diffuse[src_ids[0]]) {
            // Atomic original summand: identity edge.
            diagram.edges.push_back(
                {src_ids[0], dst_ids[0], 1, from.algebra.summands[src_ids[0]].central_trace});
            continue;
        }

        // Reconstruct the boundary geometry shared by both levels.
        const Summand& big_from = from.algebra.summands[src_ids[0]];
        const Summand& big_to = to.algebra.summands[dst_ids[0]];
        Ratio delta = big_from.min_trace;
        Ratio delta2 = big_to.min_trace;
        if (delta != delta2 * Ratio(2))
            throw InternalError("stage block traces do not halve between stages");

        // big -> big'
        diagram.edges.push_back({src_ids[0], dst_ids[0], 2, big_from.central_trace});

        // Boundary fragments appear per internal boundary as a left fragment
        // a in (0, delta] and, when the boundary is off the grid, a right
        // fragment b = delta - a. Refinement: a = j_a*delta2 + a',
        // b = j_b*delta2 + b' with j_a + j_b = 1.
        size_t sf = 1, st = 1;
        while (sf < src_ids.size()) {
            if (st >= dst_ids.size())
                throw InternalError("stage refinement ran out of destination fragments");
            Ratio a = from.algebra.summands[src_ids[sf]].min_trace;
            Ratio b = delta - a;
            Ratio a2 = to.algebra.summands[dst_ids[st]].min_trace;
            Ratio b2 = delta2 - a2;

            Ratio diff_a = a - a2;
            if (!diff_a.is_zero() && diff_a != delta2)
                throw InternalError("stage fragments do not refine consistently");
            if (diff_a == delta2) diagram.edges.push_back({src_ids[sf], dst_ids[0], 1, delta2});
            diagram.edges.push_back({src_ids[sf], dst_ids[st], 1, a2});
            ++sf;
            ++st;

            if (b.is_positive()) {
                if (sf >= src_ids.size() ||
                    from.algebra.summands[src_ids[sf]].min_trace != b)
                    throw InternalError("stage layout misses a right boundary fragment");
                if (b2.is_positive() &&
                    (st >= dst_ids.size() || to.algebra.summands[dst_ids[st]].min_trace != b2))
                    throw InternalError("stage layout misses a refined right fragment");
                if (!b2.is_positive() && b != delta2)
                    throw InternalError("stage fragments do not refine consistently");
                Ratio diff_b = b2.is_positive() ? b - b2 : b;
                if (!diff_b.is_zero() && diff_b != delta2)
                    throw InternalError("stage fragments do not refine consistently");
                if (diff_b == delta2) diagram.edges.push_back({src_ids[sf], dst_ids[0], 1, delta2});
                if (b2.is_positive()) {
                    diagram.edges.push_back({src_ids[sf], dst_ids[st], 1, b2});
                    ++st;
                }
                ++sf;
            } else if (b2.is_positive()) {
                throw InternalError("stage refinement produced a fragment from nothing");
            }
        }
        if (st != dst_ids.size())
            throw InternalError("stage refinement did not consume all destination fragments");
    }
    validate_bratteli(from.algebra, to.algebra, diagram);
    return diagram;
}

std::vector<SimpleStep> stage_steps(const StagePlan& from, const StagePlan& to) {
    return decompose_simple_steps(from.algebra, to.algebra, stage_refinement(from, to));
}

KernelSide stage_kernel_side(const StagePlan& plan) {
    KernelSide side;
    for (size_t j = 0; j < plan.algebra.summands.size(); ++j) {
        const Summand& s = plan.algebra.summands[j];
        KernelSummand ks;
        ks.origin = static_cast<int>(j);
        ks.is_matrix = true;
        ks.diffuse_origin = plan.replaces_diffuse[j];
        ks.size = s.size;
        ks.min_trace = s.min_trace;
        for (size_t k = 0; k < plan.embedding.lambda.size(); ++k) {
            long l = plan.embedding.lambda[k][j];
            if (l > 0) {
                ks.lambda[static_cast<int>(k)] = l;
                ks.mass[static_cast<int>(k)] = Ratio(l) * s.min_trace;
            }
        }
        side.summands.push_back(std::move(ks));
    }
    return side;
}

}  // namespace afp
