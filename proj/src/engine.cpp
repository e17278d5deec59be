#include "afp/engine.hpp"

#include <algorithm>

namespace afp {

void AmalgamProblem::validate() const {
    a.validate();
    b.validate();
    d.validate();
    if (!a.is_normalized())
        throw ValidationError("A is not normalized: total trace " + a.total_trace().str());
    if (!b.is_normalized())
        throw ValidationError("B is not normalized: total trace " + b.total_trace().str());
    require_valid_embedding(a, d, ea, "A");
    require_valid_embedding(b, d, eb, "B");
}

namespace {

Ratio algebra_weight(const Algebra& a) {
    Ratio w;
    for (const auto& s : a.summands) w += s.weight();
    return w;
}

Ratio atoms_squared(const AbelianD& d) {
    Ratio w;
    for (const auto& t : d.atoms) w += t.squared();
    return w;
}

struct SortedEntry {
    Summand summand;
    LedgerEntry ledger;
    std::map<std::pair<int, int>, Ratio> provenance;
};

// Canonical sort of result summands together with their ledger rows and
// provenance maps.
void sort_report(ProductReport& r) {
    std::vector<SortedEntry> entries;
    for (size_t i = 0; i < r.result.summands.size(); ++i)
        entries.push_back({r.result.summands[i], r.ledger.entries[i], r.provenance[i]});
    std::stable_sort(entries.begin(), entries.end(),
                     [](const SortedEntry& x, const SortedEntry& y) {
                         return canonical_summand_less(x.summand, y.summand);
                     });
    r.result.summands.clear();
    r.ledger.entries.clear();
    r.provenance.clear();
    for (auto& e : entries) {
        r.result.summands.push_back(e.summand);
        r.ledger.entries.push_back(e.ledger);
        r.provenance.push_back(e.provenance);
    }
}

// Multiplies every trace datum by f; parameters are intrinsic and unchanged.
Algebra scale_algebra(const Algebra& a, const Ratio& f) {
    Algebra out;
    for (const auto& s : a.summands) {
        switch (s.kind) {
            case SummandKind::Matrix:
                out.summands.push_back(Summand::matrix(s.size, s.min_trace * f));
                break;
            case SummandKind::DiffuseTypeI:
                out.summands.push_back(Summand::diffuse_type_i(s.size, s.central_trace * f));
                break;
            case SummandKind::HyperfiniteII1:
                out.summands.push_back(Summand::hyperfinite(s.central_trace * f));
                break;
            case SummandKind::FreeGroupFactor:
                out.summands.push_back(Summand::fgf(s.param, s.central_trace * f));
                break;
        }
    }
    return out;
}

ProductReport solve(const AmalgamProblem& p, const EngineOptions& opts);

// Kernel path: no free group factor summands on either side.
ProductReport solve_kernel(const AmalgamProblem& p, const EngineOptions& opts) {
    KernelSide ka = make_limit_side(p.a, p.d, p.ea);
    KernelSide kb = make_limit_side(p.b, p.d, p.eb);
    StageResult limit = run_stage(ka, kb, p.d);
    LimitExtraction ext = extract_limit(limit, p.a, p.b, p.d, p.ea, p.eb);

    ProductReport report;
    report.result = ext.algebra;
    report.ledger = ext.ledger;
    report.provenance = limit.provenance;
    report.fdim_lhs = ext.fdim_lhs;
    report.fdim_rhs = ext.fdim_rhs;
    report.stage_used = 1;

    if (opts.verify_stages && (p.a.has_diffuse() || p.b.has_diffuse())) {
        StagePlan a1 = build_stage(p.a, p.d, p.ea, p.b, p.eb, 1);
        StagePlan a2 = build_stage(p.a, p.d, p.ea, p.b, p.eb, 2);
        StagePlan b1 = build_stage(p.b, p.d, p.eb, p.a, p.ea, 1);
        StagePlan b2 = build_stage(p.b, p.d, p.eb, p.a, p.ea, 2);
        std::vector<StageResult> stages;
        stages.push_back(run_stage(stage_kernel_side(a1), stage_kernel_side(b1), p.d));
        stages.push_back(run_stage(stage_kernel_side(a2), stage_kernel_side(b2), p.d));
        int idx = detect_stabilization(stages);
        report.stage_used = std::max(a1.stage_index, b1.stage_index) + idx;
        if (stages[idx].stable_matrix != limit.stable_matrix)
            throw InternalError(
                "stage matrix fingerprint disagrees with the limit computation");
    }
    return report;
}

// Peel path: remove one free group factor summand from A, solve the inner
// problem, and reassemble.
ProductReport solve_peel(const AmalgamProblem& p, const EngineOptions& opts) {
    auto [inner, recipe] = peel_fgf(p);
    EngineOptions inner_opts = opts;
    inner_opts.per_component = true;  // peeling may disconnect the graph
    ProductReport ir = solve(inner, inner_opts);

    // Remap inner provenance onto the outer problem's summand indices:
    // marked atoms fold back into the peeled summand, indices after the
    // peeled summand shift back.
    const int peeled = recipe.summand;
    const int n_marked = static_cast<int>(recipe.marked.size());
    auto remap = [&](int inner_idx) {
        if (inner_idx < peeled) return inner_idx;
        if (inner_idx < peeled + n_marked) return peeled;
        return inner_idx - n_marked + 1;
    };

    std::vector<std::map<std::pair<int, int>, Ratio>> prov;
    for (const auto& m : ir.provenance) {
        std::map<std::pair<int, int>, Ratio> out;
        for (const auto& [key, mass] : m) {
            std::pair<int, int> nk = key;
            if (key.first == 0) nk.second = remap(key.second);
            out[nk] += mass;
        }
        prov.push_back(std::move(out));
    }

    // The central support of the peeled factor inside M: every inner summand
    // carrying mass of a marked atom merges with it into one factor.
    std::vector<bool> in_z(ir.result.summands.size(), false);
    for (size_t c = 0; c < ir.result.summands.size(); ++c)
        for (int m : recipe.marked)
            if (ir.provenance[c].count({0, m}) &&
                ir.provenance[c].at({0, m}).is_positive())
                in_z[c] = true;

    Ratio w_outside, c_outside;
    for (size_t c = 0; c < ir.result.summands.size(); ++c)
        if (!in_z[c]) {
            w_outside += ir.result.summands[c].weight();
            c_outside += ir.result.summands[c].central_trace;
        }
    Ratio w_z = algebra_weight(p.a) + algebra_weight(p.b) + atoms_squared(p.d) - w_outside;
    Ratio c_z = Ratio::one() - c_outside;
    if (!c_z.is_positive())
        throw InternalError("peel reassembly: the peeled factor has no central support");
    if (!w_z.is_positive())
        throw InternalError("peel reassembly: merged factor weight " + w_z.str() +
                            " is not positive");

    ProductReport report;
    LedgerEntry zl;
    zl.weight = w_z;
    zl.central = c_z;
    zl.classification = "Factor";
    std::map<std::pair<int, int>, Ratio> z_prov;
    for (size_t c = 0; c < ir.result.summands.size(); ++c) {
        if (in_z[c]) {
            for (const auto& [key, mass] : prov[c]) z_prov[key] += mass;
            zl.q_atoms.insert(ir.ledger.entries[c].q_atoms.begin(),
                              ir.ledger.entries[c].q_atoms.end());
        } else {
            report.result.summands.push_back(ir.result.summands[c]);
            report.ledger.entries.push_back(ir.ledger.entries[c]);
            report.provenance.push_back(prov[c]);
        }
    }
    Ratio s_z = Ratio::one() + w_z / c_z.squared();
    report.result.summands.push_back(Summand::fgf(s_z, c_z));
    report.ledger.entries.push_back(zl);
    report.provenance.push_back(z_prov);

    report.stage_used = ir.stage_used;
    report.fdim_lhs = fdim(report.result);
    report.fdim_rhs = fdim(p.a) + fdim(p.b) - fdim(d_to_algebra(p.d));
    if (report.fdim_lhs != report.fdim_rhs)
        throw InternalError("peel reassembly breaks free dimension additivity: " +
                            report.fdim_lhs.str() + " vs " + report.fdim_rhs.str());
    sort_report(report);
    return report;
}

// Componentwise solve for a disconnected union graph.
ProductReport solve_components(const AmalgamProblem& p, const InclusionGraph& g,
                               const EngineOptions& opts) {
    std::vector<std::vector<int>> comps = graph_components(g);
    ProductReport report;
    report.stage_used = 1;

    for (const auto& comp : comps) {
        std::set<int> atom_set(comp.begin(), comp.end());
        Ratio mass;
        for (int k : comp) mass += p.d.atoms[k];

        // Restrict both sides to summands supported inside the component.
        AmalgamProblem sub;
        std::vector<int> map_a, map_b;
        auto restrict_side = [&](const Algebra& alg, const EmbeddingSpec& emb,
                                 std::vector<int>& back) {
            Algebra out;
            for (size_t i = 0; i < alg.summands.size(); ++i) {
                bool inside = false, outside = false;
                for (int k = 0; k < p.d.size(); ++k) {
                    if (!emb.mass(alg, k, static_cast<int>(i)).is_positive()) continue;
                    (atom_set.count(k) ? inside : outside) = true;
                }
                if (inside && outside)
                    throw InternalError("summand spans several graph components");
                if (inside) {
                    out.summands.push_back(alg.summands[i]);
                    back.push_back(static_cast<int>(i));
                }
            }
            return out;
        };
        Algebra sa = restrict_side(p.a, p.ea, map_a);
        Algebra sb = restrict_side(p.b, p.eb, map_b);

        Ratio inv = Ratio::one() / mass;
        sub.a = scale_algebra(sa, inv);
        sub.b = scale_algebra(sb, inv);
        for (int k : comp) sub.d.atoms.push_back(p.d.atoms[k] * inv);
        sub.ea = EmbeddingSpec::zeros(static_cast<int>(comp.size()),
                                      static_cast<int>(sub.a.summands.size()));
        sub.eb = EmbeddingSpec::zeros(static_cast<int>(comp.size()),
                                      static_cast<int>(sub.b.summands.size()));
        for (size_t kk = 0; kk < comp.size(); ++kk) {
            for (size_t i = 0; i < map_a.size(); ++i) {
                sub.ea.lambda[kk][i] = p.ea.lambda[comp[kk]][map_a[i]];
                sub.ea.alpha[kk][i] = p.ea.alpha[comp[kk]][map_a[i]] * inv;
            }
            for (size_t i = 0; i < map_b.size(); ++i) {
                sub.eb.lambda[kk][i] = p.eb.lambda[comp[kk]][map_b[i]];
                sub.eb.alpha[kk][i] = p.eb.alpha[comp[kk]][map_b[i]] * inv;
            }
        }

        EngineOptions sub_opts = opts;
        sub_opts.per_component = false;  // each component is connected
        ProductReport sr = solve(sub, sub_opts);
        report.stage_used = std::max(report.stage_used, sr.stage_used);

        Algebra scaled = scale_algebra(sr.result, mass);
        for (size_t c = 0; c < scaled.summands.size(); ++c) {
            report.result.summands.push_back(scaled.summands[c]);
            LedgerEntry le = sr.ledger.entries[c];
            le.weight = le.weight * mass.squared();
            le.central = le.central * mass;
            std::set<int> q;
            for (int kk : le.q_atoms) q.insert(comp[kk]);
            le.q_atoms = std::move(q);
            report.ledger.entries.push_back(std::move(le));
            std::map<std::pair<int, int>, Ratio> prov;
            for (const auto& [key, m] : sr.provenance[c]) {
                int orig = key.first == 0 ? map_a[key.second] : map_b[key.second];
                prov[{key.first, orig}] += m * mass;
            }
            report.provenance.push_back(std::move(prov));
        }
    }

    report.fdim_lhs = fdim(report.result);
    report.fdim_rhs = fdim(p.a) + fdim(p.b) - fdim(d_to_algebra(p.d));
    if (report.fdim_lhs != report.fdim_rhs)
        throw InternalError("componentwise assembly breaks free dimension additivity");
    sort_report(report);
    return report;
}

ProductReport solve(const AmalgamProblem& p, const EngineOptions& opts) {
    InclusionGraph g = build_graph(p.a, p.b, p.d, p.ea, p.eb);
    ProductReport report;
    if (!is_connected(g)) {
        if (!opts.per_component)
            throw DisconnectedGraphError(
                "the union graph of the problem is disconnected; pass per-component mode to "
                "compute each piece separately");
        report = solve_components(p, g, opts);
    } else if (p.a.has_fgf() || p.b.has_fgf()) {
        if (p.a.has_fgf()) {
            report = solve_peel(p, opts);
        } else {
            // Peel from A first; swap the symmetric problem.
            AmalgamProblem sw{p.b, p.a, p.d, p.eb, p.ea};
            ProductReport r = solve_peel(sw, opts);
            for (auto& m : r.provenance) {
                std::map<std::pair<int, int>, Ratio> out;
                for (const auto& [key, mass] : m) out[{1 - key.first, key.second}] = mass;
                m = std::move(out);
            }
            report = r;
        }
    } else {
        report = solve_kernel(p, opts);
        sort_report(report);
    }
    report.graph = g;
    return report;
}

}  // namespace

std::pair<AmalgamProblem, PeelRecipe> peel_fgf(const AmalgamProblem& p) {
    // Pick the first free group factor summand of A in canonical order.
    int pick = -1;
    for (size_t i = 0; i < p.a.summands.size(); ++i) {
        if (p.a.summands[i].kind != SummandKind::FreeGroupFactor) continue;
        if (pick < 0) {
            pick = static_cast<int>(i);
            continue;
        }
        const Summand &x = p.a.summands[i], &y = p.a.summands[pick];
        if (x.central_trace > y.central_trace ||
            (x.central_trace == y.central_trace && x.param < y.param))
            pick = static_cast<int>(i);
    }
    if (pick < 0)
        throw ValidationError("peel_fgf: A has no free group factor summand; swap inputs first");

    AmalgamProblem inner;
    inner.b = p.b;
    inner.eb = p.eb;
    inner.d = p.d;
    PeelRecipe recipe;
    recipe.summand = pick;
    recipe.support_trace = p.a.summands[pick].central_trace;

    std::vector<std::vector<long>> lambda_cols;
    std::vector<std::vector<Ratio>> alpha_cols;
    for (size_t i = 0; i < p.a.summands.size(); ++i) {
        if (static_cast<int>(i) != pick) {
            inner.a.summands.push_back(p.a.summands[i]);
            std::vector<long> lam(p.d.size());
            std::vector<Ratio> alp(p.d.size());
            for (int k = 0; k < p.d.size(); ++k) {
                lam[k] = p.ea.lambda[k][i];
                alp[k] = p.ea.alpha[k][i];
            }
            lambda_cols.push_back(std::move(lam));
            alpha_cols.push_back(std::move(alp));
            continue;
        }
        // Replace L(F_s) by its compression of D: one atom per alpha > 0.
        for (int k = 0; k < p.d.size(); ++k) {
            Ratio alpha = p.ea.alpha[k][i];
            if (!alpha.is_positive()) continue;
            recipe.marked.push_back(static_cast<int>(inner.a.summands.size()));
            inner.a.summands.push_back(Summand::matrix(1, alpha));
            std::vector<long> lam(p.d.size(), 0);
            lam[k] = 1;
            lambda_cols.push_back(std::move(lam));
            alpha_cols.push_back(std::vector<Ratio>(p.d.size(), Ratio::zero()));
        }
    }
    inner.ea = EmbeddingSpec::zeros(p.d.size(), static_cast<int>(inner.a.summands.size()));
    for (size_t i = 0; i < inner.a.summands.size(); ++i)
        for (int k = 0; k < p.d.size(); ++k) {
            inner.ea.lambda[k][i] = lambda_cols[i][k];
            inner.ea.alpha[k][i] = alpha_cols[i][k];
        }
    inner.validate();
    return {inner, recipe};
}

ProductReport amalgamated_product(const AmalgamProblem& p, const EngineOptions& opts) {
    p.validate();
    ProductReport report = solve(p, opts);
    if (report.fdim_lhs != report.fdim_rhs)
        throw InternalError("free dimension check failed");
    return report;
}

}  // namespace afp
