#include "afp/inclusion.hpp"

#include <algorithm>
#include <map>
#include <queue>

namespace afp {

void AbelianD::validate() const {
    if (atoms.empty()) throw ValidationError("D has no atoms");
    Ratio total;
    for (size_t k = 0; k < atoms.size(); ++k) {
        if (!atoms[k].is_positive())
            throw ValidationError("D atom " + std::to_string(k) + " has nonpositive trace");
        total += atoms[k];
    }
    if (total != Ratio::one())
        throw ValidationError("D atom traces sum to " + total.str() + ", expected 1");
}

EmbeddingSpec EmbeddingSpec::zeros(int atoms, int summands) {
    EmbeddingSpec e;
    e.lambda.assign(atoms, std::vector<long>(summands, 0));
    e.alpha.assign(atoms, std::vector<Ratio>(summands, Ratio::zero()));
    return e;
}

Ratio EmbeddingSpec::mass(const Algebra& a, int k, int i) const {
    const Summand& s = a.summands[i];
    if (s.is_atomic()) return Ratio(lambda[k][i]) * s.min_trace;
    return alpha[k][i];
}

std::vector<EmbeddingViolation> validate_embedding(const Algebra& a, const AbelianD& d,
                                                   const EmbeddingSpec& e) {
    std::vector<EmbeddingViolation> out;
    const int K = d.size();
    const int n = static_cast<int>(a.summands.size());
    if (static_cast<int>(e.lambda.size()) != K || static_cast<int>(e.alpha.size()) != K) {
        out.push_back({-1, -1, "embedding tables have wrong atom dimension"});
        return out;
    }
    for (int k = 0; k < K; ++k) {
        if (static_cast<int>(e.lambda[k].size()) != n || static_cast<int>(e.alpha[k].size()) != n) {
            out.push_back({k, -1, "embedding tables have wrong summand dimension"});
            return out;
        }
    }
    for (int k = 0; k < K; ++k) {
        for (int i = 0; i < n; ++i) {
            const Summand& s = a.summands[i];
            if (s.is_atomic()) {
                if (e.lambda[k][i] < 0)
                    out.push_back({k, i, "negative partial multiplicity"});
                if (!e.alpha[k][i].is_zero())
                    out.push_back({k, i, "alpha given for an atomic summand"});
            } else {
                if (e.lambda[k][i] != 0)
                    out.push_back({k, i, "lambda given for a non-atomic summand"});
                if (e.alpha[k][i].is_negative())
                    out.push_back({k, i, "negative compression trace"});
            }
        }
    }
    if (!out.empty()) return out;

    // Unitality per atomic summand: sum_k lambda = n_i.
    for (int i = 0; i < n; ++i) {
        const Summand& s = a.summands[i];
        if (!s.is_atomic()) continue;
        long total = 0;
        for (int k = 0; k < K; ++k) total += e.lambda[k][i];
        if (total != s.size)
            out.push_back({-1, i,
                           "unitality: sum of lambda over atoms is " + std::to_string(total) +
                               ", summand size is " + std::to_string(s.size)});
    }
    // Total compression per non-atomic summand: sum_k alpha = central trace.
    for (int i = 0; i < n; ++i) {
        const Summand& s = a.summands[i];
        if (s.is_atomic()) continue;
        Ratio total;
        for (int k = 0; k < K; ++k) total += e.alpha[k][i];
        if (total != s.central_trace)
            out.push_back({-1, i,
                           "compression: sum of alpha over atoms is " + total.str() +
                               ", central trace is " + s.central_trace.str()});
    }
    // Trace compatibility per atom: sum_i mass(k, i) = t_k.
    for (int k = 0; k < K; ++k) {
        Ratio total;
        for (int i = 0; i < n; ++i) total += e.mass(a, k, i);
        if (total != d.atoms[k])
            out.push_back({k, -1,
                           "trace compatibility: masses under atom sum to " + total.str() +
                               ", atom trace is " + d.atoms[k].str()});
    }
    return out;
}

void require_valid_embedding(const Algebra& a, const AbelianD& d, const EmbeddingSpec& e,
                             const std::string& label) {
    auto violations = validate_embedding(a, d, e);
    if (violations.empty()) return;
    std::string msg = "invalid embedding for " + label + ":";
    for (const auto& v : violations) {
        msg += "\n  ";
        if (v.atom >= 0) msg += "[atom " + std::to_string(v.atom) + "] ";
        if (v.summand >= 0) msg += "[summand " + std::to_string(v.summand) + "] ";
        msg += v.message;
    }
    throw ValidationError(msg);
}

std::set<std::pair<int, int>> InclusionGraph::all_edges() const {
    std::set<std::pair<int, int>> all = edges_a;
    all.insert(edges_b.begin(), edges_b.end());
    return all;
}

namespace {

void add_side_edges(const Algebra& a, const AbelianD& d, const EmbeddingSpec& e,
                    std::set<std::pair<int, int>>& edges) {
    for (size_t i = 0; i < a.summands.size(); ++i) {
        std::vector<int> touched;
        for (int k = 0; k < d.size(); ++k)
            if (e.mass(a, k, static_cast<int>(i)).is_positive()) touched.push_back(k);
        for (size_t x = 0; x < touched.size(); ++x)
            for (size_t y = x + 1; y < touched.size(); ++y)
                edges.insert({touched[x], touched[y]});
    }
}

}  // namespace

InclusionGraph build_graph(const Algebra& a, const Algebra& b, const AbelianD& d,
                           const EmbeddingSpec& ea, const EmbeddingSpec& eb) {
    require_valid_embedding(a, d, ea, "A");
    require_valid_embedding(b, d, eb, "B");
    InclusionGraph g;
    g.vertices = d.size();
    add_side_edges(a, d, ea, g.edges_a);
    add_side_edges(b, d, eb, g.edges_b);
    return g;
}

std::vector<std::vector<int>> graph_components(const InclusionGraph& g) {
    std::vector<std::vector<int>> adj(g.vertices);
    for (const auto& e : g.all_edges()) {
        adj[e.first].push_back(e.second);
        adj[e.second].push_back(e.first);
    }
    std::vector<int> comp(g.vertices, -1);
    std::vector<std::vector<int>> out;
    for (int v = 0; v < g.vertices; ++v) {
        if (comp[v] >= 0) continue;
        int id = static_cast<int>(out.size());
        out.emplace_back();
        std::queue<int> q;
        q.push(v);
        comp[v] = id;
        while (!q.empty()) {
            int u = q.front();
            q.pop();
            out[id].push_back(u);
            for (int w : adj[u])
                if (comp[w] < 0) {
                    comp[w] = id;
                    q.push(w);
                }
        }
        std::sort(out[id].begin(), out[id].end());
    }
    return out;
}

bool is_connected(const InclusionGraph& g) {
    return graph_components(g).size() <= 1;
}

SimpleStep SimpleStep::copy(int index, Ratio first, Ratio second) {
    SimpleStep s;
    s.type = Type::Copy;
    s.index = index;
    s.first_trace = std::move(first);
    s.second_trace = std::move(second);
    return s;
}

SimpleStep SimpleStep::join(int index, int other) {
    SimpleStep s;
    s.type = Type::Join;
    s.index = index;
    s.other = other;
    return s;
}

Algebra apply_simple_step(const Algebra& a, const SimpleStep& step) {
    Algebra out = a;
    auto& v = out.summands;
    if (step.type == SimpleStep::Type::Copy) {
        if (step.index < 0 || step.index >= static_cast<int>(v.size()))
            throw ValidationError("copy step index out of range");
        Summand orig = v[step.index];
        if (step.first_trace + step.second_trace != orig.central_trace)
            throw ValidationError("copy step traces " + step.first_trace.str() + " + " +
                                  step.second_trace.str() + " do not sum to " +
                                  orig.central_trace.str());
        if (!step.first_trace.is_positive() || !step.second_trace.is_positive())
            throw ValidationError("copy step traces must be positive");
        Summand c1 = orig, c2 = orig;
        if (orig.is_atomic()) {
            c1 = Summand::matrix(orig.size, step.first_trace / Ratio(orig.size));
            c2 = Summand::matrix(orig.size, step.second_trace / Ratio(orig.size));
        } else {
            c1.central_trace = step.first_trace;
            c2.central_trace = step.second_trace;
        }
        v[step.index] = c1;
        v.insert(v.begin() + step.index + 1, c2);
    } else {
        int i = step.index, j = step.other;
        if (i < 0 || j <= i || j >= static_cast<int>(v.size()))
            throw ValidationError("join step indices out of range");
        const Summand &x = v[i], &y = v[j];
        if (!x.is_atomic() || !y.is_atomic())
            throw ValidationError("join step requires matrix summands");
        if (x.min_trace != y.min_trace)
            throw ValidationError("join step requires equal min traces, got " +
                                  x.min_trace.str() + " and " + y.min_trace.str());
        Summand joined = Summand::matrix(x.size + y.size, x.min_trace);
        v[i] = joined;
        v.erase(v.begin() + j);
    }
    return out;
}

void validate_bratteli(const Algebra& src, const Algebra& dst, const BratteliDiagram& diagram) {
    if (!src.is_finite_dimensional() || !dst.is_finite_dimensional())
        throw ValidationError("simple-step decomposition requires finite-dimensional algebras");
    src.validate();
    dst.validate();
    const int ns = static_cast<int>(src.summands.size());
    const int nd = static_cast<int>(dst.summands.size());
    for (const auto& e : diagram.edges) {
        if (e.src < 0 || e.src >= ns || e.dst < 0 || e.dst >= nd)
            throw ValidationError("bratteli edge endpoint out of range");
        if (e.mult < 1) throw ValidationError("bratteli edge multiplicity must be >= 1");
        Ratio expected = Ratio(e.mult) * Ratio(src.summands[e.src].size) *
                         dst.summands[e.dst].min_trace;
        if (e.trace_weight != expected)
            throw ValidationError("bratteli edge (" + std::to_string(e.src) + "," +
                                  std::to_string(e.dst) + ") trace weight " +
                                  e.trace_weight.str() + " != mult * n_src * t_dst = " +
                                  expected.str());
    }
    // Source minimal trace splits across its edges: t_i = sum_j a_ij t_j.
    for (int i = 0; i < ns; ++i) {
        Ratio total;
        for (const auto& e : diagram.edges)
            if (e.src == i) total += Ratio(e.mult) * dst.summands[e.dst].min_trace;
        if (total != src.summands[i].min_trace)
            throw ValidationError("bratteli: source summand " + std::to_string(i) +
                                  " min trace decomposes to " + total.str() + ", expected " +
                                  src.summands[i].min_trace.str());
    }
    // Target size assembles from its edges: m_j = sum_i a_ij n_i.
    for (int j = 0; j < nd; ++j) {
        long total = 0;
        Ratio mass;
        for (const auto& e : diagram.edges)
            if (e.dst == j) {
                total += e.mult * src.summands[e.src].size;
                mass += e.trace_weight;
            }
        if (total != dst.summands[j].size)
            throw ValidationError("bratteli: target summand " + std::to_string(j) +
                                  " assembles size " + std::to_string(total) + ", expected " +
                                  std::to_string(dst.summands[j].size));
        if (mass != dst.summands[j].central_trace)
            throw ValidationError("bratteli: target summand " + std::to_string(j) +
                                  " assembles trace " + mass.str() + ", expected " +
                                  dst.summands[j].central_trace.str());
    }
}

std::vector<SimpleStep> decompose_simple_steps(const Algebra& src, const Algebra& dst,
                                               const BratteliDiagram& diagram) {
    validate_bratteli(src, dst, diagram);

    // Edges sorted by (source, target) fix the canonical order.
    std::vector<BratteliEdge> edges = diagram.edges;
    std::sort(edges.begin(), edges.end(), [](const BratteliEdge& a, const BratteliEdge& b) {
        return std::tie(a.src, a.dst) < std::tie(b.src, b.dst);
    });

    std::vector<SimpleStep> steps;
    // Working layout: one slot per (edge, copy). Start from src order and
    // split each source summand left to right.
    struct Slot {
        int dst;
        Ratio trace;  // central trace of this copy
    };
    std::vector<std::vector<Slot>> per_src(src.summands.size());
    for (const auto& e : edges) {
        Ratio copy_trace = e.trace_weight / Ratio(e.mult);
        for (long c = 0; c < e.mult; ++c) per_src[e.src].push_back({e.dst, copy_trace});
    }

    // Copy phase. Positions track the evolving summand list.
    std::vector<Slot> layout;
    int pos = 0;
    for (size_t i = 0; i < src.summands.size(); ++i) {
        auto& slots = per_src[i];
        if (slots.empty())
            throw ValidationError("bratteli: source summand " + std::to_string(i) +
                                  " has no outgoing edge");
        Ratio remaining = src.summands[i].central_trace;
        for (size_t c = 0; c + 1 < slots.size(); ++c) {
            // Split off the c-th copy, keeping the rest on the right.
            steps.push_back(SimpleStep::copy(pos + static_cast<int>(c), slots[c].trace,
                                             remaining - slots[c].trace));
            remaining -= slots[c].trace;
        }
        for (auto& s : slots) layout.push_back(s);
        pos += static_cast<int>(slots.size());
    }

    // Join phase, grouped by target summand in order.
    for (int j = 0; j < static_cast<int>(dst.summands.size()); ++j) {
        int first = -1;
        for (int p = 0; p < static_cast<int>(layout.size()); ++p) {
            if (layout[p].dst != j) continue;
            if (first < 0) {
                first = p;
                continue;
            }
            steps.push_back(SimpleStep::join(first, p));
            layout[first].trace += layout[p].trace;
            layout.erase(layout.begin() + p);
            --p;
        }
    }
    return steps;
}

}  // namespace afp
