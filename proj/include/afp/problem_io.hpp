#pragma once

#include <string>

#include <json.hpp>

#include "afp/engine.hpp"

namespace afp {

using Json = nlohmann::json;

// Problem files: JSON with keys "A", "B", "D", "embedA", "embedB".
// Algebras are arrays of summand records
//   {"kind": "matrix"|"diffuse_typeI"|"hyperfinite_II1"|"fgf",
//    "size": int, "min_trace": "p/q", "central_trace": "p/q", "param": "p/q"},
// D is {"atoms": ["p/q", ...]}, embeddings are arrays of
//   {"atom": k, "summand": i, "lambda": n} or {"atom": k, "summand": i, "alpha": "p/q"}.
// Unknown keys are rejected; all rationals are strings, never floats.
AmalgamProblem parse_problem(const Json& j);
AmalgamProblem load_problem(const std::string& path);

Algebra parse_algebra(const Json& j);
Json algebra_to_json(const Algebra& a);

// Decomposition files: {"src": [...], "dst": [...],
//   "edges": [{"from": i, "to": j, "mult": a, "trace": "p/q"}]}.
struct DecomposeInput {
    Algebra src;
    Algebra dst;
    BratteliDiagram diagram;
};
DecomposeInput parse_decompose(const Json& j);
DecomposeInput load_decompose(const std::string& path);

Json report_to_json(const ProductReport& r);
std::string report_to_text(const ProductReport& r, const AmalgamProblem& p);

// DOT rendering: one node per atom labeled "k:t_k", solid edges from A,
// dashed from B.
std::string graph_to_dot(const InclusionGraph& g, const AbelianD& d);

std::string render_simple_steps(const Algebra& src, const std::vector<SimpleStep>& steps);

// Drops every summand of the algebra past the first `keep`, folding the
// dropped mass into one abelian atom per atom of D. Identity when the
// algebra has at most `keep` summands.
void truncate_tail(Algebra& a, EmbeddingSpec& e, const AbelianD& d, int keep);

}  // namespace afp
