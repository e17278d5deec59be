#pragma once

#include "afp/approx.hpp"
#include "afp/kernel.hpp"

namespace afp {

struct AmalgamProblem {
    Algebra a;
    Algebra b;
    AbelianD d;
    EmbeddingSpec ea;
    EmbeddingSpec eb;

    void validate() const;
};

struct EngineOptions {
    bool per_component = false;  // compute disconnected problems componentwise
    int stages_max = 8;          // stage window for stabilization checks
    bool verify_stages = true;   // cross-check the limit against finite stages
};

struct ProductReport {
    Algebra result;  // canonical form
    ComponentLedger ledger;
    InclusionGraph graph;
    int stage_used = 1;
    Ratio fdim_lhs;  // fdim(result)
    Ratio fdim_rhs;  // fdim(A) + fdim(B) - fdim(D)
    // Per result summand, mass of each original (side, summand).
    std::vector<std::map<std::pair<int, int>, Ratio>> provenance;
};

// The isomorphism class of A *_D B for inputs in R2. Throws
// DisconnectedGraphError when the union graph is disconnected and
// per-component mode is off.
ProductReport amalgamated_product(const AmalgamProblem& p, const EngineOptions& opts = {});

// One induction step: the first free group factor summand of A (canonical
// order) is replaced by its compressed copy of D, producing the inner
// problem; the recipe records what to reassemble.
struct PeelRecipe {
    int summand = -1;           // index of the peeled summand in A
    Ratio support_trace;        // its central trace
    std::vector<int> marked;    // indices of the replacement atoms in the inner A
};

std::pair<AmalgamProblem, PeelRecipe> peel_fgf(const AmalgamProblem& p);

}  // namespace afp
