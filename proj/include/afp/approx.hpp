#pragma once

#include "afp/kernel.hpp"

namespace afp {

// One finite-dimensional approximation stage of an input algebra: atomic
// summands verbatim, every diffuse summand replaced by a spanning block of
// dyadic minimal trace plus boundary leftover atoms.
struct StagePlan {
    int requested = 1;    // the caller's stage number (1-based)
    int stage_index = 1;  // reported index after the offset is applied
    int offset = 0;       // chain start shift (i0 - 1)
    Algebra algebra;
    EmbeddingSpec embedding;
    std::vector<int> origin;             // stage summand -> original summand
    std::vector<bool> replaces_diffuse;  // per stage summand
};

// Smallest extra shift so that all stage trace bounds hold: block traces at
// most alpha_k/4 and t_k/4, and strictly below t_k minus the largest minimal
// projection of the other algebra under p_k.
int stage_offset(const Algebra& a, const AbelianD& d, const EmbeddingSpec& ea,
                 const Algebra& other, const EmbeddingSpec& eother);

StagePlan build_stage(const Algebra& a, const AbelianD& d, const EmbeddingSpec& ea,
                      const Algebra& other, const EmbeddingSpec& eother, int i);

// Bratteli data of the inclusion stage i -> stage i+1 (consecutive plans of
// one input).
BratteliDiagram stage_refinement(const StagePlan& from, const StagePlan& to);

// The simple-step realization of that inclusion.
std::vector<SimpleStep> stage_steps(const StagePlan& from, const StagePlan& to);

// Kernel-side view of a stage plan.
KernelSide stage_kernel_side(const StagePlan& plan);

}  // namespace afp
