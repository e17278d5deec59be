#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "afp/algebra.hpp"

namespace afp {

// Finite-dimensional abelian D, presented by its atom traces.
struct AbelianD {
    std::vector<Ratio> atoms;  // t_k > 0, summing to 1

    int size() const { return static_cast<int>(atoms.size()); }
    void validate() const;
};

// Trace data of a unital trace-preserving inclusion D -> A.
// For a matrix summand i of A, lambda[k][i] is the partial multiplicity of
// atom k; for a diffuse or factor summand, alpha[k][i] is the compression
// trace tau(p_k z_i). Exactly one of the two is meaningful per summand.
struct EmbeddingSpec {
    std::vector<std::vector<long>> lambda;  // [atom][summand]
    std::vector<std::vector<Ratio>> alpha;  // [atom][summand]

    static EmbeddingSpec zeros(int atoms, int summands);

    // Mass of summand i under atom k: lambda * min trace for matrix
    // summands, alpha otherwise.
    Ratio mass(const Algebra& a, int k, int i) const;
};

struct EmbeddingViolation {
    int atom = -1;     // -1 when not atom-specific
    int summand = -1;  // -1 when not summand-specific
    std::string message;
};

// Checks unitality per atomic summand, trace compatibility per atom, and
// total compression per non-atomic summand. Empty result means valid.
std::vector<EmbeddingViolation> validate_embedding(const Algebra& a, const AbelianD& d,
                                                   const EmbeddingSpec& e);

void require_valid_embedding(const Algebra& a, const AbelianD& d, const EmbeddingSpec& e,
                             const std::string& label);

// Union graph over the atoms of D: vertices I_D, an edge {k,k'} when some
// summand of A or B has nonzero mass at both k and k'.
struct InclusionGraph {
    int vertices = 0;
    std::set<std::pair<int, int>> edges_a;  // contributed by A
    std::set<std::pair<int, int>> edges_b;  // contributed by B

    std::set<std::pair<int, int>> all_edges() const;
};

InclusionGraph build_graph(const Algebra& a, const Algebra& b, const AbelianD& d,
                           const EmbeddingSpec& ea, const EmbeddingSpec& eb);

bool is_connected(const InclusionGraph& g);

// Connected components of the atom set, each sorted, ordered by least atom.
std::vector<std::vector<int>> graph_components(const InclusionGraph& g);

// Bratteli diagram of a unital trace-preserving inclusion between
// finite-dimensional algebras: multiplicity a and trace weight
// alpha = tau(p_src q_dst) per edge.
struct BratteliEdge {
    int src = 0;
    int dst = 0;
    long mult = 0;
    Ratio trace_weight;
};

struct BratteliDiagram {
    std::vector<BratteliEdge> edges;
};

// One elementary inclusion move.
struct SimpleStep {
    enum class Type { Copy, Join };
    Type type = Type::Copy;
    // Copy: summand at `index` splits into two adjacent copies with central
    // traces first_trace + second_trace (inserted at index, index+1).
    // Join: summands at `index` < `other` (equal min trace) merge into one
    // matrix summand at `index`; `other` is removed.
    int index = 0;
    int other = 0;
    Ratio first_trace;
    Ratio second_trace;

    static SimpleStep copy(int index, Ratio first, Ratio second);
    static SimpleStep join(int index, int other);
};

// Applies one step to a finite-dimensional algebra (positional semantics).
Algebra apply_simple_step(const Algebra& a, const SimpleStep& step);

// Validates the diagram against src/dst and produces the canonical
// copy-then-join sequence whose composition realizes it.
std::vector<SimpleStep> decompose_simple_steps(const Algebra& src, const Algebra& dst,
                                               const BratteliDiagram& diagram);

// Canonical Bratteli data of an inclusion derived from embedding masses of a
// common refinement; used by the stage machinery. Exposed for tests.
void validate_bratteli(const Algebra& src, const Algebra& dst, const BratteliDiagram& diagram);

}  // namespace afp
