#pragma once

#include <string>
#include <vector>

#include "afp/errors.hpp"
#include "afp/ratio.hpp"

namespace afp {

// Summand kinds, in canonical sort order.
enum class SummandKind {
    Matrix,          // M_n, minimal projection trace t, central trace n*t
    DiffuseTypeI,    // L^inf tensor M_n (n = 1 is diffuse abelian)
    HyperfiniteII1,  // the hyperfinite II_1 object (R or L^inf tensor R)
    FreeGroupFactor, // interpolated free group factor L(F_s), s > 1
};

const char* kind_name(SummandKind k);

struct Summand {
    SummandKind kind = SummandKind::Matrix;
    long size = 1;        // Matrix / DiffuseTypeI
    Ratio central_trace;  // > 0
    Ratio min_trace;      // Matrix only; central = size * min
    Ratio param;          // FreeGroupFactor only; > 1

    static Summand matrix(long n, Ratio min_trace);
    static Summand diffuse_type_i(long n, Ratio central);
    static Summand hyperfinite(Ratio central);
    static Summand fgf(Ratio param, Ratio central);

    bool is_atomic() const { return kind == SummandKind::Matrix; }
    bool is_diffuse() const {
        return kind == SummandKind::DiffuseTypeI || kind == SummandKind::HyperfiniteII1;
    }

    void validate() const;

    // Signed free-dimension contribution in global trace units:
    // Matrix -t^2, diffuse 0, L(F_s) c^2 (s-1).
    Ratio weight() const;

    bool operator==(const Summand& o) const;
};

// A finite direct sum of summands with a fixed tracial state.
struct Algebra {
    std::vector<Summand> summands;

    Algebra() = default;
    explicit Algebra(std::vector<Summand> s) : summands(std::move(s)) {}

    Ratio total_trace() const;
    bool is_normalized() const { return total_trace() == Ratio::one(); }
    bool is_finite_dimensional() const;
    bool has_fgf() const;
    bool has_diffuse() const;

    void validate() const;
};

// Free dimension of a normalized algebra. Throws ValidationError when the
// total trace is not 1.
Ratio fdim(const Algebra& a);

// Compression/dilation of the free group factor parameter:
// s at compression ratio t gives 1 + (s-1)/t^2. Requires s > 1, t > 0.
Ratio compress_fgf(const Ratio& s, const Ratio& t);

// Canonical summand order: kind rank, then size, then central trace
// descending, then parameter.
bool canonical_summand_less(const Summand& a, const Summand& b);

// Deterministic canonical ordering. Idempotent, trace-preserving; summands
// are never merged. Throws ValidationError on an empty summand list.
Algebra canonicalize(const Algebra& a);

// True iff canonical forms are identical summand lists.
bool algebra_equal(const Algebra& a, const Algebra& b);

// Fixed text grammar: M_n[t=p/q], LinfM_n[c=p/q], R[c=p/q], L(F(p/q))[c=p/q],
// joined by " (+) ".
std::string render_summand(const Summand& s);
std::string render_algebra(const Algebra& a);

}  // namespace afp
