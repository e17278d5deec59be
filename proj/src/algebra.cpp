#include "afp/algebra.hpp"

#include <algorithm>
#include <tuple>

namespace afp {

const char* kind_name(SummandKind k) {
    switch (k) {
        case SummandKind::Matrix: return "matrix";
        case SummandKind::DiffuseTypeI: return "diffuse_typeI";
        case SummandKind::HyperfiniteII1: return "hyperfinite_II1";
        case SummandKind::FreeGroupFactor: return "fgf";
    }
    return "?";
}

Summand Summand::matrix(long n, Ratio min_trace) {
    Summand s;
    s.kind = SummandKind::Matrix;
    s.size = n;
    s.min_trace = min_trace;
    s.central_trace = Ratio(n) * min_trace;
    s.validate();
    return s;
}

Summand Summand::diffuse_type_i(long n, Ratio central) {
    Summand s;
    s.kind = SummandKind::DiffuseTypeI;
    s.size = n;
    s.central_trace = std::move(central);
    s.validate();
    return s;
}

Summand Summand::hyperfinite(Ratio central) {
    Summand s;
    s.kind = SummandKind::HyperfiniteII1;
    s.size = 1;
    s.central_trace = std::move(central);
    s.validate();
    return s;
}

Summand Summand::fgf(Ratio param, Ratio central) {
    Summand s;
    s.kind = SummandKind::FreeGroupFactor;
    s.size = 1;
    s.param = std::move(param);
    s.central_trace = std::move(central);
    s.validate();
    return s;
}

void Summand::validate() const {
    if (!central_trace.is_positive())
        throw ValidationError("summand central trace must be positive, got " + central_trace.str());
    switch (kind) {
        case SummandKind::Matrix:
            if (size < 1) throw ValidationError("matrix summand size must be >= 1");
            if (!min_trace.is_positive())
                throw ValidationError("matrix summand min trace must be positive");
            if (central_trace != Ratio(size) * min_trace)
                throw ValidationError("matrix summand: central trace " + central_trace.str() +
                                      " != size * min trace " + (Ratio(size) * min_trace).str());
            break;
        case SummandKind::DiffuseTypeI:
            if (size < 1) throw ValidationError("diffuse type I summand size must be >= 1");
            break;
        case SummandKind::HyperfiniteII1:
            break;
        case SummandKind::FreeGroupFactor:
            if (!(param > Ratio::one()))
                throw ValidationError("free group factor parameter must be > 1, got " + param.str());
            break;
    }
}

Ratio Summand::weight() const {
    switch (kind) {
        case SummandKind::Matrix: return -min_trace.squared();
        case SummandKind::FreeGroupFactor:
            return central_trace.squared() * (param - Ratio::one());
        default: return Ratio::zero();
    }
}

bool Summand::operator==(const Summand& o) const {
    if (kind != o.kind || central_trace != o.central_trace) return false;
    switch (kind) {
        case SummandKind::Matrix: return size == o.size && min_trace == o.min_trace;
        case SummandKind::DiffuseTypeI: return size == o.size;
        case SummandKind::HyperfiniteII1: return true;
        case SummandKind::FreeGroupFactor: return param == o.param;
    }
    return false;
}

Ratio Algebra::total_trace() const {
    Ratio t;
    for (const auto& s : summands) t += s.central_trace;
    return t;
}

bool Algebra::is_finite_dimensional() const {
    return std::all_of(summands.begin(), summands.end(),
                       [](const Summand& s) { return s.is_atomic(); });
}

bool Algebra::has_fgf() const {
    return std::any_of(summands.begin(), summands.end(), [](const Summand& s) {
        return s.kind == SummandKind::FreeGroupFactor;
    });
}

bool Algebra::has_diffuse() const {
    return std::any_of(summands.begin(), summands.end(),
                       [](const Summand& s) { return s.is_diffuse(); });
}

void Algebra::validate() const {
    if (summands.empty()) throw ValidationError("algebra has no summands");
    for (const auto& s : summands) s.validate();
}

Ratio fdim(const Algebra& a) {
    a.validate();
    if (!a.is_normalized())
        throw ValidationError("fdim requires a normalized algebra; total trace is " +
                              a.total_trace().str());
    Ratio w;
    for (const auto& s : a.summands) w += s.weight();
    return Ratio::one() + w;
}

Ratio compress_fgf(const Ratio& s, const Ratio& t) {
    if (!(s > Ratio::one()))
        throw ValidationError("compress_fgf: parameter must be > 1, got " + s.str());
    if (!t.is_positive())
        throw ValidationError("compress_fgf: compression ratio must be positive, got " + t.str());
    return Ratio::one() + (s - Ratio::one()) / t.squared();
}

namespace {

int kind_rank(SummandKind k) {
    switch (k) {
        case SummandKind::Matrix: return 0;
        case SummandKind::DiffuseTypeI: return 1;
        case SummandKind::HyperfiniteII1: return 2;
        case SummandKind::FreeGroupFactor: return 3;
    }
    return 4;
}

}  // namespace

bool canonical_summand_less(const Summand& a, const Summand& b) {
    int ra = kind_rank(a.kind), rb = kind_rank(b.kind);
    if (ra != rb) return ra < rb;
    if (a.size != b.size) return a.size < b.size;
    if (a.central_trace != b.central_trace) return a.central_trace > b.central_trace;
    if (a.kind == SummandKind::FreeGroupFactor && a.param != b.param) return a.param < b.param;
    if (a.kind == SummandKind::Matrix && a.min_trace != b.min_trace)
        return a.min_trace > b.min_trace;
    return false;
}

Algebra canonicalize(const Algebra& a) {
    a.validate();
    Algebra out = a;
    std::stable_sort(out.summands.begin(), out.summands.end(), canonical_summand_less);
    return out;
}

bool algebra_equal(const Algebra& a, const Algebra& b) {
    Algebra ca = canonicalize(a), cb = canonicalize(b);
    return ca.summands == cb.summands;
}

std::string render_summand(const Summand& s) {
    switch (s.kind) {
        case SummandKind::Matrix:
            return "M_" + std::to_string(s.size) + "[t=" + s.min_trace.str() + "]";
        case SummandKind::DiffuseTypeI:
            return "LinfM_" + std::to_string(s.size) + "[c=" + s.central_trace.str() + "]";
        case SummandKind::HyperfiniteII1:
            return "R[c=" + s.central_trace.str() + "]";
        case SummandKind::FreeGroupFactor:
            return "L(F(" + s.param.str() + "))[c=" + s.central_trace.str() + "]";
    }
    return "?";
}

std::string render_algebra(const Algebra& a) {
    std::string out;
    for (size_t i = 0; i < a.summands.size(); ++i) {
        if (i) out += " (+) ";
        out += render_summand(a.summands[i]);
    }
    return out;
}

}  // namespace afp
