#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "afp/inclusion.hpp"

namespace afp {

// Side marker for the two inputs.
enum class Side { A = 0, B = 1 };
inline const char* side_name(Side s) { return s == Side::A ? "A" : "B"; }

// One summand of a kernel input: either a matrix summand with its atom
// multiplicities, or a diffuse summand in limit form (min trace 0). Finite
// stages present everything as matrix summands; limit mode keeps diffuse
// summands symbolic.
struct KernelSummand {
    int origin = -1;  // index into the exact input algebra
    bool is_matrix = true;
    bool diffuse_origin = false;  // replaces (or is) a diffuse summand
    bool type_ii = false;         // origin is HyperfiniteII1
    long typei_cols = 1;          // origin DiffuseTypeI column count
    long size = 1;                // matrix size
    Ratio min_trace;              // matrix only; diffuse entries carry 0
    std::map<int, long> lambda;   // matrix: atom -> partial multiplicity > 0
    std::map<int, Ratio> mass;    // atom -> mass (lambda*min or alpha), > 0 entries only

    std::vector<int> touched_atoms() const;
};

struct KernelSide {
    std::vector<KernelSummand> summands;
};

// Limit-form side: matrix summands verbatim, diffuse summands as symbolic
// mass entries. Rejects free group factor summands.
KernelSide make_limit_side(const Algebra& a, const AbelianD& d, const EmbeddingSpec& e);

// D presented as an algebra (one 1x1 matrix summand per atom).
Algebra d_to_algebra(const AbelianD& d);

// Compressed picture of one side at one atom.
struct CompressedEntry {
    int summand = -1;  // index into the side's summand list
    bool is_matrix = true;
    long lambda = 0;
    Ratio min_trace;  // matrix only
    Ratio mass;
};

struct CompressedBlock {
    int atom = -1;
    Side side = Side::A;
    std::vector<CompressedEntry> entries;
};

CompressedBlock compress_side(const KernelSide& side, Side which, int atom, const AbelianD& d);

// Output form of the per-atom free product N(k).
enum class BlockForm {
    ScalarBoth,   // both sides compress to C p_k
    ScalarLeft,   // A side is C p_k: N(k) = B side unchanged
    ScalarRight,  // B side is C p_k: N(k) = A side unchanged
    Product,      // genuine free product
};

enum class RemainderKind { None, DiffuseHyperfinite, Fgf };

struct BlockMatrixOut {
    long size = 0;
    Ratio min_trace;
    int src_a = -1;  // entry index on side A
    int src_b = -1;  // entry index on side B
};

struct BlockProduct {
    int atom = -1;
    BlockForm form = BlockForm::Product;
    std::vector<BlockMatrixOut> matrix_summands;
    RemainderKind remainder = RemainderKind::None;
    Ratio remainder_trace;
    Ratio remainder_weight;  // absolute-unit ledger entry for an Fgf remainder
};

// The free product of the two compressed blocks over C p_k. Masses on each
// side must sum to t_k.
BlockProduct block_product(const CompressedBlock& ca, const CompressedBlock& cb, const Ratio& t_k);

// A gluing partial isometry between two minimal projections of a kernel
// summand lying under (usually different) atoms of D.
struct Connector {
    Side side = Side::A;
    int summand = -1;  // origin kernel summand
    int atom_from = -1;
    int atom_to = -1;
    Ratio endpoint_trace;  // minimal projection trace of the origin summand
};

// Spanning-path connectors per summand, in canonical order.
std::vector<Connector> enumerate_connectors(const KernelSide& a, const KernelSide& b);

enum class BlockMethod { MethodI, MethodII, Unassigned };

enum class PieceKind { Matrix, Diffuse, Factor };

// One central summand of the evolving intermediate algebra.
struct Piece {
    int id = -1;
    bool alive = true;
    PieceKind kind = PieceKind::Matrix;
    long size = 0;     // Matrix: n
    Ratio min_trace;   // Matrix
    long cols = 1;     // Diffuse: type I column annotation
    bool cols_valid = true;
    bool type_ii = false;  // Diffuse subtype annotation
    Ratio central;
    Ratio weight;  // Matrix: -t^2, Diffuse: 0, Factor: W
    bool diffuse_material = false;  // carries diffuse-origin (or stage block) mass
    bool pair_block = false;        // inert Y(k) output
    int home_atom = -1;             // pair blocks and remainders: originating atom
    std::map<int, Ratio> atom_mass;
    std::map<std::pair<int, int>, Ratio> provenance;  // (side, origin summand) -> mass
    std::set<int> q_atoms;  // Method I/II assignments
};

struct LedgerEntry {
    Ratio weight;
    Ratio central;
    std::set<int> q_atoms;
    std::string classification;  // "Factor" | "Hyperfinite" | "MatrixOnly"
};

struct ComponentLedger {
    std::vector<LedgerEntry> entries;
};

// The evolving summand pool plus the free-dimension ledger. Connector
// adjunction is the only mutation; conservation is checked after every step.
class WorklistState {
public:
    WorklistState(KernelSide a, KernelSide b, AbelianD d);

    void build_blocks();
    void adjoin_connector(const Connector& v);
    void run_worklist();

    const std::vector<Piece>& pieces() const { return pieces_; }
    std::vector<const Piece*> alive_pieces() const;
    const std::vector<BlockProduct>& blocks() const { return blocks_; }

    Ratio total_weight() const;
    Ratio expected_weight() const;  // fdim(A)+fdim(B)-fdim(D) minus 1, absolute units

    BlockMethod method_of(int atom) const;
    const AbelianD& d() const { return d_; }
    const KernelSide& side(Side s) const { return s == Side::A ? a_ : b_; }

    int live_piece(int id) const;
    bool atom_is_cancelled_scalar(int atom, Side s, int summand) const;
    int genuine_remainder(int atom) const;
    std::vector<int> genuine_pair_pieces(int atom) const;

    // Test hook: install a synthetic piece.
    int add_piece(Piece p);

private:
    static constexpr int kWholeAtom = -2;

    enum class AtomForm { SharedScalar, KeptA, KeptB, Genuine };

    struct AtomInfo {
        AtomForm form = AtomForm::Genuine;
        std::map<std::pair<int, int>, int> entry_piece;  // (side, summand) -> piece id
        int remainder_piece = -1;
        std::vector<int> pair_pieces;
    };

    struct Endpoint {
        bool whole_atom = false;
        int piece = -1;
        int atom = -1;
    };

    Endpoint resolve(Side s, int summand, int atom) const;
    std::vector<int> pieces_at_atom(int atom) const;
    void dispatch(const Connector& v, Endpoint e1, Endpoint e2);
    void join_matrix(int p_min, int p_fine, const Ratio& t_e);
    void absorb_matrix_into(const std::vector<int>& hosts, const std::vector<Ratio>& mus,
                            int absorbed, const Ratio& t_e);
    int merge_to_factor(const std::set<int>& piece_ids, const Ratio& t_e);
    void note_method_ii(const Connector& v, int factor_piece);
    void check_conservation(const std::string& where) const;

    KernelSide a_, b_;
    AbelianD d_;
    std::vector<Piece> pieces_;
    std::vector<int> forward_;  // piece id -> surviving id
    std::map<int, std::vector<int>> spread_targets_;
    std::vector<AtomInfo> atoms_;
    std::vector<BlockProduct> blocks_;
    std::map<int, BlockMethod> method_;
    bool blocks_built_ = false;
    Ratio adjoined_weight_;
};

// Cross-checks every component's running weight against the summand-level
// recomputation. Throws InternalError on any mismatch.
void verify_component_weights(const WorklistState& st);

// Matrix fingerprint entry of the stabilized (atomic-origin) part.
struct StableMatrixSummand {
    long size = 0;
    Ratio min_trace;
    bool operator==(const StableMatrixSummand& o) const {
        return size == o.size && min_trace == o.min_trace;
    }
    bool operator<(const StableMatrixSummand& o) const {
        if (size != o.size) return size < o.size;
        return min_trace < o.min_trace;
    }
};

struct StageResult {
    Algebra algebra;  // canonical rendering of the worklist result
    ComponentLedger ledger;
    std::vector<StableMatrixSummand> stable_matrix;  // atomic-origin matrix summands
    std::map<int, int> atom_component;  // atom -> ledger slot of Q assignment, -1 unassigned
    std::map<int, std::string> atom_method;  // "I" | "II" | "-"
    // Per result summand (algebra order), per (side, origin summand) mass.
    std::vector<std::map<std::pair<int, int>, Ratio>> provenance;
    Ratio weight_total;
};

// Computes N = (+)_k N(k), adjoins the canonical connector set, verifies the
// ledger, and harvests the result.
StageResult run_stage(const KernelSide& a, const KernelSide& b, const AbelianD& d);

// First index i whose stable matrix list and atom partition agree with stage
// i+1. Throws when nothing stabilizes within the supplied window.
int detect_stabilization(const std::vector<StageResult>& results);

struct LimitExtraction {
    Algebra algebra;
    ComponentLedger ledger;
    Ratio fdim_lhs;
    Ratio fdim_rhs;
};

// Harvests the limit algebra from a limit-mode stage result: recomputes every
// component weight from exact input data, certifies hyperfinite components at
// weight zero, and checks free-dimension additivity.
LimitExtraction extract_limit(const StageResult& limit_result, const Algebra& exact_a,
                              const Algebra& exact_b, const AbelianD& d,
                              const EmbeddingSpec& ea, const EmbeddingSpec& eb);

// Per-atom classification, readable off a completed run.
BlockMethod classify_block_method(int atom, const Algebra& a, const Algebra& b, const AbelianD& d,
                                  const EmbeddingSpec& ea, const EmbeddingSpec& eb,
                                  const StageResult& result);

}  // namespace afp
