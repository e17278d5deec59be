#include "afp/kernel.hpp"

#include <algorithm>

namespace afp {

std::vector<int> KernelSummand::touched_atoms() const {
    std::vector<int> out;
    for (const auto& [k, m] : mass)
        if (m.is_positive()) out.push_back(k);
    return out;
}

KernelSide make_limit_side(const Algebra& a, const AbelianD& d, const EmbeddingSpec& e) {
    require_valid_embedding(a, d, e, "kernel input");
    KernelSide side;
    for (size_t i = 0; i < a.summands.size(); ++i) {
        const Summand& s = a.summands[i];
        KernelSummand ks;
        ks.origin = static_cast<int>(i);
        switch (s.kind) {
            case SummandKind::Matrix:
                ks.is_matrix = true;
                ks.size = s.size;
                ks.min_trace = s.min_trace;
                for (int k = 0; k < d.size(); ++k)
                    if (e.lambda[k][i] > 0) {
                        ks.lambda[k] = e.lambda[k][i];
                        ks.mass[k] = Ratio(e.lambda[k][i]) * s.min_trace;
                    }
                break;
            case SummandKind::DiffuseTypeI:
            case SummandKind::HyperfiniteII1:
                ks.is_matrix = false;
                ks.diffuse_origin = true;
                ks.type_ii = (s.kind == SummandKind::HyperfiniteII1);
                ks.typei_cols = s.size;
                ks.min_trace = Ratio::zero();
                for (int k = 0; k < d.size(); ++k)
                    if (e.alpha[k][i].is_positive()) ks.mass[k] = e.alpha[k][i];
                break;
            case SummandKind::FreeGroupFactor:
                throw ValidationError(
                    "free group factor summands must be peeled before the kernel runs");
        }
        side.summands.push_back(std::move(ks));
    }
    return side;
}

CompressedBlock compress_side(const KernelSide& side, Side which, int atom, const AbelianD& d) {
    (void)d;
    CompressedBlock cb;
    cb.atom = atom;
    cb.side = which;
    for (size_t i = 0; i < side.summands.size(); ++i) {
        const KernelSummand& s = side.summands[i];
        auto it = s.mass.find(atom);
        if (it == s.mass.end() || !it->second.is_positive()) continue;
        CompressedEntry en;
        en.summand = static_cast<int>(i);
        en.is_matrix = s.is_matrix;
        en.mass = it->second;
        if (s.is_matrix) {
            en.lambda = s.lambda.at(atom);
            en.min_trace = s.min_trace;
        }
        cb.entries.push_back(std::move(en));
    }
    return cb;
}

namespace {

bool side_is_scalar(const CompressedBlock& cb, const Ratio& t_k) {
    return cb.entries.size() == 1 && cb.entries[0].is_matrix && cb.entries[0].lambda == 1 &&
           cb.entries[0].mass == t_k;
}

Ratio side_mass(const CompressedBlock& cb) {
    Ratio total;
    for (const auto& e : cb.entries) total += e.mass;
    return total;
}

Ratio side_weight(const CompressedBlock& cb) {
    Ratio w;
    for (const auto& e : cb.entries)
        if (e.is_matrix) w -= e.min_trace.squared();
    return w;
}

bool side_is_two_scalars(const CompressedBlock& cb) {
    if (cb.entries.size() != 2) return false;
    for (const auto& e : cb.entries)
        if (!e.is_matrix || e.lambda != 1) return false;
    return true;
}

}  // namespace

BlockProduct block_product(const CompressedBlock& ca, const CompressedBlock& cb,
                           const Ratio& t_k) {
    if (ca.atom != cb.atom) throw ValidationError("block_product: sides compress different atoms");
    if (side_mass(ca) != t_k)
        throw ValidationError("block_product: side A masses sum to " + side_mass(ca).str() +
                              ", atom trace is " + t_k.str());
    if (side_mass(cb) != t_k)
        throw ValidationError("block_product: side B masses sum to " + side_mass(cb).str() +
                              ", atom trace is " + t_k.str());

    BlockProduct out;
    out.atom = ca.atom;

    const bool sa = side_is_scalar(ca, t_k);
    const bool sb = side_is_scalar(cb, t_k);
    if (sa || sb) {
        out.form =
            sa && sb ? BlockForm::ScalarBoth : (sa ? BlockForm::ScalarLeft : BlockForm::ScalarRight);
        if (out.form == BlockForm::ScalarBoth) {
            out.matrix_summands.push_back({1, t_k, 0, 0});
            return out;
        }
        const CompressedBlock& kept = sa ? cb : ca;
        Ratio diffuse_mass;
        for (size_t i = 0; i < kept.entries.size(); ++i) {
            const auto& e = kept.entries[i];
            if (e.is_matrix) {
                BlockMatrixOut m;
                m.size = e.lambda;
                m.min_trace = e.min_trace;
                (sa ? m.src_b : m.src_a) = static_cast<int>(i);
                out.matrix_summands.push_back(m);
            } else {
                diffuse_mass += e.mass;
            }
        }
        if (diffuse_mass.is_positive()) {
            out.remainder = RemainderKind::DiffuseHyperfinite;
            out.remainder_trace = diffuse_mass;
        }
        return out;
    }

    out.form = BlockForm::Product;
    Ratio pair_central;
    Ratio pair_credit;
    for (size_t i = 0; i < ca.entries.size(); ++i) {
        const auto& ea = ca.entries[i];
        if (!ea.is_matrix) continue;
        for (size_t j = 0; j < cb.entries.size(); ++j) {
            const auto& eb = cb.entries[j];
            if (!eb.is_matrix) continue;
            Ratio m = ea.min_trace + eb.min_trace - t_k;
            if (!m.is_positive()) continue;
            BlockMatrixOut bm;
            bm.size = ea.lambda * eb.lambda;
            bm.min_trace = m;
            bm.src_a = static_cast<int>(i);
            bm.src_b = static_cast<int>(j);
            out.matrix_summands.push_back(bm);
            pair_central += Ratio(bm.size) * m;
            pair_credit += m.squared();
        }
    }
    out.remainder_trace = t_k - pair_central;
    if (!out.remainder_trace.is_positive())
        throw InternalError("block_product: matrix outputs exhaust atom " +
                            std::to_string(ca.atom) + "; no diffuse remainder left");

    const bool degenerate = side_is_two_scalars(ca) && side_is_two_scalars(cb);
    out.remainder = degenerate ? RemainderKind::DiffuseHyperfinite : RemainderKind::Fgf;
    Ratio w = side_weight(ca) + side_weight(cb) + t_k.squared() + pair_credit;
    if (degenerate) {
        if (!w.is_zero())
            throw InternalError("block_product: two-projection remainder carries weight " +
                                w.str() + ", expected 0");
    } else {
        out.remainder_weight = w;
    }
    return out;
}

std::vector<Connector> enumerate_connectors(const KernelSide& a, const KernelSide& b) {
    std::vector<Connector> out;
    for (Side s : {Side::A, Side::B}) {
        const KernelSide& side = s == Side::A ? a : b;
        for (size_t i = 0; i < side.summands.size(); ++i) {
            std::vector<int> atoms = side.summands[i].touched_atoms();
            for (size_t x = 0; x + 1 < atoms.size(); ++x) {
                Connector c;
                c.side = s;
                c.summand = static_cast<int>(i);
                c.atom_from = atoms[x];
                c.atom_to = atoms[x + 1];
                c.endpoint_trace = side.summands[i].min_trace;
                out.push_back(c);
            }
        }
    }
    return out;
}

WorklistState::WorklistState(KernelSide a, KernelSide b, AbelianD d)
    : a_(std::move(a)), b_(std::move(b)), d_(std::move(d)) {
    d_.validate();
    atoms_.resize(d_.size());
}

int WorklistState::add_piece(Piece p) {
    p.id = static_cast<int>(pieces_.size());
    pieces_.push_back(std::move(p));
    forward_.push_back(pieces_.back().id);
    return pieces_.back().id;
}

int WorklistState::live_piece(int id) const {
    while (forward_[id] != id) id = forward_[id];
    return id;
}

std::vector<const Piece*> WorklistState::alive_pieces() const {
    std::vector<const Piece*> out;
    for (const auto& p : pieces_)
        if (p.alive) out.push_back(&p);
    return out;
}

Ratio WorklistState::total_weight() const {
    Ratio w;
    for (const auto& p : pieces_)
        if (p.alive) w += p.weight;
    return w;
}

Ratio WorklistState::expected_weight() const {
    Ratio w;
    for (const KernelSide* side : {&a_, &b_})
        for (const auto& s : side->summands)
            if (s.is_matrix) w -= s.min_trace.squared();
    for (const auto& t : d_.atoms) w += t.squared();
    return w;
}

BlockMethod WorklistState::method_of(int atom) const {
    auto it = method_.find(atom);
    return it == method_.end() ? BlockMethod::Unassigned : it->second;
}

void WorklistState::build_blocks() {
    if (blocks_built_) throw InternalError("build_blocks called twice");
    blocks_built_ = true;

    auto summand_of = [&](Side s, int i) -> const KernelSummand& {
        return (s == Side::A ? a_ : b_).summands[i];
    };

    for (int k = 0; k < d_.size(); ++k) {
        const Ratio& t_k = d_.atoms[k];
        CompressedBlock ca = compress_side(a_, Side::A, k, d_);
        CompressedBlock cb = compress_side(b_, Side::B, k, d_);
        BlockProduct bp = block_product(ca, cb, t_k);
        AtomInfo& info = atoms_[k];

        switch (bp.form) {
            case BlockForm::ScalarBoth: {
                Piece p;
                p.kind = PieceKind::Matrix;
                p.size = 1;
                p.min_trace = t_k;
                p.central = t_k;
                p.weight = -t_k.squared();
                p.atom_mass[k] = t_k;
                p.provenance[{0, ca.entries[0].summand}] = t_k;
                p.provenance[{1, cb.entries[0].summand}] = t_k;
                int id = add_piece(std::move(p));
                info.form = AtomForm::SharedScalar;
                info.entry_piece[{0, ca.entries[0].summand}] = id;
                info.entry_piece[{1, cb.entries[0].summand}] = id;
                break;
            }
            case BlockForm::ScalarLeft:
            case BlockForm::ScalarRight: {
                const bool a_scalar = bp.form == BlockForm::ScalarLeft;
                const Side kept_side = a_scalar ? Side::B : Side::A;
                const CompressedBlock& kept = a_scalar ? cb : ca;
                const CompressedBlock& scalar = a_scalar ? ca : cb;
                const int ks = static_cast<int>(kept_side);
                const int ss = 1 - ks;
                info.form = a_scalar ? AtomForm::KeptB : AtomForm::KeptA;
                info.entry_piece[{ss, scalar.entries[0].summand}] = kWholeAtom;
                for (const auto& e : kept.entries) {
                    const KernelSummand& origin = summand_of(kept_side, e.summand);
                    Piece p;
                    if (e.is_matrix) {
                        p.kind = PieceKind::Matrix;
                        p.size = e.lambda;
                        p.min_trace = e.min_trace;
                        p.weight = -e.min_trace.squared();
                    } else {
                        p.kind = PieceKind::Diffuse;
                        p.cols = origin.typei_cols;
                        p.type_ii = origin.type_ii;
                        p.weight = Ratio::zero();
                    }
                    p.central = e.mass;
                    p.atom_mass[k] = e.mass;
                    p.provenance[{ks, e.summand}] = e.mass;
                    p.provenance[{ss, scalar.entries[0].summand}] = e.mass;
                    p.diffuse_material = origin.diffuse_origin;
                    int id = add_piece(std::move(p));
                    info.entry_piece[{ks, e.summand}] = id;
                }
                break;
            }
            case BlockForm::Product: {
                info.form = AtomForm::Genuine;
                std::vector<Ratio> residual_a(ca.entries.size());
                std::vector<Ratio> residual_b(cb.entries.size());
                for (size_t i = 0; i < ca.entries.size(); ++i) residual_a[i] = ca.entries[i].mass;
                for (size_t j = 0; j < cb.entries.size(); ++j) residual_b[j] = cb.entries[j].mass;
                for (const auto& bm : bp.matrix_summands) {
                    Piece p;
                    p.kind = PieceKind::Matrix;
                    p.size = bm.size;
                    p.min_trace = bm.min_trace;
                    p.central = Ratio(bm.size) * bm.min_trace;
                    p.weight = -bm.min_trace.squared();
                    p.atom_mass[k] = p.central;
                    p.pair_block = true;
                    p.home_atom = k;
                    p.diffuse_material = summand_of(Side::A, ca.entries[bm.src_a].summand).diffuse_origin ||
                                         summand_of(Side::B, cb.entries[bm.src_b].summand).diffuse_origin;
                    residual_a[bm.src_a] -= p.central;
                    residual_b[bm.src_b] -= p.central;
                    int id = add_piece(std::move(p));
                    info.pair_pieces.push_back(id);
                }
                Piece rem;
                rem.kind =
                    bp.remainder == RemainderKind::Fgf ? PieceKind::Factor : PieceKind::Diffuse;
                if (rem.kind == PieceKind::Diffuse) {
                    rem.cols = 2;  // two free traces in generic position pattern as M_2 blocks
                    rem.weight = Ratio::zero();
                } else {
                    rem.weight = bp.remainder_weight;
                }
                rem.central = bp.remainder_trace;
                rem.atom_mass[k] = bp.remainder_trace;
                rem.home_atom = k;
                rem.q_atoms.insert(k);
                for (size_t i = 0; i < ca.entries.size(); ++i) {
                    if (!residual_a[i].is_positive())
                        throw InternalError("block at atom " + std::to_string(k) +
                                            ": side A entry has no residual mass in the remainder");
                    const KernelSummand& origin = summand_of(Side::A, ca.entries[i].summand);
                    rem.provenance[{0, ca.entries[i].summand}] = residual_a[i];
                    rem.diffuse_material = rem.diffuse_material || origin.diffuse_origin;
                    rem.type_ii = rem.type_ii || origin.type_ii;
                }
                for (size_t j = 0; j < cb.entries.size(); ++j) {
                    if (!residual_b[j].is_positive())
                        throw InternalError("block at atom " + std::to_string(k) +
                                            ": side B entry has no residual mass in the remainder");
                    const KernelSummand& origin = summand_of(Side::B, cb.entries[j].summand);
                    rem.provenance[{1, cb.entries[j].summand}] = residual_b[j];
                    rem.diffuse_material = rem.diffuse_material || origin.diffuse_origin;
                    rem.type_ii = rem.type_ii || origin.type_ii;
                }
                int rem_id = add_piece(std::move(rem));
                info.remainder_piece = rem_id;
                for (const auto& e : ca.entries) info.entry_piece[{0, e.summand}] = rem_id;
                for (const auto& e : cb.entries) info.entry_piece[{1, e.summand}] = rem_id;
                method_[k] = BlockMethod::MethodI;
                break;
            }
        }
        blocks_.push_back(std::move(bp));
    }
    check_conservation("after block products");
}

WorklistState::Endpoint WorklistState::resolve(Side s, int summand, int atom) const {
    const AtomInfo& info = atoms_[atom];
    auto it = info.entry_piece.find({static_cast<int>(s), summand});
    if (it == info.entry_piece.end())
        throw InternalError("connector endpoint: summand " + std::to_string(summand) +
                            " of side " + side_name(s) + " has no mass at atom " +
                            std::to_string(atom));
    Endpoint e;
    e.atom = atom;
    if (it->second == kWholeAtom) {
        e.whole_atom = true;
        return e;
    }
    e.piece = live_piece(it->second);
    return e;
}

std::vector<int> WorklistState::pieces_at_atom(int atom) const {
    std::vector<int> out;
    for (const auto& p : pieces_)
        if (p.alive && p.atom_mass.count(atom) && p.atom_mass.at(atom).is_positive())
            out.push_back(p.id);
    return out;
}

void WorklistState::check_conservation(const std::string& where) const {
    Ratio base;
    for (int k = 0; k < d_.size(); ++k) {
        base += d_.atoms[k].squared();
        base += side_weight(compress_side(a_, Side::A, k, d_));
        base += side_weight(compress_side(b_, Side::B, k, d_));
    }
    Ratio want = base + adjoined_weight_;
    Ratio got = total_weight();
    if (got != want)
        throw InternalError("ledger conservation failed " + where + ": total weight " +
                            got.str() + ", expected " + want.str());
}

// p_min holds a minimal endpoint (min trace == t_e); p_fine may be finer.
// Result is one matrix summand with the finer minimal trace.
void WorklistState::join_matrix(int p_min, int p_fine, const Ratio& t_e) {
    Piece a = pieces_[p_min];
    Piece b = pieces_[p_fine];
    long r = t_e.integer_quotient(b.min_trace);
    Piece merged;
    merged.id = a.id;
    merged.kind = PieceKind::Matrix;
    merged.size = a.size * r + b.size;
    merged.min_trace = b.min_trace;
    merged.central = a.central + b.central;
    merged.weight = -b.min_trace.squared();
    merged.atom_mass = a.atom_mass;
    for (const auto& [k, m] : b.atom_mass) merged.atom_mass[k] += m;
    merged.provenance = a.provenance;
    for (const auto& [key, m] : b.provenance) merged.provenance[key] += m;
    merged.q_atoms = a.q_atoms;
    merged.q_atoms.insert(b.q_atoms.begin(), b.q_atoms.end());
    merged.diffuse_material = a.diffuse_material || b.diffuse_material;
    if (Ratio(merged.size) * merged.min_trace != merged.central)
        throw InternalError("matrix join: size/trace bookkeeping mismatch");
    pieces_[p_min] = std::move(merged);
    pieces_[p_min].alive = true;
    pieces_[p_fine].alive = false;
    forward_[p_fine] = p_min;
}

// Type-preserving amplification: `absorbed` (a matrix piece whose minimal
// trace equals t_e) is distributed over the hosts, each host gaining
// absorbed.size copies of its own corner of mass mu.
void WorklistState::absorb_matrix_into(const std::vector<int>& hosts,
                                       const std::vector<Ratio>& mus, int absorbed,
                                       const Ratio& t_e) {
    Piece src = pieces_[absorbed];
    const long n2 = src.size;
    Ratio mu_total;
    for (const auto& m : mus) mu_total += m;
    if (mu_total != t_e)
        throw InternalError("absorption: endpoint corners sum to " + mu_total.str() +
                            ", expected " + t_e.str());
    for (size_t h = 0; h < hosts.size(); ++h) {
        Piece& host = pieces_[hosts[h]];
        const Ratio& mu = mus[h];
        if (!mu.is_positive()) continue;
        Ratio share = mu / t_e;
        switch (host.kind) {
            case PieceKind::Matrix: {
                long r = mu.integer_quotient(host.min_trace);
                host.size += n2 * r;
                break;
            }
            case PieceKind::Diffuse: {
                if (host.cols_valid) {
                    Ratio col = host.central / Ratio(host.cols);
                    if (mu.divisible_by(col))
                        host.cols += n2 * mu.integer_quotient(col);
                    else
                        host.cols_valid = false;
                }
                break;
            }
            case PieceKind::Factor:
                break;  // dilation; the weight is unchanged
        }
        host.central += Ratio(n2) * mu;
        for (const auto& [k, m] : src.atom_mass) host.atom_mass[k] += m * share;
        for (const auto& [key, m] : src.provenance) host.provenance[key] += m * share;
        host.diffuse_material = host.diffuse_material || src.diffuse_material;
        if (host.kind == PieceKind::Matrix &&
            Ratio(host.size) * host.min_trace != host.central)
            throw InternalError("absorption: size/trace bookkeeping mismatch");
    }
    pieces_[absorbed].alive = false;
    if (hosts.size() == 1) {
        forward_[absorbed] = hosts[0];
    } else {
        spread_targets_[absorbed] = hosts;
    }
}

int WorklistState::merge_to_factor(const std::set<int>& piece_ids, const Ratio& t_e) {
    if (piece_ids.empty()) throw InternalError("merge_to_factor: empty piece set");
    int survivor = *piece_ids.begin();
    Piece merged;
    merged.id = survivor;
    merged.kind = PieceKind::Factor;
    merged.weight = t_e.squared();
    for (int id : piece_ids) {
        Piece& p = pieces_[id];
        merged.weight += p.weight;
        merged.central += p.central;
        for (const auto& [k, m] : p.atom_mass) merged.atom_mass[k] += m;
        for (const auto& [key, m] : p.provenance) merged.provenance[key] += m;
        merged.q_atoms.insert(p.q_atoms.begin(), p.q_atoms.end());
        merged.diffuse_material = merged.diffuse_material || p.diffuse_material;
        merged.type_ii = merged.type_ii || p.type_ii;
        if (id != survivor) {
            p.alive = false;
            forward_[id] = survivor;
        }
    }
    pieces_[survivor] = std::move(merged);
    pieces_[survivor].alive = true;
    return survivor;
}

void WorklistState::note_method_ii(const Connector& v, int factor_piece) {
    for (int atom : {v.atom_from, v.atom_to}) {
        const AtomInfo& info = atoms_[atom];
        auto it = info.entry_piece.find({static_cast<int>(v.side), v.summand});
        if (it != info.entry_piece.end() && it->second == kWholeAtom) {
            method_[atom] = BlockMethod::MethodII;
            pieces_[factor_piece].q_atoms.insert(atom);
        }
    }
}

void WorklistState::adjoin_connector(const Connector& v) {
    if (!blocks_built_) throw InternalError("adjoin_connector before build_blocks");
    if (v.endpoint_trace.is_negative())
        throw ValidationError("connector endpoint trace must be nonnegative");
    Endpoint e1 = resolve(v.side, v.summand, v.atom_from);
    Endpoint e2 = resolve(v.side, v.summand, v.atom_to);
    dispatch(v, e1, e2);
    adjoined_weight_ += v.endpoint_trace.squared();
    check_conservation("after connector");
}

void WorklistState::dispatch(const Connector& v, Endpoint e1, Endpoint e2) {
    const Ratio& t = v.endpoint_trace;

    // An endpoint expands to the set of live pieces it touches: all pieces at
    // the atom for a whole-atom endpoint, the spread hosts for a projection
    // that was distributed by an earlier amplification, a singleton otherwise.
    auto expand = [&](const Endpoint& e) -> std::vector<int> {
        if (e.whole_atom) return pieces_at_atom(e.atom);
        auto it = spread_targets_.find(e.piece);
        if (it == spread_targets_.end()) return {e.piece};
        std::set<int> live;
        for (int id : it->second) live.insert(live_piece(id));
        return std::vector<int>(live.begin(), live.end());
    };

    std::vector<int> set1 = expand(e1);
    std::vector<int> set2 = expand(e2);
    if (set1.empty() || set2.empty())
        throw InternalError("connector endpoint resolves to no pieces");

    // Multi-piece endpoint: the opposite end is either a minimal central
    // matrix projection (type-preserving amplification of everything under
    // the atom) or everything merges into one interpolated factor.
    auto try_multi = [&](const std::vector<int>& hosts, const Endpoint& host_end,
                         const std::vector<int>& other) -> bool {
        if (hosts.size() <= 1) return false;
        if (other.size() == 1) {
            const Piece& p = pieces_[other[0]];
            bool in_hosts = std::find(hosts.begin(), hosts.end(), other[0]) != hosts.end();
            if (!in_hosts && p.kind == PieceKind::Matrix && p.min_trace == t && !t.is_zero() &&
                host_end.whole_atom) {
                std::vector<Ratio> mus;
                for (int h : hosts) mus.push_back(pieces_[h].atom_mass.at(host_end.atom));
                absorb_matrix_into(hosts, mus, other[0], t);
                return true;
            }
        }
        std::set<int> all(hosts.begin(), hosts.end());
        all.insert(other.begin(), other.end());
        int f = merge_to_factor(all, t);
        note_method_ii(v, f);
        return true;
    };

    if (try_multi(set1, e1, set2)) return;
    if (try_multi(set2, e2, set1)) return;

    int p1 = set1[0], p2 = set2[0];

    if (p1 == p2) {
        Piece& a = pieces_[p1];
        switch (a.kind) {
            case PieceKind::Factor:
                // Haar unitary adjoined at a corner of trace t.
                a.weight += t.squared();
                return;
            case PieceKind::Diffuse:
                if (t.is_zero())
                    throw InternalError("trace-zero connector closed on one diffuse piece");
                a.kind = PieceKind::Factor;
                a.weight = t.squared();
                return;
            case PieceKind::Matrix: {
                long r = t.integer_quotient(a.min_trace);
                if (r == 1) {
                    // New intertwiner between two minimal corners of one
                    // matrix block: a free Haar unitary, M_n -> M_n x L(Z).
                    a.kind = PieceKind::Diffuse;
                    a.cols = a.size;
                    a.cols_valid = true;
                    a.type_ii = false;
                    a.weight = Ratio::zero();
                } else {
                    a.kind = PieceKind::Factor;
                    a.weight = t.squared() - a.min_trace.squared();
                }
                return;
            }
        }
        return;
    }

    Piece& a = pieces_[p1];
    Piece& b = pieces_[p2];
    const bool origin_diffuse = (v.side == Side::A ? a_ : b_).summands[v.summand].diffuse_origin;

    if (a.kind == PieceKind::Matrix && b.kind == PieceKind::Matrix) {
        long r1 = t.integer_quotient(a.min_trace);
        long r2 = t.integer_quotient(b.min_trace);
        if (r1 == 1)
            join_matrix(p1, p2, t);
        else if (r2 == 1)
            join_matrix(p2, p1, t);
        else
            throw InternalError("connector endpoints non-minimal in two matrix pieces");
        return;
    }

    if (a.kind == PieceKind::Diffuse && b.kind == PieceKind::Diffuse && origin_diffuse &&
        t.is_zero()) {
        // Re-gluing one diffuse summand across atoms of D: still diffuse.
        const KernelSummand& origin = (v.side == Side::A ? a_ : b_).summands[v.summand];
        bool cols_ok = a.cols_valid && b.cols_valid;
        bool type_ii = a.type_ii || b.type_ii;
        int survivor = merge_to_factor({p1, p2}, Ratio::zero());
        Piece& s = pieces_[survivor];
        s.kind = PieceKind::Diffuse;
        s.weight = Ratio::zero();
        s.cols = origin.typei_cols;
        s.cols_valid = cols_ok;
        s.type_ii = type_ii;
        return;
    }

    if ((a.kind == PieceKind::Diffuse && b.kind == PieceKind::Matrix) ||
        (a.kind == PieceKind::Matrix && b.kind == PieceKind::Diffuse)) {
        int dp = a.kind == PieceKind::Diffuse ? p1 : p2;
        int mp = a.kind == PieceKind::Diffuse ? p2 : p1;
        if (pieces_[mp].min_trace == t && !t.is_zero()) {
            // Minimal and central on the matrix side: amplification.
            absorb_matrix_into({dp}, {t}, mp, t);
            return;
        }
        merge_to_factor({p1, p2}, t);
        return;
    }

    // At least one factor endpoint, or two diffuse pieces glued along an
    // atomic summand: one interpolated free group factor.
    merge_to_factor({p1, p2}, t);
}

void WorklistState::run_worklist() {
    for (const Connector& v : enumerate_connectors(a_, b_)) adjoin_connector(v);
}

namespace {

struct HarvestEntry {
    Summand summand;
    const Piece* piece;
};

Summand piece_to_summand(const Piece& p) {
    switch (p.kind) {
        case PieceKind::Matrix: {
            if (Ratio(p.size) * p.min_trace != p.central)
                throw InternalError("matrix piece trace bookkeeping is inconsistent");
            return Summand::matrix(p.size, p.min_trace);
        }
        case PieceKind::Diffuse: {
            if (p.type_ii) return Summand::hyperfinite(p.central);
            long cols = p.cols_valid ? p.cols : 1;
            return Summand::diffuse_type_i(cols, p.central);
        }
        case PieceKind::Factor: {
            if (!p.weight.is_positive())
                throw InternalError("factor component has nonpositive ledger weight " +
                                    p.weight.str());
            Ratio s = Ratio::one() + p.weight / p.central.squared();
            return Summand::fgf(s, p.central);
        }
    }
    throw InternalError("unreachable piece kind");
}

bool harvest_less(const HarvestEntry& x, const HarvestEntry& y) {
    if (canonical_summand_less(x.summand, y.summand)) return true;
    if (canonical_summand_less(y.summand, x.summand)) return false;
    return x.piece->id < y.piece->id;
}

}  // namespace

// Recomputes every non-pair component weight from summand weights, cancelled
// atoms, and pair-block credits; any mismatch is an internal inconsistency.
void verify_component_weights(const WorklistState& st) {
    const AbelianD& d = st.d();
    std::map<int, Ratio> expected;  // piece id -> recomputed weight
    std::map<int, bool> has_nonpair;
    for (const Piece* p : st.alive_pieces()) {
        expected[p->id] = Ratio::zero();
        has_nonpair[p->id] = !p->pair_block;
    }

    // Component of every (side, summand): the single component holding all of
    // its provenance, or unset when split.
    std::map<std::pair<int, int>, int> summand_comp;
    std::set<std::pair<int, int>> split;
    for (const Piece* p : st.alive_pieces()) {
        for (const auto& [key, m] : p->provenance) {
            if (!m.is_positive()) continue;
            auto it = summand_comp.find(key);
            if (it == summand_comp.end())
                summand_comp[key] = p->id;
            else if (it->second != p->id)
                split.insert(key);
        }
    }
    for (const auto& key : split) summand_comp.erase(key);

    for (const auto& [key, comp] : summand_comp) {
        Side s = key.first == 0 ? Side::A : Side::B;
        const KernelSummand& ks = st.side(s).summands[key.second];
        Ratio w = ks.is_matrix ? -ks.min_trace.squared() : Ratio::zero();
        // Atoms where this summand is the cancelled scalar side.
        for (const auto& [atom, mass] : ks.mass) {
            (void)mass;
            if (st.atom_is_cancelled_scalar(atom, s, key.second)) w += d.atoms[atom].squared();
        }
        expected[comp] += w;
    }
    // Genuine atoms: t_k^2 plus pair-block credits flow to the remainder's
    // final component.
    for (int k = 0; k < d.size(); ++k) {
        int rem = st.genuine_remainder(k);
        if (rem < 0) continue;
        int comp = st.live_piece(rem);
        expected[comp] += d.atoms[k].squared();
        for (int pb : st.genuine_pair_pieces(k))
            expected[comp] += st.pieces()[pb].min_trace.squared();
    }

    for (const Piece* p : st.alive_pieces()) {
        if (p->pair_block) continue;
        if (expected[p->id] != p->weight)
            throw InternalError("component weight recomputation mismatch: piece " +
                                std::to_string(p->id) + " has running weight " +
                                p->weight.str() + ", recomputed " + expected[p->id].str());
    }
}

bool WorklistState::atom_is_cancelled_scalar(int atom, Side s, int summand) const {
    const AtomInfo& info = atoms_[atom];
    auto it = info.entry_piece.find({static_cast<int>(s), summand});
    if (it == info.entry_piece.end()) return false;
    if (info.form == AtomForm::SharedScalar)
        return s == Side::B;  // convention: the B-side entry cancels the atom credit
    return it->second == kWholeAtom;
}

int WorklistState::genuine_remainder(int atom) const {
    return atoms_[atom].form == AtomForm::Genuine ? atoms_[atom].remainder_piece : -1;
}

std::vector<int> WorklistState::genuine_pair_pieces(int atom) const {
    return atoms_[atom].form == AtomForm::Genuine ? atoms_[atom].pair_pieces : std::vector<int>{};
}

StageResult run_stage(const KernelSide& a, const KernelSide& b, const AbelianD& d) {
    WorklistState st(a, b, d);
    st.build_blocks();
    st.run_worklist();

    if (st.total_weight() != st.expected_weight())
        throw InternalError("stage ledger does not balance: total weight " +
                            st.total_weight().str() + ", expected " +
                            st.expected_weight().str());
    verify_component_weights(st);

    std::vector<HarvestEntry> entries;
    for (const Piece* p : st.alive_pieces()) entries.push_back({piece_to_summand(*p), p});
    std::sort(entries.begin(), entries.end(), harvest_less);

    StageResult out;
    std::map<int, int> ledger_index;  // piece id -> ledger slot
    for (const auto& e : entries) {
        out.algebra.summands.push_back(e.summand);
        out.provenance.push_back(e.piece->provenance);
        LedgerEntry le;
        le.weight = e.piece->weight;
        le.central = e.piece->central;
        le.q_atoms = e.piece->q_atoms;
        switch (e.piece->kind) {
            case PieceKind::Factor: le.classification = "Factor"; break;
            case PieceKind::Diffuse: le.classification = "Hyperfinite"; break;
            case PieceKind::Matrix: le.classification = "MatrixOnly"; break;
        }
        ledger_index[e.piece->id] = static_cast<int>(out.ledger.entries.size());
        out.ledger.entries.push_back(std::move(le));
        if (e.piece->kind == PieceKind::Matrix && !e.piece->diffuse_material)
            out.stable_matrix.push_back({e.piece->size, e.piece->min_trace});
    }
    std::sort(out.stable_matrix.begin(), out.stable_matrix.end());

    for (int k = 0; k < d.size(); ++k) {
        BlockMethod m = st.method_of(k);
        out.atom_method[k] = m == BlockMethod::MethodI ? "I"
                             : m == BlockMethod::MethodII ? "II"
                                                          : "-";
        out.atom_component[k] = -1;
    }
    for (const auto& [pid, slot] : ledger_index)
        for (int q : st.pieces()[pid].q_atoms) out.atom_component[q] = slot;

    out.weight_total = st.total_weight();
    return out;
}

int detect_stabilization(const std::vector<StageResult>& results) {
    if (results.size() < 2)
        throw ValidationError("stabilization detection needs at least two stage results");
    auto partition_of = [](const StageResult& r) {
        std::map<int, int> p;
        for (const auto& [atom, comp] : r.atom_component) p[atom] = comp;
        return p;
    };
    for (size_t i = 0; i + 1 < results.size(); ++i) {
        if (results[i].stable_matrix == results[i + 1].stable_matrix &&
            partition_of(results[i]) == partition_of(results[i + 1]))
            return static_cast<int>(i);
    }
    throw InternalError("stage sequence did not stabilize within the computed bound");
}

namespace {

bool side_scalar_at(const Algebra& alg, const EmbeddingSpec& e, const AbelianD& d, int atom,
                    int* which_summand = nullptr) {
    int found = -1;
    for (size_t i = 0; i < alg.summands.size(); ++i) {
        Ratio m = e.mass(alg, atom, static_cast<int>(i));
        if (!m.is_positive()) continue;
        if (found >= 0) return false;  // more than one summand under the atom
        found = static_cast<int>(i);
        const Summand& s = alg.summands[found];
        if (!s.is_atomic()) return false;
        if (e.lambda[atom][found] != 1) return false;
        if (s.min_trace != d.atoms[atom]) return false;
    }
    if (found < 0) return false;
    if (which_summand) *which_summand = found;
    return true;
}

}  // namespace

LimitExtraction extract_limit(const StageResult& limit_result, const Algebra& exact_a,
                              const Algebra& exact_b, const AbelianD& d, const EmbeddingSpec& ea,
                              const EmbeddingSpec& eb) {
    LimitExtraction out;
    out.algebra = limit_result.algebra;
    out.ledger = limit_result.ledger;

    // Independent recomputation of each component weight from the exact
    // inputs and the result's provenance report.
    const int n_sum = static_cast<int>(out.algebra.summands.size());
    std::map<std::pair<int, int>, int> summand_comp;
    std::set<std::pair<int, int>> split;
    for (int c = 0; c < n_sum; ++c) {
        for (const auto& [key, m] : limit_result.provenance[c]) {
            if (!m.is_positive()) continue;
            auto it = summand_comp.find(key);
            if (it == summand_comp.end())
                summand_comp[key] = c;
            else if (it->second != c)
                split.insert(key);
        }
    }
    for (const auto& key : split) summand_comp.erase(key);

    std::vector<Ratio> recomputed(n_sum, Ratio::zero());
    auto algebra_of = [&](int side) -> const Algebra& { return side == 0 ? exact_a : exact_b; };
    auto embedding_of = [&](int side) -> const EmbeddingSpec& { return side == 0 ? ea : eb; };

    for (const auto& [key, comp] : summand_comp) {
        const Algebra& alg = algebra_of(key.first);
        const EmbeddingSpec& emb = embedding_of(key.first);
        const Summand& s = alg.summands[key.second];
        Ratio w = s.weight();
        for (int k = 0; k < d.size(); ++k) {
            if (!emb.mass(alg, k, key.second).is_positive()) continue;
            // Cancelled-scalar credit: this summand's minimal projection is
            // all of p_k and the opposite side is not scalar there, or both
            // are scalar and this is the B side.
            int sc_a = -1, sc_b = -1;
            bool a_sc = side_scalar_at(exact_a, ea, d, k, &sc_a);
            bool b_sc = side_scalar_at(exact_b, eb, d, k, &sc_b);
            bool cancelled = false;
            if (a_sc && b_sc)
                cancelled = key.first == 1 && sc_b == key.second;
            else if (a_sc)
                cancelled = key.first == 0 && sc_a == key.second;
            else if (b_sc)
                cancelled = key.first == 1 && sc_b == key.second;
            if (cancelled) w += d.atoms[k].squared();
        }
        recomputed[comp] += w;
    }

    // Genuine atoms: locate by Method I/II bookkeeping; their t_k^2 and pair
    // credits belong to the assigned component.
    KernelSide ka = make_limit_side(exact_a, d, ea);
    KernelSide kb = make_limit_side(exact_b, d, eb);
    for (int k = 0; k < d.size(); ++k) {
        bool a_sc = side_scalar_at(exact_a, ea, d, k);
        bool b_sc = side_scalar_at(exact_b, eb, d, k);
        if (a_sc || b_sc) continue;  // not a genuine free product at this atom
        auto it = limit_result.atom_component.find(k);
        if (it == limit_result.atom_component.end() || it->second < 0)
            throw InternalError("genuine atom " + std::to_string(k) +
                                " was not assigned to any component");
        int comp = it->second;
        recomputed[comp] += d.atoms[k].squared();
        BlockProduct bp = block_product(compress_side(ka, Side::A, k, d),
                                        compress_side(kb, Side::B, k, d), d.atoms[k]);
        for (const auto& bm : bp.matrix_summands) recomputed[comp] += bm.min_trace.squared();
    }

    for (int c = 0; c < n_sum; ++c) {
        const Summand& s = out.algebra.summands[c];
        const LedgerEntry& le = out.ledger.entries[c];
        if (s.kind == SummandKind::FreeGroupFactor || !s.is_atomic()) {
            if (recomputed[c] != le.weight)
                throw InternalError("limit weight recomputation mismatch for component " +
                                    std::to_string(c) + ": ledger " + le.weight.str() +
                                    ", recomputed " + recomputed[c].str());
        }
        if (!s.is_atomic() && s.kind != SummandKind::FreeGroupFactor && !le.weight.is_zero())
            throw InternalError("hyperfinite component " + std::to_string(c) +
                                " fails zero-weight certification: W = " + le.weight.str());
    }

    out.fdim_lhs = fdim(out.algebra);
    out.fdim_rhs = fdim(exact_a) + fdim(exact_b) - fdim(d_to_algebra(d));
    if (out.fdim_lhs != out.fdim_rhs)
        throw InternalError("free dimension additivity fails: fdim(result) = " +
                            out.fdim_lhs.str() + ", fdim(A)+fdim(B)-fdim(D) = " +
                            out.fdim_rhs.str());
    return out;
}

Algebra d_to_algebra(const AbelianD& d) {
    Algebra a;
    for (const auto& t : d.atoms) a.summands.push_back(Summand::matrix(1, t));
    return a;
}

BlockMethod classify_block_method(int atom, const Algebra& a, const Algebra& b, const AbelianD& d,
                                  const EmbeddingSpec& ea, const EmbeddingSpec& eb,
                                  const StageResult& result) {
    bool a_min = side_scalar_at(a, ea, d, atom);
    bool b_min = side_scalar_at(b, eb, d, atom);
    if (!a_min && !b_min) return BlockMethod::MethodI;
    auto it = result.atom_method.find(atom);
    if (it != result.atom_method.end() && it->second == "II") return BlockMethod::MethodII;
    return BlockMethod::Unassigned;
}

}  // namespace afp
