#include "afp/problem_io.hpp"

#include <fstream>
#include <sstream>

namespace afp {

namespace {

[[noreturn]] void bad(const std::string& where, const std::string& what) {
    throw ValidationError(where + ": " + what);
}

void check_keys(const Json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
    if (!j.is_object()) bad(where, "expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) ok = true;
        if (!ok) bad(where, "unknown key '" + it.key() + "'");
    }
}

Ratio get_ratio(const Json& j, const std::string& where, const char* key) {
    if (!j.contains(key)) bad(where, std::string("missing key '") + key + "'");
    const Json& v = j.at(key);
    if (!v.is_string()) bad(where, std::string("'") + key + "' must be a string rational \"p/q\"");
    try {
        return Ratio::parse(v.get<std::string>());
    } catch (const std::invalid_argument& e) {
        bad(where, e.what());
    }
}

long get_int(const Json& j, const std::string& where, const char* key) {
    if (!j.contains(key)) bad(where, std::string("missing key '") + key + "'");
    const Json& v = j.at(key);
    if (!v.is_number_integer()) bad(where, std::string("'") + key + "' must be an integer");
    return v.get<long>();
}

Summand parse_summand(const Json& j, const std::string& where) {
    check_keys(j, where, {"kind", "size", "min_trace", "central_trace", "param"});
    if (!j.contains("kind") || !j.at("kind").is_string()) bad(where, "missing summand kind");
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "matrix") {
        long n = get_int(j, where, "size");
        Ratio t = get_ratio(j, where, "min_trace");
        Summand s = Summand::matrix(n, t);
        if (j.contains("central_trace") &&
            get_ratio(j, where, "central_trace") != s.central_trace)
            bad(where, "central_trace disagrees with size * min_trace");
        if (j.contains("param")) bad(where, "matrix summand takes no param");
        return s;
    }
    if (kind == "diffuse_typeI") {
        long n = j.contains("size") ? get_int(j, where, "size") : 1;
        if (j.contains("min_trace") || j.contains("param"))
            bad(where, "diffuse summand takes only size and central_trace");
        return Summand::diffuse_type_i(n, get_ratio(j, where, "central_trace"));
    }
    if (kind == "hyperfinite_II1") {
        if (j.contains("size") || j.contains("min_trace") || j.contains("param"))
            bad(where, "hyperfinite summand takes only central_trace");
        return Summand::hyperfinite(get_ratio(j, where, "central_trace"));
    }
    if (kind == "fgf") {
        if (j.contains("size") || j.contains("min_trace"))
            bad(where, "fgf summand takes only param and central_trace");
        return Summand::fgf(get_ratio(j, where, "param"), get_ratio(j, where, "central_trace"));
    }
    bad(where, "unknown summand kind '" + kind + "'");
}

EmbeddingSpec parse_embedding(const Json& j, const std::string& where, const Algebra& alg,
                              const AbelianD& d) {
    if (!j.is_array()) bad(where, "expected an array of embedding entries");
    EmbeddingSpec e = EmbeddingSpec::zeros(d.size(), static_cast<int>(alg.summands.size()));
    for (size_t n = 0; n < j.size(); ++n) {
        const Json& rec = j[n];
        std::string rw = where + "[" + std::to_string(n) + "]";
        check_keys(rec, rw, {"atom", "summand", "lambda", "alpha"});
        long k = get_int(rec, rw, "atom");
        long i = get_int(rec, rw, "summand");
        if (k < 0 || k >= d.size()) bad(rw, "atom index out of range");
        if (i < 0 || i >= static_cast<long>(alg.summands.size()))
            bad(rw, "summand index out of range");
        bool has_l = rec.contains("lambda"), has_a = rec.contains("alpha");
        if (has_l == has_a) bad(rw, "give exactly one of lambda or alpha");
        if (has_l) {
            if (!alg.summands[i].is_atomic()) bad(rw, "lambda entry for a non-matrix summand");
            e.lambda[k][i] = get_int(rec, rw, "lambda");
        } else {
            if (alg.summands[i].is_atomic()) bad(rw, "alpha entry for a matrix summand");
            e.alpha[k][i] = get_ratio(rec, rw, "alpha");
        }
    }
    return e;
}

Json summand_to_json(const Summand& s) {
    Json j;
    j["kind"] = kind_name(s.kind);
    switch (s.kind) {
        case SummandKind::Matrix:
            j["size"] = s.size;
            j["min_trace"] = s.min_trace.str();
            j["central_trace"] = s.central_trace.str();
            break;
        case SummandKind::DiffuseTypeI:
            j["size"] = s.size;
            j["central_trace"] = s.central_trace.str();
            break;
        case SummandKind::HyperfiniteII1:
            j["central_trace"] = s.central_trace.str();
            break;
        case SummandKind::FreeGroupFactor:
            j["param"] = s.param.str();
            j["central_trace"] = s.central_trace.str();
            break;
    }
    return j;
}

}  // namespace

Algebra parse_algebra(const Json& j) {
    if (!j.is_array()) throw ValidationError("algebra: expected an array of summand records");
    Algebra a;
    for (size_t i = 0; i < j.size(); ++i)
        a.summands.push_back(parse_summand(j[i], "summand " + std::to_string(i)));
    a.validate();
    return a;
}

Json algebra_to_json(const Algebra& a) {
    Json j = Json::array();
    for (const auto& s : a.summands) j.push_back(summand_to_json(s));
    return j;
}

AmalgamProblem parse_problem(const Json& j) {
    check_keys(j, "problem", {"A", "B", "D", "embedA", "embedB"});
    for (const char* key : {"A", "B", "D", "embedA", "embedB"})
        if (!j.contains(key)) bad("problem", std::string("missing key '") + key + "'");

    AmalgamProblem p;
    p.a = parse_algebra(j.at("A"));
    p.b = parse_algebra(j.at("B"));
    check_keys(j.at("D"), "D", {"atoms"});
    if (!j.at("D").contains("atoms") || !j.at("D").at("atoms").is_array())
        bad("D", "expected {\"atoms\": [\"p/q\", ...]}");
    for (const auto& t : j.at("D").at("atoms")) {
        if (!t.is_string()) bad("D", "atom traces must be string rationals");
        p.d.atoms.push_back(Ratio::parse(t.get<std::string>()));
    }
    p.d.validate();
    p.ea = parse_embedding(j.at("embedA"), "embedA", p.a, p.d);
    p.eb = parse_embedding(j.at("embedB"), "embedB", p.b, p.d);
    p.validate();
    return p;
}

AmalgamProblem load_problem(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open problem file '" + path + "'");
    Json j;
    try {
        in >> j;
    } catch (const Json::exception& e) {
        throw ValidationError("malformed JSON in '" + path + "': " + e.what());
    }
    return parse_problem(j);
}

DecomposeInput parse_decompose(const Json& j) {
    check_keys(j, "decompose input", {"src", "dst", "edges"});
    for (const char* key : {"src", "dst", "edges"})
        if (!j.contains(key)) bad("decompose input", std::string("missing key '") + key + "'");
    DecomposeInput d;
    d.src = parse_algebra(j.at("src"));
    d.dst = parse_algebra(j.at("dst"));
    if (!j.at("edges").is_array()) bad("decompose input", "edges must be an array");
    for (size_t n = 0; n < j.at("edges").size(); ++n) {
        const Json& rec = j.at("edges")[n];
        std::string rw = "edges[" + std::to_string(n) + "]";
        check_keys(rec, rw, {"from", "to", "mult", "trace"});
        BratteliEdge e;
        e.src = static_cast<int>(get_int(rec, rw, "from"));
        e.dst = static_cast<int>(get_int(rec, rw, "to"));
        e.mult = get_int(rec, rw, "mult");
        e.trace_weight = get_ratio(rec, rw, "trace");
        d.diagram.edges.push_back(e);
    }
    return d;
}

DecomposeInput load_decompose(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open file '" + path + "'");
    Json j;
    try {
        in >> j;
    } catch (const Json::exception& e) {
        throw ValidationError("malformed JSON in '" + path + "': " + e.what());
    }
    return parse_decompose(j);
}

Json report_to_json(const ProductReport& r) {
    Json j;
    j["result"] = algebra_to_json(r.result);
    Json ledger = Json::array();
    for (const auto& e : r.ledger.entries) {
        Json le;
        le["weight"] = e.weight.str();
        le["central"] = e.central.str();
        le["q_atoms"] = e.q_atoms;
        le["classification"] = e.classification;
        ledger.push_back(le);
    }
    j["ledger"] = ledger;
    Json graph;
    graph["vertices"] = r.graph.vertices;
    Json ea = Json::array(), eb = Json::array();
    for (const auto& e : r.graph.edges_a) ea.push_back({e.first, e.second});
    for (const auto& e : r.graph.edges_b) eb.push_back({e.first, e.second});
    graph["edges_a"] = ea;
    graph["edges_b"] = eb;
    j["graph"] = graph;
    j["stage_used"] = r.stage_used;
    j["fdim_check"] = {{"lhs", r.fdim_lhs.str()},
                       {"rhs", r.fdim_rhs.str()},
                       {"ok", r.fdim_lhs == r.fdim_rhs}};
    return j;
}

std::string report_to_text(const ProductReport& r, const AmalgamProblem& p) {
    std::ostringstream out;
    out << render_algebra(r.result) << "\n";
    Ratio fa = fdim(p.a), fb = fdim(p.b), fd = fdim(d_to_algebra(p.d));
    out << "fdim: " << fa.str() << " + " << fb.str() << " - " << fd.str() << " = "
        << r.fdim_lhs.str() << (r.fdim_lhs == r.fdim_rhs ? " OK" : " MISMATCH") << "\n";
    return out.str();
}

std::string graph_to_dot(const InclusionGraph& g, const AbelianD& d) {
    std::ostringstream out;
    out << "graph G {\n";
    for (int k = 0; k < g.vertices; ++k)
        out << "  a" << k << " [label=\"" << k << ":" << d.atoms[k].str() << "\"];\n";
    for (const auto& e : g.edges_a)
        out << "  a" << e.first << " -- a" << e.second << " [style=solid];\n";
    for (const auto& e : g.edges_b)
        out << "  a" << e.first << " -- a" << e.second << " [style=dashed];\n";
    out << "}\n";
    return out.str();
}

std::string render_simple_steps(const Algebra& src, const std::vector<SimpleStep>& steps) {
    std::ostringstream out;
    Algebra cur = src;
    out << "start: " << render_algebra(cur) << "\n";
    for (size_t i = 0; i < steps.size(); ++i) {
        const SimpleStep& s = steps[i];
        cur = apply_simple_step(cur, s);
        if (s.type == SimpleStep::Type::Copy)
            out << "copy summand " << s.index << " into traces " << s.first_trace.str() << " + "
                << s.second_trace.str();
        else
            out << "join summands " << s.index << " and " << s.other;
        out << "  ->  " << render_algebra(cur) << "\n";
    }
    return out.str();
}

void truncate_tail(Algebra& a, EmbeddingSpec& e, const AbelianD& d, int keep) {
    if (keep < 1) throw ValidationError("--truncate-tail needs a positive count");
    if (static_cast<int>(a.summands.size()) <= keep) return;
    std::vector<Ratio> folded(d.size(), Ratio::zero());
    for (size_t i = keep; i < a.summands.size(); ++i)
        for (int k = 0; k < d.size(); ++k) folded[k] += e.mass(a, k, static_cast<int>(i));

    Algebra out;
    EmbeddingSpec ne = EmbeddingSpec::zeros(d.size(), 0);
    auto push_col = [&](const Summand& s, std::vector<long> lam, std::vector<Ratio> alp) {
        out.summands.push_back(s);
        for (int k = 0; k < d.size(); ++k) {
            ne.lambda[k].push_back(lam[k]);
            ne.alpha[k].push_back(alp[k]);
        }
    };
    for (int i = 0; i < keep; ++i) {
        std::vector<long> lam(d.size());
        std::vector<Ratio> alp(d.size());
        for (int k = 0; k < d.size(); ++k) {
            lam[k] = e.lambda[k][i];
            alp[k] = e.alpha[k][i];
        }
        push_col(a.summands[i], std::move(lam), std::move(alp));
    }
    for (int k = 0; k < d.size(); ++k) {
        if (!folded[k].is_positive()) continue;
        std::vector<long> lam(d.size(), 0);
        lam[k] = 1;
        push_col(Summand::matrix(1, folded[k]), std::move(lam),
                 std::vector<Ratio>(d.size(), Ratio::zero()));
    }
    a = std::move(out);
    e = std::move(ne);
}

}  // namespace afp
