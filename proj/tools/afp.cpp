#include <CLI11.hpp>
#include <iostream>

#include "afp/problem_io.hpp"

namespace {

using namespace afp;

int run_fdim(const std::string& path) {
    AmalgamProblem p = load_problem(path);
    std::cout << "fdim(A)=" << fdim(p.a).str() << " fdim(B)=" << fdim(p.b).str()
              << " fdim(D)=" << fdim(d_to_algebra(p.d)).str() << "\n";
    return 0;
}

int run_amalgamate(const std::string& path, bool per_component, int stages_max,
                   const std::string& format, int truncate) {
    AmalgamProblem p = load_problem(path);
    if (truncate > 0) {
        truncate_tail(p.a, p.ea, p.d, truncate);
        truncate_tail(p.b, p.eb, p.d, truncate);
        p.validate();
    }
    EngineOptions opts;
    opts.per_component = per_component;
    opts.stages_max = stages_max;
    ProductReport r = amalgamated_product(p, opts);
    if (format == "json") {
        std::cout << report_to_json(r).dump(2) << "\n";
    } else {
        std::cout << report_to_text(r, p);
    }
    if (truncate > 0) {
        // Rerun with one more retained summand and report the stable head.
        AmalgamProblem q = load_problem(path);
        truncate_tail(q.a, q.ea, q.d, truncate + 1);
        truncate_tail(q.b, q.eb, q.d, truncate + 1);
        q.validate();
        ProductReport r2 = amalgamated_product(q, opts);
        auto matrix_list = [](const ProductReport& rep) {
            std::vector<std::string> out;
            for (const auto& s : rep.result.summands)
                if (s.kind == SummandKind::Matrix) out.push_back(render_summand(s));
            return out;
        };
        auto m1 = matrix_list(r), m2 = matrix_list(r2);
        std::cout << "truncation: stable head summands under N -> N+1:";
        bool any = false;
        for (const auto& s : m1)
            if (std::find(m2.begin(), m2.end(), s) != m2.end()) {
                std::cout << " " << s;
                any = true;
            }
        if (!any) std::cout << " (none)";
        std::cout << "\n";
        if (m2.size() != m1.size())
            std::cout << "truncation: matrix summand count grows with the retained tail ("
                      << m1.size() << " -> " << m2.size() << ")\n";
    }
    return 0;
}

int run_graph(const std::string& path) {
    AmalgamProblem p = load_problem(path);
    InclusionGraph g = build_graph(p.a, p.b, p.d, p.ea, p.eb);
    std::cout << graph_to_dot(g, p.d);
    return 0;
}

int run_decompose(const std::string& path) {
    DecomposeInput in = load_decompose(path);
    auto steps = decompose_simple_steps(in.src, in.dst, in.diagram);
    std::cout << render_simple_steps(in.src, steps);
    return 0;
}

int run_stages(const std::string& path, int max_stage) {
    AmalgamProblem p = load_problem(path);
    if (p.a.has_fgf() || p.b.has_fgf())
        throw ValidationError("stages apply to inputs without free group factor summands");
    InclusionGraph g = build_graph(p.a, p.b, p.d, p.ea, p.eb);
    if (!is_connected(g))
        throw DisconnectedGraphError("the union graph is disconnected");
    for (int i = 1; i <= max_stage; ++i) {
        StagePlan sa = build_stage(p.a, p.d, p.ea, p.b, p.eb, i);
        StagePlan sb = build_stage(p.b, p.d, p.eb, p.a, p.ea, i);
        StageResult r = run_stage(stage_kernel_side(sa), stage_kernel_side(sb), p.d);
        std::cout << "stage " << std::max(sa.stage_index, sb.stage_index) << ": "
                  << render_algebra(r.algebra) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"amalgamated free product calculator for direct sums of interpolated free "
                 "group factors and hyperfinite algebras"};
    app.require_subcommand(1);

    std::string file;
    bool per_component = false;
    int stages_max = 8;
    std::string format = "text";
    int truncate = 0;
    bool dot = true;
    int max_stage = 4;

    auto* c_fdim = app.add_subcommand("fdim", "print the free dimension of A, B and D");
    c_fdim->add_option("file", file)->required();

    auto* c_am = app.add_subcommand("amalgamate", "compute the isomorphism class of A *_D B");
    c_am->add_option("file", file)->required();
    c_am->add_flag("--per-component", per_component,
                   "compute disconnected problems componentwise");
    c_am->add_option("--stages-max", stages_max, "stage window for stabilization checks");
    c_am->add_option("--report", format, "output format: text or json")
        ->check(CLI::IsMember({"text", "json"}));
    c_am->add_option("--truncate-tail", truncate,
                     "keep only the first N summands of each input, folding the rest into "
                     "abelian atoms");

    auto* c_graph = app.add_subcommand("graph", "emit the union graph of the problem");
    c_graph->add_option("file", file)->required();
    c_graph->add_flag("--dot", dot, "DOT output (default)");

    auto* c_dec = app.add_subcommand("decompose",
                                     "print the simple-step decomposition of an inclusion");
    c_dec->add_option("file", file)->required();

    auto* c_stages = app.add_subcommand("stages", "print finite-dimensional stage products");
    c_stages->add_option("file", file)->required();
    c_stages->add_option("--max", max_stage, "number of stages to print");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (c_fdim->parsed()) return run_fdim(file);
        if (c_am->parsed())
            return run_amalgamate(file, per_component, stages_max, format, truncate);
        if (c_graph->parsed()) return run_graph(file);
        if (c_dec->parsed()) return run_decompose(file);
        if (c_stages->parsed()) return run_stages(file, max_stage);
    } catch (const afp::DisconnectedGraphError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const afp::InternalError& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 4;
    } catch (const afp::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
