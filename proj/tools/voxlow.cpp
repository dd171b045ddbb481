// voxlow command-line driver: compile, infer, eval, bench, iou, demo.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "voxlow/eval.hpp"
#include "voxlow/geometry.hpp"
#include "voxlow/graph.hpp"
#include "voxlow/lowering.hpp"
#include "voxlow/pipeline.hpp"
#include "voxlow/scene.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace voxlow;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 2;
constexpr int kIo = 3;

std::vector<double> parse_numbers(const std::string& text, std::size_t expected, const std::string& what) {
    std::vector<double> v;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        try {
            v.push_back(std::stod(item, &used));
        } catch (const std::exception&) {
            throw ParseError(what + ": '" + item + "' is not a number");
        }
        if (item.find_first_not_of(" \t", used) != std::string::npos)
            throw ParseError(what + ": '" + item + "' is not a number");
    }
    if (v.size() != expected)
        throw ParseError(what + ": expected " + std::to_string(expected) + " comma-separated values, got " +
                         std::to_string(v.size()));
    return v;
}

PipelineMode parse_mode(const std::string& s) {
    return s == "staged" ? PipelineMode::Staged : PipelineMode::Sequential;
}

struct CompileArgs {
    std::string in, out, calib;
    int trials = 20;
    double tol = 1e-4;
    uint64_t seed = 0;
};

int cmd_compile(const CompileArgs& a) {
    const Graph g5 = load_graph(a.in);
    ordered_json rep;
    rep["source"] = a.in;

    const auto problems = validate(g5);
    if (!problems.empty()) {
        rep["validation_errors"] = problems;
        std::cout << rep.dump(2) << '\n';
        return kInvalid;
    }

    LoweredGraph lowered;
    try {
        lowered = lower(g5);
    } catch (const LoweringError& e) {
        rep["lowering_error"] = e.what();
        std::cout << rep.dump(2) << '\n';
        return kInvalid;
    }
    const auto violations = check_rank4(lowered.graph);
    const EquivalenceReport eq = verify_equivalence(g5, lowered.graph, a.trials, a.tol, a.seed);

    ordered_json hist = ordered_json::object();
    for (const auto& [rank, n] : lowered.report.tensor_rank_histogram) hist[std::to_string(rank)] = n;
    rep["lowering"] = {{"source_nodes", g5.nodes.size()},
                       {"lowered_nodes", lowered.graph.nodes.size()},
                       {"conv3d_lowered", lowered.report.conv3d_lowered},
                       {"depth_taps_emitted", lowered.report.depth_taps_emitted},
                       {"tensor_rank_histogram", hist},
                       {"node_map", lowered.report.node_map}};
    rep["rank4_violations"] = violations;
    rep["verification"] = {{"trials", eq.trials},
                           {"tol", a.tol},
                           {"seed", a.seed},
                           {"max_abs_diff", eq.max_diff},
                           {"trial_max_abs_diff", eq.trial_max_diff},
                           {"pass", eq.pass}};
    if (!eq.structural_error.empty()) rep["verification"]["error"] = eq.structural_error;

    Graph result = std::move(lowered.graph);
    if (!a.calib.empty()) {
        std::vector<TensorMap> calib;
        std::vector<fs::path> files;
        if (!fs::is_directory(a.calib)) throw IoError("calibration directory '" + a.calib + "' does not exist");
        for (const auto& e : fs::directory_iterator(a.calib))
            if (e.is_regular_file() && e.path().extension() == ".vxw") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) calib.push_back(fold_inputs(load_tensors(f)));
        QuantizeResult q = quantize(result, calib);
        rep["quantization"] = {{"calibration_sets", calib.size()},
                               {"output_max_abs_diff", q.output_max_abs_diff},
                               {"warnings", q.warnings}};
        result = std::move(q.graph);
    }

    const bool ok = violations.empty() && eq.pass;
    if (ok) save_graph(result, a.out);
    rep["written"] = ok ? ordered_json(a.out) : ordered_json(nullptr);
    std::cout << rep.dump(2) << '\n';
    return ok ? kOk : kInvalid;
}

int cmd_infer(const std::string& graph, const std::string& frames, const std::string& cfg_path,
              const std::string& out, const std::string& mode) {
    const Graph g4 = load_graph(graph);
    const PipelineConfig cfg = load_config(cfg_path);
    PipelineOptions opts;
    opts.mode = parse_mode(mode);
    PipelineResult r;
    try {
        r = run_pipeline(list_frames(frames), g4, cfg, opts);
    } catch (const RefusedGraph& e) {
        std::cerr << "voxlow infer: " << e.what() << '\n';
        for (const auto& v : e.violations()) std::cerr << "  " << v << '\n';
        return kInvalid;
    }
    std::ofstream os(out);
    if (!os) throw IoError("cannot write '" + out + "'");
    write_boxes(to_labeled(r.detections, cfg), os, true);
    os.close();
    if (!os) throw IoError("failed writing '" + out + "'");
    std::cout << report_json(r.report) << '\n';
    return kOk;
}

int cmd_eval(const std::string& dets, const std::string& gt, const std::string& cfg_path) {
    const EvalCfg cfg = cfg_path.empty() ? default_config().eval : load_config(cfg_path).eval;
    std::cout << report_json(evaluate(fs::path(dets), fs::path(gt), cfg)) << '\n';
    return kOk;
}

int cmd_bench(const std::string& graph, const std::string& frames, const std::string& cfg_path, int repeats,
              const std::string& simulate, std::size_t sim_frames, const std::string& mode, std::size_t capacity) {
    PipelineOptions opts;
    opts.mode = parse_mode(mode);
    opts.handoff_capacity = capacity;
    if (!simulate.empty()) {
        const auto v = parse_numbers(simulate, 4, "--simulate");
        const StageTiming t{v[0], v[1], v[2], v[3]};
        std::cout << report_json(bench_simulated(t, sim_frames, opts)) << '\n';
        return kOk;
    }
    if (graph.empty() || frames.empty()) throw std::invalid_argument("bench needs --graph and --frames, or --simulate");
    const PipelineConfig cfg = cfg_path.empty() ? default_config() : load_config(cfg_path);
    try {
        std::cout << report_json(bench(list_frames(frames), load_graph(graph), cfg, repeats, opts)) << '\n';
    } catch (const RefusedGraph& e) {
        std::cerr << "voxlow bench: " << e.what() << '\n';
        for (const auto& v : e.violations()) std::cerr << "  " << v << '\n';
        return kInvalid;
    }
    return kOk;
}

int cmd_iou(const std::string& a, const std::string& b, const std::string& mode) {
    double iou = 0.0;
    if (mode == "3d") {
        const auto x = parse_numbers(a, 7, "--a"), y = parse_numbers(b, 7, "--b");
        const Box3D ba{{x[0], x[1], x[3], x[4], x[6]}, x[2], x[5]};
        const Box3D bb{{y[0], y[1], y[3], y[4], y[6]}, y[2], y[5]};
        iou = iou_3d(ba, bb);
    } else {
        const auto x = parse_numbers(a, 5, "--a"), y = parse_numbers(b, 5, "--b");
        iou = rotated_iou_bev({x[0], x[1], x[2], x[3], x[4]}, {y[0], y[1], y[2], y[3], y[4]});
    }
    std::cout << canonical_real(iou) << '\n';
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Rank-5 to rank-4 graph lowering and radar detection pipeline tools"};
    app.require_subcommand(1);

    CompileArgs ca;
    auto* compile = app.add_subcommand("compile", "Lower a rank-5 graph and verify equivalence");
    compile->add_option("--in", ca.in, "Source graph JSON")->required();
    compile->add_option("--out", ca.out, "Lowered graph JSON")->required();
    compile->add_option("--verify-trials", ca.trials, "Random input trials")->check(CLI::PositiveNumber);
    compile->add_option("--tol", ca.tol, "Max absolute difference allowed")->check(CLI::NonNegativeNumber);
    compile->add_option("--seed", ca.seed, "Seed for verification inputs");
    compile->add_option("--quantize", ca.calib, "Directory of calibration tensors (*.vxw)");

    std::string graph, frames, cfg, out, dets, gt, simulate, box_a, box_b;
    std::string mode = "sequential", iou_mode = "bev";
    int repeats = 1;
    std::size_t sim_frames = 20, capacity = 1, demo_frames = 5;
    uint64_t demo_seed = 7;
    const auto modes = CLI::IsMember({"sequential", "staged"});

    auto* infer = app.add_subcommand("infer", "Run the detection pipeline over a directory of point files");
    infer->add_option("--graph", graph, "Rank-4 graph JSON")->required();
    infer->add_option("--frames", frames, "Directory of *.csv point files")->required();
    infer->add_option("--cfg", cfg, "Pipeline config JSON")->required();
    infer->add_option("--out", out, "Detections JSONL")->required();
    infer->add_option("--mode", mode, "sequential or staged")->check(modes);

    auto* eval = app.add_subcommand("eval", "Compute AP_3D / AP_BEV per class");
    eval->add_option("--dets", dets, "Detections JSONL")->required();
    eval->add_option("--gt", gt, "Ground truth JSONL")->required();
    eval->add_option("--cfg", cfg, "Pipeline config JSON (eval section)");

    auto* benchc = app.add_subcommand("bench", "Profile stage timings and FPS");
    benchc->add_option("--graph", graph, "Rank-4 graph JSON");
    benchc->add_option("--frames", frames, "Directory of *.csv point files");
    benchc->add_option("--cfg", cfg, "Pipeline config JSON");
    auto* rep_opt = benchc->add_option("--repeats", repeats, "Pipeline passes")->check(CLI::PositiveNumber);
    auto* sim_opt = benchc->add_option("--simulate", simulate, "Injected delays pre,net,post,overhead (seconds)");
    rep_opt->excludes(sim_opt);
    benchc->add_option("--sim-frames", sim_frames, "Frames driven in simulation")->check(CLI::PositiveNumber);
    benchc->add_option("--mode", mode, "sequential or staged")->check(modes);
    benchc->add_option("--capacity", capacity, "Handoff buffer capacity")->check(CLI::PositiveNumber);

    auto* iou = app.add_subcommand("iou", "IoU of two boxes");
    iou->add_option("--a", box_a, "bev: cx,cy,w,l,yaw  3d: cx,cy,z,w,l,h,yaw")->required();
    iou->add_option("--b", box_b, "Second box, same format")->required();
    iou->add_option("--mode", iou_mode, "bev or 3d")->check(CLI::IsMember({"bev", "3d"}));

    auto* demo = app.add_subcommand("demo", "Write a seeded synthetic scene, config and toy detector");
    demo->add_option("--out", out, "Output directory")->required();
    demo->add_option("--frames", demo_frames, "Number of frames");
    demo->add_option("--seed", demo_seed, "Scene seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kInvalid;
    }

    try {
        if (*compile) return cmd_compile(ca);
        if (*infer) return cmd_infer(graph, frames, cfg, out, mode);
        if (*eval) return cmd_eval(dets, gt, cfg);
        if (*benchc) return cmd_bench(graph, frames, cfg, repeats, simulate, sim_frames, mode, capacity);
        if (*iou) return cmd_iou(box_a, box_b, iou_mode);
        if (*demo) {
            write_demo(out, demo_frames, demo_seed);
            std::cout << "wrote demo scene to " << out << '\n';
            return kOk;
        }
    } catch (const ParseError& e) {
        std::cerr << "voxlow: " << e.what() << '\n';
        return kIo;
    } catch (const IoError& e) {
        std::cerr << "voxlow: " << e.what() << '\n';
        return kIo;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "voxlow: " << e.what() << '\n';
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "voxlow: " << e.what() << '\n';
        return kInvalid;
    }
    return kOk;
}
