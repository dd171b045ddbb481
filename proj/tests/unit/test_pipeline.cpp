#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "voxlow/lowering.hpp"
#include "voxlow/pipeline.hpp"
#include "voxlow/scene.hpp"

using namespace voxlow;
namespace fs = std::filesystem;

namespace {

// One demo directory shared by the whole suite.
class DemoEnv : public ::testing::Environment {
public:
    static inline fs::path dir;
    static inline Graph g4;

    void SetUp() override {
        dir = fs::temp_directory_path() / "voxlow_pipeline_test";
        fs::remove_all(dir);
        write_demo(dir, 3, 7);
        g4 = lower(load_graph(dir / "detector_g5.json")).graph;
    }
};

const auto* const kEnv = ::testing::AddGlobalTestEnvironment(new DemoEnv);

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

std::string dets_text(const PipelineResult& r, const PipelineConfig& cfg) {
    std::ostringstream os;
    write_boxes(to_labeled(r.detections, cfg), os, true);
    return os.str();
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string("\"") + VOXLOW_CLI + "\" " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

} // namespace

TEST(FpsModel, TableValues) {
    const auto f = fps_model({0.017, 0.028, 0.022, 0.0}, PipelineMode::Sequential);
    EXPECT_NEAR(f.theoretical_fps, 14.93, 0.01);
    EXPECT_DOUBLE_EQ(f.effective_fps, f.theoretical_fps);
    const auto g = fps_model({0.017, 0.028, 0.022, 0.00567}, PipelineMode::Sequential);
    EXPECT_NEAR(g.effective_fps, 13.76, 0.01);
    EXPECT_NEAR(g.theoretical_fps, 1.0 / 0.067, 1e-12);
}

TEST(FpsModel, StagedEqualStages) {
    EXPECT_NEAR(fps_model({0.01, 0.01, 0.01, 0.0}, PipelineMode::Staged).effective_fps, 100.0, 1e-9);
    EXPECT_NEAR(fps_model({0.005, 0.02, 0.01, 0.005}, PipelineMode::Staged).effective_fps, 40.0, 1e-9);
}

TEST(FpsModel, Errors) {
    EXPECT_THROW(fps_model({0, 0, 0, 0}, PipelineMode::Sequential), std::invalid_argument);
    EXPECT_THROW(fps_model({0, 0, 0, 0.01}, PipelineMode::Staged), std::invalid_argument);
    EXPECT_THROW(fps_model({-0.01, 0.02, 0, 0}, PipelineMode::Sequential), std::invalid_argument);
}

TEST(FpsModel, EffectiveStrictlyDecreasesWithOverhead) {
    for (auto mode : {PipelineMode::Sequential, PipelineMode::Staged}) {
        double prev = fps_model({0.017, 0.028, 0.022, 0.0}, mode).effective_fps;
        for (double ovh = 0.001; ovh < 0.05; ovh += 0.001) {
            const auto f = fps_model({0.017, 0.028, 0.022, ovh}, mode);
            EXPECT_LT(f.effective_fps, prev);
            if (mode == PipelineMode::Sequential) EXPECT_LE(f.effective_fps, f.theoretical_fps);
            prev = f.effective_fps;
        }
    }
}

TEST(Pipeline, ZeroFrames) {
    const auto cfg = demo_config();
    const auto r = run_pipeline({}, DemoEnv::g4, cfg);
    EXPECT_TRUE(r.detections.empty());
    EXPECT_EQ(r.report.frames, 0u);
    EXPECT_EQ(r.report.theoretical_fps, 0.0);
}

TEST(Pipeline, CrossModeIdenticalDetections) {
    const auto cfg = load_config(DemoEnv::dir / "config.json");
    const auto frames = list_frames(DemoEnv::dir / "frames");
    ASSERT_EQ(frames.size(), 3u);
    const auto seq = run_pipeline(frames, DemoEnv::g4, cfg, {PipelineMode::Sequential, 1});
    const auto stg = run_pipeline(frames, DemoEnv::g4, cfg, {PipelineMode::Staged, 1});
    const auto stg2 = run_pipeline(frames, DemoEnv::g4, cfg, {PipelineMode::Staged, 3});
    const std::string a = dets_text(seq, cfg);
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, dets_text(stg, cfg));
    EXPECT_EQ(a, dets_text(stg2, cfg));
    ASSERT_EQ(seq.detections.size(), 3u);
    EXPECT_EQ(seq.detections[0].frame, "frame_000");
    EXPECT_EQ(seq.detections[2].frame, "frame_002");
}

TEST(Pipeline, CliCrossModeFilesByteEqual) {
    const auto g4_path = DemoEnv::dir / "cli_g4.json";
    ASSERT_EQ(run_cli("compile --in " + (DemoEnv::dir / "detector_g5.json").string() + " --out " + g4_path.string()),
              0);
    const std::string common = "infer --graph " + g4_path.string() + " --frames " +
                               (DemoEnv::dir / "frames").string() + " --cfg " +
                               (DemoEnv::dir / "config.json").string();
    const auto seq = DemoEnv::dir / "seq.jsonl", stg = DemoEnv::dir / "stg.jsonl";
    ASSERT_EQ(run_cli(common + " --out " + seq.string() + " --mode sequential"), 0);
    ASSERT_EQ(run_cli(common + " --out " + stg.string() + " --mode staged"), 0);
    EXPECT_FALSE(slurp(seq).empty());
    EXPECT_EQ(slurp(seq), slurp(stg));
}

TEST(Pipeline, RefusesRank5Graph) {
    const auto cfg = demo_config();
    const Graph g5 = toy_detector(cfg);
    try {
        run_pipeline(list_frames(DemoEnv::dir / "frames"), g5, cfg);
        FAIL() << "rank-5 graph accepted";
    } catch (const RefusedGraph& e) {
        EXPECT_FALSE(e.violations().empty());
        EXPECT_EQ(e.violations(), check_rank4(g5));
    }
    const std::string args = "infer --graph " + (DemoEnv::dir / "detector_g5.json").string() + " --frames " +
                             (DemoEnv::dir / "frames").string() + " --cfg " +
                             (DemoEnv::dir / "config.json").string() + " --out " +
                             (DemoEnv::dir / "refused.jsonl").string();
    EXPECT_EQ(run_cli(args), 2);
    EXPECT_FALSE(fs::exists(DemoEnv::dir / "refused.jsonl"));
}

TEST(Pipeline, InferStageNeverSeesRank5) {
    const auto cfg = demo_config();
    const auto frames = list_frames(DemoEnv::dir / "frames");
    for (auto mode : {PipelineMode::Sequential, PipelineMode::Staged}) {
        const auto r = run_pipeline(frames, DemoEnv::g4, cfg, {mode, 1});
        EXPECT_EQ(r.report.max_infer_rank, 4);
    }
}

TEST(Pipeline, ReportInvariants) {
    const auto cfg = demo_config();
    const auto r = run_pipeline(list_frames(DemoEnv::dir / "frames"), DemoEnv::g4, cfg);
    const auto& p = r.report;
    EXPECT_EQ(p.frames, 3u);
    EXPECT_NEAR(p.theoretical_fps, 1.0 / (p.pre.mean + p.net.mean + p.post.mean), 1e-9);
    EXPECT_LE(p.effective_fps, p.theoretical_fps);
    EXPECT_TRUE(p.bottleneck == "pre" || p.bottleneck == "net" || p.bottleneck == "post");
    ASSERT_EQ(p.completion_s.size(), 3u);
    EXPECT_TRUE(std::is_sorted(p.completion_s.begin(), p.completion_s.end()));
}

TEST(Bench, RepeatsAggregate) {
    const auto cfg = demo_config();
    const auto one = list_frames(DemoEnv::dir / "frames");
    const auto r = bench({one.front()}, DemoEnv::g4, cfg, 3);
    ASSERT_EQ(r.samples.size(), 3u);
    EXPECT_EQ(r.frames, 3u);
    for (const auto* s : {&r.pre, &r.net, &r.post, &r.transfer}) {
        EXPECT_LE(s->min, s->mean);
        EXPECT_LE(s->mean, s->max);
        EXPECT_LE(s->p95, s->max);
    }
    EXPECT_THROW(bench({one.front()}, DemoEnv::g4, cfg, 0), std::invalid_argument);
    const auto j = nlohmann::json::parse(report_json(r));
    EXPECT_TRUE(j.contains("theoretical_fps"));
    EXPECT_TRUE(j.at("with_io").contains("theoretical_fps"));
}

TEST(Bench, SimulatedSequential) {
    const auto r = bench_simulated({0.017, 0.028, 0.022, 0.00567}, 6, {PipelineMode::Sequential, 1});
    EXPECT_NEAR(r.theoretical_fps, 14.93, 0.01);
    EXPECT_NEAR(r.effective_fps, 13.76, 0.01);
    EXPECT_EQ(r.bottleneck, "net");
    EXPECT_EQ(r.samples.size(), 6u);
    // Injected delays are lower bounds on what the clock sees.
    EXPECT_GE(r.net.min, 0.028);
    EXPECT_NEAR(r.measured_fps, 13.76, 13.76 * 0.1);
}

TEST(Bench, StagedSteadyStatePeriod) {
    const StageTiming t{0.017, 0.028, 0.022, 0.00567};
    const auto r = bench_simulated(t, 15, {PipelineMode::Staged, 1});
    const double expected = std::max({t.pre_s, t.net_s, t.post_s}) + t.transfer_overhead_s;
    EXPECT_NEAR(steady_period(r, 3), expected, 0.05 * expected);
    EXPECT_NEAR(r.effective_fps, 1.0 / expected, 1e-9);
}

TEST(Config, RoundTripMarksDefaults) {
    const auto p = DemoEnv::dir / "cfg_rt.json";
    PipelineConfig c = demo_config();
    c.eval.iou_thresh["car"] = 0.5;
    c.nms.max_keep = 17;
    save_config(c, p);
    const auto j = nlohmann::json::parse(slurp(p));
    for (const char* k : {"voxel", "anchors", "nms", "eval"}) EXPECT_EQ(j.at(k).at("source"), "artifact-default") << k;
    const auto back = load_config(p);
    save_config(back, DemoEnv::dir / "cfg_rt2.json");
    EXPECT_EQ(slurp(p), slurp(DemoEnv::dir / "cfg_rt2.json"));
    EXPECT_EQ(back.nms.max_keep, 17u);
    EXPECT_DOUBLE_EQ(back.eval.threshold_for("car"), 0.5);
}

TEST(Config, BadFiles) {
    const auto p = DemoEnv::dir / "bad.json";
    std::ofstream(p) << "{\"voxel\": {\"voxel_size\": [0, 0.4, 0.4]}}";
    EXPECT_THROW(load_config(p), ParseError);
    std::ofstream(p) << "{\"anchors\": {\"classes\": [{\"name\": \"x\", \"size\": [1, 2]}]}}";
    EXPECT_THROW(load_config(p), ParseError);
    std::ofstream(p) << "{oops";
    EXPECT_THROW(load_config(p), ParseError);
    EXPECT_THROW(load_config(DemoEnv::dir / "missing.json"), IoError);
}
