#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxlow/eval.hpp"
#include "voxlow/graph.hpp"
#include "voxlow/postproc.hpp"
#include "voxlow/voxelizer.hpp"

namespace voxlow {

/// The graph cannot run on a rank-4 target; carries the check_rank4 violations.
class RefusedGraph : public std::runtime_error {
public:
    explicit RefusedGraph(std::vector<std::string> violations);
    const std::vector<std::string>& violations() const { return violations_; }

private:
    std::vector<std::string> violations_;
};

struct PipelineConfig {
    VoxelGridCfg voxel;
    AnchorCfg anchors;
    NmsCfg nms;
    EvalCfg eval;
    std::size_t cls_output = 0; // index into the graph outputs
    std::size_t reg_output = 1;

    std::vector<std::string> class_names() const;
};

/// Defaults for a front-field radar grid; every value is an artifact default, not a measured one.
PipelineConfig default_config();
PipelineConfig load_config(const std::filesystem::path& path);
void save_config(const PipelineConfig& cfg, const std::filesystem::path& path);

struct StageTiming {
    double pre_s = 0.0;
    double net_s = 0.0;
    double post_s = 0.0;
    double transfer_overhead_s = 0.0;
};

enum class PipelineMode { Sequential, Staged };

struct FpsEstimate {
    double theoretical_fps = 0.0;
    double effective_fps = 0.0;
};

/// theoretical = 1/(pre+net+post); sequential effective = 1/(pre+net+post+overhead);
/// staged effective = 1/(max(pre,net,post) + overhead). Throws on a zero-length frame.
FpsEstimate fps_model(const StageTiming& t, PipelineMode mode);

struct StageStats {
    double mean = 0.0;
    double p95 = 0.0;
    double min = 0.0;
    double max = 0.0;
};

struct PipelineReport {
    std::vector<StageTiming> samples;
    std::vector<double> io_samples; // point-file loading, kept out of pre_s
    std::vector<double> completion_s; // per frame, seconds from run start to leaving post
    std::size_t frames = 0;
    PipelineMode mode = PipelineMode::Sequential;
    double theoretical_fps = 0.0;
    double effective_fps = 0.0;
    std::string bottleneck;
    StageStats pre, net, post, transfer, io;
    double measured_fps = 0.0;        // frames / wall time of the compute stages
    double theoretical_fps_with_io = 0.0;
    int max_infer_rank = 0;           // largest tensor rank seen by the executor
    bool simulated = false;
};

struct FrameDetections {
    std::string frame;
    std::vector<Detection> dets;
};

struct PipelineOptions {
    PipelineMode mode = PipelineMode::Sequential;
    std::size_t handoff_capacity = 1;
};

struct PipelineResult {
    std::vector<FrameDetections> detections; // ordered by frame
    PipelineReport report;
};

/// voxelize -> fold -> run_graph -> decode + NMS per frame. Refuses graphs that fail check_rank4.
PipelineResult run_pipeline(const std::vector<std::filesystem::path>& frames, const Graph& g4,
                            const PipelineConfig& cfg, const PipelineOptions& opts = {});

/// Point files (*.csv) in a directory, sorted by name.
std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir);

/// Runs the pipeline `repeats` times and aggregates per-stage statistics.
PipelineReport bench(const std::vector<std::filesystem::path>& frames, const Graph& g4, const PipelineConfig& cfg,
                     int repeats, const PipelineOptions& opts = {});

/// Drives the same stage machinery with injected fixed delays instead of compute.
/// FPS figures come from fps_model on the injected timing; measured statistics are reported alongside.
PipelineReport bench_simulated(const StageTiming& injected, std::size_t frames, const PipelineOptions& opts = {});

/// Mean spacing of frame completions once `warmup` frames have finished; 0 if too few frames.
double steady_period(const PipelineReport& r, std::size_t warmup = 3);

std::string report_json(const PipelineReport& r);

/// Flattens per-frame detections to file records using the configured class names.
std::vector<LabeledBox> to_labeled(const std::vector<FrameDetections>& dets, const PipelineConfig& cfg);

/// Sleeps until `seconds` have elapsed, spinning for the final stretch.
void precise_delay(double seconds);

} // namespace voxlow
