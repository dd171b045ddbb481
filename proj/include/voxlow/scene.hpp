#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "voxlow/eval.hpp"
#include "voxlow/graph.hpp"
#include "voxlow/pipeline.hpp"
#include "voxlow/voxelizer.hpp"

namespace voxlow {

/// Portable uniform draws (independent of the standard library's distribution implementations).
class SceneRng {
public:
    explicit SceneRng(uint64_t seed) : gen_(seed) {}
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    int64_t index(int64_t n) { return static_cast<int64_t>(uniform() * static_cast<double>(n)) % n; }

private:
    std::mt19937_64 gen_;
};

struct SyntheticFrame {
    std::string id;
    PointCloud cloud;
    std::vector<LabeledBox> truth;
};

/// Small grid used by the demo scene: 25.6 x 12.8 x 4.8 m at 0.4 m, one "car" class.
PipelineConfig demo_config();

/// Planted cars (yaw 0 or pi/2) sampled as point clusters, plus sparse low-power clutter.
std::vector<SyntheticFrame> synthetic_scene(const PipelineConfig& cfg, std::size_t frames, uint64_t seed);

/// Hand-built rank-5 detector for `demo_config()`: depth smoothing, a full-depth column count,
/// then matched footprint filters per anchor yaw. Outputs: class logits, zero residuals.
Graph toy_detector(const PipelineConfig& cfg);

/// Writes frames/*.csv, gt.jsonl, config.json, detector_g5.json and calib/*.vxw under `dir`.
void write_demo(const std::filesystem::path& dir, std::size_t frames, uint64_t seed);

} // namespace voxlow
