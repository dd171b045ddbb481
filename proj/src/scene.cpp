#include "voxlow/scene.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

namespace voxlow {

namespace {

constexpr double kCarW = 1.8, kCarL = 4.0, kCarH = 1.6, kCarZ = -0.4;

void sample_box(const Box3D& b, int64_t n, SceneRng& rng, PointCloud& cloud) {
    const double c = std::cos(b.bev.yaw), s = std::sin(b.bev.yaw);
    for (int64_t i = 0; i < n; ++i) {
        const double u = rng.uniform(-0.5, 0.5) * b.bev.l;
        const double v = rng.uniform(-0.5, 0.5) * b.bev.w;
        RadarPoint p;
        p.x = b.bev.cx + c * u - s * v;
        p.y = b.bev.cy + s * u + c * v;
        p.z = b.z + rng.uniform(-0.5, 0.5) * b.h;
        p.features = {rng.uniform(0.5, 1.0)};
        cloud.points.push_back(std::move(p));
    }
}

} // namespace

PipelineConfig demo_config() {
    PipelineConfig c;
    c.voxel.roi_min = {0.0, -6.4, -2.0};
    c.voxel.roi_max = {25.6, 6.4, 2.8};
    c.voxel.voxel_size = {0.4, 0.4, 0.4};
    c.voxel.aggregation = {Aggregation::Mean};
    c.voxel.include_occupancy = true;
    c.anchors.classes = {AnchorClass{"car", kCarW, kCarL, kCarH, kCarZ, {0.0, std::numbers::pi / 2}}};
    c.anchors.stride = 0.4;
    c.anchors.origin = {0.0, -6.4};
    c.anchors.score_threshold = 0.3;
    return c;
}

std::vector<SyntheticFrame> synthetic_scene(const PipelineConfig& cfg, std::size_t frames, uint64_t seed) {
    SceneRng rng(seed);
    const auto& roi_min = cfg.voxel.roi_min;
    const auto& roi_max = cfg.voxel.roi_max;
    std::vector<SyntheticFrame> out;
    for (std::size_t f = 0; f < frames; ++f) {
        SyntheticFrame frame;
        char id[32];
        std::snprintf(id, sizeof id, "frame_%03zu", f);
        frame.id = id;

        const int64_t cars = 1 + rng.index(3);
        std::vector<Box3D> placed;
        for (int attempt = 0; attempt < 200 && static_cast<int64_t>(placed.size()) < cars; ++attempt) {
            Box3D b;
            b.bev.cx = rng.uniform(roi_min[0] + 3.0, roi_max[0] - 3.0);
            b.bev.cy = rng.uniform(roi_min[1] + 2.5, roi_max[1] - 2.5);
            b.bev.w = kCarW;
            b.bev.l = kCarL;
            b.bev.yaw = rng.uniform() < 0.5 ? 0.0 : std::numbers::pi / 2;
            b.z = kCarZ;
            b.h = kCarH;
            bool clear = true;
            for (const auto& o : placed) {
                if (std::hypot(o.bev.cx - b.bev.cx, o.bev.cy - b.bev.cy) < 6.0) clear = false;
            }
            if (clear) placed.push_back(b);
        }
        for (const auto& b : placed) {
            sample_box(b, 50 + rng.index(30), rng, frame.cloud);
            frame.truth.push_back({frame.id, "car", 1.0, b});
        }
        for (int i = 0; i < 30; ++i) {
            RadarPoint p;
            p.x = rng.uniform(roi_min[0], roi_max[0]);
            p.y = rng.uniform(roi_min[1], roi_max[1]);
            p.z = rng.uniform(roi_min[2], roi_max[2]);
            p.features = {rng.uniform(0.0, 0.3)};
            frame.cloud.points.push_back(std::move(p));
        }
        for (int i = 0; i < 5; ++i) {
            RadarPoint p;
            p.x = rng.uniform(roi_max[0] + 0.5, roi_max[0] + 5.0);
            p.y = rng.uniform(roi_min[1], roi_max[1]);
            p.z = rng.uniform(roi_min[2], roi_max[2]);
            p.features = {rng.uniform(0.0, 1.0)};
            frame.cloud.points.push_back(std::move(p));
        }
        out.push_back(std::move(frame));
    }
    return out;
}

Graph toy_detector(const PipelineConfig& cfg) {
    const auto [W, H, D] = cfg.voxel.extents();
    const int64_t C = cfg.voxel.channels();
    if (!cfg.voxel.include_occupancy) throw std::invalid_argument("toy detector needs the occupancy channel");
    const int64_t A = cfg.anchors.anchors_per_cell();
    const int64_t K = static_cast<int64_t>(cfg.anchors.classes.size());
    if (K != 1 || A != 2) throw std::invalid_argument("toy detector expects one class with two yaws");

    Graph g;
    g.inputs.push_back({"voxels", Shape{1, C, D, H, W}});

    // Depth smoothing: identity on occupancy, 1-2-1 blur on features.
    Tensor smooth_w{Shape{C, C, 3, 1, 1}};
    smooth_w.at({0, 0, 1, 0, 0}) = 1.0f;
    for (int64_t c = 1; c < C; ++c) {
        smooth_w.at({c, c, 0, 0, 0}) = 0.25f;
        smooth_w.at({c, c, 1, 0, 0}) = 0.5f;
        smooth_w.at({c, c, 2, 0, 0}) = 0.25f;
    }
    g.weights.emplace("smooth.w", smooth_w);
    g.weights.emplace("smooth.w.bias", Tensor{Shape{C}});
    g.nodes.push_back({"smooth", Conv3DAttrs{C, {3, 1, 1}, {1, 1, 1}, {1, 0, 0}}, {"voxels"}, "smooth.w", ""});

    // Occupied voxels per BEV column.
    Tensor bev_w{Shape{1, C, D, 1, 1}};
    for (int64_t d = 0; d < D; ++d) bev_w.at({0, 0, d, 0, 0}) = 1.0f;
    g.weights.emplace("bev.w", bev_w);
    g.weights.emplace("bev.w.bias", Tensor{Shape{1}});
    g.nodes.push_back({"bev", Conv3DAttrs{1, {D, 1, 1}, {1, 1, 1}, {0, 0, 0}}, {"smooth"}, "bev.w", ""});
    g.nodes.push_back({"bev_act", ReluAttrs{}, {"bev"}, "", ""});

    // Footprint filters: +1 inside the anchor footprint, -1 in the surrounding window.
    const int64_t k = 11, half = k / 2;
    const auto& car = cfg.anchors.classes.front();
    const auto half_l = static_cast<int64_t>(std::floor(0.5 * car.l / cfg.anchors.stride + 1e-9));
    const auto half_w = static_cast<int64_t>(std::floor(0.5 * car.w / cfg.anchors.stride + 1e-9));
    const int64_t out_ch = A * K + A * 7;
    Tensor head_w{Shape{out_ch, 1, 1, k, k}};
    Tensor head_b{Shape{out_ch}};
    for (int64_t a = 0; a < A; ++a) {
        const bool along_x = std::abs(std::sin(car.yaw_set[static_cast<std::size_t>(a)])) < 0.5;
        for (int64_t i = 0; i < k; ++i)
            for (int64_t j = 0; j < k; ++j) {
                const int64_t dy = std::abs(i - half), dx = std::abs(j - half);
                const bool inside = along_x ? (dx <= half_l && dy <= half_w) : (dy <= half_l && dx <= half_w);
                head_w.at({a, 0, 0, i, j}) = inside ? 0.25f : -0.25f;
            }
        head_b.at({a}) = -3.0f;
    }
    g.weights.emplace("head.w", head_w);
    g.weights.emplace("head.w.bias", head_b);
    g.nodes.push_back({"head", Conv3DAttrs{out_ch, {1, k, k}, {1, 1, 1}, {0, half, half}}, {"bev_act"}, "head.w", ""});
    g.nodes.push_back({"cls", ChannelSliceAttrs{0, A * K}, {"head"}, "", ""});
    g.nodes.push_back({"reg", ChannelSliceAttrs{A * K, A * 7}, {"head"}, "", ""});
    g.outputs = {"cls", "reg"};
    return g;
}

void write_demo(const std::filesystem::path& dir, std::size_t frames, uint64_t seed) {
    namespace fs = std::filesystem;
    const PipelineConfig cfg = demo_config();
    fs::create_directories(dir / "frames");
    fs::create_directories(dir / "calib");
    save_config(cfg, dir / "config.json");
    save_graph(toy_detector(cfg), dir / "detector_g5.json");

    std::ofstream gt(dir / "gt.jsonl");
    if (!gt) throw IoError("cannot write '" + (dir / "gt.jsonl").string() + "'");
    for (const auto& f : synthetic_scene(cfg, frames, seed)) {
        save_points(f.cloud, dir / "frames" / (f.id + ".csv"));
        write_boxes(f.truth, gt, false);
        save_tensors({{"voxels", voxelize(f.cloud, cfg.voxel)}}, dir / "calib" / (f.id + ".vxw"));
    }
}

} // namespace voxlow
