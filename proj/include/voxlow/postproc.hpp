#pragma once

#include <array>
#include <string>
#include <vector>

#include "voxlow/geometry.hpp"
#include "voxlow/tensor.hpp"

namespace voxlow {

struct AnchorClass {
    std::string name;
    double w = 1.8, l = 4.2, h = 1.6; // meters
    double z_center = 0.0;
    std::vector<double> yaw_set{0.0, 1.5707963267948966};
};

struct AnchorCfg {
    std::vector<AnchorClass> classes;
    double stride = 0.4;               // meters per head cell
    std::array<double, 2> origin{0.0, 0.0}; // metric position of the grid's (0,0) corner (x, y)
    double score_threshold = 0.3;

    /// Anchors per cell (sum of yaw-set sizes over classes).
    int anchors_per_cell() const;
    void check() const;
};

struct Anchor {
    Box3D box;
    int cls = 0; // index into AnchorCfg::classes
};

struct Detection {
    int cls = 0;
    double score = 0.0;
    Box3D box;
};

/// Pre-sigmoid class map (A*K, Hg, Wg) and residual map (A*7, Hg, Wg).
/// Channel of class k for anchor a is a*K + k; residual r of anchor a is a*7 + r.
struct HeadOutput {
    Tensor cls;
    Tensor reg;
};

/// Ordering: row-major cells, then class, then yaw. Cell (r, c) is centered at
/// origin + ((c + 0.5) * stride, (r + 0.5) * stride).
std::vector<Anchor> generate_anchors(int64_t hg, int64_t wg, const AnchorCfg& cfg);

/// Accepts head maps with or without a leading batch axis of 1.
HeadOutput make_head(const Tensor& cls, const Tensor& reg);

/// Residual decoding; each anchor yields at most one detection (best class by score).
std::vector<Detection> decode(const HeadOutput& head, const std::vector<Anchor>& anchors, const AnchorCfg& cfg);

struct NmsCfg {
    double t_aabb = 0.7;
    double t_rot = 0.3;
    std::size_t max_keep = 100;
};

/// Per-class greedy NMS on axis-aligned envelopes, then on rotated BEV IoU among survivors.
/// A candidate is suppressed when it overlaps a kept box with IoU >= the threshold; boxes that do
/// not overlap at all are never suppressed, even at threshold 0.
/// Output is sorted by descending score, ties by input order, truncated to max_keep.
std::vector<Detection> nms_two_stage(const std::vector<Detection>& dets, const NmsCfg& cfg);

double sigmoid(double x);

} // namespace voxlow
