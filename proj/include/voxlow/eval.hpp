#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "voxlow/geometry.hpp"

namespace voxlow {

/// One line of a detections or ground-truth file.
struct LabeledBox {
    std::string frame;
    std::string cls;
    double score = 1.0; // unused for ground truth
    Box3D box;
};

enum class IouMode { Bev, ThreeD };

/// Greedy score-ordered matching within (frame, class). Flags are aligned with `dets`.
std::vector<bool> match_detections(const std::vector<LabeledBox>& dets, const std::vector<LabeledBox>& gts,
                                   double iou_thresh, IouMode mode);

struct PrPoint {
    double recall = 0.0;
    double precision = 0.0;
};

struct PrCurve {
    std::vector<PrPoint> points; // one per detection, descending score
    int64_t n_gt = 0;
};

PrCurve pr_curve(const std::vector<bool>& tp, const std::vector<double>& scores, int64_t n_gt);

/// Interpolated AP sampled at n_points recall levels: i/n for i = 1..n, or 0, 0.1, ..., 1 when n == 11.
double average_precision(const std::vector<bool>& tp, const std::vector<double>& scores, int64_t n_gt,
                         int n_points = 40);

/// Area under the interpolated (monotone) precision envelope.
double average_precision_area(const std::vector<bool>& tp, const std::vector<double>& scores, int64_t n_gt);

struct EvalCfg {
    double default_iou = 0.3;
    std::map<std::string, double> iou_thresh; // per class override
    int n_points = 40;

    double threshold_for(const std::string& cls) const;
};

struct EvalReport {
    std::map<std::string, double> ap_3d;
    std::map<std::string, double> ap_bev;
    double map_3d = 0.0;
    double map_bev = 0.0;
};

EvalReport evaluate(const std::vector<LabeledBox>& dets, const std::vector<LabeledBox>& gts, const EvalCfg& cfg);
EvalReport evaluate(const std::filesystem::path& dets_file, const std::filesystem::path& gts_file, const EvalCfg& cfg);

/// JSON object {"AP_3D": {...}, "AP_BEV": {...}, "mAP_3D": x, "mAP_BEV": y}.
std::string report_json(const EvalReport& r);

/// JSON-lines I/O; `with_score` false for ground truth.
std::vector<LabeledBox> read_boxes(const std::filesystem::path& path, bool with_score);
std::string format_box_line(const LabeledBox& b, bool with_score);
void write_boxes(const std::vector<LabeledBox>& boxes, std::ostream& os, bool with_score);

/// printf "%.6g" with negative zero normalized.
std::string canonical_real(double v);

} // namespace voxlow
