#include "voxlow/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "voxlow/graph.hpp"

namespace voxlow {

namespace {

std::vector<std::size_t> by_descending_score(const std::vector<double>& scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

// Interpolated precision at each recall: max precision at any recall >= r.
std::vector<PrPoint> envelope_of(const PrCurve& c) {
    std::vector<PrPoint> env = c.points;
    for (std::size_t i = env.size(); i-- > 1;) env[i - 1].precision = std::max(env[i - 1].precision, env[i].precision);
    return env;
}

double interpolated_at(const std::vector<PrPoint>& env, double r) {
    // Recalls are non-decreasing; the envelope is non-increasing.
    for (const auto& p : env) {
        if (p.recall >= r) return p.precision;
    }
    return 0.0;
}

} // namespace

std::vector<bool> match_detections(const std::vector<LabeledBox>& dets, const std::vector<LabeledBox>& gts,
                                   double iou_thresh, IouMode mode) {
    std::vector<double> scores;
    for (const auto& d : dets) scores.push_back(d.score);
    std::vector<bool> used(gts.size(), false);
    std::vector<bool> tp(dets.size(), false);

    for (std::size_t i : by_descending_score(scores)) {
        const LabeledBox& d = dets[i];
        double best = -1.0;
        std::size_t best_g = gts.size();
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (used[g] || gts[g].frame != d.frame || gts[g].cls != d.cls) continue;
            const double iou =
                mode == IouMode::Bev ? rotated_iou_bev(d.box.bev, gts[g].box.bev) : iou_3d(d.box, gts[g].box);
            if (iou > best) {
                best = iou;
                best_g = g;
            }
        }
        if (best_g < gts.size() && best >= iou_thresh) {
            used[best_g] = true;
            tp[i] = true;
        }
    }
    return tp;
}

PrCurve pr_curve(const std::vector<bool>& tp, const std::vector<double>& scores, int64_t n_gt) {
    PrCurve c;
    c.n_gt = n_gt;
    int64_t hits = 0, seen = 0;
    for (std::size_t i : by_descending_score(scores)) {
        ++seen;
        if (tp[i]) ++hits;
        const double recall = n_gt > 0 ? static_cast<double>(hits) / static_cast<double>(n_gt) : 0.0;
        c.points.push_back({recall, static_cast<double>(hits) / static_cast<double>(seen)});
    }
    return c;
}

double average_precision(const std::vector<bool>& tp, const std::vector<double>& scores, int64_t n_gt,
                         int n_points) {
    if (n_gt == 0) return tp.empty() ? 1.0 : 0.0;
    if (tp.empty()) return 0.0;
    const auto env = envelope_of(pr_curve(tp, scores, n_gt));
    double sum = 0.0;
    if (n_points == 11) {
        for (int i = 0; i <= 10; ++i) sum += interpolated_at(env, i / 10.0);
        return sum / 11.0;
    }
    for (int i = 1; i <= n_points; ++i) sum += interpolated_at(env, static_cast<double>(i) / n_points);
    return sum / n_points;
}

double average_precision_area(const std::vector<bool>& tp, const std::vector<double>& scores, int64_t n_gt) {
    if (n_gt == 0) return tp.empty() ? 1.0 : 0.0;
    if (tp.empty()) return 0.0;
    const auto env = envelope_of(pr_curve(tp, scores, n_gt));
    double area = 0.0, prev = 0.0;
    for (const auto& p : env) {
        area += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    return area;
}

double EvalCfg::threshold_for(const std::string& cls) const {
    auto it = iou_thresh.find(cls);
    return it == iou_thresh.end() ? default_iou : it->second;
}

EvalReport evaluate(const std::vector<LabeledBox>& dets, const std::vector<LabeledBox>& gts, const EvalCfg& cfg) {
    std::set<std::string> classes;
    for (const auto& g : gts) classes.insert(g.cls);
    for (const auto& d : dets) classes.insert(d.cls);

    EvalReport rep;
    for (const auto& cls : classes) {
        std::vector<LabeledBox> cd, cg;
        for (const auto& d : dets)
            if (d.cls == cls) cd.push_back(d);
        for (const auto& g : gts)
            if (g.cls == cls) cg.push_back(g);
        std::vector<double> scores;
        for (const auto& d : cd) scores.push_back(d.score);
        const double thr = cfg.threshold_for(cls);
        const auto n_gt = static_cast<int64_t>(cg.size());
        rep.ap_3d[cls] = average_precision(match_detections(cd, cg, thr, IouMode::ThreeD), scores, n_gt, cfg.n_points);
        rep.ap_bev[cls] = average_precision(match_detections(cd, cg, thr, IouMode::Bev), scores, n_gt, cfg.n_points);
    }
    if (!classes.empty()) {
        for (const auto& cls : classes) {
            rep.map_3d += rep.ap_3d[cls];
            rep.map_bev += rep.ap_bev[cls];
        }
        rep.map_3d /= static_cast<double>(classes.size());
        rep.map_bev /= static_cast<double>(classes.size());
    }
    return rep;
}

EvalReport evaluate(const std::filesystem::path& dets_file, const std::filesystem::path& gts_file, const EvalCfg& cfg) {
    return evaluate(read_boxes(dets_file, true), read_boxes(gts_file, false), cfg);
}

std::string canonical_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    std::string s(buf);
    if (s == "-0") s = "0";
    return s;
}

std::string report_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["AP_3D"] = r.ap_3d;
    j["AP_BEV"] = r.ap_bev;
    j["mAP_3D"] = r.map_3d;
    j["mAP_BEV"] = r.map_bev;
    return j.dump(2);
}

std::string format_box_line(const LabeledBox& b, bool with_score) {
    std::ostringstream os;
    os << "{\"frame\": " << nlohmann::json(b.frame).dump() << ", \"class\": " << nlohmann::json(b.cls).dump();
    if (with_score) os << ", \"score\": " << canonical_real(b.score);
    const double v[7] = {b.box.bev.cx, b.box.bev.cy, b.box.z, b.box.bev.w, b.box.bev.l, b.box.h, b.box.bev.yaw};
    os << ", \"box\": [";
    for (int i = 0; i < 7; ++i) os << (i ? ", " : "") << canonical_real(v[i]);
    os << "]}";
    return os.str();
}

void write_boxes(const std::vector<LabeledBox>& boxes, std::ostream& os, bool with_score) {
    for (const auto& b : boxes) os << format_box_line(b, with_score) << '\n';
}

std::vector<LabeledBox> read_boxes(const std::filesystem::path& path, bool with_score) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    std::vector<LabeledBox> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string ctx = path.string() + ": line " + std::to_string(lineno);
        try {
            const auto j = nlohmann::json::parse(line);
            LabeledBox b;
            const auto& f = j.at("frame");
            b.frame = f.is_string() ? f.get<std::string>() : f.dump();
            b.cls = j.at("class").get<std::string>();
            if (with_score) {
                b.score = j.at("score").get<double>();
                if (!(b.score >= 0.0 && b.score <= 1.0)) throw ParseError(ctx + ": score outside [0, 1]");
            }
            const auto box = j.at("box").get<std::vector<double>>();
            if (box.size() != 7) throw ParseError(ctx + ": box must have 7 values [cx, cy, z, w, l, h, yaw]");
            b.box = Box3D{{box[0], box[1], box[3], box[4], box[6]}, box[2], box[5]};
            if (!(b.box.bev.w > 0 && b.box.bev.l > 0 && b.box.h > 0)) throw ParseError(ctx + ": box extents must be positive");
            out.push_back(std::move(b));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(ctx + ": " + e.what());
        }
    }
    return out;
}

} // namespace voxlow
