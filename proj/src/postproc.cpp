#include "voxlow/postproc.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace voxlow {

int AnchorCfg::anchors_per_cell() const {
    int a = 0;
    for (const auto& c : classes) a += static_cast<int>(c.yaw_set.size());
    return a;
}

void AnchorCfg::check() const {
    if (classes.empty()) throw std::invalid_argument("anchors: at least one class is required");
    for (const auto& c : classes) {
        if (!(c.w > 0 && c.l > 0 && c.h > 0)) throw std::invalid_argument("anchors: sizes of '" + c.name + "' must be positive");
        if (c.yaw_set.empty()) throw std::invalid_argument("anchors: yaw_set of '" + c.name + "' is empty");
    }
    if (!(stride > 0)) throw std::invalid_argument("anchors: stride must be positive");
    if (!(score_threshold >= 0.0 && score_threshold <= 1.0)) {
        throw std::invalid_argument("anchors: score_threshold must be in [0, 1]");
    }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<Anchor> generate_anchors(int64_t hg, int64_t wg, const AnchorCfg& cfg) {
    cfg.check();
    std::vector<Anchor> out;
    out.reserve(static_cast<std::size_t>(hg * wg * cfg.anchors_per_cell()));
    for (int64_t r = 0; r < hg; ++r)
        for (int64_t c = 0; c < wg; ++c) {
            const double x = cfg.origin[0] + (static_cast<double>(c) + 0.5) * cfg.stride;
            const double y = cfg.origin[1] + (static_cast<double>(r) + 0.5) * cfg.stride;
            for (std::size_t k = 0; k < cfg.classes.size(); ++k) {
                const auto& cls = cfg.classes[k];
                for (double yaw : cls.yaw_set) {
                    out.push_back({Box3D{{x, y, cls.w, cls.l, normalize_yaw(yaw)}, cls.z_center, cls.h},
                                   static_cast<int>(k)});
                }
            }
        }
    return out;
}

HeadOutput make_head(const Tensor& cls, const Tensor& reg) {
    auto squeeze = [](const Tensor& t) {
        if (t.rank() == 3) return t;
        if (t.rank() == 4 && t.shape()[0] == 1) return reshape(t, Shape{t.shape()[1], t.shape()[2], t.shape()[3]});
        throw ShapeError("head map must be (C,Hg,Wg) or (1,C,Hg,Wg), got " + t.shape().str());
    };
    return {squeeze(cls), squeeze(reg)};
}

std::vector<Detection> decode(const HeadOutput& head, const std::vector<Anchor>& anchors, const AnchorCfg& cfg) {
    const Shape& cs = head.cls.shape();
    const Shape& rs = head.reg.shape();
    if (cs.rank() != 3 || rs.rank() != 3 || cs[1] != rs[1] || cs[2] != rs[2]) {
        throw ShapeError("head maps disagree: " + cs.str() + " vs " + rs.str());
    }
    const int64_t A = cfg.anchors_per_cell();
    const int64_t K = static_cast<int64_t>(cfg.classes.size());
    const int64_t Hg = cs[1], Wg = cs[2];
    if (cs[0] != A * K || rs[0] != A * 7) {
        throw ShapeError("head channels " + cs.str() + "/" + rs.str() + " do not match " + std::to_string(A) +
                         " anchors x " + std::to_string(K) + " classes");
    }
    if (static_cast<int64_t>(anchors.size()) != Hg * Wg * A) {
        throw ShapeError("anchor count " + std::to_string(anchors.size()) + " does not match head grid");
    }

    const int64_t plane = Hg * Wg;
    auto cls = head.cls.data();
    auto reg = head.reg.data();
    std::vector<Detection> out;
    for (int64_t cell = 0; cell < plane; ++cell) {
        for (int64_t a = 0; a < A; ++a) {
            int best_k = 0;
            double best = -1.0;
            for (int64_t k = 0; k < K; ++k) {
                const double s = sigmoid(cls[static_cast<std::size_t>((a * K + k) * plane + cell)]);
                if (s > best) {
                    best = s;
                    best_k = static_cast<int>(k);
                }
            }
            if (best < cfg.score_threshold) continue;

            const Box3D& an = anchors[static_cast<std::size_t>(cell * A + a)].box;
            double r[7];
            for (int i = 0; i < 7; ++i) r[i] = reg[static_cast<std::size_t>((a * 7 + i) * plane + cell)];
            const double diag = std::hypot(an.bev.w, an.bev.l);
            Detection d;
            d.cls = best_k;
            d.score = best;
            d.box.bev.cx = an.bev.cx + r[0] * diag;
            d.box.bev.cy = an.bev.cy + r[1] * diag;
            d.box.z = an.z + r[2] * an.h;
            d.box.bev.w = an.bev.w * std::exp(r[3]);
            d.box.bev.l = an.bev.l * std::exp(r[4]);
            d.box.h = an.h * std::exp(r[5]);
            d.box.bev.yaw = normalize_yaw(an.bev.yaw + r[6]);
            out.push_back(d);
        }
    }
    return out;
}

namespace {

template <class Iou>
std::vector<std::size_t> greedy(const std::vector<std::size_t>& order, double thresh, Iou iou) {
    std::vector<std::size_t> keep;
    for (std::size_t i : order) {
        bool suppressed = false;
        for (std::size_t k : keep) {
            const double v = iou(k, i);
            if (v > 0.0 && v >= thresh) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) keep.push_back(i);
    }
    return keep;
}

} // namespace

std::vector<Detection> nms_two_stage(const std::vector<Detection>& dets, const NmsCfg& cfg) {
    if (!(cfg.t_aabb >= 0 && cfg.t_aabb <= 1 && cfg.t_rot >= 0 && cfg.t_rot <= 1)) {
        throw std::invalid_argument("nms thresholds must lie in [0, 1]");
    }
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i : order) by_class[dets[i].cls].push_back(i);

    std::vector<Rect> env(dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i) env[i] = envelope(dets[i].box.bev);

    std::vector<std::size_t> kept;
    for (const auto& [cls, idx] : by_class) {
        const auto stage1 =
            greedy(idx, cfg.t_aabb, [&](std::size_t a, std::size_t b) { return aabb_iou(env[a], env[b]); });
        const auto stage2 = greedy(stage1, cfg.t_rot, [&](std::size_t a, std::size_t b) {
            return rotated_iou_bev(dets[a].box.bev, dets[b].box.bev);
        });
        kept.insert(kept.end(), stage2.begin(), stage2.end());
    }
    std::sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) {
        if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
        return a < b;
    });
    if (kept.size() > cfg.max_keep) kept.resize(cfg.max_keep);

    std::vector<Detection> out;
    out.reserve(kept.size());
    for (std::size_t i : kept) out.push_back(dets[i]);
    return out;
}

} // namespace voxlow
