#include "voxlow/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <tuple>

namespace voxlow {

namespace {

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

Vec2 line_hit(const Vec2& p, const Vec2& q, const Vec2& a, const Vec2& b) {
    // Intersection of segment p->q with the infinite line a->b.
    const double dp = cross(a, b, p);
    const double dq = cross(a, b, q);
    const double t = dp / (dp - dq);
    return {p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)};
}

Polygon as_polygon(const RotatedBox2D& b) {
    const auto c = corners(b);
    return {c.begin(), c.end()};
}

auto box_key(const RotatedBox2D& b) { return std::tie(b.cx, b.cy, b.w, b.l, b.yaw); }

} // namespace

double normalize_yaw(double yaw) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double r = std::fmod(yaw, two_pi);
    if (r <= -std::numbers::pi) r += two_pi;
    if (r > std::numbers::pi) r -= two_pi;
    return r;
}

std::array<Vec2, 4> corners(const RotatedBox2D& b) {
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    const double hl = 0.5 * b.l, hw = 0.5 * b.w;
    const std::array<Vec2, 4> local{{{hl, -hw}, {hl, hw}, {-hl, hw}, {-hl, -hw}}};
    std::array<Vec2, 4> out;
    for (std::size_t i = 0; i < 4; ++i) {
        out[i] = {b.cx + c * local[i].x - s * local[i].y, b.cy + s * local[i].x + c * local[i].y};
    }
    return out;
}

double polygon_area(const Polygon& p) {
    if (p.size() < 3) return 0.0;
    double a = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Vec2& u = p[i];
        const Vec2& v = p[(i + 1) % p.size()];
        a += u.x * v.y - v.x * u.y;
    }
    return 0.5 * a;
}

Rect envelope(const RotatedBox2D& b) {
    const auto c = corners(b);
    Rect r{c[0].x, c[0].y, c[0].x, c[0].y};
    for (const auto& v : c) {
        r.x0 = std::min(r.x0, v.x);
        r.y0 = std::min(r.y0, v.y);
        r.x1 = std::max(r.x1, v.x);
        r.y1 = std::max(r.y1, v.y);
    }
    return r;
}

double aabb_iou(const Rect& a, const Rect& b) {
    const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
    const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    return inter / (a.area() + b.area() - inter);
}

Polygon convex_clip(const Polygon& subject, const Polygon& clip) {
    Polygon out = subject;
    for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
        const Vec2& a = clip[e];
        const Vec2& b = clip[(e + 1) % clip.size()];
        Polygon in = std::move(out);
        out.clear();
        for (std::size_t i = 0; i < in.size(); ++i) {
            const Vec2& p = in[i];
            const Vec2& q = in[(i + 1) % in.size()];
            const bool p_in = cross(a, b, p) >= 0.0;
            const bool q_in = cross(a, b, q) >= 0.0;
            if (p_in) out.push_back(p);
            if (p_in != q_in) out.push_back(line_hit(p, q, a, b));
        }
    }
    if (out.size() < 3 || polygon_area(out) < kSliverArea) return {};
    return out;
}

double bev_intersection_area(const RotatedBox2D& a, const RotatedBox2D& b) {
    // Fixed operand order so the result does not depend on argument order.
    const bool swap = box_key(b) < box_key(a);
    const Polygon& pa = as_polygon(swap ? b : a);
    const Polygon& pb = as_polygon(swap ? a : b);
    return std::max(0.0, polygon_area(convex_clip(pa, pb)));
}

double rotated_iou_bev(const RotatedBox2D& a, const RotatedBox2D& b) {
    const double inter = bev_intersection_area(a, b);
    if (inter <= 0.0) return 0.0;
    const double uni = a.w * a.l + b.w * b.l - inter;
    return std::clamp(inter / uni, 0.0, 1.0);
}

double iou_3d(const Box3D& a, const Box3D& b) {
    const double dz = std::min(a.top(), b.top()) - std::max(a.bottom(), b.bottom());
    if (dz <= 0.0) return 0.0;
    const double inter = bev_intersection_area(a.bev, b.bev) * dz;
    if (inter <= 0.0) return 0.0;
    const double va = a.bev.w * a.bev.l * a.h;
    const double vb = b.bev.w * b.bev.l * b.h;
    return std::clamp(inter / (va + vb - inter), 0.0, 1.0);
}

} // namespace voxlow
