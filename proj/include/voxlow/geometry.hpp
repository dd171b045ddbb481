#pragma once

#include <array>
#include <vector>

namespace voxlow {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

using Polygon = std::vector<Vec2>;

/// Yaw-rotated BEV rectangle. `l` runs along the heading, `w` across it.
struct RotatedBox2D {
    double cx = 0.0;
    double cy = 0.0;
    double w = 1.0;
    double l = 1.0;
    double yaw = 0.0; // radians, counterclockwise from +x
};

struct Box3D {
    RotatedBox2D bev;
    double z = 0.0; // center height
    double h = 1.0;

    double bottom() const { return z - 0.5 * h; }
    double top() const { return z + 0.5 * h; }
};

struct Rect {
    double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
    double area() const { return (x1 - x0) * (y1 - y0); }
};

inline constexpr double kSliverArea = 1e-12;

/// Maps an angle to (-pi, pi].
double normalize_yaw(double yaw);

/// Four vertices, counterclockwise.
std::array<Vec2, 4> corners(const RotatedBox2D& b);

/// Signed shoelace area (positive for counterclockwise).
double polygon_area(const Polygon& p);

/// Axis-aligned envelope of a rotated box.
Rect envelope(const RotatedBox2D& b);

double aabb_iou(const Rect& a, const Rect& b);

/// Sutherland-Hodgman intersection of two convex counterclockwise polygons.
/// Touching edges and slivers below kSliverArea give an empty polygon.
Polygon convex_clip(const Polygon& subject, const Polygon& clip);

double bev_intersection_area(const RotatedBox2D& a, const RotatedBox2D& b);
double rotated_iou_bev(const RotatedBox2D& a, const RotatedBox2D& b);
double iou_3d(const Box3D& a, const Box3D& b);

} // namespace voxlow
