#pragma once

#include <array>
#include <vector>

namespace sgvae {

using Vec3 = std::array<double, 3>;

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

using Polygon2 = std::vector<Point2>;

inline constexpr double kPi = 3.14159265358979323846;

// Maps any angle into (-pi, pi].
double wrap_angle(double radians);

// Gravity-aligned rigid placement: a center and a rotation about +z.
struct Pose {
  Vec3 center{0.0, 0.0, 0.0};
  double yaw = 0.0;

  static Pose identity() { return {}; }
};

// Full box extents (width along local x, depth along local y, height along z).
struct BoxShape {
  Vec3 size{1.0, 1.0, 1.0};

  bool valid() const { return size[0] > 0.0 && size[1] > 0.0 && size[2] > 0.0; }
};

// a∘b: b expressed in a's frame, mapped to a's parent frame.
Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);

// Rotates v about +z by yaw.
Vec3 rotate_z(const Vec3& v, double yaw);

// Footprint corners of a yaw-rotated box, counter-clockwise.
Polygon2 footprint(const Pose& pose, const BoxShape& shape);

double polygon_area(const Polygon2& poly);

// Intersection of two convex counter-clockwise polygons (Sutherland-Hodgman).
Polygon2 clip_convex(const Polygon2& subject, const Polygon2& clip);

// Anti-clockwise angle in [0, 2pi) of `child` seen from `parent`, measured
// from the parent's heading in the horizontal plane.
double heading_angle(const Pose& parent, const Vec3& child);

}  // namespace sgvae
