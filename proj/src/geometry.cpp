#include "sgvae/geometry.hpp"

#include <cmath>

namespace sgvae {

double wrap_angle(double radians) {
  if (!std::isfinite(radians)) return radians;
  double r = std::remainder(radians, 2.0 * kPi);  // [-pi, pi]
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

Vec3 rotate_z(const Vec3& v, double yaw) {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  return {c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]};
}

Pose compose(const Pose& a, const Pose& b) {
  const Vec3 t = rotate_z(b.center, a.yaw);
  return {{a.center[0] + t[0], a.center[1] + t[1], a.center[2] + t[2]},
          wrap_angle(a.yaw + b.yaw)};
}

Pose inverse(const Pose& p) {
  const Vec3 t = rotate_z(p.center, -p.yaw);
  return {{-t[0], -t[1], -t[2]}, wrap_angle(-p.yaw)};
}

Polygon2 footprint(const Pose& pose, const BoxShape& shape) {
  const double hx = 0.5 * shape.size[0];
  const double hy = 0.5 * shape.size[1];
  const double c = std::cos(pose.yaw);
  const double s = std::sin(pose.yaw);
  const double local[4][2] = {{-hx, -hy}, {hx, -hy}, {hx, hy}, {-hx, hy}};
  Polygon2 out;
  out.reserve(4);
  for (const auto& q : local) {
    out.push_back({pose.center[0] + c * q[0] - s * q[1],
                   pose.center[1] + s * q[0] + c * q[1]});
  }
  return out;
}

double polygon_area(const Polygon2& poly) {
  if (poly.size() < 3) return 0.0;
  double twice = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point2& p = poly[i];
    const Point2& q = poly[(i + 1) % poly.size()];
    twice += p.x * q.y - q.x * p.y;
  }
  return 0.5 * std::abs(twice);
}

namespace {

double cross(const Point2& a, const Point2& b, const Point2& p) {
  return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
}

Point2 segment_line_intersection(const Point2& p, const Point2& q,
                                 const Point2& a, const Point2& b) {
  const double dp = cross(a, b, p);
  const double dq = cross(a, b, q);
  const double t = dp / (dp - dq);
  return {p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)};
}

}  // namespace

Polygon2 clip_convex(const Polygon2& subject, const Polygon2& clip) {
  Polygon2 output = subject;
  for (std::size_t i = 0; i < clip.size() && !output.empty(); ++i) {
    const Point2& a = clip[i];
    const Point2& b = clip[(i + 1) % clip.size()];
    Polygon2 input;
    input.swap(output);
    for (std::size_t j = 0; j < input.size(); ++j) {
      const Point2& cur = input[j];
      const Point2& prev = input[(j + input.size() - 1) % input.size()];
      const bool cur_in = cross(a, b, cur) >= 0.0;
      const bool prev_in = cross(a, b, prev) >= 0.0;
      if (cur_in) {
        if (!prev_in) output.push_back(segment_line_intersection(prev, cur, a, b));
        output.push_back(cur);
      } else if (prev_in) {
        output.push_back(segment_line_intersection(prev, cur, a, b));
      }
    }
  }
  return output;
}

double heading_angle(const Pose& parent, const Vec3& child) {
  const Vec3 d{child[0] - parent.center[0], child[1] - parent.center[1], 0.0};
  const Vec3 local = rotate_z(d, -parent.yaw);
  double a = std::atan2(local[1], local[0]);
  if (a < 0.0) a += 2.0 * kPi;
  if (a >= 2.0 * kPi) a -= 2.0 * kPi;
  return a;
}

}  // namespace sgvae
