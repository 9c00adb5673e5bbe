#include "sgvae/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace sgvae {

namespace {

std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.3f", std::abs(v) < 5e-4 ? 0.0 : v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

}  // namespace

std::string render_svg(const Scene& scene, const RenderOptions& options) {
  double lo_x = std::numeric_limits<double>::infinity(), lo_y = lo_x;
  double hi_x = -lo_x, hi_y = -lo_x;
  auto extend = [&](const ObjectInstance& o) {
    for (const Point2& p : footprint(o.pose, o.shape)) {
      lo_x = std::min(lo_x, p.x);
      hi_x = std::max(hi_x, p.x);
      lo_y = std::min(lo_y, p.y);
      hi_y = std::max(hi_y, p.y);
    }
  };
  extend(scene.room);
  for (const ObjectInstance& o : scene.objects) extend(o);

  const double k = options.pixels_per_meter;
  const double m = options.margin;
  const double width = (hi_x - lo_x) * k + 2.0 * m;
  const double height = (hi_y - lo_y) * k + 2.0 * m;
  auto px = [&](double x) { return (x - lo_x) * k + m; };
  auto py = [&](double y) { return (hi_y - y) * k + m; };

  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << num(width)
      << "\" height=\"" << num(height) << "\" viewBox=\"0 0 " << num(width) << ' ' << num(height)
      << "\">\n";
  auto rect = [&](const ObjectInstance& o, const char* cls, const char* style) {
    const double w = o.shape.size[0] * k, d = o.shape.size[1] * k;
    out << "  <rect class=\"" << cls << "\" x=\"" << num(-w / 2.0) << "\" y=\"" << num(-d / 2.0)
        << "\" width=\"" << num(w) << "\" height=\"" << num(d) << "\" transform=\"translate("
        << num(px(o.pose.center[0])) << ' ' << num(py(o.pose.center[1])) << ") rotate("
        << num(-o.pose.yaw * 180.0 / kPi) << ")\" style=\"" << style << "\"/>\n";
  };
  rect(scene.room, "room", "fill:none;stroke:#333333;stroke-width:2");
  for (const ObjectInstance& o : scene.objects) {
    rect(o, "object", "fill:#9ecae1;fill-opacity:0.6;stroke:#08519c;stroke-width:1");
  }
  if (options.labels) {
    for (const ObjectInstance& o : scene.objects) {
      out << "  <text x=\"" << num(px(o.pose.center[0])) << "\" y=\"" << num(py(o.pose.center[1]))
          << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">"
          << escape(o.category) << "</text>\n";
    }
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace sgvae
