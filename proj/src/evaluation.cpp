#include "sgvae/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "sgvae/error.hpp"

namespace sgvae {

double box_iou(const ObjectInstance& a, const ObjectInstance& b) {
  const double za0 = a.pose.center[2] - a.shape.size[2] / 2.0;
  const double za1 = a.pose.center[2] + a.shape.size[2] / 2.0;
  const double zb0 = b.pose.center[2] - b.shape.size[2] / 2.0;
  const double zb1 = b.pose.center[2] + b.shape.size[2] / 2.0;
  const double dz = std::min(za1, zb1) - std::max(za0, zb0);
  const double va = a.shape.size[0] * a.shape.size[1] * a.shape.size[2];
  const double vb = b.shape.size[0] * b.shape.size[1] * b.shape.size[2];
  if (dz <= 0.0) return 0.0;
  const Polygon2 overlap = clip_convex(footprint(a.pose, a.shape), footprint(b.pose, b.shape));
  const double inter = polygon_area(overlap) * dz;
  if (inter <= 0.0) return 0.0;
  return std::clamp(inter / (va + vb - inter), 0.0, 1.0);
}

namespace {

// Minimum-cost assignment on a square matrix (rows to columns).
std::vector<std::size_t> hungarian(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n, 0);
  for (std::size_t j = 1; j <= n; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

}  // namespace

std::vector<Match> match_objects(const Scene& pred, const Scene& gt, const MatchOptions& options) {
  std::map<std::string, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> groups;
  for (std::size_t i = 0; i < pred.objects.size(); ++i) groups[pred.objects[i].category].first.push_back(i);
  for (std::size_t i = 0; i < gt.objects.size(); ++i) groups[gt.objects[i].category].second.push_back(i);

  std::vector<Match> out;
  for (const auto& [category, ids] : groups) {
    const auto& [ps, gs] = ids;
    if (ps.empty() || gs.empty()) continue;
    std::vector<std::vector<double>> iou(ps.size(), std::vector<double>(gs.size(), 0.0));
    for (std::size_t i = 0; i < ps.size(); ++i) {
      for (std::size_t j = 0; j < gs.size(); ++j) {
        iou[i][j] = box_iou(pred.objects[ps[i]], gt.objects[gs[j]]);
      }
    }
    if (options.matcher == Matcher::kGreedy) {
      std::vector<Match> cands;
      for (std::size_t i = 0; i < ps.size(); ++i) {
        for (std::size_t j = 0; j < gs.size(); ++j) {
          if (iou[i][j] > options.iou_threshold) cands.push_back({i, j, iou[i][j]});
        }
      }
      std::stable_sort(cands.begin(), cands.end(),
                       [](const Match& a, const Match& b) { return a.iou > b.iou; });
      std::vector<bool> pu(ps.size(), false), gu(gs.size(), false);
      for (const Match& m : cands) {
        if (pu[m.pred] || gu[m.gt]) continue;
        pu[m.pred] = gu[m.gt] = true;
        out.push_back({ps[m.pred], gs[m.gt], m.iou});
      }
    } else {
      const std::size_t n = std::max(ps.size(), gs.size());
      std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
      for (std::size_t i = 0; i < ps.size(); ++i) {
        for (std::size_t j = 0; j < gs.size(); ++j) {
          if (iou[i][j] > options.iou_threshold) cost[i][j] = -iou[i][j];
        }
      }
      const std::vector<std::size_t> assign = hungarian(cost);
      for (std::size_t i = 0; i < ps.size(); ++i) {
        const std::size_t j = assign[i];
        if (j < gs.size() && iou[i][j] > options.iou_threshold) out.push_back({ps[i], gs[j], iou[i][j]});
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const Match& a, const Match& b) { return a.gt < b.gt; });
  return out;
}

double CategoryStats::rate() const {
  return ground_truth == 0 ? 0.0 : static_cast<double>(true_positives) / static_cast<double>(ground_truth);
}

std::optional<double> CategoryStats::angular_error() const {
  if (true_positives == 0) return std::nullopt;
  return angular_sum / static_cast<double>(true_positives);
}

std::optional<double> CategoryStats::displacement_error() const {
  if (true_positives == 0) return std::nullopt;
  return displacement_sum / static_cast<double>(true_positives);
}

namespace {

struct Bounds {
  double lo[3] = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                  std::numeric_limits<double>::infinity()};
  double hi[3] = {-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
                  -std::numeric_limits<double>::infinity()};

  void add(const ObjectInstance& o) {
    for (const Point2& p : footprint(o.pose, o.shape)) {
      lo[0] = std::min(lo[0], p.x);
      hi[0] = std::max(hi[0], p.x);
      lo[1] = std::min(lo[1], p.y);
      hi[1] = std::max(hi[1], p.y);
    }
    lo[2] = std::min(lo[2], o.pose.center[2] - o.shape.size[2] / 2.0);
    hi[2] = std::max(hi[2], o.pose.center[2] + o.shape.size[2] / 2.0);
  }
};

}  // namespace

double layout_iou(const Scene& pred, const Scene& gt, const std::vector<Match>& matches,
                  double voxel_size) {
  if (!(voxel_size > 0.0)) throw ValidationError("voxel size must be positive");
  if (pred.objects.empty() && gt.objects.empty()) return 1.0;
  Bounds box;
  for (const ObjectInstance& o : pred.objects) box.add(o);
  for (const ObjectInstance& o : gt.objects) box.add(o);
  std::size_t dims[3];
  for (int k = 0; k < 3; ++k) {
    dims[k] = static_cast<std::size_t>(std::ceil((box.hi[k] - box.lo[k]) / voxel_size - 1e-9));
    dims[k] = std::max<std::size_t>(dims[k], 1);
  }
  std::vector<std::uint8_t> grid(dims[0] * dims[1] * dims[2], 0);

  auto paint = [&](const ObjectInstance& o, std::uint8_t bit) {
    Bounds ob;
    ob.add(o);
    std::size_t from[3], to[3];
    for (int k = 0; k < 3; ++k) {
      const double a = std::floor((ob.lo[k] - box.lo[k]) / voxel_size - 0.5);
      const double b = std::ceil((ob.hi[k] - box.lo[k]) / voxel_size - 0.5);
      from[k] = static_cast<std::size_t>(std::max(0.0, a));
      to[k] = std::min(dims[k], static_cast<std::size_t>(std::max(0.0, b + 1.0)));
    }
    const double c = std::cos(o.pose.yaw), s = std::sin(o.pose.yaw);
    const double hx = o.shape.size[0] / 2.0, hy = o.shape.size[1] / 2.0, hz = o.shape.size[2] / 2.0;
    for (std::size_t i = from[0]; i < to[0]; ++i) {
      const double x = box.lo[0] + (static_cast<double>(i) + 0.5) * voxel_size - o.pose.center[0];
      for (std::size_t j = from[1]; j < to[1]; ++j) {
        const double y = box.lo[1] + (static_cast<double>(j) + 0.5) * voxel_size - o.pose.center[1];
        const double lx = c * x + s * y;
        const double ly = -s * x + c * y;
        if (std::abs(lx) > hx || std::abs(ly) > hy) continue;
        for (std::size_t k = from[2]; k < to[2]; ++k) {
          const double z = box.lo[2] + (static_cast<double>(k) + 0.5) * voxel_size - o.pose.center[2];
          if (std::abs(z) > hz) continue;
          grid[(i * dims[1] + j) * dims[2] + k] |= bit;
        }
      }
    }
  };

  std::vector<bool> pred_tp(pred.objects.size(), false), gt_tp(gt.objects.size(), false);
  for (const Match& m : matches) {
    pred_tp.at(m.pred) = true;
    gt_tp.at(m.gt) = true;
  }
  for (std::size_t i = 0; i < pred.objects.size(); ++i) paint(pred.objects[i], pred_tp[i] ? 3 : 1);
  for (std::size_t i = 0; i < gt.objects.size(); ++i) paint(gt.objects[i], gt_tp[i] ? 5 : 1);
  std::size_t uni = 0, inter = 0;
  for (std::uint8_t v : grid) {
    if (v & 1) ++uni;
    if ((v & 6) == 6) ++inter;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double layout_iou(const Scene& pred, const Scene& gt, const MatchOptions& options) {
  return layout_iou(pred, gt, match_objects(pred, gt, options), options.voxel_size);
}

namespace {

void accumulate(MatchReport& r, const Scene& pred, const Scene& gt, const MatchOptions& options) {
  const std::vector<Match> matches = match_objects(pred, gt, options);
  for (const ObjectInstance& o : gt.objects) {
    ++r.categories[o.category].ground_truth;
    ++r.overall.ground_truth;
  }
  for (const Match& m : matches) {
    const ObjectInstance& p = pred.objects[m.pred];
    const ObjectInstance& g = gt.objects[m.gt];
    const double ang = std::abs(wrap_angle(p.pose.yaw - g.pose.yaw)) * 180.0 / kPi;
    const double dx = p.pose.center[0] - g.pose.center[0];
    const double dy = p.pose.center[1] - g.pose.center[1];
    const double dz = p.pose.center[2] - g.pose.center[2];
    const double disp = std::sqrt(dx * dx + dy * dy + dz * dz);
    for (CategoryStats* s : {&r.categories[g.category], &r.overall}) {
      ++s->true_positives;
      s->angular_sum += ang;
      s->displacement_sum += disp;
    }
  }
  const double iou = layout_iou(pred, gt, matches, options.voxel_size);
  r.layout_iou = (r.layout_iou * static_cast<double>(r.scenes) + iou) / static_cast<double>(r.scenes + 1);
  ++r.scenes;
}

std::string fixed(std::optional<double> v, int digits) {
  if (!v) return "-";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, *v);
  return buf;
}

nlohmann::json stats_json(const CategoryStats& s) {
  nlohmann::json j;
  j["ground_truth"] = s.ground_truth;
  j["true_positives"] = s.true_positives;
  j["detection_rate"] = s.rate();
  j["angular_error_deg"] = s.angular_error() ? nlohmann::json(*s.angular_error()) : nlohmann::json();
  j["displacement_m"] = s.displacement_error() ? nlohmann::json(*s.displacement_error()) : nlohmann::json();
  return j;
}

}  // namespace

MatchReport match_scenes(const Scene& pred, const Scene& gt, const MatchOptions& options) {
  MatchReport r;
  accumulate(r, pred, gt, options);
  return r;
}

MatchReport evaluate_corpus(const std::vector<Scene>& pred, const std::vector<Scene>& gt,
                            const MatchOptions& options) {
  if (pred.size() != gt.size()) {
    throw ValidationError("prediction has " + std::to_string(pred.size()) + " scenes, ground truth " +
                          std::to_string(gt.size()));
  }
  MatchReport r;
  for (std::size_t i = 0; i < pred.size(); ++i) accumulate(r, pred[i], gt[i], options);
  return r;
}

nlohmann::json report_to_json(const MatchReport& report) {
  nlohmann::json j = stats_json(report.overall);
  j["scenes"] = report.scenes;
  j["layout_iou"] = report.layout_iou;
  nlohmann::json cats = nlohmann::json::object();
  for (const auto& [name, s] : report.categories) cats[name] = stats_json(s);
  j["categories"] = std::move(cats);
  return j;
}

std::string report_to_table(const MatchReport& report) {
  std::size_t width = 8;
  for (const auto& kv : report.categories) width = std::max(width, kv.first.size());
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-*s %6s %6s %8s %10s %9s\n", static_cast<int>(width),
                "category", "gt", "tp", "rate", "angle_deg", "disp_m");
  out << line;
  auto row = [&](const std::string& name, const CategoryStats& s) {
    std::snprintf(line, sizeof(line), "%-*s %6zu %6zu %8.4f %10s %9s\n", static_cast<int>(width),
                  name.c_str(), s.ground_truth, s.true_positives, s.rate(),
                  fixed(s.angular_error(), 2).c_str(), fixed(s.displacement_error(), 3).c_str());
    out << line;
  };
  for (const auto& [name, s] : report.categories) row(name, s);
  row("all", report.overall);
  std::snprintf(line, sizeof(line), "layout IoU %.4f over %zu scene(s)\n", report.layout_iou, report.scenes);
  out << line;
  return out.str();
}

}  // namespace sgvae
