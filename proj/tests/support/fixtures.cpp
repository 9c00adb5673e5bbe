#include "fixtures.hpp"

#include <cctype>
#include <cmath>
#include <algorithm>
#include <filesystem>
#include <map>

namespace fixtures {

using namespace sgvae;

const char* const kBedroomGrammar = R"(# living-room example
S -> scene SCENE ;
SCENE -> bed BED SCENE ;
SCENE -> sofa SOFA SCENE ;
BED -> bed BED ;
BED -> dresser BED ;
BED -> nightstand BED ;
BED -> None ;
SOFA -> sofa SOFA ;
SOFA -> table SOFA ;
SOFA -> None ;
SCENE -> None ;
)";

const char* const kFiveAnchorGrammar = R"(S -> scene SCENE ;
SCENE -> bed BED SCENE ;
SCENE -> desk DESK SCENE ;
SCENE -> shelf SHELF SCENE ;
SCENE -> sink SINK SCENE ;
SCENE -> sofa SOFA SCENE ;
BED -> bed BED ;
BED -> dresser BED ;
BED -> nightstand BED ;
BED -> None ;
DESK -> desk DESK ;
DESK -> chair DESK ;
DESK -> monitor DESK ;
DESK -> None ;
SHELF -> shelf SHELF ;
SHELF -> book SHELF ;
SHELF -> box SHELF ;
SHELF -> None ;
SINK -> sink SINK ;
SINK -> mirror SINK ;
SINK -> towel SINK ;
SINK -> None ;
SOFA -> sofa SOFA ;
SOFA -> coffee_table SOFA ;
SOFA -> tv_stand SOFA ;
SOFA -> None ;
SCENE -> None ;
)";

Grammar bedroom_grammar() { return parse_grammar(kBedroomGrammar); }
Grammar five_anchor_grammar() { return parse_grammar(kFiveAnchorGrammar); }

SyntheticModel five_anchor_model(const Grammar& g) {
  SyntheticModel m;
  const std::vector<std::pair<double, double>> anchor_spots{
      {-1.5, -1.5}, {1.5, -1.5}, {-1.5, 1.5}, {1.5, 1.5}, {0.0, 0.0}};
  std::size_t next_anchor = 0;
  std::map<std::string, int> children_seen;
  for (const Rule& r : g.rules()) {
    RuleDistribution d;
    d.offset_sd = {0.1, 0.1, 0.0};
    d.yaw_sd = 0.1;
    switch (r.kind) {
      case RuleKind::kStart:
        d.offset_sd = {0.0, 0.0, 0.0};
        d.yaw_sd = 0.0;
        d.log_size_mean = {std::log(6.0), std::log(6.0), std::log(3.0)};
        d.log_size_sd = {0.0, 0.0, 0.0};
        break;
      case RuleKind::kScene: {
        const auto [x, y] = anchor_spots[next_anchor++ % anchor_spots.size()];
        d.offset_mean = {x, y, 0.0};
        d.log_size_mean = {0.0, std::log(0.9), std::log(0.8)};
        break;
      }
      case RuleKind::kGenerate:
        if (r.emitted() == category_for(r.lhs)) {
          d.weight = 0.15;
          d.offset_mean = {0.0, 1.6, 0.0};
          d.log_size_mean = {0.0, std::log(0.9), std::log(0.8)};
        } else {
          const bool first = children_seen[r.lhs]++ == 0;
          d.offset_mean = first ? Vec3{1.4, 0.0, 0.0} : Vec3{-1.4, 0.0, 0.0};
          d.log_size_mean = {std::log(0.5), std::log(0.5), std::log(0.5)};
        }
        break;
      case RuleKind::kNone:
        d.weight = r.lhs == kSceneNonTerminal ? 1.5 : 0.8;
        break;
    }
    m.rules.push_back(d);
  }
  return m;
}

ObjectInstance object(const std::string& category, double x, double y, double z, double yaw,
                      double w, double d, double h) {
  ObjectInstance o;
  o.category = category;
  o.pose.center = {x, y, z};
  o.pose.yaw = yaw;
  o.shape.size = {w, d, h};
  return o;
}

Scene scene(std::vector<ObjectInstance> objects) {
  Scene s;
  s.room = object(kRoomCategory, 0.0, 0.0, 1.5, 0.0, 6.0, 6.0, 3.0);
  s.objects = std::move(objects);
  return s;
}

Pose random_pose(std::mt19937_64& rng, double extent) {
  std::uniform_real_distribution<double> pos(-extent, extent);
  std::uniform_real_distribution<double> ang(-kPi, kPi);
  Pose p;
  p.center = {pos(rng), pos(rng), pos(rng) / 4.0};
  p.yaw = ang(rng);
  return p;
}

Mat4 pose_matrix(const Pose& p) {
  const double c = std::cos(p.yaw), s = std::sin(p.yaw);
  return {{{c, -s, 0.0, p.center[0]}, {s, c, 0.0, p.center[1]}, {0.0, 0.0, 1.0, p.center[2]},
           {0.0, 0.0, 0.0, 1.0}}};
}

Mat4 mat_mul(const Mat4& a, const Mat4& b) {
  Mat4 r{};
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      for (int k = 0; k < 4; ++k) r[i][j] += a[i][k] * b[k][j];
    }
  }
  return r;
}

Mat4 rigid_inverse(const Mat4& m) {
  Mat4 r{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) r[i][j] = m[j][i];
  }
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) r[i][3] -= r[i][k] * m[k][3];
  }
  r[3][3] = 1.0;
  return r;
}

Pose matrix_pose(const Mat4& m) {
  Pose p;
  p.center = {m[0][3], m[1][3], m[2][3]};
  p.yaw = std::atan2(m[1][0], m[0][0]);
  if (p.yaw <= -kPi) p.yaw += 2.0 * kPi;
  return p;
}

double chi2_by_summation(const std::array<std::array<std::array<double, 2>, 2>, 2>& cells) {
  double chi2 = 0.0;
  for (int k = 0; k < 2; ++k) {
    double ok = 0.0, oj[2] = {0.0, 0.0}, ojp[2] = {0.0, 0.0};
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        ok += cells[a][b][k];
        oj[a] += cells[a][b][k];
        ojp[b] += cells[a][b][k];
      }
    }
    if (ok == 0.0) continue;
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        const double e = oj[a] * ojp[b] / ok;
        if (e == 0.0) continue;
        const double d = cells[a][b][k] - e;
        chi2 += d * d / e;
      }
    }
  }
  return chi2;
}

double chi2_dof2_survival_by_integration(double x) {
  if (x <= 0.0) return 1.0;
  const int n = 20000;
  const double h = x / n;
  auto f = [](double t) { return std::exp(-t / 2.0) / 2.0; };
  double s = f(0.0) + f(x);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(i * h);
  return 1.0 - s * h / 3.0;
}

namespace {

bool inside(const ObjectInstance& o, double x, double y, double z) {
  const double dx = x - o.pose.center[0], dy = y - o.pose.center[1];
  const double c = std::cos(o.pose.yaw), s = std::sin(o.pose.yaw);
  const double lx = c * dx + s * dy, ly = -s * dx + c * dy;
  return std::abs(lx) <= o.shape.size[0] / 2.0 && std::abs(ly) <= o.shape.size[1] / 2.0 &&
         std::abs(z - o.pose.center[2]) <= o.shape.size[2] / 2.0;
}

}  // namespace

double iou_monte_carlo(const ObjectInstance& a, const ObjectInstance& b, std::size_t samples,
                       std::uint64_t seed) {
  // Sample the bounding sphere-box of both boxes, count points in each.
  double lo[3], hi[3];
  for (int k = 0; k < 3; ++k) {
    const double ra = k < 2 ? std::hypot(a.shape.size[0], a.shape.size[1]) / 2.0 : a.shape.size[2] / 2.0;
    const double rb = k < 2 ? std::hypot(b.shape.size[0], b.shape.size[1]) / 2.0 : b.shape.size[2] / 2.0;
    lo[k] = std::min(a.pose.center[k] - ra, b.pose.center[k] - rb);
    hi[k] = std::max(a.pose.center[k] + ra, b.pose.center[k] + rb);
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t in_a = 0, in_b = 0, both = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double x = lo[0] + (hi[0] - lo[0]) * u(rng);
    const double y = lo[1] + (hi[1] - lo[1]) * u(rng);
    const double z = lo[2] + (hi[2] - lo[2]) * u(rng);
    const bool ia = inside(a, x, y, z), ib = inside(b, x, y, z);
    in_a += ia;
    in_b += ib;
    both += ia && ib;
  }
  const double uni = static_cast<double>(in_a + in_b - both);
  return uni == 0.0 ? 0.0 : static_cast<double>(both) / uni;
}

std::optional<std::string> derivation_error(const RuleSequence& seq, const Grammar& g) {
  if (seq.rule_ids.size() != seq.attributes.size()) return "length mismatch";
  std::vector<std::string> stack{"S"};
  const std::size_t pad = g.rules().size();
  for (std::size_t t = 0; t < seq.rule_ids.size(); ++t) {
    const std::size_t id = seq.rule_ids[t];
    const auto& row = seq.attributes[t];
    const bool zero = std::all_of(row.begin(), row.end(), [](double v) { return v == 0.0; });
    if (stack.empty()) {
      if (id != pad) return "step " + std::to_string(t) + ": non-padding after completion";
      if (!zero) return "step " + std::to_string(t) + ": padding row not zero";
      continue;
    }
    if (id >= pad) return "step " + std::to_string(t) + ": padding before completion";
    const std::string text = g.rule(id).to_string();  // "LHS -> a B C"
    const std::size_t arrow = text.find(" -> ");
    const std::string lhs = text.substr(0, arrow);
    if (lhs != stack.back()) return "step " + std::to_string(t) + ": lhs " + lhs + " vs top " + stack.back();
    stack.pop_back();
    std::vector<std::string> rhs;
    std::string rest = text.substr(arrow + 4), tok;
    for (char c : rest + " ") {
      if (c == ' ') {
        if (!tok.empty()) rhs.push_back(tok);
        tok.clear();
      } else {
        tok.push_back(c);
      }
    }
    for (auto it = rhs.rbegin(); it != rhs.rend(); ++it) {
      if (*it != "None" && std::isupper(static_cast<unsigned char>((*it)[0]))) stack.push_back(*it);
    }
    if (rhs.size() == 1 && rhs[0] == "None") {
      if (!zero) return "step " + std::to_string(t) + ": None row not zero";
      continue;
    }
    if (std::abs(row[3] * row[3] + row[4] * row[4] - 1.0) > 1e-6) {
      return "step " + std::to_string(t) + ": yaw not normalized";
    }
    if (!(row[5] > 0.0 && row[6] > 0.0 && row[7] > 0.0)) {
      return "step " + std::to_string(t) + ": non-positive size";
    }
  }
  if (!stack.empty()) return std::string("incomplete derivation");
  return std::nullopt;
}

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "sgvae_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

void jitter_biases(sgvae::ParameterStore& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.1);
  for (sgvae::Tensor& t : params.tensors()) {
    if (t.value.rows() != 1) continue;
    for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] += n(rng);
  }
}

}  // namespace fixtures
