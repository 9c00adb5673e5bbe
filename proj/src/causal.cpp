#include "sgvae/causal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <tuple>

#include "sgvae/error.hpp"
#include "sgvae/util.hpp"

namespace sgvae {

CooccurrenceTables::CooccurrenceTables(std::size_t n_categories)
    : m_(n_categories),
      single_(m_, 0),
      pair_(m_ * m_, 0),
      triple_(m_ * m_ * m_, 0) {}

void CooccurrenceTables::add_scene(const std::vector<std::size_t>& present) {
  ++n_scenes_;
  for (std::size_t a : present) {
    ++single_[a];
    for (std::size_t b : present) {
      ++pair_[a * m_ + b];
      for (std::size_t c : present) ++triple_[(a * m_ + b) * m_ + c];
    }
  }
}

CooccurrenceTables build_tables(const std::vector<Scene>& scenes, const Vocabulary& vocab) {
  if (scenes.empty()) throw ValidationError("cannot build co-occurrence tables: empty corpus");
  CooccurrenceTables t(vocab.size());
  std::vector<char> seen(vocab.size());
  std::vector<std::size_t> present;
  for (const Scene& s : scenes) {
    std::fill(seen.begin(), seen.end(), 0);
    present.clear();
    seen[0] = 1;
    present.push_back(0);
    for (const ObjectInstance& o : s.objects) {
      const std::size_t id = vocab.index(o.category);
      if (!seen[id]) {
        seen[id] = 1;
        present.push_back(id);
      }
    }
    t.add_scene(present);
  }
  return t;
}

ContingencyCube contingency(const CooccurrenceTables& t, std::size_t j, std::size_t jp,
                            std::size_t k) {
  const double n = t.n_scenes();
  const double oj = t.count(j), ojp = t.count(jp), ok = t.count(k);
  const double ojk = t.count(j, k), ojpk = t.count(jp, k), ojjp = t.count(j, jp);
  const double ojjpk = t.count(j, jp, k);
  ContingencyCube c{};
  c[1][1][1] = ojjpk;
  c[1][0][1] = ojk - ojjpk;
  c[0][1][1] = ojpk - ojjpk;
  c[0][0][1] = ok - ojk - ojpk + ojjpk;
  c[1][1][0] = ojjp - ojjpk;
  c[1][0][0] = oj - ojk - c[1][1][0];
  c[0][1][0] = ojp - ojpk - c[1][1][0];
  c[0][0][0] = (n - ok) - c[1][1][0] - c[1][0][0] - c[0][1][0];
  return c;
}

double chi2_survival(double x, int dof) {
  if (x <= 0.0) return 1.0;
  switch (dof) {
    case 1:
      return std::erfc(std::sqrt(0.5 * x));
    case 2:
      return std::exp(-0.5 * x);
    default:
      throw ValidationError("chi2_survival supports 1 or 2 degrees of freedom");
  }
}

namespace {

double cell_term(double observed, double expected, bool yates) {
  if (expected <= 0.0) return 0.0;
  double d = std::abs(observed - expected);
  if (yates) d = std::max(0.0, d - 0.5);
  return d * d / expected;
}

}  // namespace

std::optional<ChiSquare> chi2_statistic(const ContingencyCube& cells, bool yates) {
  double chi2 = 0.0;
  for (int c = 0; c < 2; ++c) {
    const double n = cells[0][0][c] + cells[0][1][c] + cells[1][0][c] + cells[1][1][c];
    if (n <= 0.0) return std::nullopt;
    for (int a = 0; a < 2; ++a) {
      const double row = cells[a][0][c] + cells[a][1][c];
      for (int b = 0; b < 2; ++b) {
        const double col = cells[0][b][c] + cells[1][b][c];
        chi2 += cell_term(cells[a][b][c], row * col / n, yates);
      }
    }
  }
  return ChiSquare{chi2, chi2_survival(chi2, 2)};
}

std::optional<ChiSquare> chi2_statistic(const CooccurrenceTables& t, std::size_t j,
                                        std::size_t jp, std::size_t k, bool yates) {
  if (j == jp || j == k || jp == k) {
    throw ValidationError("chi2_statistic needs three distinct categories");
  }
  if (t.count(k) == 0 || t.count(k) == t.n_scenes()) return std::nullopt;
  return chi2_statistic(contingency(t, j, jp, k), yates);
}

// ---------------------------------------------------------------------------

CausalGraph::CausalGraph(std::vector<std::string> names)
    : names_(std::move(names)), marks_(names_.size() * names_.size(), EdgeMark::kNone) {}

CausalGraph empty_graph(const Vocabulary& vocab) { return CausalGraph(vocab.names()); }

std::optional<std::size_t> CausalGraph::find(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names_.begin());
}

void CausalGraph::set(std::size_t a, std::size_t b, EdgeMark m) {
  if (a == b) throw ValidationError("self-loops are not allowed (" + names_.at(a) + ")");
  EdgeMark back = EdgeMark::kNone;
  if (m == EdgeMark::kUndirected) back = EdgeMark::kUndirected;
  if (m == EdgeMark::kForward) back = EdgeMark::kBackward;
  if (m == EdgeMark::kBackward) back = EdgeMark::kForward;
  marks_.at(a * size() + b) = m;
  marks_.at(b * size() + a) = back;
}

void CausalGraph::add_undirected(std::size_t a, std::size_t b) { set(a, b, EdgeMark::kUndirected); }
void CausalGraph::add_directed(std::size_t a, std::size_t b) { set(a, b, EdgeMark::kForward); }
void CausalGraph::remove(std::size_t a, std::size_t b) { set(a, b, EdgeMark::kNone); }

bool CausalGraph::reachable(std::size_t from, std::size_t to) const {
  std::vector<char> seen(size(), 0);
  std::vector<std::size_t> stack{from};
  seen[from] = 1;
  while (!stack.empty()) {
    const std::size_t v = stack.back();
    stack.pop_back();
    if (v == to) return true;
    for (std::size_t w = 0; w < size(); ++w) {
      if (!seen[w] && directed(v, w)) {
        seen[w] = 1;
        stack.push_back(w);
      }
    }
  }
  return false;
}

bool CausalGraph::acyclic() const {
  std::vector<std::size_t> indeg(size(), 0);
  for (std::size_t v = 0; v < size(); ++v) indeg[v] = in_degree(v);
  std::vector<std::size_t> ready;
  for (std::size_t v = 0; v < size(); ++v) {
    if (indeg[v] == 0) ready.push_back(v);
  }
  std::size_t visited = 0;
  while (!ready.empty()) {
    const std::size_t v = ready.back();
    ready.pop_back();
    ++visited;
    for (std::size_t w = 0; w < size(); ++w) {
      if (directed(v, w) && --indeg[w] == 0) ready.push_back(w);
    }
  }
  return visited == size();
}

std::size_t CausalGraph::out_degree(std::size_t v) const {
  std::size_t d = 0;
  for (std::size_t w = 0; w < size(); ++w) d += directed(v, w);
  return d;
}

std::size_t CausalGraph::in_degree(std::size_t v) const {
  std::size_t d = 0;
  for (std::size_t w = 0; w < size(); ++w) d += directed(w, v);
  return d;
}

std::vector<std::size_t> CausalGraph::children(std::size_t v) const {
  std::vector<std::size_t> out;
  for (std::size_t w = 0; w < size(); ++w) {
    if (directed(v, w)) out.push_back(w);
  }
  return out;
}

std::vector<std::size_t> CausalGraph::neighbors(std::size_t v) const {
  std::vector<std::size_t> out;
  for (std::size_t w = 0; w < size(); ++w) {
    if (adjacent(v, w)) out.push_back(w);
  }
  return out;
}

std::vector<Edge> CausalGraph::edges() const {
  std::vector<Edge> out;
  for (std::size_t a = 0; a < size(); ++a) {
    for (std::size_t b = 0; b < size(); ++b) {
      const EdgeMark m = mark(a, b);
      if (m == EdgeMark::kForward) out.push_back({a, b, true});
      if (m == EdgeMark::kUndirected && a < b) out.push_back({a, b, false});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

bool marginal_dependence(const CooccurrenceTables& t, std::size_t j, std::size_t jp, double tau,
                         bool yates) {
  const double n = t.n_scenes();
  const double o[2][2] = {
      {n - t.count(j) - t.count(jp) + t.count(j, jp), t.count(jp) - double(t.count(j, jp))},
      {t.count(j) - double(t.count(j, jp)), double(t.count(j, jp))}};
  double chi2 = 0.0;
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      const double row = o[a][0] + o[a][1];
      const double col = o[0][b] + o[1][b];
      chi2 += cell_term(o[a][b], row * col / n, yates);
    }
  }
  return chi2_survival(chi2, 1) < tau;
}

}  // namespace

CausalGraph dependence_skeleton(const CooccurrenceTables& t, const Vocabulary& vocab,
                                double tau, bool yates, unsigned threads) {
  if (!(tau > 0.0 && tau < 1.0)) throw ValidationError("tau must lie in (0, 1)");
  if (t.n_categories() != vocab.size()) {
    throw ValidationError("co-occurrence tables do not match the vocabulary");
  }
  const std::size_t m = vocab.size();
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t j = 1; j < m; ++j) {
    for (std::size_t jp = j + 1; jp < m; ++jp) pairs.emplace_back(j, jp);
  }
  std::vector<char> keep(pairs.size(), 0);
  const double n = t.n_scenes();
  parallel_for(pairs.size(), threads, [&](std::size_t idx) {
    const auto [j, jp] = pairs[idx];
    // Only positive associations are candidate causal links.
    if (double(t.count(j, jp)) * n <= double(t.count(j)) * double(t.count(jp))) return;
    bool usable = false;
    for (std::size_t k = 1; k < m; ++k) {
      if (k == j || k == jp) continue;
      const auto res = chi2_statistic(t, j, jp, k, yates);
      if (!res) continue;
      usable = true;
      if (res->p >= tau) return;
    }
    if (!usable && !marginal_dependence(t, j, jp, tau, yates)) return;
    keep[idx] = 1;
  });
  CausalGraph g(vocab.names());
  for (std::size_t idx = 0; idx < pairs.size(); ++idx) {
    if (keep[idx]) g.add_undirected(pairs[idx].first, pairs[idx].second);
  }
  return g;
}

namespace {

// Orienting u -> v makes a new common-parent triple v <- u -> w with v, w
// non-adjacent.
bool creates_common_parent(const CausalGraph& g, std::size_t u, std::size_t v) {
  for (std::size_t w = 0; w < g.size(); ++w) {
    if (w != v && g.directed(u, w) && !g.adjacent(v, w)) return true;
  }
  return false;
}

}  // namespace

CausalGraph ic_orient(const CausalGraph& skeleton) {
  CausalGraph g = skeleton;
  const std::size_t n = g.size();

  // Unshielded triples j - k - j' become j <- k -> j'.
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t jp = j + 1; jp < n; ++jp) {
      if (g.adjacent(j, jp)) continue;
      for (std::size_t k = 0; k < n; ++k) {
        if (k == j || k == jp || !g.adjacent(k, j) || !g.adjacent(k, jp)) continue;
        const EdgeMark a = g.mark(k, j);
        const EdgeMark b = g.mark(k, jp);
        const bool a_ok = a == EdgeMark::kUndirected || a == EdgeMark::kForward;
        const bool b_ok = b == EdgeMark::kUndirected || b == EdgeMark::kForward;
        if (!a_ok || !b_ok) continue;
        if (a != EdgeMark::kUndirected && b != EdgeMark::kUndirected) continue;
        for (std::size_t x : {j, jp}) {
          if (g.undirected(k, x) && !g.creates_cycle(k, x)) g.add_directed(k, x);
        }
      }
    }
  }

  // Remaining undirected edges: smallest first, prefer the orientation that
  // stays acyclic and adds no common-parent triple.
  for (;;) {
    std::optional<std::pair<std::size_t, std::size_t>> next;
    for (std::size_t a = 0; a < n && !next; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) {
        if (g.undirected(a, b)) {
          next.emplace(a, b);
          break;
        }
      }
    }
    if (!next) break;
    const auto [a, b] = *next;
    const bool fwd_ok = !g.creates_cycle(a, b);
    const bool bwd_ok = !g.creates_cycle(b, a);
    if (fwd_ok && !creates_common_parent(g, a, b)) {
      g.add_directed(a, b);
    } else if (bwd_ok && !creates_common_parent(g, b, a)) {
      g.add_directed(b, a);
    } else if (fwd_ok) {
      g.add_directed(a, b);
    } else {
      g.add_directed(b, a);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

bool supports(const ObjectInstance& lower, const ObjectInstance& upper, double tol) {
  const double top = lower.pose.center[2] + 0.5 * lower.shape.size[2];
  const double bottom = upper.pose.center[2] - 0.5 * upper.shape.size[2];
  if (std::abs(bottom - top) > tol) return false;
  const Polygon2 overlap =
      clip_convex(footprint(upper.pose, upper.shape), footprint(lower.pose, lower.shape));
  return polygon_area(overlap) > 0.0;
}

bool encloses(const ObjectInstance& outer, const ObjectInstance& inner, double margin) {
  const auto volume = [](const BoxShape& s) { return s.size[0] * s.size[1] * s.size[2]; };
  if (volume(outer.shape) <= volume(inner.shape)) return false;
  const double hx = 0.5 * outer.shape.size[0] + margin;
  const double hy = 0.5 * outer.shape.size[1] + margin;
  const double hz = 0.5 * outer.shape.size[2] + margin;
  const double z_lo = inner.pose.center[2] - 0.5 * inner.shape.size[2];
  const double z_hi = inner.pose.center[2] + 0.5 * inner.shape.size[2];
  if (z_lo < outer.pose.center[2] - hz || z_hi > outer.pose.center[2] + hz) return false;
  for (const Point2& p : footprint(inner.pose, inner.shape)) {
    const Vec3 d{p.x - outer.pose.center[0], p.y - outer.pose.center[1], 0.0};
    const Vec3 local = rotate_z(d, -outer.pose.yaw);
    if (std::abs(local[0]) > hx || std::abs(local[1]) > hy) return false;
  }
  return true;
}

CausalGraph geometric_edges(const std::vector<Scene>& scenes, const Vocabulary& vocab,
                            const GeometricOptions& options) {
  if (options.support_tol <= 0.0 || options.enclose_margin < 0.0) {
    throw ValidationError("geometric tolerances must be positive");
  }
  const std::size_t m = vocab.size();
  std::vector<std::size_t> both(m * m, 0), agree(m * m, 0);
  for (const Scene& s : scenes) {
    std::vector<std::vector<const ObjectInstance*>> by_cat(m);
    for (const ObjectInstance& o : s.objects) by_cat[vocab.index(o.category)].push_back(&o);
    for (std::size_t a = 1; a < m; ++a) {
      if (by_cat[a].empty()) continue;
      for (std::size_t b = 1; b < m; ++b) {
        if (a == b || by_cat[b].empty()) continue;
        ++both[a * m + b];
        bool hit = false;
        for (const ObjectInstance* oa : by_cat[a]) {
          for (const ObjectInstance* ob : by_cat[b]) {
            if (supports(*oa, *ob, options.support_tol) ||
                encloses(*oa, *ob, options.enclose_margin)) {
              hit = true;
              break;
            }
          }
          if (hit) break;
        }
        if (hit) ++agree[a * m + b];
      }
    }
  }
  struct Candidate {
    double ratio;
    std::size_t a, b;
  };
  std::vector<Candidate> candidates;
  for (std::size_t a = 1; a < m; ++a) {
    for (std::size_t b = 1; b < m; ++b) {
      const std::size_t n = both[a * m + b];
      if (n == 0) continue;
      const double r = double(agree[a * m + b]) / double(n);
      if (r >= options.ratio - 1e-12) candidates.push_back({r, a, b});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& x, const Candidate& y) {
    if (x.ratio != y.ratio) return x.ratio > y.ratio;
    return std::tie(x.a, x.b) < std::tie(y.a, y.b);
  });
  CausalGraph g(vocab.names());
  for (const Candidate& c : candidates) {
    if (g.adjacent(c.a, c.b) || g.creates_cycle(c.a, c.b)) continue;
    g.add_directed(c.a, c.b);
  }
  return g;
}

CausalGraph union_acyclic(const CausalGraph& g1, const CausalGraph& g2) {
  if (g1.names() != g2.names()) throw ValidationError("cannot merge graphs over different nodes");
  CausalGraph out = g1;
  for (const Edge& e : g2.edges()) {
    if (e.directed) {
      if (out.directed(e.a, e.b) || out.directed(e.b, e.a)) continue;
      if (out.creates_cycle(e.a, e.b)) continue;
      out.add_directed(e.a, e.b);
    } else if (!out.adjacent(e.a, e.b)) {
      out.add_undirected(e.a, e.b);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string format_graph(const CausalGraph& g) {
  std::ostringstream out;
  for (const std::string& n : g.names()) out << n << '\n';
  for (const Edge& e : g.edges()) {
    out << g.name(e.a) << (e.directed ? " -> " : " -- ") << g.name(e.b) << '\n';
  }
  return out.str();
}

CausalGraph parse_graph(const std::string& text) {
  std::vector<std::string> names;
  std::vector<std::tuple<std::string, std::string, bool>> edges;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto declare = [&](const std::string& n) {
    if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::vector<std::string> tok;
    for (std::string t; ss >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok.size() == 1) {
      declare(tok[0]);
    } else if (tok.size() == 3 && (tok[1] == "->" || tok[1] == "--")) {
      declare(tok[0]);
      declare(tok[2]);
      edges.emplace_back(tok[0], tok[2], tok[1] == "->");
    } else {
      throw FormatError("line " + std::to_string(line_no) + ": expected 'a -> b', 'a -- b' or a node name");
    }
  }
  CausalGraph g(names);
  for (const auto& [a, b, dir] : edges) {
    const std::size_t ia = *g.find(a), ib = *g.find(b);
    if (ia == ib) throw FormatError("self-loop on '" + a + "'");
    if (dir) {
      g.add_directed(ia, ib);
    } else {
      g.add_undirected(ia, ib);
    }
  }
  return g;
}

void save_graph(const std::string& path, const CausalGraph& g) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write graph '" + path + "'");
  out << format_graph(g);
}

CausalGraph load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open graph '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_graph(buf.str());
}

}  // namespace sgvae
