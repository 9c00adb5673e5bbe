#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sgvae/scene.hpp"

namespace sgvae {

// Binary per-scene presence counts: an object is counted once per scene
// regardless of how many instances it has.
class CooccurrenceTables {
 public:
  CooccurrenceTables() = default;
  explicit CooccurrenceTables(std::size_t n_categories);

  std::size_t n_scenes() const { return n_scenes_; }
  std::size_t n_categories() const { return m_; }

  std::uint32_t count(std::size_t k) const { return single_[k]; }
  std::uint32_t count(std::size_t j, std::size_t k) const { return pair_[j * m_ + k]; }
  std::uint32_t count(std::size_t j, std::size_t jp, std::size_t k) const {
    return triple_[(j * m_ + jp) * m_ + k];
  }

  // Adds one scene given the set of present category ids.
  void add_scene(const std::vector<std::size_t>& present);

 private:
  std::size_t m_ = 0;
  std::size_t n_scenes_ = 0;
  std::vector<std::uint32_t> single_;
  std::vector<std::uint32_t> pair_;
  std::vector<std::uint32_t> triple_;
};

// Throws ValidationError on an empty corpus.
CooccurrenceTables build_tables(const std::vector<Scene>& scenes, const Vocabulary& vocab);

// cells[a][b][c]: number of scenes with presence j=a, j'=b, k=c.
using ContingencyCube = std::array<std::array<std::array<double, 2>, 2>, 2>;

ContingencyCube contingency(const CooccurrenceTables& t, std::size_t j, std::size_t jp,
                            std::size_t k);

struct ChiSquare {
  double chi2 = 0.0;
  double p = 1.0;
};

// Survival function of the chi-square distribution (1 or 2 dof closed forms,
// general dof via the regularized incomplete gamma function).
double chi2_survival(double x, int dof);

// Stratified test of j ⟂ j' | k on 8 cells, 2 degrees of freedom. Returns
// nullopt when the conditioning category is constant (O_k = 0 or O_k = N).
std::optional<ChiSquare> chi2_statistic(const CooccurrenceTables& t, std::size_t j,
                                        std::size_t jp, std::size_t k, bool yates = false);
std::optional<ChiSquare> chi2_statistic(const ContingencyCube& cells, bool yates = false);

enum class EdgeMark : std::uint8_t { kNone = 0, kUndirected, kForward, kBackward };

struct Edge {
  std::size_t a = 0;
  std::size_t b = 0;
  bool directed = false;  // a -> b when set, a -- b (a < b) otherwise

  bool operator==(const Edge&) const = default;
};

// Mixed graph over category names with undirected and directed edges.
class CausalGraph {
 public:
  CausalGraph() = default;
  explicit CausalGraph(std::vector<std::string> names);

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  std::optional<std::size_t> find(const std::string& name) const;

  bool adjacent(std::size_t a, std::size_t b) const { return mark(a, b) != EdgeMark::kNone; }
  bool directed(std::size_t a, std::size_t b) const { return mark(a, b) == EdgeMark::kForward; }
  bool undirected(std::size_t a, std::size_t b) const {
    return mark(a, b) == EdgeMark::kUndirected;
  }
  // Relation of b as seen from a.
  EdgeMark mark(std::size_t a, std::size_t b) const { return marks_[a * size() + b]; }

  void add_undirected(std::size_t a, std::size_t b);
  void add_directed(std::size_t a, std::size_t b);  // replaces any existing a/b edge
  void remove(std::size_t a, std::size_t b);

  // True if some directed path leads from `from` to `to`.
  bool reachable(std::size_t from, std::size_t to) const;
  bool creates_cycle(std::size_t a, std::size_t b) const { return a == b || reachable(b, a); }
  bool acyclic() const;

  std::size_t out_degree(std::size_t v) const;
  std::size_t in_degree(std::size_t v) const;
  std::vector<std::size_t> children(std::size_t v) const;
  std::vector<std::size_t> neighbors(std::size_t v) const;  // any mark

  // Edges in lexicographic (a, b) order; undirected edges listed once with a < b.
  std::vector<Edge> edges() const;
  bool operator==(const CausalGraph& other) const = default;

 private:
  void set(std::size_t a, std::size_t b, EdgeMark m);

  std::vector<std::string> names_;
  std::vector<EdgeMark> marks_;
};

CausalGraph empty_graph(const Vocabulary& vocab);

// Undirected edge j -- j' iff j, j' co-occur more often than under
// independence and every non-degenerate conditioning category k rejects
// j ⟂ j' | k at level tau. With no usable conditioning category the
// unconditional 2x2 test (1 dof) decides. The room category is skipped.
CausalGraph dependence_skeleton(const CooccurrenceTables& t, const Vocabulary& vocab,
                                double tau = 0.05, bool yates = false,
                                unsigned threads = 1);

// Common-parent orientation of unshielded triples followed by cycle-free
// propagation of the remaining undirected edges. Directed edges already in
// `skeleton` act as prior edges.
CausalGraph ic_orient(const CausalGraph& skeleton);

struct GeometricOptions {
  double support_tol = 0.05;
  double enclose_margin = 0.05;
  double ratio = 0.30;
};

bool supports(const ObjectInstance& lower, const ObjectInstance& upper, double tol);
bool encloses(const ObjectInstance& outer, const ObjectInstance& inner, double margin);

// Directed support/enclosure edges A -> B accepted when at least `ratio` of
// the scenes containing both agree. Conflicting candidates are added by
// descending agreement, then lexicographically, skipping cycles.
CausalGraph geometric_edges(const std::vector<Scene>& scenes, const Vocabulary& vocab,
                            const GeometricOptions& options = {});

// g1 plus g2's edges in lexicographic order, skipping any that would close
// a directed cycle. Node sets must match.
CausalGraph union_acyclic(const CausalGraph& g1, const CausalGraph& g2);

// `a -> b` / `a -- b` per line; a line holding a single name declares a node.
std::string format_graph(const CausalGraph& g);
CausalGraph parse_graph(const std::string& text);
void save_graph(const std::string& path, const CausalGraph& g);
CausalGraph load_graph(const std::string& path);

}  // namespace sgvae
