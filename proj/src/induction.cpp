#include "sgvae/induction.hpp"

#include <algorithm>

#include "sgvae/error.hpp"

namespace sgvae {

std::set<std::string> candidate_nonterminals(const CausalGraph& graph, double eps) {
  if (!(eps > 0.0 && eps < 1.0)) throw ValidationError("eps must lie in (0, 1)");
  std::set<std::string> out;
  for (std::size_t v = 0; v < graph.size(); ++v) {
    if (graph.name(v) == kRoomCategory) continue;
    const double ratio = double(graph.out_degree(v)) / (double(graph.in_degree(v)) + eps);
    if (ratio > 1.0) out.insert(graph.name(v));
  }
  return out;
}

std::vector<Rule> rules_for(const std::string& anchor, const CausalGraph& graph,
                            const std::set<std::string>& anchors) {
  if (anchor == kRoomCategory || nonterminal_for(anchor) == kStartSymbol) {
    throw ValidationError("'" + anchor + "' cannot be an anchor");
  }
  const auto v = graph.find(anchor);
  if (!v) throw ValidationError("anchor '" + anchor + "' is not a graph node");
  std::vector<std::string> targets;
  for (std::size_t w : graph.children(*v)) {
    if (graph.name(w) != kRoomCategory) targets.push_back(graph.name(w));
  }
  std::sort(targets.begin(), targets.end());
  std::vector<Rule> out;
  out.push_back(make_scene_rule(anchor));
  out.push_back(make_generate_rule(anchor, anchor, false));
  for (const std::string& t : targets) {
    out.push_back(make_generate_rule(anchor, t, anchors.count(t) > 0));
  }
  out.push_back(make_none_rule(nonterminal_for(anchor)));
  return out;
}

std::vector<CategoryCounts> category_counts(const std::vector<Scene>& scenes) {
  std::vector<CategoryCounts> out;
  out.reserve(scenes.size());
  for (const Scene& s : scenes) {
    CategoryCounts c;
    for (const ObjectInstance& o : s.objects) ++c[o.category];
    out.push_back(std::move(c));
  }
  return out;
}

namespace {

std::size_t instance_count(const CategoryCounts& c) {
  std::size_t n = 1;
  for (const auto& [_, k] : c) n += k;
  return n;
}

std::vector<Rule> concat(const std::vector<Rule>& a, const std::vector<Rule>& b) {
  std::vector<Rule> out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace

std::vector<double> coverage_ratios(const std::vector<CategoryCounts>& scenes,
                                    const std::vector<Rule>& rules) {
  std::vector<double> out;
  out.reserve(scenes.size());
  for (const CategoryCounts& c : scenes) {
    out.push_back(double(derivable_count(c, rules)) / double(instance_count(c)));
  }
  return out;
}

double coverage(const std::vector<CategoryCounts>& scenes, const std::vector<Rule>& rules,
                double p, CoverageMode mode) {
  if (scenes.empty()) return 1.0;
  const std::vector<double> ratios = coverage_ratios(scenes, rules);
  double acc = 0.0;
  for (double r : ratios) acc += mode == CoverageMode::kSceneFraction ? (r > p ? 1.0 : 0.0) : r;
  return acc / double(ratios.size());
}

double coverage_gain(const std::vector<Rule>& candidate, const std::vector<Rule>& current,
                     const std::vector<CategoryCounts>& scenes, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw ValidationError("p must lie in (0, 1]");
  if (candidate.empty()) return 0.0;
  const std::vector<Rule> merged = concat(current, candidate);
  double sum = 0.0;
  for (const CategoryCounts& c : scenes) {
    const double n = double(instance_count(c));
    if (double(derivable_count(c, current)) / n > p) continue;
    sum += double(derivable_count(c, merged)) / n;
  }
  return sum / double(candidate.size());
}

PCoverResult p_cover(const std::vector<Scene>& scenes, const CausalGraph& graph,
                     const PCoverOptions& options) {
  if (graph.size() == 0) throw ValidationError("p_cover needs a non-empty causal graph");
  if (!(options.p >= 0.0 && options.p <= 1.0)) throw ValidationError("p must lie in [0, 1]");
  const std::vector<CategoryCounts> counts = category_counts(scenes);
  const std::set<std::string> candidates = candidate_nonterminals(graph, options.eps);

  std::vector<Rule> current{make_start_rule()};
  std::vector<std::string> selected;
  auto covered = [&](const std::vector<Rule>& rules) {
    return coverage(counts, rules, options.p, options.mode);
  };
  auto total_derivable = [&](const std::vector<Rule>& rules) {
    std::size_t acc = 0;
    for (const CategoryCounts& c : counts) acc += derivable_count(c, rules);
    return acc;
  };

  while (covered(current) < options.p) {
    const std::size_t base = total_derivable(current);
    const std::set<std::string> chosen(selected.begin(), selected.end());
    std::string best;
    double best_gain = -1.0;
    std::vector<Rule> best_rules;
    for (const std::string& a : candidates) {  // ordered by name: ties keep the smaller
      if (std::find(selected.begin(), selected.end(), a) != selected.end()) continue;
      std::vector<Rule> rj = rules_for(a, graph, chosen);
      // A candidate that derives nothing new contributes no gain.
      if (total_derivable(concat(current, rj)) <= base) continue;
      const double g = coverage_gain(rj, current, counts, options.p);
      if (g > best_gain) {
        best_gain = g;
        best = a;
        best_rules = std::move(rj);
      }
    }
    if (best.empty()) break;
    selected.push_back(best);
    current.insert(current.end(), best_rules.begin(), best_rules.end());
  }

  // Materialise the final rule sets against the selected anchors so that
  // every RHS non-terminal is defined.
  const std::set<std::string> final_anchors(selected.begin(), selected.end());
  std::vector<Rule> rules{make_start_rule()};
  for (const std::string& a : selected) {
    const std::vector<Rule> rj = rules_for(a, graph, final_anchors);
    rules.insert(rules.end(), rj.begin(), rj.end());
  }
  rules.push_back(make_none_rule(kSceneNonTerminal));

  PCoverResult result;
  result.grammar = Grammar(rules);
  result.anchors = selected;
  result.coverage = covered(rules);
  return result;
}

}  // namespace sgvae
