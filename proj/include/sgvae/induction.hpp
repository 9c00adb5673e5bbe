#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sgvae/causal.hpp"
#include "sgvae/grammar.hpp"
#include "sgvae/scene.hpp"

namespace sgvae {

// Categories whose out/in degree ratio deg_out / (deg_in + eps) exceeds 1.
std::set<std::string> candidate_nonterminals(const CausalGraph& graph, double eps = 0.5);

// Rule set of one anchor: SCENE -> a A SCENE, the self-repeat A -> a A, one
// rule per out-neighbour in name order (A -> b B A when b is in `anchors`,
// A -> b A otherwise), then A -> None.
std::vector<Rule> rules_for(const std::string& anchor, const CausalGraph& graph,
                            const std::set<std::string>& anchors = {});

// Per-scene category counts; the room category is omitted.
using CategoryCounts = std::map<std::string, std::size_t>;
std::vector<CategoryCounts> category_counts(const std::vector<Scene>& scenes);

enum class CoverageMode {
  kSceneFraction,  // fraction of scenes whose covered ratio exceeds p
  kMeanRatio,      // mean per-scene covered ratio
};

// |Y_i| / |I_i| per scene under `rules`; instance counts include the room.
std::vector<double> coverage_ratios(const std::vector<CategoryCounts>& scenes,
                                    const std::vector<Rule>& rules);
double coverage(const std::vector<CategoryCounts>& scenes, const std::vector<Rule>& rules,
                double p, CoverageMode mode = CoverageMode::kSceneFraction);

// (1 / |candidate|) * sum over scenes not yet covered (ratio <= p under
// `current`) of their ratio under current ∪ candidate.
double coverage_gain(const std::vector<Rule>& candidate, const std::vector<Rule>& current,
                     const std::vector<CategoryCounts>& scenes, double p);

struct PCoverOptions {
  double p = 0.8;
  double eps = 0.5;
  CoverageMode mode = CoverageMode::kSceneFraction;
};

struct PCoverResult {
  Grammar grammar;
  std::vector<std::string> anchors;  // selection order
  double coverage = 0.0;             // achieved, measured with options.mode
};

// Greedy p-cover. Throws ValidationError if the graph has no nodes.
PCoverResult p_cover(const std::vector<Scene>& scenes, const CausalGraph& graph,
                     const PCoverOptions& options = {});

}  // namespace sgvae
