#include "sgvae/synthetic.hpp"

#include <cmath>
#include <random>
#include <set>

#include "sgvae/error.hpp"

namespace sgvae {

SyntheticModel default_synthetic_model(const Grammar& grammar, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SyntheticModel model;
  for (const Rule& r : grammar.rules()) {
    RuleDistribution d;
    switch (r.kind) {
      case RuleKind::kStart:
        d.offset_sd = {0.0, 0.0, 0.0};
        d.yaw_sd = 0.0;
        d.log_size_mean = {std::log(5.0), std::log(5.0), std::log(3.0)};
        break;
      case RuleKind::kScene:
      case RuleKind::kGenerate: {
        const double reach = r.kind == RuleKind::kScene ? 2.0 : 1.5;
        d.offset_mean = {reach * (2.0 * unit(rng) - 1.0), reach * (2.0 * unit(rng) - 1.0), 0.0};
        d.yaw_mean = wrap_angle(kPi / 2.0 * std::floor(4.0 * unit(rng)));
        for (double& m : d.log_size_mean) m = std::log(0.4 + 1.6 * unit(rng));
        break;
      }
      case RuleKind::kNone:
        break;
    }
    model.rules.push_back(d);
  }
  return model;
}

namespace {

struct Frame {
  std::string nt;
  Pose ref;
};

}  // namespace

std::vector<Scene> generate_synthetic_corpus(const Grammar& grammar, const SyntheticModel& model,
                                             std::size_t n, std::uint64_t seed) {
  if (model.rules.size() != grammar.size()) {
    throw ValidationError("synthetic model has " + std::to_string(model.rules.size()) +
                          " rule entries, grammar has " + std::to_string(grammar.size()));
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  auto draw = [&](const RuleDistribution& d, BoxShape& shape) {
    Pose p;
    for (int k = 0; k < 3; ++k) p.center[k] = d.offset_mean[k] + d.offset_sd[k] * normal(rng);
    p.yaw = wrap_angle(d.yaw_mean + d.yaw_sd * normal(rng));
    for (int k = 0; k < 3; ++k) {
      shape.size[k] = std::exp(d.log_size_mean[k] + d.log_size_sd[k] * normal(rng));
    }
    return p;
  };

  const std::size_t start = grammar.rules_for_lhs(kStartSymbol).front();
  std::vector<Scene> out;
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    Scene scene;
    BoxShape room_shape;
    const Pose room_pose = draw(model.rules[start], room_shape);
    scene.room = {kRoomCategory, room_pose, room_shape};
    std::vector<Frame> stack{{kSceneNonTerminal, room_pose}};
    std::set<std::string> opened{kSceneNonTerminal};
    std::size_t steps = 1;

    while (!stack.empty()) {
      const Frame top = stack.back();
      stack.pop_back();
      const std::size_t none = grammar.none_rule(top.nt);
      std::vector<std::size_t> options;
      std::vector<double> weights;
      for (std::size_t r : grammar.rules_for_lhs(top.nt)) {
        const Rule& rule = grammar.rule(r);
        if (rule.kind == RuleKind::kNone) continue;
        if (scene.objects.size() >= model.max_objects) continue;
        const auto nt = rule.opened();
        if (nt && opened.count(*nt)) continue;
        const bool repeat = !nt && rule.emitted() == category_for(top.nt);
        if (!nt && !repeat && grammar.is_anchor(rule.emitted())) continue;
        // The rule's own step, the lhs coming back, and one None per
        // pending non-terminal must all still fit.
        const std::size_t depth = stack.size() + 1 + (nt ? 1 : 0);
        if (steps + 1 + depth > model.t_max) continue;
        options.push_back(r);
        weights.push_back(model.rules[r].weight);
      }
      options.push_back(none);
      weights.push_back(model.rules[none].weight);
      double total = 0.0;
      for (double w : weights) total += w;
      std::size_t r = none;
      if (total > 0.0) {
        std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
        r = options[pick(rng)];
      }
      ++steps;
      if (r == none) continue;

      const Rule& rule = grammar.rule(r);
      BoxShape shape;
      const Pose pose = compose(top.ref, draw(model.rules[r], shape));
      scene.objects.push_back({rule.emitted(), pose, shape});
      const bool repeat = !rule.opened() && rule.emitted() == category_for(top.nt);
      stack.push_back({top.nt, repeat ? pose : top.ref});
      if (const auto nt = rule.opened()) {
        opened.insert(*nt);
        stack.push_back({*nt, pose});
      }
    }
    out.push_back(canonical_order(scene, grammar));
  }
  return out;
}

}  // namespace sgvae
