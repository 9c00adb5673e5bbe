#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sgvae/codec.hpp"
#include "sgvae/grammar.hpp"
#include "sgvae/scene.hpp"

namespace sgvae {

// Distribution attached to one grammar rule: how likely the rule is chosen
// among the alternatives of its lhs, and the Gaussian over the emitted
// object's pose relative to the current reference and its log-sizes.
struct RuleDistribution {
  double weight = 1.0;
  Vec3 offset_mean{0.0, 0.0, 0.0};
  Vec3 offset_sd{0.05, 0.05, 0.0};
  double yaw_mean = 0.0;
  double yaw_sd = 0.05;
  Vec3 log_size_mean{0.0, 0.0, 0.0};
  Vec3 log_size_sd{0.05, 0.05, 0.05};
};

struct SyntheticModel {
  std::vector<RuleDistribution> rules;  // one entry per grammar rule
  std::size_t max_objects = 15;
  std::size_t t_max = kDefaultTMax;
};

// Random but fixed per-rule means drawn from `seed`: rooms of about 5 x 5 x 3 m,
// objects placed within a couple of meters of their reference.
SyntheticModel default_synthetic_model(const Grammar& grammar, std::uint64_t seed);

// Samples leftmost derivations. Each non-terminal is opened at most once
// per scene and plain rules never emit another anchor's category, so every
// scene parses; scenes are returned in canonical order.
std::vector<Scene> generate_synthetic_corpus(const Grammar& grammar, const SyntheticModel& model,
                                             std::size_t n, std::uint64_t seed);

}  // namespace sgvae
