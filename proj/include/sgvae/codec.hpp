#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sgvae/grammar.hpp"
#include "sgvae/scene.hpp"

namespace sgvae {

inline constexpr std::size_t kAttributeDim = 8;  // dx dy dz sin cos w d h
inline constexpr std::size_t kDefaultTMax = 40;
inline constexpr double kMinBoxSize = 0.01;

using AttributeRow = std::array<double, kAttributeDim>;

struct RuleSequence {
  std::vector<std::size_t> rule_ids;
  std::vector<AttributeRow> attributes;

  std::size_t length() const { return rule_ids.size(); }
  bool operator==(const RuleSequence&) const = default;
};

AttributeRow attribute_row(const Pose& relative, const BoxShape& shape);
Pose row_pose(const AttributeRow& row);
BoxShape row_shape(const AttributeRow& row);

// Objects reordered as the leftmost derivation emits them. Throws
// ValidationError naming the categories the grammar cannot derive.
Scene canonical_order(const Scene& scene, const Grammar& grammar);

// Drops the instances the grammar cannot derive.
Scene clip_to_language(const Scene& scene, const Grammar& grammar);

// Unique leftmost derivation of the scene, padded to t_max. Throws
// ValidationError for unrepresentable categories or overflow.
RuleSequence parse(const Scene& scene, const Grammar& grammar, std::size_t t_max = kDefaultTMax);

// Chains relative poses back to absolute ones. Throws ValidationError
// naming the first offending step.
Scene unparse(const RuleSequence& seq, const Grammar& grammar);

// Empty when the sequence is a complete derivation with well-formed
// attribute rows, otherwise a message naming the first problem.
std::optional<std::string> validate_sequence(const RuleSequence& seq, const Grammar& grammar);

// Pending non-terminals (ids into Grammar::nonterminals()); back() is the top.
struct MaskState {
  std::vector<std::size_t> stack;
  std::size_t steps = 0;
  std::size_t t_max = kDefaultTMax;
  bool near_horizon = true;

  static MaskState initial(const Grammar& grammar, std::size_t t_max = kDefaultTMax);
  bool complete() const { return stack.empty(); }
  // Throws ValidationError if the rule is not allowed.
  void apply(std::size_t rule, const Grammar& grammar);
};

// Length one_hot_width(); the last entry is the padding rule.
std::vector<bool> valid_mask(const MaskState& state, const Grammar& grammar);

// Index of the largest allowed entry; NaN counts as -inf and ties go to
// the lowest index. The mask must allow at least one entry.
std::size_t masked_argmax(std::span<const double> row, const std::vector<bool>& mask);

// Masked greedy decode of row-major logits (T x N) and attributes (T x 8).
RuleSequence constrained_decode(std::span<const double> logits, std::span<const double> attrs,
                                std::size_t t_max, const Grammar& grammar);

struct SequenceDump {
  std::string grammar_fingerprint;
  std::size_t t_max = kDefaultTMax;
  std::vector<RuleSequence> sequences;
};

void save_sequences(const std::string& path, const SequenceDump& dump);
SequenceDump load_sequences(const std::string& path);

}  // namespace sgvae
