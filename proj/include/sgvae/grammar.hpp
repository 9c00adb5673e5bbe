#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sgvae {

inline constexpr const char* kStartSymbol = "S";
inline constexpr const char* kSceneNonTerminal = "SCENE";
inline constexpr const char* kNoneSymbol = "None";

enum class SymbolKind { kTerminal, kNonTerminal, kNone };

// Terminals are lower-case category names, non-terminals their upper-case
// spelling (BED for bed), plus the start symbol S and the empty object None.
struct Symbol {
  SymbolKind kind = SymbolKind::kTerminal;
  std::string name;

  static Symbol terminal(std::string n) { return {SymbolKind::kTerminal, std::move(n)}; }
  static Symbol nonterminal(std::string n) { return {SymbolKind::kNonTerminal, std::move(n)}; }
  static Symbol none() { return {SymbolKind::kNone, kNoneSymbol}; }

  bool operator==(const Symbol&) const = default;
};

std::string nonterminal_for(const std::string& category);
std::string category_for(const std::string& nonterminal);

enum class RuleKind {
  kStart,     // R1: S -> scene SCENE
  kScene,     // R2: SCENE -> t T SCENE
  kGenerate,  // R3: A -> b A  |  A -> b B A
  kNone,      // R4: A -> None
};

struct Rule {
  RuleKind kind = RuleKind::kNone;
  std::string lhs;
  std::vector<Symbol> rhs;

  // Terminal emitted by the rule, empty for R4.
  const std::string& emitted() const;
  // Non-terminal opened for the emitted terminal (T in R2, B in A -> b B A).
  std::optional<std::string> opened() const;

  std::string to_string() const;  // "LHS -> a B C"
  bool operator==(const Rule&) const = default;
};

Rule make_start_rule();
Rule make_scene_rule(const std::string& category);
Rule make_generate_rule(const std::string& anchor, const std::string& emitted, bool open_nt);
Rule make_none_rule(const std::string& nonterminal);

// Parses one rule such as "BED -> dresser BED" (a trailing ';' and the
// arrow '→' are accepted). Throws FormatError.
Rule parse_rule(const std::string& text);

// Number of object instances (room included) derivable from a scene whose
// categories occur `counts` times under the given rule list. Non-terminals
// are opened by fixpoint from SCENE; an opened anchor covers its first
// instance and, with a self-repeat rule, the rest; other categories are
// covered when an opened non-terminal emits them.
std::size_t derivable_count(const std::map<std::string, std::size_t>& counts,
                            std::span<const Rule> rules);

// Non-terminals opened for a scene with the given categories present.
std::vector<std::string> opened_nonterminals(const std::map<std::string, std::size_t>& counts,
                                             std::span<const Rule> rules);

class Grammar {
 public:
  Grammar() = default;
  // Validates the invariants (single S rule, one None rule per non-terminal
  // other than S, every RHS non-terminal defined and reachable from S).
  explicit Grammar(std::vector<Rule> rules);

  const std::vector<Rule>& rules() const { return rules_; }
  const Rule& rule(std::size_t i) const { return rules_.at(i); }
  std::size_t size() const { return rules_.size(); }
  // Dummy index appended after the real rules; one-hot width is size() + 1.
  std::size_t padding_index() const { return rules_.size(); }
  std::size_t one_hot_width() const { return rules_.size() + 1; }

  const std::vector<std::string>& nonterminals() const { return nonterminals_; }
  const std::vector<std::string>& terminals() const { return terminals_; }
  bool has_nonterminal(const std::string& nt) const;
  const std::vector<std::size_t>& rules_for_lhs(const std::string& nt) const;
  std::size_t none_rule(const std::string& nt) const;
  // A -> a A for the anchor's own category, if present.
  std::optional<std::size_t> self_repeat_rule(const std::string& nt) const;

  // Dense non-terminal ids (position in nonterminals()) used by the
  // derivation automaton.
  std::size_t nonterminal_index(const std::string& nt) const;
  std::size_t lhs_index(std::size_t rule) const { return lhs_ids_.at(rule); }
  // RHS non-terminal ids in push order: the last entry ends on top.
  const std::vector<std::size_t>& push_indices(std::size_t rule) const {
    return push_ids_.at(rule);
  }

  // Index of the first rule emitting `category`; defines category precedence.
  std::optional<std::size_t> precedence(const std::string& category) const;
  // True when `category` owns a non-terminal (other than S).
  bool is_anchor(const std::string& category) const;

  std::string to_text() const;
  std::string fingerprint() const;  // FNV-1a of to_text(), hex
  bool operator==(const Grammar& other) const { return rules_ == other.rules_; }

 private:
  std::vector<Rule> rules_;
  std::vector<std::string> nonterminals_;
  std::vector<std::string> terminals_;
  std::map<std::string, std::vector<std::size_t>> by_lhs_;
  std::map<std::string, std::size_t> precedence_;
  std::map<std::string, std::size_t> nt_ids_;
  std::vector<std::size_t> lhs_ids_;
  std::vector<std::vector<std::size_t>> push_ids_;
};

Grammar parse_grammar(const std::string& text);
Grammar load_grammar(const std::string& path);
void save_grammar(const std::string& path, const Grammar& g);

}  // namespace sgvae
