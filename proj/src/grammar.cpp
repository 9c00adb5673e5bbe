#include "sgvae/grammar.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "sgvae/error.hpp"
#include "sgvae/scene.hpp"
#include "sgvae/util.hpp"

namespace sgvae {

std::string nonterminal_for(const std::string& category) {
  std::string out = category;
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::string category_for(const std::string& nonterminal) {
  std::string out = nonterminal;
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

const std::string& Rule::emitted() const {
  static const std::string kEmpty;
  if (kind == RuleKind::kNone || rhs.empty()) return kEmpty;
  return rhs.front().name;
}

std::optional<std::string> Rule::opened() const {
  switch (kind) {
    case RuleKind::kStart:
    case RuleKind::kScene:
      return rhs[1].name;
    case RuleKind::kGenerate:
      if (rhs.size() == 3) return rhs[1].name;
      return std::nullopt;
    case RuleKind::kNone:
      return std::nullopt;
  }
  return std::nullopt;
}

std::string Rule::to_string() const {
  std::string out = lhs + " ->";
  for (const Symbol& s : rhs) out += " " + s.name;
  return out;
}

Rule make_start_rule() {
  return {RuleKind::kStart,
          kStartSymbol,
          {Symbol::terminal(kRoomCategory), Symbol::nonterminal(kSceneNonTerminal)}};
}

Rule make_scene_rule(const std::string& category) {
  return {RuleKind::kScene,
          kSceneNonTerminal,
          {Symbol::terminal(category), Symbol::nonterminal(nonterminal_for(category)),
           Symbol::nonterminal(kSceneNonTerminal)}};
}

Rule make_generate_rule(const std::string& anchor, const std::string& emitted, bool open_nt) {
  Rule r{RuleKind::kGenerate, nonterminal_for(anchor), {Symbol::terminal(emitted)}};
  if (open_nt) r.rhs.push_back(Symbol::nonterminal(nonterminal_for(emitted)));
  r.rhs.push_back(Symbol::nonterminal(nonterminal_for(anchor)));
  return r;
}

Rule make_none_rule(const std::string& nonterminal) {
  return {RuleKind::kNone, nonterminal, {Symbol::none()}};
}

namespace {

std::optional<Symbol> classify(const std::string& token) {
  if (token == kNoneSymbol) return Symbol::none();
  bool lower = false, upper = false;
  for (unsigned char c : token) {
    if (std::islower(c)) lower = true;
    else if (std::isupper(c)) upper = true;
    else if (!std::isdigit(c) && c != '_') return std::nullopt;
  }
  if (lower == upper) return std::nullopt;
  return lower ? Symbol::terminal(token) : Symbol::nonterminal(token);
}

RuleKind infer_kind(const std::string& lhs, const std::vector<Symbol>& rhs) {
  auto fail = [&](const std::string& why) -> RuleKind {
    throw FormatError("rule '" + lhs + " -> ...': " + why);
  };
  if (rhs.size() == 1 && rhs[0].kind == SymbolKind::kNone) {
    if (lhs == kStartSymbol) fail("the start symbol has no None rule");
    return RuleKind::kNone;
  }
  for (const Symbol& s : rhs) {
    if (s.kind == SymbolKind::kNone) fail("None may only appear alone");
  }
  if (rhs.empty() || rhs[0].kind != SymbolKind::kTerminal) fail("must start with a terminal");
  if (lhs == kStartSymbol) {
    if (rhs.size() == 2 && rhs[0].name == kRoomCategory && rhs[1].name == kSceneNonTerminal &&
        rhs[1].kind == SymbolKind::kNonTerminal) {
      return RuleKind::kStart;
    }
    fail("the start rule must be 'S -> scene SCENE'");
  }
  if (rhs[0].name == kRoomCategory) fail("'scene' is only emitted by the start rule");
  const std::string own_nt = nonterminal_for(rhs[0].name);
  if (lhs == kSceneNonTerminal) {
    if (rhs.size() == 3 && rhs[1].kind == SymbolKind::kNonTerminal && rhs[1].name == own_nt &&
        rhs[2].kind == SymbolKind::kNonTerminal && rhs[2].name == kSceneNonTerminal) {
      return RuleKind::kScene;
    }
    fail("SCENE rules must read 'SCENE -> t T SCENE'");
  }
  if (rhs.size() == 2 && rhs[1].kind == SymbolKind::kNonTerminal && rhs[1].name == lhs) {
    return RuleKind::kGenerate;
  }
  if (rhs.size() == 3 && rhs[1].kind == SymbolKind::kNonTerminal && rhs[1].name == own_nt &&
      own_nt != lhs && rhs[2].kind == SymbolKind::kNonTerminal && rhs[2].name == lhs) {
    return RuleKind::kGenerate;
  }
  return fail("expected 'A -> b A' or 'A -> b B A'");
}

}  // namespace

Rule parse_rule(const std::string& text) {
  std::string body = text;
  if (auto semi = body.find(';'); semi != std::string::npos) body.erase(semi);
  const std::string unicode_arrow = "\xe2\x86\x92";
  for (std::size_t pos; (pos = body.find(unicode_arrow)) != std::string::npos;) {
    body.replace(pos, unicode_arrow.size(), " -> ");
  }
  std::istringstream ss(body);
  std::vector<std::string> tok;
  for (std::string t; ss >> t;) tok.push_back(t);
  if (tok.size() < 3 || tok[1] != "->") throw FormatError("expected 'LHS -> symbols'");
  const auto lhs = classify(tok[0]);
  if (!lhs || lhs->kind != SymbolKind::kNonTerminal) {
    throw FormatError("left-hand side '" + tok[0] + "' is not a non-terminal");
  }
  Rule r;
  r.lhs = tok[0];
  for (std::size_t i = 2; i < tok.size(); ++i) {
    const auto s = classify(tok[i]);
    if (!s) throw FormatError("bad symbol '" + tok[i] + "'");
    r.rhs.push_back(*s);
  }
  r.kind = infer_kind(r.lhs, r.rhs);
  return r;
}

// ---------------------------------------------------------------------------

std::vector<std::string> opened_nonterminals(const std::map<std::string, std::size_t>& counts,
                                             std::span<const Rule> rules) {
  std::vector<std::string> opened{kSceneNonTerminal};
  auto is_open = [&](const std::string& nt) {
    return std::find(opened.begin(), opened.end(), nt) != opened.end();
  };
  auto present = [&](const std::string& c) {
    auto it = counts.find(c);
    return it != counts.end() && it->second > 0;
  };
  for (bool changed = true; changed;) {
    changed = false;
    for (const Rule& r : rules) {
      if (r.kind != RuleKind::kScene && r.kind != RuleKind::kGenerate) continue;
      const auto nt = r.opened();
      if (!nt || !is_open(r.lhs) || is_open(*nt) || !present(r.emitted())) continue;
      opened.push_back(*nt);
      changed = true;
    }
  }
  return opened;
}

std::size_t derivable_count(const std::map<std::string, std::size_t>& counts,
                            std::span<const Rule> rules) {
  const std::vector<std::string> opened = opened_nonterminals(counts, rules);
  auto is_open = [&](const std::string& nt) {
    return std::find(opened.begin(), opened.end(), nt) != opened.end();
  };
  std::size_t covered = 1;  // the room
  for (const auto& [category, n] : counts) {
    if (n == 0 || category == kRoomCategory) continue;
    const std::string nt = nonterminal_for(category);
    if (is_open(nt)) {
      const bool repeat = std::any_of(rules.begin(), rules.end(), [&](const Rule& r) {
        return r.kind == RuleKind::kGenerate && r.lhs == nt && r.rhs.size() == 2 &&
               r.emitted() == category;
      });
      covered += repeat ? n : 1;
      continue;
    }
    const bool emitted = std::any_of(rules.begin(), rules.end(), [&](const Rule& r) {
      return r.kind == RuleKind::kGenerate && r.rhs.size() == 2 && r.emitted() == category &&
             is_open(r.lhs);
    });
    if (emitted) covered += n;
  }
  return covered;
}

// ---------------------------------------------------------------------------

Grammar::Grammar(std::vector<Rule> rules) : rules_(std::move(rules)) {
  std::set<std::string> seen_t;
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    const Rule& r = rules_[i];
    if (!by_lhs_.count(r.lhs)) nonterminals_.push_back(r.lhs);
    by_lhs_[r.lhs].push_back(i);
    if (r.kind != RuleKind::kNone) {
      const std::string& t = r.emitted();
      if (seen_t.insert(t).second) terminals_.push_back(t);
      precedence_.emplace(t, i);
    }
  }
  const auto start = by_lhs_.find(kStartSymbol);
  if (start == by_lhs_.end() || start->second.size() != 1 ||
      rules_[start->second.front()].kind != RuleKind::kStart) {
    throw ValidationError("grammar needs exactly one start rule 'S -> scene SCENE'");
  }
  for (const std::string& nt : nonterminals_) {
    if (nt == kStartSymbol) continue;
    const auto& idx = by_lhs_.at(nt);
    const auto nones = std::count_if(idx.begin(), idx.end(), [&](std::size_t i) {
      return rules_[i].kind == RuleKind::kNone;
    });
    if (nones != 1) {
      throw ValidationError("non-terminal " + nt + " needs exactly one None rule, found " +
                            std::to_string(nones));
    }
  }
  std::set<std::string> reached{kStartSymbol};
  std::vector<std::string> frontier{kStartSymbol};
  while (!frontier.empty()) {
    const std::string nt = frontier.back();
    frontier.pop_back();
    for (std::size_t i : by_lhs_.at(nt)) {
      for (const Symbol& s : rules_[i].rhs) {
        if (s.kind != SymbolKind::kNonTerminal) continue;
        if (!by_lhs_.count(s.name)) {
          throw ValidationError("non-terminal " + s.name + " is used but has no rules");
        }
        if (reached.insert(s.name).second) frontier.push_back(s.name);
      }
    }
  }
  for (const std::string& nt : nonterminals_) {
    if (!reached.count(nt)) throw ValidationError("non-terminal " + nt + " is unreachable from S");
  }
  for (std::size_t i = 0; i < nonterminals_.size(); ++i) nt_ids_[nonterminals_[i]] = i;
  for (const Rule& r : rules_) {
    lhs_ids_.push_back(nt_ids_.at(r.lhs));
    std::vector<std::size_t> push;
    for (auto it = r.rhs.rbegin(); it != r.rhs.rend(); ++it) {
      if (it->kind == SymbolKind::kNonTerminal) push.push_back(nt_ids_.at(it->name));
    }
    push_ids_.push_back(std::move(push));
  }
}

std::optional<std::size_t> Grammar::self_repeat_rule(const std::string& nt) const {
  const std::string own = category_for(nt);
  for (std::size_t i : rules_for_lhs(nt)) {
    const Rule& r = rules_[i];
    if (r.kind == RuleKind::kGenerate && r.rhs.size() == 2 && r.emitted() == own) return i;
  }
  return std::nullopt;
}

std::size_t Grammar::nonterminal_index(const std::string& nt) const {
  auto it = nt_ids_.find(nt);
  if (it == nt_ids_.end()) throw ValidationError("unknown non-terminal " + nt);
  return it->second;
}

bool Grammar::has_nonterminal(const std::string& nt) const { return by_lhs_.count(nt) > 0; }

const std::vector<std::size_t>& Grammar::rules_for_lhs(const std::string& nt) const {
  static const std::vector<std::size_t> kEmpty;
  auto it = by_lhs_.find(nt);
  return it == by_lhs_.end() ? kEmpty : it->second;
}

std::size_t Grammar::none_rule(const std::string& nt) const {
  for (std::size_t i : rules_for_lhs(nt)) {
    if (rules_[i].kind == RuleKind::kNone) return i;
  }
  throw ValidationError("no None rule for " + nt);
}

std::optional<std::size_t> Grammar::precedence(const std::string& category) const {
  auto it = precedence_.find(category);
  if (it == precedence_.end()) return std::nullopt;
  return it->second;
}

bool Grammar::is_anchor(const std::string& category) const {
  const std::string nt = nonterminal_for(category);
  return nt != kStartSymbol && nt != kSceneNonTerminal && has_nonterminal(nt);
}

std::string Grammar::to_text() const {
  std::string out;
  for (const Rule& r : rules_) out += r.to_string() + " ;\n";
  return out;
}

std::string Grammar::fingerprint() const { return hex64(fnv1a64(to_text())); }

Grammar parse_grammar(const std::string& text) {
  std::vector<Rule> rules;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::size_t start = 0;
    while (start <= line.size()) {
      std::size_t semi = line.find(';', start);
      if (semi == std::string::npos) semi = line.size();
      const std::string chunk = line.substr(start, semi - start);
      if (chunk.find_first_not_of(" \t\r") != std::string::npos) {
        try {
          rules.push_back(parse_rule(chunk));
        } catch (const FormatError& e) {
          throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
        }
      }
      start = semi + 1;
    }
  }
  try {
    return Grammar(std::move(rules));
  } catch (const ValidationError& e) {
    throw FormatError(std::string("invalid grammar: ") + e.what());
  }
}

Grammar load_grammar(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open grammar '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_grammar(buf.str());
}

void save_grammar(const std::string& path, const Grammar& g) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write grammar '" + path + "'");
  out << g.to_text();
}

}  // namespace sgvae
