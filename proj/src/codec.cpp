#include "sgvae/codec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "sgvae/error.hpp"

namespace sgvae {

AttributeRow attribute_row(const Pose& relative, const BoxShape& shape) {
  return {relative.center[0], relative.center[1], relative.center[2],
          std::sin(relative.yaw), std::cos(relative.yaw),
          shape.size[0], shape.size[1], shape.size[2]};
}

Pose row_pose(const AttributeRow& row) {
  Pose p;
  p.center = {row[0], row[1], row[2]};
  p.yaw = wrap_angle(std::atan2(row[3], row[4]));
  return p;
}

BoxShape row_shape(const AttributeRow& row) { return BoxShape{{row[5], row[6], row[7]}}; }

namespace {

constexpr std::size_t kNoPrecedence = std::numeric_limits<std::size_t>::max();

struct Child {
  std::size_t object = 0;
  std::size_t rule = 0;
  int node = -1;  // plan node opened by this child
  std::size_t precedence = 0;
  std::size_t rank = 0;  // position within its (node, category) group
};

struct Node {
  std::string nt;
  int anchor = -1;  // object index, -1 for the room
  std::vector<Child> children;
};

struct Plan {
  std::vector<Node> nodes;  // nodes[0] is SCENE
  std::vector<bool> assigned;
};

std::size_t precedence_of(const Grammar& g, const std::string& category) {
  return g.precedence(category).value_or(kNoPrecedence);
}

std::optional<std::size_t> find_rule(const Grammar& g, const std::string& lhs,
                                     const std::string& emitted, bool opens) {
  if (!g.has_nonterminal(lhs)) return std::nullopt;
  for (std::size_t i : g.rules_for_lhs(lhs)) {
    const Rule& r = g.rule(i);
    if (r.kind == RuleKind::kNone || r.emitted() != emitted) continue;
    if (r.opened().has_value() == opens) return i;
  }
  return std::nullopt;
}

// Sweep order of instances around `ref`: anti-clockwise from its heading,
// then nearer first, then smaller first, then input order.
void sort_by_sweep(std::vector<std::size_t>& ids, const Scene& scene, const Pose& ref) {
  struct Key {
    double angle, distance, volume;
    std::size_t index;
  };
  std::vector<Key> keys;
  for (std::size_t id : ids) {
    const ObjectInstance& o = scene.objects[id];
    const double dx = o.pose.center[0] - ref.center[0];
    const double dy = o.pose.center[1] - ref.center[1];
    keys.push_back({heading_angle(ref, o.pose.center), std::hypot(dx, dy),
                    o.shape.size[0] * o.shape.size[1] * o.shape.size[2], id});
  }
  std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
    if (a.angle != b.angle) return a.angle < b.angle;
    if (a.distance != b.distance) return a.distance < b.distance;
    if (a.volume != b.volume) return a.volume < b.volume;
    return a.index < b.index;
  });
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = keys[i].index;
}

Plan build_plan(const Scene& scene, const Grammar& g) {
  Plan plan;
  plan.assigned.assign(scene.objects.size(), false);
  plan.nodes.push_back({kSceneNonTerminal, -1, {}});

  std::map<std::string, std::vector<std::size_t>> by_category;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    by_category[scene.objects[i].category].push_back(i);
  }
  std::vector<std::string> present;
  for (const auto& kv : by_category) present.push_back(kv.first);
  std::stable_sort(present.begin(), present.end(), [&](const auto& a, const auto& b) {
    return precedence_of(g, a) < precedence_of(g, b);
  });

  std::map<std::string, int> opened{{kSceneNonTerminal, 0}};
  auto pose_of = [&](int node) -> const Pose& {
    const int a = plan.nodes[node].anchor;
    return a < 0 ? scene.room.pose : scene.objects[a].pose;
  };
  auto node_precedence = [&](const std::string& nt) {
    return nt == kSceneNonTerminal ? std::size_t{0} : precedence_of(g, category_for(nt)) + 1;
  };

  auto open = [&](const std::string& category, int owner, std::size_t rule) {
    std::vector<std::size_t> ids = by_category[category];
    sort_by_sweep(ids, scene, pose_of(owner));
    const std::string nt = nonterminal_for(category);
    const int node = static_cast<int>(plan.nodes.size());
    plan.nodes.push_back({nt, static_cast<int>(ids[0]), {}});
    opened[nt] = node;
    const std::size_t prec = precedence_of(g, category);
    plan.nodes[owner].children.push_back({ids[0], rule, node, prec, 0});
    plan.assigned[ids[0]] = true;
    if (const auto repeat = g.self_repeat_rule(nt)) {
      for (std::size_t k = 1; k < ids.size(); ++k) {
        plan.nodes[node].children.push_back({ids[k], *repeat, -1, prec, k});
        plan.assigned[ids[k]] = true;
      }
    }
  };

  for (;;) {
    bool progressed = false;
    for (const std::string& c : present) {
      const std::string nt = nonterminal_for(c);
      if (!g.has_nonterminal(nt) || opened.count(nt)) continue;
      int best = -1;
      std::size_t best_rule = 0, best_prec = kNoPrecedence;
      for (const auto& [owner_nt, node] : opened) {
        if (owner_nt == kSceneNonTerminal) continue;
        const auto r = find_rule(g, owner_nt, c, true);
        if (r && node_precedence(owner_nt) < best_prec) {
          best = node;
          best_rule = *r;
          best_prec = node_precedence(owner_nt);
        }
      }
      if (best >= 0) {
        open(c, best, best_rule);
        progressed = true;
        break;
      }
    }
    if (!progressed) {
      for (const std::string& c : present) {
        const std::string nt = nonterminal_for(c);
        if (!g.has_nonterminal(nt) || opened.count(nt)) continue;
        if (const auto r = find_rule(g, kSceneNonTerminal, c, true)) {
          open(c, 0, *r);
          progressed = true;
          break;
        }
      }
    }
    if (!progressed) break;
  }

  for (const std::string& c : present) {
    if (opened.count(nonterminal_for(c))) continue;
    int best = -1;
    std::size_t best_rule = 0, best_prec = kNoPrecedence;
    for (const auto& [owner_nt, node] : opened) {
      const auto r = find_rule(g, owner_nt, c, false);
      if (r && node_precedence(owner_nt) < best_prec) {
        best = node;
        best_rule = *r;
        best_prec = node_precedence(owner_nt);
      }
    }
    if (best < 0) continue;
    std::vector<std::size_t> ids = by_category[c];
    sort_by_sweep(ids, scene, pose_of(best));
    const std::size_t prec = precedence_of(g, c);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      plan.nodes[best].children.push_back({ids[k], best_rule, -1, prec, k});
      plan.assigned[ids[k]] = true;
    }
  }

  for (Node& n : plan.nodes) {
    std::stable_sort(n.children.begin(), n.children.end(), [](const Child& a, const Child& b) {
      if (a.precedence != b.precedence) return a.precedence < b.precedence;
      return a.rank < b.rank;
    });
  }
  return plan;
}

void require_representable(const Scene& scene, const Plan& plan) {
  std::set<std::string> offenders;
  for (std::size_t i = 0; i < plan.assigned.size(); ++i) {
    if (!plan.assigned[i]) offenders.insert(scene.objects[i].category);
  }
  if (offenders.empty()) return;
  std::string msg = "categories not derivable by the grammar:";
  for (const std::string& c : offenders) msg += " " + c;
  throw ValidationError(msg);
}

struct Emitter {
  const Scene& scene;
  const Grammar& g;
  const Plan& plan;
  RuleSequence seq;
  std::vector<std::size_t> order;

  void push(std::size_t rule, const AttributeRow& row) {
    seq.rule_ids.push_back(rule);
    seq.attributes.push_back(row);
  }

  void emit(int node, Pose ref) {
    const Node& n = plan.nodes[node];
    for (const Child& c : n.children) {
      const ObjectInstance& o = scene.objects[c.object];
      push(c.rule, attribute_row(compose(inverse(ref), o.pose), o.shape));
      order.push_back(c.object);
      const Rule& r = g.rule(c.rule);
      if (r.rhs.size() == 2 && r.emitted() == category_for(n.nt)) ref = o.pose;
      if (c.node >= 0) emit(c.node, o.pose);
    }
    push(g.none_rule(n.nt), AttributeRow{});
  }
};

Emitter run_emitter(const Scene& scene, const Grammar& g, const Plan& plan) {
  Emitter e{scene, g, plan, {}, {}};
  e.push(g.rules_for_lhs(kStartSymbol).front(), attribute_row(scene.room.pose, scene.room.shape));
  e.emit(0, scene.room.pose);
  return e;
}

bool is_zero(const AttributeRow& row) {
  return std::all_of(row.begin(), row.end(), [](double v) { return v == 0.0; });
}

}  // namespace

Scene canonical_order(const Scene& scene, const Grammar& grammar) {
  const Plan plan = build_plan(scene, grammar);
  require_representable(scene, plan);
  const Emitter e = run_emitter(scene, grammar, plan);
  Scene out;
  out.room = scene.room;
  for (std::size_t i : e.order) out.objects.push_back(scene.objects[i]);
  return out;
}

Scene clip_to_language(const Scene& scene, const Grammar& grammar) {
  const Plan plan = build_plan(scene, grammar);
  Scene out;
  out.room = scene.room;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    if (plan.assigned[i]) out.objects.push_back(scene.objects[i]);
  }
  return out;
}

RuleSequence parse(const Scene& scene, const Grammar& grammar, std::size_t t_max) {
  const Plan plan = build_plan(scene, grammar);
  require_representable(scene, plan);
  Emitter e = run_emitter(scene, grammar, plan);
  if (e.seq.length() > t_max) {
    throw ValidationError("sequence overflow: derivation needs " +
                          std::to_string(e.seq.length()) + " rules, T_max is " +
                          std::to_string(t_max));
  }
  while (e.seq.length() < t_max) e.push(grammar.padding_index(), AttributeRow{});
  return std::move(e.seq);
}

Scene unparse(const RuleSequence& seq, const Grammar& g) {
  if (seq.attributes.size() != seq.rule_ids.size()) {
    throw ValidationError("rule and attribute counts differ");
  }
  struct Frame {
    std::string nt;
    Pose ref;
  };
  std::vector<Frame> stack{{kStartSymbol, Pose::identity()}};
  Scene out;
  for (std::size_t t = 0; t < seq.length(); ++t) {
    const std::size_t id = seq.rule_ids[t];
    const std::string where = "step " + std::to_string(t) + ": ";
    if (id > g.padding_index()) throw ValidationError(where + "rule index out of range");
    if (stack.empty()) {
      if (id != g.padding_index()) throw ValidationError(where + "rule after derivation ended");
      continue;
    }
    if (id == g.padding_index()) throw ValidationError(where + "padding before derivation ended");
    const Rule& r = g.rule(id);
    const Frame top = stack.back();
    if (r.lhs != top.nt) {
      throw ValidationError(where + "rule '" + r.to_string() + "' does not expand " + top.nt);
    }
    stack.pop_back();
    if (r.kind == RuleKind::kNone) continue;

    const AttributeRow& row = seq.attributes[t];
    const BoxShape shape = row_shape(row);
    if (!shape.valid()) throw ValidationError(where + "non-positive box size");
    const Pose pose = compose(top.ref, row_pose(row));
    if (r.kind == RuleKind::kStart) {
      out.room = {kRoomCategory, pose, shape};
      stack.push_back({kSceneNonTerminal, pose});
      continue;
    }
    out.objects.push_back({r.emitted(), pose, shape});
    if (r.kind == RuleKind::kGenerate) {
      const bool repeat = r.rhs.size() == 2 && r.emitted() == category_for(r.lhs);
      stack.push_back({r.lhs, repeat ? pose : top.ref});
    } else {
      stack.push_back({r.lhs, top.ref});
    }
    if (const auto nt = r.opened()) stack.push_back({*nt, pose});
  }
  if (!stack.empty()) throw ValidationError("derivation incomplete at end of sequence");
  return out;
}

std::optional<std::string> validate_sequence(const RuleSequence& seq, const Grammar& g) {
  if (seq.attributes.size() != seq.rule_ids.size()) return "rule and attribute counts differ";
  MaskState state = MaskState::initial(g, seq.length());
  state.near_horizon = false;
  for (std::size_t t = 0; t < seq.length(); ++t) {
    const std::size_t id = seq.rule_ids[t];
    const std::string where = "step " + std::to_string(t) + ": ";
    if (id > g.padding_index()) return where + "rule index out of range";
    if (!valid_mask(state, g)[id]) return where + "rule not allowed by the derivation stack";
    state.apply(id, g);
    const AttributeRow& row = seq.attributes[t];
    for (double v : row) {
      if (!std::isfinite(v)) return where + "non-finite attribute";
    }
    if (id == g.padding_index() || g.rule(id).kind == RuleKind::kNone) {
      if (!is_zero(row)) return where + "attributes of a None or padding rule must be zero";
      continue;
    }
    if (std::abs(row[3] * row[3] + row[4] * row[4] - 1.0) > 1e-6) {
      return where + "sin/cos of yaw not normalized";
    }
    if (!row_shape(row).valid()) return where + "non-positive box size";
  }
  if (!state.complete()) return std::string("derivation incomplete at end of sequence");
  return std::nullopt;
}

MaskState MaskState::initial(const Grammar& grammar, std::size_t t_max) {
  MaskState s;
  s.stack.push_back(grammar.nonterminal_index(kStartSymbol));
  s.t_max = t_max;
  return s;
}

void MaskState::apply(std::size_t rule, const Grammar& grammar) {
  if (rule == grammar.padding_index()) {
    if (!stack.empty()) throw ValidationError("padding before derivation ended");
    ++steps;
    return;
  }
  if (stack.empty() || grammar.lhs_index(rule) != stack.back()) {
    throw ValidationError("rule " + std::to_string(rule) + " does not expand the stack top");
  }
  stack.pop_back();
  for (std::size_t nt : grammar.push_indices(rule)) stack.push_back(nt);
  ++steps;
}

std::vector<bool> valid_mask(const MaskState& state, const Grammar& grammar) {
  std::vector<bool> mask(grammar.one_hot_width(), false);
  if (state.stack.empty()) {
    mask[grammar.padding_index()] = true;
    return mask;
  }
  const std::size_t top = state.stack.back();
  for (std::size_t r = 0; r < grammar.size(); ++r) {
    if (grammar.lhs_index(r) != top) continue;
    if (state.near_horizon) {
      const std::size_t depth = state.stack.size() - 1 + grammar.push_indices(r).size();
      if (state.steps + 1 + depth > state.t_max) continue;
    }
    mask[r] = true;
  }
  return mask;
}

std::size_t masked_argmax(std::span<const double> row, const std::vector<bool>& mask) {
  std::size_t best = row.size();
  double best_v = 0.0;
  for (std::size_t r = 0; r < row.size(); ++r) {
    if (!mask[r]) continue;
    double v = row[r];
    if (std::isnan(v)) v = -std::numeric_limits<double>::infinity();
    if (best == row.size() || v > best_v) {
      best = r;
      best_v = v;
    }
  }
  if (best == row.size()) throw ValidationError("mask allows no rule");
  return best;
}

RuleSequence constrained_decode(std::span<const double> logits, std::span<const double> attrs,
                                std::size_t t_max, const Grammar& g) {
  const std::size_t n = g.one_hot_width();
  if (logits.size() != t_max * n || attrs.size() != t_max * kAttributeDim) {
    throw ValidationError("decoder output shape does not match T_max and grammar");
  }
  if (t_max < 2) throw ValidationError("T_max must be at least 2");
  RuleSequence seq;
  MaskState state = MaskState::initial(g, t_max);
  for (std::size_t t = 0; t < t_max; ++t) {
    const std::size_t best = masked_argmax(logits.subspan(t * n, n), valid_mask(state, g));
    state.apply(best, g);
    AttributeRow row{};
    if (best != g.padding_index() && g.rule(best).kind != RuleKind::kNone) {
      for (std::size_t k = 0; k < kAttributeDim; ++k) {
        const double v = attrs[t * kAttributeDim + k];
        row[k] = std::isfinite(v) ? v : 0.0;
      }
      const double norm = std::hypot(row[3], row[4]);
      if (norm < 1e-12 || !std::isfinite(norm)) {
        row[3] = 0.0;
        row[4] = 1.0;
      } else {
        row[3] /= norm;
        row[4] /= norm;
      }
      for (std::size_t k = 5; k < kAttributeDim; ++k) row[k] = std::max(row[k], kMinBoxSize);
    }
    seq.rule_ids.push_back(best);
    seq.attributes.push_back(row);
  }
  return seq;
}

void save_sequences(const std::string& path, const SequenceDump& dump) {
  nlohmann::json j;
  j["grammar_fingerprint"] = dump.grammar_fingerprint;
  j["t_max"] = dump.t_max;
  j["attribute_dim"] = kAttributeDim;
  nlohmann::json list = nlohmann::json::array();
  for (const RuleSequence& s : dump.sequences) {
    nlohmann::json flat = nlohmann::json::array();
    for (const AttributeRow& row : s.attributes) {
      for (double v : row) flat.push_back(v);
    }
    list.push_back({{"rule_ids", s.rule_ids}, {"attributes", flat}});
  }
  j["sequences"] = std::move(list);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write sequences '" + path + "'");
  out << j.dump() << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

SequenceDump load_sequences(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open sequences '" + path + "'");
  SequenceDump dump;
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    dump.grammar_fingerprint = j.at("grammar_fingerprint").get<std::string>();
    dump.t_max = j.at("t_max").get<std::size_t>();
    if (j.value("attribute_dim", kAttributeDim) != kAttributeDim) {
      throw FormatError("unsupported attribute dimension");
    }
    for (const nlohmann::json& e : j.at("sequences")) {
      RuleSequence s;
      s.rule_ids = e.at("rule_ids").get<std::vector<std::size_t>>();
      const auto flat = e.at("attributes").get<std::vector<double>>();
      if (s.rule_ids.size() != dump.t_max || flat.size() != dump.t_max * kAttributeDim) {
        throw FormatError("sequence length does not match t_max");
      }
      for (std::size_t t = 0; t < dump.t_max; ++t) {
        AttributeRow row;
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(t * kAttributeDim), kAttributeDim,
                    row.begin());
        s.attributes.push_back(row);
      }
      dump.sequences.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed sequence file '" + path + "': " + e.what());
  }
  return dump;
}

}  // namespace sgvae
