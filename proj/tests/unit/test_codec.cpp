#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <random>

#include "fixtures.hpp"
#include "sgvae/codec.hpp"
#include "sgvae/error.hpp"
#include "sgvae/synthetic.hpp"

using namespace sgvae;

namespace {

const char* const kTableGrammar = R"(S -> scene SCENE ;
SCENE -> table TABLE SCENE ;
TABLE -> table TABLE ;
TABLE -> chair TABLE ;
TABLE -> None ;
SCENE -> None ;
)";

void check_scene_near(const Scene& a, const Scene& b, double tol) {
  REQUIRE(a.objects.size() == b.objects.size());
  auto same = [&](const ObjectInstance& x, const ObjectInstance& y) {
    CHECK(x.category == y.category);
    for (int k = 0; k < 3; ++k) {
      CHECK(std::abs(x.pose.center[k] - y.pose.center[k]) <= tol);
      CHECK(std::abs(x.shape.size[k] - y.shape.size[k]) <= tol);
    }
    CHECK(std::abs(wrap_angle(x.pose.yaw - y.pose.yaw)) <= tol);
  };
  same(a.room, b.room);
  for (std::size_t i = 0; i < a.objects.size(); ++i) same(a.objects[i], b.objects[i]);
}

// Can `stack` (top at back) be emptied in at most `budget` more steps?
bool completable(const Grammar& g, std::vector<std::size_t> stack, std::size_t budget) {
  if (stack.empty()) return true;
  if (budget == 0) return false;
  const std::size_t top = stack.back();
  stack.pop_back();
  for (std::size_t r = 0; r < g.size(); ++r) {
    if (g.lhs_index(r) != top) continue;
    auto next = stack;
    for (std::size_t nt : g.push_indices(r)) next.push_back(nt);
    if (completable(g, next, budget - 1)) return true;
  }
  return false;
}

std::vector<double> one_hot_logits(const RuleSequence& seq, std::size_t width) {
  std::vector<double> out(seq.length() * width, 0.0);
  for (std::size_t t = 0; t < seq.length(); ++t) out[t * width + seq.rule_ids[t]] = 1.0;
  return out;
}

std::vector<double> flat_attrs(const RuleSequence& seq) {
  std::vector<double> out;
  for (const auto& row : seq.attributes) out.insert(out.end(), row.begin(), row.end());
  return out;
}

}  // namespace

TEST_CASE("row helpers") {
  const AttributeRow row = attribute_row(Pose{{1.0, 2.0, 3.0}, 0.5}, BoxShape{{4.0, 5.0, 6.0}});
  CHECK(row[3] == doctest::Approx(std::sin(0.5)));
  CHECK(row[4] == doctest::Approx(std::cos(0.5)));
  CHECK(row_pose(row).yaw == doctest::Approx(0.5));
  CHECK(row_shape(row).size == Vec3{4.0, 5.0, 6.0});
}

TEST_CASE("room-only scene") {
  const Grammar g = fixtures::bedroom_grammar();
  const Scene s = fixtures::scene({});
  const RuleSequence seq = parse(s, g);
  REQUIRE(seq.length() == kDefaultTMax);
  CHECK(seq.rule_ids[0] == 0);
  CHECK(seq.rule_ids[1] == 10);
  for (std::size_t t = 2; t < seq.length(); ++t) CHECK(seq.rule_ids[t] == g.padding_index());
  CHECK(seq.attributes[0] == attribute_row(s.room.pose, s.room.shape));
  check_scene_near(unparse(seq, g), s, 1e-12);
  CHECK(canonical_order(s, g).objects.empty());
}

TEST_CASE("bed, sofa and dresser give the seven-rule derivation") {
  const Grammar g = fixtures::bedroom_grammar();
  const Scene s = fixtures::scene({fixtures::object("sofa", 1.0, 2.0, 0.4, 0.3),
                                   fixtures::object("dresser", -2.0, -1.0, 0.5, 1.2),
                                   fixtures::object("bed", -1.0, -1.0, 0.3, 0.5, 2.0, 1.6, 0.6)});
  const RuleSequence seq = parse(s, g, 10);
  const std::vector<std::size_t> expected{0, 1, 4, 6, 2, 9, 10, 11, 11, 11};
  CHECK(seq.rule_ids == expected);
  // dresser row is relative to the bed
  const Pose rel = compose(inverse(s.objects[2].pose), s.objects[1].pose);
  const AttributeRow want = attribute_row(rel, s.objects[1].shape);
  for (std::size_t k = 0; k < kAttributeDim; ++k) CHECK(seq.attributes[2][k] == doctest::Approx(want[k]));
  for (std::size_t t : {3, 5, 6, 7}) CHECK(seq.attributes[t] == AttributeRow{});
  const Scene back = unparse(seq, g);
  CHECK(back.objects[0].category == "bed");
  CHECK(back.objects[1].category == "dresser");
  CHECK(back.objects[2].category == "sofa");
  check_scene_near(back, canonical_order(s, g), 1e-9);
  CHECK_FALSE(validate_sequence(seq, g).has_value());
  CHECK_FALSE(fixtures::derivation_error(seq, g).has_value());
}

TEST_CASE("unparse chains relative poses") {
  const Grammar g = fixtures::bedroom_grammar();
  RuleSequence seq;
  seq.rule_ids = {0, 1, 4, 6, 10};
  seq.attributes = {attribute_row(Pose::identity(), BoxShape{{6, 6, 3}}),
                    attribute_row(Pose{{1, 0, 0}, kPi / 2}, BoxShape{{2, 1.5, 0.5}}),
                    attribute_row(Pose{{1, 0, 0}, 0.0}, BoxShape{{1, 0.5, 1}}), {}, {}};
  const Scene s = unparse(seq, g);
  REQUIRE(s.objects.size() == 2);
  const Pose expected = fixtures::matrix_pose(fixtures::mat_mul(
      fixtures::pose_matrix(Pose{{1, 0, 0}, kPi / 2}), fixtures::pose_matrix(Pose{{1, 0, 0}, 0})));
  CHECK(s.objects[1].pose.center[0] == doctest::Approx(expected.center[0]));
  CHECK(s.objects[1].pose.center[1] == doctest::Approx(1.0));
  CHECK(s.objects[1].pose.yaw == doctest::Approx(kPi / 2));
}

TEST_CASE("unparse names the first bad step") {
  const Grammar g = fixtures::bedroom_grammar();
  RuleSequence seq;
  seq.rule_ids = {0, 4, 10};
  seq.attributes.resize(3);
  seq.attributes[0] = attribute_row(Pose::identity(), BoxShape{});
  try {
    unparse(seq, g);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("step 1") != std::string::npos);
  }
  CHECK(validate_sequence(seq, g)->find("step 1") != std::string::npos);
}

TEST_CASE("chairs around a table follow the anti-clockwise sweep") {
  const Grammar g = parse_grammar(kTableGrammar);
  const Scene s = fixtures::scene({fixtures::object("chair", 0.0, -1.0),
                                   fixtures::object("chair", -1.0, 0.0),
                                   fixtures::object("table", 0.0, 0.0, 0.0, 0.0, 1.2, 1.2, 0.7),
                                   fixtures::object("chair", 0.0, 1.0),
                                   fixtures::object("chair", 1.0, 0.0)});
  const Scene c = canonical_order(s, g);
  REQUIRE(c.objects.size() == 5);
  CHECK(c.objects[0].category == "table");
  const std::vector<std::pair<double, double>> expected{{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(c.objects[i + 1].pose.center[0] == doctest::Approx(expected[i].first));
    CHECK(c.objects[i + 1].pose.center[1] == doctest::Approx(expected[i].second));
  }
}

TEST_CASE("multi-instance order equals an independent angle sort") {
  const Grammar g = parse_grammar(kTableGrammar);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-2.0, 2.0), yaw(-kPi, kPi);
  for (int trial = 0; trial < 100; ++trial) {
    const ObjectInstance table = fixtures::object("table", u(rng), u(rng), 0.0, yaw(rng));
    std::vector<ObjectInstance> chairs;
    for (int i = 0; i < 6; ++i) chairs.push_back(fixtures::object("chair", u(rng), u(rng)));
    std::vector<ObjectInstance> objs = chairs;
    objs.insert(objs.begin() + 3, table);
    const Scene c = canonical_order(fixtures::scene(objs), g);
    auto angle = [&](const ObjectInstance& o) {
      const double dx = o.pose.center[0] - table.pose.center[0];
      const double dy = o.pose.center[1] - table.pose.center[1];
      double a = std::atan2(dy, dx) - table.pose.yaw;
      while (a < 0) a += 2 * kPi;
      while (a >= 2 * kPi) a -= 2 * kPi;
      return a;
    };
    std::sort(chairs.begin(), chairs.end(),
              [&](const ObjectInstance& a, const ObjectInstance& b) { return angle(a) < angle(b); });
    REQUIRE(c.objects.size() == 7);
    CHECK(c.objects[0].category == "table");
    for (std::size_t i = 0; i < chairs.size(); ++i) {
      CHECK(c.objects[i + 1].pose.center == chairs[i].pose.center);
    }
  }
}

TEST_CASE("unrepresentable categories are listed") {
  const Grammar g = fixtures::bedroom_grammar();
  const Scene s = fixtures::scene({fixtures::object("bed", 0, 0), fixtures::object("piano", 1, 1),
                                   fixtures::object("lamp", 2, 2)});
  try {
    canonical_order(s, g);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    const std::string m = e.what();
    CHECK(m.find("piano") != std::string::npos);
    CHECK(m.find("lamp") != std::string::npos);
  }
  CHECK_THROWS_AS(parse(s, g), ValidationError);
  const Scene clipped = clip_to_language(s, g);
  REQUIRE(clipped.objects.size() == 1);
  CHECK(clipped.objects[0].category == "bed");
}

TEST_CASE("children without their anchor cannot be derived") {
  const Grammar g = fixtures::bedroom_grammar();
  const Scene s = fixtures::scene({fixtures::object("dresser", 0, 0)});
  CHECK_THROWS_AS(parse(s, g), ValidationError);
  CHECK(clip_to_language(s, g).objects.empty());
}

TEST_CASE("overflow beyond T_max") {
  const Grammar g = fixtures::bedroom_grammar();
  const Scene s = fixtures::scene({fixtures::object("bed", 0, 0), fixtures::object("dresser", 1, 0)});
  CHECK_THROWS_AS(parse(s, g, 4), ValidationError);
  CHECK(parse(s, g, 5).length() == 5);
}

TEST_CASE("parse is a pure function of the canonical scene") {
  const Grammar g = fixtures::five_anchor_grammar();
  const auto scenes = generate_synthetic_corpus(g, fixtures::five_anchor_model(g), 50, 8);
  std::mt19937_64 rng(1);
  for (const Scene& s : scenes) {
    Scene shuffled = s;
    std::shuffle(shuffled.objects.begin(), shuffled.objects.end(), rng);
    CHECK(parse(shuffled, g) == parse(s, g));
    CHECK(parse(canonical_order(shuffled, g), g) == parse(s, g));
  }
}

TEST_CASE("round trip on synthetic scenes") {
  const Grammar g = fixtures::five_anchor_grammar();
  const auto scenes = generate_synthetic_corpus(g, fixtures::five_anchor_model(g), 300, 21);
  for (const Scene& s : scenes) {
    const RuleSequence seq = parse(s, g);
    CHECK_FALSE(fixtures::derivation_error(seq, g).has_value());
    check_scene_near(unparse(seq, g), s, 1e-6);
  }
}

TEST_CASE("self-repeated anchors chain from the newest instance") {
  const Grammar g = fixtures::bedroom_grammar();
  const Scene s = fixtures::scene({fixtures::object("bed", 0, 0, 0, 0.0),
                                   fixtures::object("bed", 0, 2, 0, 0.4),
                                   fixtures::object("dresser", 0.5, 2.5, 0, 0.0)});
  const RuleSequence seq = parse(s, g);
  const Scene c = canonical_order(s, g);
  check_scene_near(unparse(seq, g), c, 1e-9);
  // The dresser row is relative to the bed emitted just before it.
  std::size_t dresser_step = 0;
  for (std::size_t t = 0; t < seq.length(); ++t)
    if (seq.rule_ids[t] == 4) dresser_step = t;
  REQUIRE(dresser_step > 0);
  REQUIRE(seq.rule_ids[dresser_step - 1] == 3);
  const Pose prev = unparse(seq, g).objects[1].pose;
  const Pose rel = compose(inverse(prev), c.objects[2].pose);
  CHECK(seq.attributes[dresser_step][0] == doctest::Approx(rel.center[0]));
  CHECK(seq.attributes[dresser_step][1] == doctest::Approx(rel.center[1]));
}

TEST_CASE("mask basics") {
  const Grammar g = fixtures::bedroom_grammar();
  MaskState st = MaskState::initial(g);
  REQUIRE(st.stack.size() == 1);
  std::vector<bool> m = valid_mask(st, g);
  CHECK(std::count(m.begin(), m.end(), true) == 1);
  CHECK(m[0]);
  st.apply(0, g);
  m = valid_mask(st, g);
  for (std::size_t r = 0; r < g.one_hot_width(); ++r) {
    CHECK(m[r] == (r < g.size() && g.rule(r).lhs == "SCENE"));
  }
  CHECK_THROWS_AS(st.apply(4, g), ValidationError);
  st.apply(10, g);
  CHECK(st.complete());
  m = valid_mask(st, g);
  CHECK(std::count(m.begin(), m.end(), true) == 1);
  CHECK(m[g.padding_index()]);
}

TEST_CASE("mask on random stacks equals a per-rule lhs scan") {
  const Grammar g = fixtures::five_anchor_grammar();
  std::mt19937_64 rng(6);
  for (int i = 0; i < 500; ++i) {
    MaskState st;
    st.t_max = 1000;
    const std::size_t depth = rng() % 6;
    for (std::size_t d = 0; d < depth; ++d) st.stack.push_back(rng() % g.nonterminals().size());
    const auto m = valid_mask(st, g);
    for (std::size_t r = 0; r < g.size(); ++r) {
      const bool expect = depth > 0 && g.rule(r).lhs == g.nonterminals()[st.stack.back()];
      CHECK(m[r] == expect);
    }
    CHECK(m[g.padding_index()] == (depth == 0));
  }
}

TEST_CASE("near-horizon mask admits exactly the completable rules") {
  const Grammar g = fixtures::bedroom_grammar();
  for (std::size_t t_max : {2u, 3u, 4u, 5u, 6u, 7u}) {
    std::function<void(const MaskState&)> walk = [&](const MaskState& st) {
      if (st.complete() || st.steps == t_max) return;
      const auto m = valid_mask(st, g);
      for (std::size_t r = 0; r < g.size(); ++r) {
        if (g.lhs_index(r) != st.stack.back()) {
          CHECK_FALSE(m[r]);
          continue;
        }
        auto after = st.stack;
        after.pop_back();
        for (std::size_t nt : g.push_indices(r)) after.push_back(nt);
        const bool ok = completable(g, after, t_max - st.steps - 1);
        CHECK(m[r] == ok);
        if (ok) {
          MaskState next = st;
          next.apply(r, g);
          walk(next);
        }
      }
    };
    walk(MaskState::initial(g, t_max));
  }
}

TEST_CASE("masked argmax ties, NaN and empty masks") {
  const std::vector<bool> all{true, true, true};
  CHECK(masked_argmax(std::vector<double>{1.0, 3.0, 3.0}, all) == 1);
  CHECK(masked_argmax(std::vector<double>{std::nan(""), -5.0, -7.0}, all) == 1);
  CHECK(masked_argmax(std::vector<double>{9.0, 1.0, 2.0}, {false, true, true}) == 2);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK(masked_argmax(std::vector<double>{nan, nan}, {true, true}) == 0);
  CHECK_THROWS_AS(masked_argmax(std::vector<double>{1.0}, {false}), ValidationError);
}

TEST_CASE("constrained decode of zero logits is deterministic and valid") {
  const Grammar g = fixtures::bedroom_grammar();
  const std::size_t n = g.one_hot_width();
  const std::vector<double> logits(kDefaultTMax * n, 0.0), attrs(kDefaultTMax * kAttributeDim, 0.0);
  const RuleSequence a = constrained_decode(logits, attrs, kDefaultTMax, g);
  CHECK(a == constrained_decode(logits, attrs, kDefaultTMax, g));
  CHECK_FALSE(fixtures::derivation_error(a, g).has_value());
  CHECK_FALSE(validate_sequence(a, g).has_value());
}

TEST_CASE("constrained decode reproduces a one-hot derivation") {
  const Grammar g = fixtures::five_anchor_grammar();
  const auto scenes = generate_synthetic_corpus(g, fixtures::five_anchor_model(g), 30, 2);
  for (const Scene& s : scenes) {
    const RuleSequence seq = parse(s, g);
    const RuleSequence d =
        constrained_decode(one_hot_logits(seq, g.one_hot_width()), flat_attrs(seq), seq.length(), g);
    CHECK(d.rule_ids == seq.rule_ids);
    for (std::size_t t = 0; t < seq.length(); ++t)
      for (std::size_t k = 0; k < kAttributeDim; ++k)
        CHECK(d.attributes[t][k] == doctest::Approx(seq.attributes[t][k]).epsilon(1e-12));
  }
}

TEST_CASE("constrained decode is total on hostile input") {
  const Grammar g = fixtures::five_anchor_grammar();
  const std::size_t n = g.one_hot_width();
  std::mt19937_64 rng(77);
  std::normal_distribution<double> z(0.0, 3.0);
  const double inf = std::numeric_limits<double>::infinity();
  const double specials[] = {std::nan(""), inf, -inf, 0.0, -0.0, 1e300};
  for (std::size_t t_max : {2u, 3u, 8u, 40u}) {
    for (int i = 0; i < 200; ++i) {
      std::vector<double> logits(t_max * n), attrs(t_max * kAttributeDim);
      for (double& v : logits) v = rng() % 10 == 0 ? specials[rng() % 6] : z(rng);
      for (double& v : attrs) v = rng() % 10 == 0 ? specials[rng() % 6] : z(rng);
      const RuleSequence seq = constrained_decode(logits, attrs, t_max, g);
      CHECK(seq.length() == t_max);
      CHECK_FALSE(fixtures::derivation_error(seq, g).has_value());
      CHECK_FALSE(validate_sequence(seq, g).has_value());
      CHECK_NOTHROW(unparse(seq, g));
    }
  }
}

TEST_CASE("sequence dump round trip") {
  const Grammar g = fixtures::bedroom_grammar();
  SequenceDump dump;
  dump.grammar_fingerprint = g.fingerprint();
  dump.t_max = 12;
  dump.sequences.push_back(parse(fixtures::scene({fixtures::object("bed", 0.1, 0.2, 0.3, 0.4)}), g, 12));
  dump.sequences.push_back(parse(fixtures::scene({}), g, 12));
  const std::string path = fixtures::temp_path("dump.json");
  save_sequences(path, dump);
  const SequenceDump back = load_sequences(path);
  CHECK(back.grammar_fingerprint == dump.grammar_fingerprint);
  CHECK(back.t_max == 12);
  CHECK(back.sequences == dump.sequences);
  CHECK_THROWS_AS(load_sequences("/nonexistent/dump.json"), IoError);
}
