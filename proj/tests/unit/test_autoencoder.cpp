#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "fixtures.hpp"
#include "sgvae/autoencoder.hpp"
#include "sgvae/error.hpp"
#include "sgvae/synthetic.hpp"

using namespace sgvae;

namespace {

constexpr std::size_t kT = 16;

ModelConfig tiny_config() {
  ModelConfig c;
  c.latent_dim = 4;
  c.encoder_width = 6;
  c.encoder_branch_layers = 1;
  c.encoder_post_layers = 1;
  c.decoder_width = 8;
  c.decoder_layers = 2;
  c.batch_size = 4;
  c.epochs = 2;
  c.seed = 5;
  return c;
}

std::vector<RuleSequence> bedroom_sequences(std::size_t n, std::uint64_t seed, std::size_t t_max = kT) {
  const Grammar g = fixtures::bedroom_grammar();
  SyntheticModel m = default_synthetic_model(g, seed);
  m.t_max = t_max;
  m.max_objects = 6;
  std::vector<RuleSequence> out;
  for (const Scene& s : generate_synthetic_corpus(g, m, n, seed)) out.push_back(parse(s, g, t_max));
  return out;
}

DecoderOutput perfect_output(const RuleSequence& seq, const Grammar& g) {
  DecoderOutput d;
  const auto T = static_cast<Eigen::Index>(seq.length());
  d.logits = Matrix::Zero(T, static_cast<Eigen::Index>(g.one_hot_width()));
  d.attrs = Matrix::Zero(T, kAttributeDim);
  for (Eigen::Index t = 0; t < T; ++t) {
    d.logits(t, static_cast<Eigen::Index>(seq.rule_ids[t])) = 1000.0;
    for (std::size_t k = 0; k < kAttributeDim; ++k) d.attrs(t, Eigen::Index(k)) = seq.attributes[t][k];
  }
  return d;
}

LatentGaussian standard(std::size_t d) {
  return {Eigen::VectorXd::Zero(Eigen::Index(d)), Eigen::VectorXd::Zero(Eigen::Index(d))};
}

double relative_gap(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

}  // namespace

TEST_CASE("encode and decode shapes, determinism") {
  const Grammar g = fixtures::bedroom_grammar();
  ModelConfig c = tiny_config();
  c.latent_dim = 50;
  const SceneVae vae(g, kT, c);
  const auto seqs = bedroom_sequences(3, 1);
  const LatentGaussian a = vae.encode(seqs[0]);
  CHECK(a.mu.size() == 50);
  CHECK(a.log_var.size() == 50);
  const LatentGaussian b = vae.encode(RuleSequence(seqs[0]));
  CHECK(a.mu == b.mu);
  CHECK(a.log_var == b.log_var);
  const DecoderOutput d1 = vae.decode(a.mu);
  const DecoderOutput d2 = vae.decode(a.mu);
  CHECK(d1.logits.rows() == Eigen::Index(kT));
  CHECK(d1.logits.cols() == Eigen::Index(g.one_hot_width()));
  CHECK(d1.attrs.rows() == Eigen::Index(kT));
  CHECK(d1.attrs.cols() == Eigen::Index(kAttributeDim));
  CHECK(d1.logits == d2.logits);
  CHECK(d1.attrs == d2.attrs);
  CHECK_THROWS_AS(vae.decode(Eigen::VectorXd::Zero(3)), ValidationError);
}

TEST_CASE("encode rejects sequences from another grammar or length") {
  const SceneVae vae(fixtures::bedroom_grammar(), kT, tiny_config());
  const Grammar other = fixtures::five_anchor_grammar();
  const RuleSequence foreign =
      parse(fixtures::scene({fixtures::object("shelf", 0, 0), fixtures::object("box", 1, 0)}), other, kT);
  CHECK_THROWS_AS(vae.encode(foreign), ValidationError);
  CHECK_THROWS_AS(vae.encode(bedroom_sequences(1, 2, kT + 1)[0]), ValidationError);
}

TEST_CASE("decoder feedback is retraced by constrained decoding") {
  const Grammar g = fixtures::bedroom_grammar();
  const SceneVae vae(g, kT, tiny_config());
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int i = 0; i < 2000; ++i) {
    Eigen::VectorXd z(4);
    for (int k = 0; k < 4; ++k) z[k] = n(rng);
    const RuleSequence seq = vae.decode_sequence(z);
    CHECK_FALSE(fixtures::derivation_error(seq, g).has_value());
    const Scene s = unparse(seq, g);
    for (const ObjectInstance& o : s.objects) CHECK(o.shape.valid());
  }
}

TEST_CASE("loss of a perfect reconstruction is zero") {
  const Grammar g = fixtures::bedroom_grammar();
  const auto seqs = bedroom_sequences(5, 4);
  const AttributeNormalization norm = fit_normalization(seqs, g);
  for (const RuleSequence& s : seqs) {
    const LossParts p = evaluate_loss(s, perfect_output(s, g), standard(4), g, norm, LossWeights{});
    CHECK(std::abs(p.total) < 1e-12);
    CHECK(p.kl == 0.0);
  }
}

TEST_CASE("with lambda1 = 0 attribute predictions do not matter") {
  const Grammar g = fixtures::bedroom_grammar();
  ModelConfig c = tiny_config();
  c.lambda1 = 0.0;
  const SceneVae vae(g, kT, c);
  const auto seqs = bedroom_sequences(4, 6);
  const LossWeights w = vae.training_weights(1.0);
  CHECK(w.pose == 0.0);
  CHECK(w.shape == 0.0);
  const AttributeNormalization norm = fit_normalization(seqs, g);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 5.0);
  for (const RuleSequence& s : seqs) {
    DecoderOutput d = perfect_output(s, g);
    d.logits.setZero();
    const double base = evaluate_loss(s, d, standard(4), g, norm, w).total;
    for (Eigen::Index i = 0; i < d.attrs.size(); ++i) d.attrs.data()[i] = n(rng);
    CHECK(evaluate_loss(s, d, standard(4), g, norm, w).total == base);
  }
}

TEST_CASE("masked logits do not affect the loss") {
  const Grammar g = fixtures::bedroom_grammar();
  const auto seqs = bedroom_sequences(4, 7);
  const AttributeNormalization norm = fit_normalization(seqs, g);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 3.0);
  for (const RuleSequence& s : seqs) {
    DecoderOutput d = perfect_output(s, g);
    for (Eigen::Index i = 0; i < d.logits.size(); ++i) d.logits.data()[i] = n(rng);
    const LossParts base = evaluate_loss(s, d, standard(4), g, norm, LossWeights{});
    MaskState st = MaskState::initial(g, s.length());
    for (std::size_t t = 0; t < s.length(); ++t) {
      const auto mask = valid_mask(st, g);
      for (std::size_t r = 0; r < mask.size(); ++r)
        if (!mask[r]) d.logits(Eigen::Index(t), Eigen::Index(r)) = 50.0 * n(rng);
      st.apply(s.rule_ids[t], g);
    }
    CHECK(evaluate_loss(s, d, standard(4), g, norm, LossWeights{}).ce == base.ce);
  }
}

TEST_CASE("KL is zero at the prior and non-negative elsewhere") {
  const Grammar g = fixtures::bedroom_grammar();
  const auto seqs = bedroom_sequences(1, 8);
  const RuleSequence& s = seqs[0];
  const DecoderOutput d = perfect_output(s, g);
  const AttributeNormalization norm;
  CHECK(evaluate_loss(s, d, standard(6), g, norm, LossWeights{}).kl == 0.0);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int i = 0; i < 200; ++i) {
    LatentGaussian l = standard(6);
    for (int k = 0; k < 6; ++k) {
      l.mu[k] = n(rng);
      l.log_var[k] = n(rng);
    }
    const double kl = evaluate_loss(s, d, l, g, norm, LossWeights{}).kl;
    double expected = 0.0;
    for (int k = 0; k < 6; ++k) {
      const double var = std::exp(l.log_var[k]);
      expected += 0.5 * (var + l.mu[k] * l.mu[k] - 1.0 - l.log_var[k]);
    }
    CHECK(kl >= 0.0);
    CHECK(kl == doctest::Approx(expected));
  }
}

TEST_CASE("analytic gradient matches central differences per loss term") {
  const Grammar g = fixtures::bedroom_grammar();
  ModelConfig c = tiny_config();
  SceneVae vae(g, 8, c);
  fixtures::jitter_biases(vae.parameters(), 11);
  const auto seqs = bedroom_sequences(3, 10, 8);
  vae.set_normalization(fit_normalization(seqs, g));
  Matrix noise(3, 4);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = n(rng);
  const LossWeights terms[] = {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}};
  for (const LossWeights& w : terms) {
    vae.parameters().zero_grad();
    vae.batch_loss(seqs, noise, w, true);
    std::vector<Matrix> analytic;
    for (const Tensor& t : vae.parameters().tensors()) analytic.push_back(t.grad);
    std::size_t checked = 0;
    for (std::size_t ti = 0; ti < vae.parameters().tensors().size(); ++ti) {
      Matrix& v = vae.parameters().value(ti);
      for (Eigen::Index i = 0; i < v.size(); i += 1 + v.size() / 7) {
        const double h = 1e-5;
        const double orig = v.data()[i];
        v.data()[i] = orig + h;
        const double up = vae.batch_loss(seqs, noise, w, false).total;
        v.data()[i] = orig - h;
        const double down = vae.batch_loss(seqs, noise, w, false).total;
        v.data()[i] = orig;
        const double numeric = (up - down) / (2 * h);
        const double exact = analytic[ti].data()[i];
        if (std::abs(numeric) < 1e-7 && std::abs(exact) < 1e-7) continue;
        CHECK_MESSAGE(relative_gap(exact, numeric) < 1e-4,
                      vae.parameters().tensors()[ti].name << "[" << i << "] " << exact << " vs " << numeric);
        ++checked;
      }
    }
    CHECK(checked > 0);
  }
}

TEST_CASE("training with lr 0 leaves parameters unchanged") {
  const Grammar g = fixtures::bedroom_grammar();
  ModelConfig c = tiny_config();
  c.learning_rate = 0.0;
  c.epochs = 1;
  SceneVae vae(g, kT, c);
  std::vector<Matrix> before;
  for (const Tensor& t : vae.parameters().tensors()) before.push_back(t.value);
  const auto seqs = bedroom_sequences(1, 11);
  const TrainReport r = vae.train(seqs);
  CHECK(r.epochs.size() == 1);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(vae.parameters().value(i) == before[i]);
}

TEST_CASE("training is deterministic and reports finite parts") {
  const Grammar g = fixtures::bedroom_grammar();
  const auto seqs = bedroom_sequences(12, 12);
  SceneVae a(g, kT, tiny_config()), b(g, kT, tiny_config());
  const TrainReport ra = a.train(seqs);
  const TrainReport rb = b.train(seqs);
  REQUIRE(ra.epochs.size() == 2);
  CHECK(ra.epochs.back().total == rb.epochs.back().total);
  for (const LossParts& p : ra.epochs) {
    CHECK(std::isfinite(p.total));
    CHECK(p.kl >= 0.0);
  }
  ModelConfig bad = tiny_config();
  bad.lr_final_scale = -0.5;
  CHECK_THROWS_AS(SceneVae(g, kT, bad), ValidationError);
  SceneVae empty(g, kT, tiny_config());
  CHECK_THROWS_AS(empty.train(std::vector<RuleSequence>{}), ValidationError);
}

TEST_CASE("normalization round trip and degenerate dimensions") {
  const Grammar g = fixtures::bedroom_grammar();
  const auto seqs = bedroom_sequences(20, 13);
  const AttributeNormalization n = fit_normalization(seqs, g);
  const AttributeRow row{0.3, -1.2, 0.4, 0.6, 0.8, 1.5, 0.7, 0.9};
  const AttributeRow back = n.invert(n.apply(row));
  for (std::size_t k = 0; k < kAttributeDim; ++k) CHECK(back[k] == doctest::Approx(row[k]));
  CHECK(n.apply(row)[3] == row[3]);
  CHECK(n.apply(row)[4] == row[4]);
  // dz is constant in the generator, so its scale falls back to 1
  CHECK(n.scale[2] == 1.0);
}

TEST_CASE("sampling and interpolation produce valid scenes") {
  const Grammar g = fixtures::bedroom_grammar();
  const SceneVae vae(g, kT, tiny_config());
  CHECK(vae.sample(0, 1).empty());
  const auto samples = vae.sample(200, 2);
  CHECK(samples.size() == 200);
  for (const Scene& s : samples) {
    CHECK_NOTHROW(parse(s, g, kT));
    for (const ObjectInstance& o : s.objects) CHECK(o.shape.valid());
  }
  CHECK(vae.sample(20, 3).size() == 20);

  SyntheticModel m = default_synthetic_model(g, 14);
  m.max_objects = 6;
  m.t_max = kT;
  const auto scenes = generate_synthetic_corpus(g, m, 2, 14);
  const std::vector<double> alphas{1.0, 0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  const auto out = vae.interpolate(scenes[0], scenes[1], alphas);
  REQUIRE(out.size() == alphas.size());
  const Eigen::VectorXd mu1 = vae.encode(parse(scenes[0], g, kT)).mu;
  const Eigen::VectorXd mu2 = vae.encode(parse(scenes[1], g, kT)).mu;
  CHECK(lerp_latent(mu1, mu2, 1.0) == mu1);
  CHECK(lerp_latent(mu1, mu2, 0.0) == mu2);
  CHECK(vae.decode_sequence(lerp_latent(mu1, mu2, 1.0)) == vae.decode_sequence(mu1));
  CHECK(vae.decode_sequence(lerp_latent(mu1, mu2, 0.0)) == vae.decode_sequence(mu2));
  for (const Scene& s : out) CHECK_NOTHROW(parse(s, g, kT));
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const Grammar g = fixtures::bedroom_grammar();
  const auto seqs = bedroom_sequences(8, 15);
  ModelConfig c = tiny_config();
  c.lr_final_scale = 0.1;
  SceneVae vae(g, kT, c);
  vae.train(seqs);
  const std::string path = fixtures::temp_path("model.ckpt");
  save_checkpoint(path, vae);
  const SceneVae back = load_checkpoint(path, g);
  CHECK(back.t_max() == kT);
  CHECK(back.config().latent_dim == 4);
  CHECK(back.config().seed == 5);
  CHECK(back.config().lr_final_scale == 0.1);
  CHECK(back.normalization().mean == vae.normalization().mean);
  CHECK(back.normalization().scale == vae.normalization().scale);
  REQUIRE(back.parameters().tensors().size() == vae.parameters().tensors().size());
  for (std::size_t i = 0; i < vae.parameters().tensors().size(); ++i) {
    CHECK(back.parameters().tensors()[i].name == vae.parameters().tensors()[i].name);
    CHECK(back.parameters().value(i) == vae.parameters().value(i));
  }
  CHECK(back.encode(seqs[0]).mu == vae.encode(seqs[0]).mu);

  CHECK_THROWS_AS(load_checkpoint(path, fixtures::five_anchor_grammar()), ValidationError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/model.ckpt", g), IoError);
  const std::string bad = fixtures::temp_path("bad.ckpt");
  std::ofstream(bad) << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(bad, g), FormatError);
  // truncated file
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::ofstream(bad, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(load_checkpoint(bad, g), FormatError);
}
