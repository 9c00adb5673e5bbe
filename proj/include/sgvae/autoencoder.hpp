#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sgvae/codec.hpp"
#include "sgvae/grammar.hpp"
#include "sgvae/nn.hpp"
#include "sgvae/scene.hpp"

namespace sgvae {

struct ModelConfig {
  std::size_t latent_dim = 50;
  std::size_t encoder_width = 64;
  std::size_t encoder_branch_layers = 2;
  std::size_t encoder_post_layers = 2;
  std::size_t kernel = 3;
  std::size_t decoder_width = 128;
  std::size_t decoder_layers = 2;
  double lambda1 = 10.0;
  double lambda2 = 1.0;
  double kl_weight = 1.0;
  std::size_t kl_anneal_epochs = 0;  // linear warm-up of the KL weight; 0 keeps it fixed
  double learning_rate = 1e-3;
  double lr_final_scale = 1.0;  // cosine decay to learning_rate * this by the last epoch; 1 keeps it fixed
  std::size_t batch_size = 32;
  std::size_t epochs = 200;
  double grad_clip = 5.0;  // global gradient-norm limit, 0 disables
  std::uint64_t seed = 0;
};

struct LatentGaussian {
  Eigen::VectorXd mu;
  Eigen::VectorXd log_var;
};

// Loss components averaged over a batch. `total` is the weighted sum.
struct LossParts {
  double total = 0.0;
  double ce = 0.0;
  double kl = 0.0;
  double pose = 0.0;
  double shape = 0.0;
};

// Multipliers applied to each component when forming `total` (and the
// gradient). The training objective uses {1, beta, lambda1, lambda1 * lambda2}.
struct LossWeights {
  double ce = 1.0;
  double kl = 1.0;
  double pose = 10.0;
  double shape = 10.0;
};

struct TrainReport {
  std::vector<LossParts> epochs;
};

// Per-dimension affine standardization of attribute rows. Only translations
// (0-2) and sizes (5-7) are rescaled; sin/cos pass through.
struct AttributeNormalization {
  AttributeRow mean{};
  AttributeRow scale{1, 1, 1, 1, 1, 1, 1, 1};

  AttributeRow apply(const AttributeRow& row) const;
  AttributeRow invert(const AttributeRow& row) const;
};

// Statistics over the rows of non-None, non-padding rules.
AttributeNormalization fit_normalization(std::span<const RuleSequence> data, const Grammar& grammar);

// Raw decoder outputs for one latent: logits (T x N) and attributes (T x 8)
// in scene units.
struct DecoderOutput {
  Matrix logits;
  Matrix attrs;
};

Eigen::VectorXd lerp_latent(const Eigen::VectorXd& mu1, const Eigen::VectorXd& mu2, double alpha);

class SceneVae {
 public:
  SceneVae(Grammar grammar, std::size_t t_max, ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const Grammar& grammar() const { return grammar_; }
  std::size_t t_max() const { return t_max_; }
  const AttributeNormalization& normalization() const { return norm_; }
  void set_normalization(const AttributeNormalization& n) { norm_ = n; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }
  LossWeights training_weights(double kl_weight) const;

  // Throws ValidationError when the sequence does not fit this model.
  LatentGaussian encode(const RuleSequence& seq) const;
  // Free-running decode: each step is fed the masked greedy choice of the
  // previous one, so constrained_decode on the logits retraces it.
  DecoderOutput decode(const Eigen::VectorXd& z) const;
  RuleSequence decode_sequence(const Eigen::VectorXd& z) const;
  Scene decode_scene(const Eigen::VectorXd& z) const;

  // Teacher-forced loss with z = mu + exp(log_var / 2) * noise(b, :).
  // When `backward` is set the gradient of `total` is added to parameters().
  LossParts batch_loss(std::span<const RuleSequence> batch, const Matrix& noise,
                       const LossWeights& weights, bool backward);

  // Fits the attribute normalization on `data`, then runs Adam. Throws
  // ValidationError on an empty set or a non-finite loss.
  TrainReport train(std::span<const RuleSequence> data,
                    const std::function<void(std::size_t, const LossParts&)>& on_epoch = {});

  std::vector<Scene> sample(std::size_t n, std::uint64_t seed) const;
  // Decodes alpha * mu_a + (1 - alpha) * mu_b for each alpha.
  std::vector<Scene> interpolate(const Scene& a, const Scene& b,
                                 std::span<const double> alphas) const;

 private:
  struct Conv {
    std::size_t w, b;
  };
  struct Gru {
    std::size_t wi, bi, wh, bh;  // layer 0 uses wi for z and wr for the previous rule
    std::size_t wr = 0;
  };

  Grammar grammar_;
  std::size_t t_max_;
  ModelConfig config_;
  AttributeNormalization norm_;
  ParameterStore params_;
  std::vector<Conv> branch_rules_, branch_attrs_, post_;
  std::size_t mu_w_, mu_b_, lv_w_, lv_b_;
  std::vector<std::size_t> init_w_, init_b_;
  std::vector<Gru> gru_;
  std::size_t out_w_, out_b_, attr_w_, attr_b_;
};

// Loss of a decoded output against a target sequence, with the same
// normalization and weights the training objective applies.
LossParts evaluate_loss(const RuleSequence& target, const DecoderOutput& decoded,
                        const LatentGaussian& latent, const Grammar& grammar,
                        const AttributeNormalization& norm, const LossWeights& weights);

void save_checkpoint(const std::string& path, const SceneVae& model);
// Throws ValidationError if the checkpoint was trained under another grammar.
SceneVae load_checkpoint(const std::string& path, const Grammar& grammar);

}  // namespace sgvae
