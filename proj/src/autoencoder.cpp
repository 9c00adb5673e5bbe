#include "sgvae/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "sgvae/error.hpp"
#include "sgvae/util.hpp"

namespace sgvae {

AttributeRow AttributeNormalization::apply(const AttributeRow& row) const {
  AttributeRow out = row;
  for (std::size_t k : {0, 1, 2, 5, 6, 7}) out[k] = (row[k] - mean[k]) / scale[k];
  return out;
}

AttributeRow AttributeNormalization::invert(const AttributeRow& row) const {
  AttributeRow out = row;
  for (std::size_t k : {0, 1, 2, 5, 6, 7}) out[k] = row[k] * scale[k] + mean[k];
  return out;
}

namespace {

bool carries_attributes(const Grammar& g, std::size_t rule) {
  return rule < g.size() && g.rule(rule).kind != RuleKind::kNone;
}

}  // namespace

AttributeNormalization fit_normalization(std::span<const RuleSequence> data, const Grammar& grammar) {
  AttributeNormalization n;
  AttributeRow sum{}, sq{};
  std::size_t count = 0;
  for (const RuleSequence& s : data) {
    for (std::size_t t = 0; t < s.length(); ++t) {
      if (!carries_attributes(grammar, s.rule_ids[t])) continue;
      for (std::size_t k = 0; k < kAttributeDim; ++k) {
        sum[k] += s.attributes[t][k];
        sq[k] += s.attributes[t][k] * s.attributes[t][k];
      }
      ++count;
    }
  }
  if (count == 0) return n;
  for (std::size_t k : {0, 1, 2, 5, 6, 7}) {
    const double m = sum[k] / static_cast<double>(count);
    const double var = std::max(0.0, sq[k] / static_cast<double>(count) - m * m);
    n.mean[k] = m;
    n.scale[k] = std::sqrt(var) > 1e-6 ? std::sqrt(var) : 1.0;
  }
  return n;
}

Eigen::VectorXd lerp_latent(const Eigen::VectorXd& mu1, const Eigen::VectorXd& mu2, double alpha) {
  return alpha * mu1 + (1.0 - alpha) * mu2;
}

namespace {

// A training sequence in model space.
struct Prepared {
  std::vector<std::size_t> ids;
  Matrix attrs;                   // T x 8, normalized, zero rows stay zero
  std::vector<std::uint8_t> allowed;  // T x N mask under teacher forcing
  std::vector<std::uint8_t> valid;    // rows that enter the attribute losses
};

Prepared prepare(const RuleSequence& s, const Grammar& g, const AttributeNormalization& norm,
                 std::size_t t_max) {
  if (s.length() != t_max || s.attributes.size() != t_max) {
    throw ValidationError("sequence length " + std::to_string(s.length()) +
                          " does not match the model's T_max " + std::to_string(t_max));
  }
  const std::size_t n = g.one_hot_width();
  Prepared p;
  p.ids = s.rule_ids;
  p.attrs = Matrix::Zero(static_cast<Eigen::Index>(t_max), kAttributeDim);
  p.allowed.assign(t_max * n, 0);
  p.valid.assign(t_max, 0);
  MaskState state = MaskState::initial(g, t_max);
  for (std::size_t t = 0; t < t_max; ++t) {
    const std::size_t id = s.rule_ids[t];
    if (id >= n) throw ValidationError("rule index out of range for this grammar");
    const std::vector<bool> mask = valid_mask(state, g);
    if (!mask[id]) {
      throw ValidationError("step " + std::to_string(t) + ": sequence is not a derivation of this grammar");
    }
    for (std::size_t r = 0; r < n; ++r) p.allowed[t * n + r] = mask[r] ? 1 : 0;
    state.apply(id, g);
    if (carries_attributes(g, id)) {
      p.valid[t] = 1;
      const AttributeRow row = norm.apply(s.attributes[t]);
      for (std::size_t k = 0; k < kAttributeDim; ++k) {
        p.attrs(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = row[k];
      }
    }
  }
  return p;
}

struct HeadTerms {
  double ce = 0.0;
  double pose = 0.0;
  double shape = 0.0;
};

// Masked cross-entropy and attribute errors over rows b * T + t. Gradients
// of (w.ce * ce + w.pose * pose + w.shape * shape) * scale go to dlogits and
// dattrs when given.
HeadTerms head_loss(const Matrix& logits, const Matrix& attrs,
                    const std::vector<const Prepared*>& items, std::size_t steps,
                    const LossWeights& w, double scale, Matrix* dlogits, Matrix* dattrs) {
  HeadTerms h;
  const Eigen::Index n = logits.cols();
  if (dlogits) *dlogits = Matrix::Zero(logits.rows(), n);
  if (dattrs) *dattrs = Matrix::Zero(attrs.rows(), attrs.cols());
  for (std::size_t b = 0; b < items.size(); ++b) {
    const Prepared& p = *items[b];
    for (std::size_t t = 0; t < steps; ++t) {
      const Eigen::Index row = static_cast<Eigen::Index>(b * steps + t);
      const std::uint8_t* allowed = &p.allowed[t * static_cast<std::size_t>(n)];
      double m = -std::numeric_limits<double>::infinity();
      for (Eigen::Index r = 0; r < n; ++r) {
        if (allowed[r]) m = std::max(m, logits(row, r));
      }
      double s = 0.0;
      for (Eigen::Index r = 0; r < n; ++r) {
        if (allowed[r]) s += std::exp(logits(row, r) - m);
      }
      const Eigen::Index y = static_cast<Eigen::Index>(p.ids[t]);
      h.ce += -(logits(row, y) - m - std::log(s));
      if (dlogits) {
        for (Eigen::Index r = 0; r < n; ++r) {
          if (allowed[r]) (*dlogits)(row, r) = w.ce * scale * std::exp(logits(row, r) - m) / s;
        }
        (*dlogits)(row, y) -= w.ce * scale;
      }
      if (!p.valid[t]) continue;
      const Eigen::Index tt = static_cast<Eigen::Index>(t);
      for (Eigen::Index k = 0; k < 5; ++k) {
        const double d = attrs(row, k) - p.attrs(tt, k);
        h.pose += d * d / 5.0;
        if (dattrs) (*dattrs)(row, k) = w.pose * scale * 2.0 * d / 5.0;
      }
      for (Eigen::Index k = 5; k < 8; ++k) {
        const double d = attrs(row, k) - p.attrs(tt, k);
        h.shape += d * d / 3.0;
        if (dattrs) (*dattrs)(row, k) = w.shape * scale * 2.0 * d / 3.0;
      }
    }
  }
  return h;
}

double kl_term(const Eigen::VectorXd& mu, const Eigen::VectorXd& lv) {
  return -0.5 * (1.0 + lv.array() - mu.array().square() - lv.array().exp()).sum();
}

struct ConvCache {
  Matrix col;
  Matrix out;
};

}  // namespace

SceneVae::SceneVae(Grammar grammar, std::size_t t_max, ModelConfig config)
    : grammar_(std::move(grammar)), t_max_(t_max), config_(config) {
  if (t_max_ < 2) throw ValidationError("T_max must be at least 2");
  if (config_.latent_dim == 0 || config_.encoder_width == 0 || config_.decoder_width == 0 ||
      config_.encoder_branch_layers == 0 || config_.decoder_layers == 0 || config_.kernel % 2 == 0 ||
      !(config_.lr_final_scale >= 0.0)) {
    throw ValidationError("invalid model configuration");
  }
  std::mt19937_64 rng(derive_seed(config_.seed, "init"));
  const auto n = static_cast<Eigen::Index>(grammar_.one_hot_width());
  const auto k = static_cast<Eigen::Index>(config_.kernel);
  const auto width = static_cast<Eigen::Index>(config_.encoder_width);
  const auto d = static_cast<Eigen::Index>(config_.latent_dim);
  const auto h = static_cast<Eigen::Index>(config_.decoder_width);
  const auto steps = static_cast<Eigen::Index>(t_max_);

  auto weight = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    const std::size_t id = params_.add(name, rows, cols);
    glorot_init(params_.value(id), static_cast<std::size_t>(rows), static_cast<std::size_t>(cols), rng);
    return id;
  };
  auto bias = [&](const std::string& name, Eigen::Index cols) { return params_.add(name, 1, cols); };
  auto conv_stack = [&](const std::string& prefix, Eigen::Index in, std::size_t layers,
                        std::vector<Conv>& out) {
    for (std::size_t i = 0; i < layers; ++i) {
      const std::string base = prefix + std::to_string(i);
      out.push_back({weight(base + ".w", k * in, width), bias(base + ".b", width)});
      in = width;
    }
  };

  conv_stack("enc.rules", n, config_.encoder_branch_layers, branch_rules_);
  conv_stack("enc.attrs", kAttributeDim, config_.encoder_branch_layers, branch_attrs_);
  Eigen::Index post_in = 2 * width;
  for (std::size_t i = 0; i < config_.encoder_post_layers; ++i) {
    const std::string base = "enc.post" + std::to_string(i);
    post_.push_back({weight(base + ".w", k * post_in, width), bias(base + ".b", width)});
    post_in = width;
  }
  mu_w_ = weight("enc.mu.w", steps * post_in, d);
  mu_b_ = bias("enc.mu.b", d);
  lv_w_ = weight("enc.logvar.w", steps * post_in, d);
  lv_b_ = bias("enc.logvar.b", d);

  for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
    const std::string base = "dec.init" + std::to_string(l);
    init_w_.push_back(weight(base + ".w", d, h));
    init_b_.push_back(bias(base + ".b", h));
  }
  for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
    const std::string base = "dec.gru" + std::to_string(l);
    Gru g{};
    if (l == 0) {
      g.wi = weight(base + ".wz", d, 3 * h);
      g.wr = weight(base + ".wr", n, 3 * h);
    } else {
      g.wi = weight(base + ".wi", h, 3 * h);
    }
    g.bi = bias(base + ".bi", 3 * h);
    g.wh = weight(base + ".wh", h, 3 * h);
    g.bh = bias(base + ".bh", 3 * h);
    gru_.push_back(g);
  }
  out_w_ = weight("dec.rules.w", h, n);
  out_b_ = bias("dec.rules.b", n);
  attr_w_ = weight("dec.attrs.w", h, kAttributeDim);
  attr_b_ = bias("dec.attrs.b", kAttributeDim);
}

LossWeights SceneVae::training_weights(double kl_weight) const {
  return {1.0, kl_weight, config_.lambda1, config_.lambda1 * config_.lambda2};
}

namespace {

Matrix conv_forward(const ParameterStore& ps, std::size_t w, std::size_t b, const Matrix& x,
                    std::size_t batch, std::size_t steps, std::size_t kernel, ConvCache* cache) {
  Matrix col = im2col(x, batch, steps, kernel);
  Matrix out = col * ps.value(w);
  out.rowwise() += ps.value(b).row(0);
  out = out.cwiseMax(0.0);
  if (cache) {
    cache->col = std::move(col);
    cache->out = out;
  }
  return out;
}

// Returns dL/dx (empty when `need_dx` is false).
Matrix conv_backward(ParameterStore& ps, std::size_t w, std::size_t b, const ConvCache& cache,
                     const Matrix& dout, std::size_t batch, std::size_t steps, std::size_t kernel,
                     bool need_dx) {
  const Matrix dpre = (dout.array() * (cache.out.array() > 0.0).cast<double>()).matrix();
  ps.grad(w).noalias() += cache.col.transpose() * dpre;
  ps.grad(b) += dpre.colwise().sum();
  if (!need_dx) return {};
  const Matrix dcol = dpre * ps.value(w).transpose();
  Matrix dx = Matrix::Zero(dout.rows(), ps.value(w).rows() / static_cast<Eigen::Index>(kernel));
  col2im_add(dcol, batch, steps, kernel, dx);
  return dx;
}

}  // namespace

LatentGaussian SceneVae::encode(const RuleSequence& seq) const {
  const Prepared p = prepare(seq, grammar_, norm_, t_max_);
  const auto steps = static_cast<Eigen::Index>(t_max_);
  Matrix xa = Matrix::Zero(steps, static_cast<Eigen::Index>(grammar_.one_hot_width()));
  for (std::size_t t = 0; t < t_max_; ++t) xa(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(p.ids[t])) = 1.0;
  Matrix a = xa, b = p.attrs;
  for (const Conv& c : branch_rules_) a = conv_forward(params_, c.w, c.b, a, 1, t_max_, config_.kernel, nullptr);
  for (const Conv& c : branch_attrs_) b = conv_forward(params_, c.w, c.b, b, 1, t_max_, config_.kernel, nullptr);
  Matrix x(steps, a.cols() + b.cols());
  x << a, b;
  for (const Conv& c : post_) x = conv_forward(params_, c.w, c.b, x, 1, t_max_, config_.kernel, nullptr);
  const Eigen::Map<const Matrix> flat(x.data(), 1, x.size());
  LatentGaussian out;
  out.mu = (flat * params_.value(mu_w_) + params_.value(mu_b_)).transpose();
  out.log_var = (flat * params_.value(lv_w_) + params_.value(lv_b_)).transpose();
  return out;
}

DecoderOutput SceneVae::decode(const Eigen::VectorXd& z) const {
  if (static_cast<std::size_t>(z.size()) != config_.latent_dim) {
    throw ValidationError("latent vector has the wrong dimension");
  }
  const Matrix zr = z.transpose();
  const std::size_t layers = gru_.size();
  std::vector<Matrix> h(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    h[l] = (zr * params_.value(init_w_[l]) + params_.value(init_b_[l])).array().tanh().matrix();
  }
  const Matrix gz = zr * params_.value(gru_[0].wi) + params_.value(gru_[0].bi);
  const std::size_t n = grammar_.one_hot_width();
  DecoderOutput out;
  out.logits.resize(static_cast<Eigen::Index>(t_max_), static_cast<Eigen::Index>(n));
  out.attrs.resize(static_cast<Eigen::Index>(t_max_), kAttributeDim);
  MaskState state = MaskState::initial(grammar_, t_max_);
  GruCache cache;
  std::size_t prev = n;
  for (std::size_t t = 0; t < t_max_; ++t) {
    Matrix gi = gz;
    if (prev < n) gi += params_.value(gru_[0].wr).row(static_cast<Eigen::Index>(prev));
    h[0] = gru_step(gi, h[0], params_.value(gru_[0].wh), params_.value(gru_[0].bh), cache);
    for (std::size_t l = 1; l < layers; ++l) {
      const Matrix gl = h[l - 1] * params_.value(gru_[l].wi) + params_.value(gru_[l].bi);
      h[l] = gru_step(gl, h[l], params_.value(gru_[l].wh), params_.value(gru_[l].bh), cache);
    }
    const Eigen::Index row = static_cast<Eigen::Index>(t);
    out.logits.row(row) = h[layers - 1] * params_.value(out_w_) + params_.value(out_b_);
    const Matrix a = h[layers - 1] * params_.value(attr_w_) + params_.value(attr_b_);
    AttributeRow ar;
    for (std::size_t k = 0; k < kAttributeDim; ++k) ar[k] = a(0, static_cast<Eigen::Index>(k));
    ar = norm_.invert(ar);
    for (std::size_t k = 0; k < kAttributeDim; ++k) out.attrs(row, static_cast<Eigen::Index>(k)) = ar[k];

    const std::span<const double> logit_row(out.logits.data() + t * n, n);
    prev = masked_argmax(logit_row, valid_mask(state, grammar_));
    state.apply(prev, grammar_);
  }
  return out;
}

RuleSequence SceneVae::decode_sequence(const Eigen::VectorXd& z) const {
  const DecoderOutput d = decode(z);
  return constrained_decode({d.logits.data(), static_cast<std::size_t>(d.logits.size())},
                            {d.attrs.data(), static_cast<std::size_t>(d.attrs.size())}, t_max_,
                            grammar_);
}

Scene SceneVae::decode_scene(const Eigen::VectorXd& z) const {
  return unparse(decode_sequence(z), grammar_);
}

LossParts SceneVae::batch_loss(std::span<const RuleSequence> batch, const Matrix& noise,
                               const LossWeights& weights, bool backward) {
  const std::size_t bsz = batch.size();
  if (bsz == 0) throw ValidationError("empty batch");
  const auto B = static_cast<Eigen::Index>(bsz);
  const auto D = static_cast<Eigen::Index>(config_.latent_dim);
  if (noise.rows() != B || noise.cols() != D) throw ValidationError("noise has the wrong shape");
  const std::size_t T = t_max_;
  const std::size_t K = config_.kernel;
  const auto BT = static_cast<Eigen::Index>(bsz * T);
  const auto N = static_cast<Eigen::Index>(grammar_.one_hot_width());

  std::vector<Prepared> prepared;
  prepared.reserve(bsz);
  for (const RuleSequence& s : batch) prepared.push_back(prepare(s, grammar_, norm_, T));
  std::vector<const Prepared*> items;
  for (const Prepared& p : prepared) items.push_back(&p);

  // Encoder.
  Matrix xa = Matrix::Zero(BT, N);
  Matrix xb(BT, static_cast<Eigen::Index>(kAttributeDim));
  for (std::size_t b = 0; b < bsz; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      xa(static_cast<Eigen::Index>(b * T + t), static_cast<Eigen::Index>(prepared[b].ids[t])) = 1.0;
    }
    xb.middleRows(static_cast<Eigen::Index>(b * T), static_cast<Eigen::Index>(T)) = prepared[b].attrs;
  }
  std::vector<ConvCache> ca(branch_rules_.size()), cb(branch_attrs_.size()), cc(post_.size());
  Matrix a = xa, bb = xb;
  for (std::size_t i = 0; i < branch_rules_.size(); ++i) {
    a = conv_forward(params_, branch_rules_[i].w, branch_rules_[i].b, a, bsz, T, K, &ca[i]);
  }
  for (std::size_t i = 0; i < branch_attrs_.size(); ++i) {
    bb = conv_forward(params_, branch_attrs_[i].w, branch_attrs_[i].b, bb, bsz, T, K, &cb[i]);
  }
  const Eigen::Index wa = a.cols();
  Matrix x(BT, a.cols() + bb.cols());
  x << a, bb;
  for (std::size_t i = 0; i < post_.size(); ++i) {
    x = conv_forward(params_, post_[i].w, post_[i].b, x, bsz, T, K, &cc[i]);
  }
  const Eigen::Index C = x.cols();
  const Eigen::Map<const Matrix> flat(x.data(), B, static_cast<Eigen::Index>(T) * C);
  Matrix mu = flat * params_.value(mu_w_);
  mu.rowwise() += params_.value(mu_b_).row(0);
  Matrix lv = flat * params_.value(lv_w_);
  lv.rowwise() += params_.value(lv_b_).row(0);
  const Matrix sd = (0.5 * lv.array()).exp().matrix();
  const Matrix z = (mu.array() + sd.array() * noise.array()).matrix();

  // Decoder, teacher forced.
  const std::size_t L = gru_.size();
  const auto H = static_cast<Eigen::Index>(config_.decoder_width);
  std::vector<Matrix> h0(L), h(L);
  for (std::size_t l = 0; l < L; ++l) {
    Matrix pre = z * params_.value(init_w_[l]);
    pre.rowwise() += params_.value(init_b_[l]).row(0);
    h0[l] = pre.array().tanh().matrix();
    h[l] = h0[l];
  }
  Matrix gz = z * params_.value(gru_[0].wi);
  gz.rowwise() += params_.value(gru_[0].bi).row(0);
  std::vector<std::vector<GruCache>> caches(T, std::vector<GruCache>(L));
  Matrix top(BT, H);
  for (std::size_t t = 0; t < T; ++t) {
    Matrix gi = gz;
    if (t > 0) {
      for (std::size_t b = 0; b < bsz; ++b) {
        gi.row(static_cast<Eigen::Index>(b)) +=
            params_.value(gru_[0].wr).row(static_cast<Eigen::Index>(prepared[b].ids[t - 1]));
      }
    }
    h[0] = gru_step(gi, h[0], params_.value(gru_[0].wh), params_.value(gru_[0].bh), caches[t][0]);
    for (std::size_t l = 1; l < L; ++l) {
      Matrix gl = h[l - 1] * params_.value(gru_[l].wi);
      gl.rowwise() += params_.value(gru_[l].bi).row(0);
      h[l] = gru_step(gl, h[l], params_.value(gru_[l].wh), params_.value(gru_[l].bh), caches[t][l]);
    }
    for (std::size_t b = 0; b < bsz; ++b) {
      top.row(static_cast<Eigen::Index>(b * T + t)) = h[L - 1].row(static_cast<Eigen::Index>(b));
    }
  }
  Matrix logits = top * params_.value(out_w_);
  logits.rowwise() += params_.value(out_b_).row(0);
  Matrix attrs = top * params_.value(attr_w_);
  attrs.rowwise() += params_.value(attr_b_).row(0);

  const double scale = 1.0 / static_cast<double>(bsz);
  Matrix dlogits, dattrs;
  const HeadTerms terms = head_loss(logits, attrs, items, T, weights, scale,
                                    backward ? &dlogits : nullptr, backward ? &dattrs : nullptr);
  double kl = 0.0;
  for (Eigen::Index b = 0; b < B; ++b) kl += kl_term(mu.row(b).transpose(), lv.row(b).transpose());

  LossParts parts;
  parts.ce = terms.ce * scale;
  parts.kl = kl * scale;
  parts.pose = terms.pose * scale;
  parts.shape = terms.shape * scale;
  parts.total = weights.ce * parts.ce + weights.kl * parts.kl + weights.pose * parts.pose +
                weights.shape * parts.shape;
  if (!backward) return parts;

  // Output heads.
  params_.grad(out_w_).noalias() += top.transpose() * dlogits;
  params_.grad(out_b_) += dlogits.colwise().sum();
  params_.grad(attr_w_).noalias() += top.transpose() * dattrs;
  params_.grad(attr_b_) += dattrs.colwise().sum();
  Matrix dtop = dlogits * params_.value(out_w_).transpose();
  dtop.noalias() += dattrs * params_.value(attr_w_).transpose();

  // Back through time.
  std::vector<Matrix> dh(L, Matrix::Zero(B, H));
  Matrix dgz = Matrix::Zero(B, 3 * H);
  Matrix dgi;
  for (std::size_t t = T; t-- > 0;) {
    for (std::size_t b = 0; b < bsz; ++b) {
      dh[L - 1].row(static_cast<Eigen::Index>(b)) += dtop.row(static_cast<Eigen::Index>(b * T + t));
    }
    for (std::size_t l = L; l-- > 0;) {
      Matrix dprev = Matrix::Zero(B, H);
      gru_step_backward(caches[t][l], dh[l], params_.value(gru_[l].wh), dgi,
                        params_.grad(gru_[l].wh), params_.grad(gru_[l].bh), dprev);
      dh[l] = std::move(dprev);
      if (l > 0) {
        // Input of layer l at step t is the output of layer l - 1, which is
        // the hidden state that layer l - 1 passes to step t + 1.
        const Matrix& below = t + 1 < T ? caches[t + 1][l - 1].h_prev : h[l - 1];
        params_.grad(gru_[l].wi).noalias() += below.transpose() * dgi;
        params_.grad(gru_[l].bi) += dgi.colwise().sum();
        dh[l - 1].noalias() += dgi * params_.value(gru_[l].wi).transpose();
      } else {
        dgz += dgi;
        if (t > 0) {
          for (std::size_t b = 0; b < bsz; ++b) {
            params_.grad(gru_[0].wr).row(static_cast<Eigen::Index>(prepared[b].ids[t - 1])) +=
                dgi.row(static_cast<Eigen::Index>(b));
          }
        }
      }
    }
  }
  Matrix dz = dgz * params_.value(gru_[0].wi).transpose();
  params_.grad(gru_[0].wi).noalias() += z.transpose() * dgz;
  params_.grad(gru_[0].bi) += dgz.colwise().sum();
  for (std::size_t l = 0; l < L; ++l) {
    const Matrix dpre = (dh[l].array() * (1.0 - h0[l].array().square())).matrix();
    params_.grad(init_w_[l]).noalias() += z.transpose() * dpre;
    params_.grad(init_b_[l]) += dpre.colwise().sum();
    dz.noalias() += dpre * params_.value(init_w_[l]).transpose();
  }

  // Reparameterization and KL.
  const double wkl = weights.kl * scale;
  const Matrix dmu = (dz.array() + wkl * mu.array()).matrix();
  const Matrix dlv =
      (dz.array() * noise.array() * 0.5 * sd.array() + wkl * 0.5 * (lv.array().exp() - 1.0)).matrix();

  // Encoder.
  params_.grad(mu_w_).noalias() += flat.transpose() * dmu;
  params_.grad(mu_b_) += dmu.colwise().sum();
  params_.grad(lv_w_).noalias() += flat.transpose() * dlv;
  params_.grad(lv_b_) += dlv.colwise().sum();
  Matrix dflat = dmu * params_.value(mu_w_).transpose();
  dflat.noalias() += dlv * params_.value(lv_w_).transpose();
  Matrix dx = Eigen::Map<Matrix>(dflat.data(), BT, C);
  for (std::size_t i = post_.size(); i-- > 0;) {
    dx = conv_backward(params_, post_[i].w, post_[i].b, cc[i], dx, bsz, T, K, true);
  }
  Matrix da = dx.leftCols(wa);
  Matrix db = dx.rightCols(dx.cols() - wa);
  for (std::size_t i = branch_rules_.size(); i-- > 0;) {
    da = conv_backward(params_, branch_rules_[i].w, branch_rules_[i].b, ca[i], da, bsz, T, K, i > 0);
  }
  for (std::size_t i = branch_attrs_.size(); i-- > 0;) {
    db = conv_backward(params_, branch_attrs_[i].w, branch_attrs_[i].b, cb[i], db, bsz, T, K, i > 0);
  }
  return parts;
}

TrainReport SceneVae::train(std::span<const RuleSequence> data,
                            const std::function<void(std::size_t, const LossParts&)>& on_epoch) {
  if (data.empty()) throw ValidationError("training set is empty");
  norm_ = fit_normalization(data, grammar_);
  for (const RuleSequence& s : data) prepare(s, grammar_, norm_, t_max_);

  std::mt19937_64 rng(derive_seed(config_.seed, "train"));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t bs = std::max<std::size_t>(1, config_.batch_size);
  const auto D = static_cast<Eigen::Index>(config_.latent_dim);

  TrainReport report;
  std::vector<RuleSequence> batch;
  for (std::size_t epoch = 0; epoch < config_.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double beta = config_.kl_weight;
    if (config_.kl_anneal_epochs > 0) {
      beta *= std::min(1.0, static_cast<double>(epoch + 1) / static_cast<double>(config_.kl_anneal_epochs));
    }
    const LossWeights weights = training_weights(beta);
    double lr = config_.learning_rate;
    if (config_.epochs > 1) {
      const double progress = static_cast<double>(epoch) / static_cast<double>(config_.epochs - 1);
      const double f = config_.lr_final_scale;
      lr *= f + (1.0 - f) * 0.5 * (1.0 + std::cos(kPi * progress));
    }
    LossParts sum;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);
      Matrix noise(static_cast<Eigen::Index>(batch.size()), D);
      for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = normal(rng);
      params_.zero_grad();
      const LossParts p = batch_loss(batch, noise, weights, true);
      if (!std::isfinite(p.total)) {
        throw ValidationError("training diverged at epoch " + std::to_string(epoch + 1) +
                              ": loss is not finite");
      }
      const double gn = params_.grad_norm();
      if (!std::isfinite(gn)) {
        throw ValidationError("training diverged at epoch " + std::to_string(epoch + 1) +
                              ": gradient is not finite");
      }
      if (config_.grad_clip > 0.0 && gn > config_.grad_clip) params_.scale_grad(config_.grad_clip / gn);
      params_.adam_step(lr);
      const double w = static_cast<double>(batch.size());
      sum.total += p.total * w;
      sum.ce += p.ce * w;
      sum.kl += p.kl * w;
      sum.pose += p.pose * w;
      sum.shape += p.shape * w;
    }
    const double inv = 1.0 / static_cast<double>(data.size());
    LossParts mean{sum.total * inv, sum.ce * inv, sum.kl * inv, sum.pose * inv, sum.shape * inv};
    report.epochs.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return report;
}

std::vector<Scene> SceneVae::sample(std::size_t n, std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Scene> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd z(static_cast<Eigen::Index>(config_.latent_dim));
    for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = normal(rng);
    out.push_back(decode_scene(z));
  }
  return out;
}

std::vector<Scene> SceneVae::interpolate(const Scene& a, const Scene& b,
                                         std::span<const double> alphas) const {
  const Eigen::VectorXd mu1 = encode(parse(a, grammar_, t_max_)).mu;
  const Eigen::VectorXd mu2 = encode(parse(b, grammar_, t_max_)).mu;
  std::vector<Scene> out;
  for (double alpha : alphas) out.push_back(decode_scene(lerp_latent(mu1, mu2, alpha)));
  return out;
}

LossParts evaluate_loss(const RuleSequence& target, const DecoderOutput& decoded,
                        const LatentGaussian& latent, const Grammar& grammar,
                        const AttributeNormalization& norm, const LossWeights& weights) {
  const std::size_t T = target.length();
  const Prepared p = prepare(target, grammar, norm, T);
  if (decoded.logits.rows() != static_cast<Eigen::Index>(T) ||
      decoded.logits.cols() != static_cast<Eigen::Index>(grammar.one_hot_width()) ||
      decoded.attrs.rows() != static_cast<Eigen::Index>(T) ||
      decoded.attrs.cols() != static_cast<Eigen::Index>(kAttributeDim)) {
    throw ValidationError("decoded output shape does not match the target");
  }
  Matrix attrs(decoded.attrs.rows(), decoded.attrs.cols());
  for (Eigen::Index t = 0; t < attrs.rows(); ++t) {
    AttributeRow row;
    for (std::size_t k = 0; k < kAttributeDim; ++k) row[k] = decoded.attrs(t, static_cast<Eigen::Index>(k));
    row = norm.apply(row);
    for (std::size_t k = 0; k < kAttributeDim; ++k) attrs(t, static_cast<Eigen::Index>(k)) = row[k];
  }
  const std::vector<const Prepared*> items{&p};
  const HeadTerms h = head_loss(decoded.logits, attrs, items, T, weights, 1.0, nullptr, nullptr);
  LossParts parts;
  parts.ce = h.ce;
  parts.kl = kl_term(latent.mu, latent.log_var);
  parts.pose = h.pose;
  parts.shape = h.shape;
  parts.total = weights.ce * parts.ce + weights.kl * parts.kl + weights.pose * parts.pose +
                weights.shape * parts.shape;
  return parts;
}

}  // namespace sgvae
