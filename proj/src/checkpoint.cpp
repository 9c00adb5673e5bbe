#include <cstdint>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "sgvae/autoencoder.hpp"
#include "sgvae/error.hpp"

namespace sgvae {

// Layout: the 8 bytes "SGVAECKP", a uint32 format version, a uint64 header
// length, the JSON header, then every tensor as row-major little-endian
// float64 in header order. The header holds the model config, grammar
// fingerprint, T_max, one-hot width, attribute normalization and the tensor
// directory (name, rows, cols).

namespace {

constexpr char kMagic[8] = {'S', 'G', 'V', 'A', 'E', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

nlohmann::json config_json(const ModelConfig& c) {
  return {{"latent_dim", c.latent_dim},
          {"encoder_width", c.encoder_width},
          {"encoder_branch_layers", c.encoder_branch_layers},
          {"encoder_post_layers", c.encoder_post_layers},
          {"kernel", c.kernel},
          {"decoder_width", c.decoder_width},
          {"decoder_layers", c.decoder_layers},
          {"lambda1", c.lambda1},
          {"lambda2", c.lambda2},
          {"kl_weight", c.kl_weight},
          {"kl_anneal_epochs", c.kl_anneal_epochs},
          {"learning_rate", c.learning_rate},
          {"lr_final_scale", c.lr_final_scale},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"grad_clip", c.grad_clip},
          {"seed", c.seed}};
}

ModelConfig config_from(const nlohmann::json& j) {
  ModelConfig c;
  c.latent_dim = j.at("latent_dim").get<std::size_t>();
  c.encoder_width = j.at("encoder_width").get<std::size_t>();
  c.encoder_branch_layers = j.at("encoder_branch_layers").get<std::size_t>();
  c.encoder_post_layers = j.at("encoder_post_layers").get<std::size_t>();
  c.kernel = j.at("kernel").get<std::size_t>();
  c.decoder_width = j.at("decoder_width").get<std::size_t>();
  c.decoder_layers = j.at("decoder_layers").get<std::size_t>();
  c.lambda1 = j.at("lambda1").get<double>();
  c.lambda2 = j.at("lambda2").get<double>();
  c.kl_weight = j.at("kl_weight").get<double>();
  c.kl_anneal_epochs = j.at("kl_anneal_epochs").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.lr_final_scale = j.at("lr_final_scale").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.grad_clip = j.at("grad_clip").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const SceneVae& model) {
  nlohmann::json header;
  header["config"] = config_json(model.config());
  header["grammar_fingerprint"] = model.grammar().fingerprint();
  header["t_max"] = model.t_max();
  header["one_hot_width"] = model.grammar().one_hot_width();
  header["normalization"] = {{"mean", model.normalization().mean},
                             {"scale", model.normalization().scale}};
  nlohmann::json dir = nlohmann::json::array();
  for (const Tensor& t : model.parameters().tensors()) {
    dir.push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}});
  }
  header["tensors"] = std::move(dir);
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, kVersion);
  write_pod<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Tensor& t : model.parameters().tensors()) {
    out.write(reinterpret_cast<const char*>(t.value.data()),
              static_cast<std::streamsize>(t.value.size() * sizeof(double)));
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

SceneVae load_checkpoint(const std::string& path, const Grammar& grammar) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("'" + path + "' is not a checkpoint");
  }
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto len = read_pod<std::uint64_t>(in);
  if (!in || len > (std::uint64_t{1} << 32)) throw FormatError("truncated checkpoint header");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError("truncated checkpoint header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what());
  }
  try {
    const std::string fp = header.at("grammar_fingerprint").get<std::string>();
    if (fp != grammar.fingerprint()) {
      throw ValidationError("checkpoint was trained with grammar " + fp + ", not " +
                            grammar.fingerprint());
    }
    if (header.at("one_hot_width").get<std::size_t>() != grammar.one_hot_width()) {
      throw ValidationError("checkpoint rule count does not match the grammar");
    }
    SceneVae model(grammar, header.at("t_max").get<std::size_t>(), config_from(header.at("config")));
    AttributeNormalization norm;
    norm.mean = header.at("normalization").at("mean").get<AttributeRow>();
    norm.scale = header.at("normalization").at("scale").get<AttributeRow>();
    model.set_normalization(norm);

    const nlohmann::json& dir = header.at("tensors");
    if (dir.size() != model.parameters().tensors().size()) {
      throw FormatError("checkpoint tensor count does not match the model");
    }
    for (const nlohmann::json& e : dir) {
      const std::size_t id = model.parameters().find(e.at("name").get<std::string>());
      Matrix& v = model.parameters().value(id);
      if (e.at("rows").get<Eigen::Index>() != v.rows() || e.at("cols").get<Eigen::Index>() != v.cols()) {
        throw FormatError("tensor '" + e.at("name").get<std::string>() + "' has the wrong shape");
      }
      in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
      if (!in) throw FormatError("truncated checkpoint data");
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what());
  }
}

}  // namespace sgvae
