// Command-line front end: discover -> induce -> parse -> train -> sample,
// plus interpolate, eval and render.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sgvae/autoencoder.hpp"
#include "sgvae/causal.hpp"
#include "sgvae/codec.hpp"
#include "sgvae/corpus.hpp"
#include "sgvae/error.hpp"
#include "sgvae/evaluation.hpp"
#include "sgvae/grammar.hpp"
#include "sgvae/induction.hpp"
#include "sgvae/render.hpp"
#include "sgvae/util.hpp"

namespace {

using namespace sgvae;

struct CorpusArgs {
  std::string path;
  std::size_t min_count = 10;
  std::size_t max_objects = 15;
  std::string synonyms;

  Corpus load(bool quiet) const {
    CorpusOptions o;
    o.min_category_count = min_count;
    o.max_objects = max_objects;
    if (!synonyms.empty()) o.synonyms = load_synonyms(synonyms);
    Corpus c = load_corpus(path, o);
    if (!quiet) {
      for (const std::string& w : c.warnings) std::cerr << "warning: " << w << '\n';
    }
    return c;
  }
};

// Scene files produced by the tool itself are read without filtering.
std::vector<Scene> load_scenes(const std::string& path) {
  CorpusOptions o;
  o.min_category_count = 0;
  o.max_objects = std::numeric_limits<std::size_t>::max();
  return load_corpus(path, o).scenes;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path + "'");
}

void add_corpus_options(CLI::App* cmd, CorpusArgs& c) {
  cmd->add_option("--corpus", c.path, "Scene corpus (JSON lines)")->required();
  cmd->add_option("--min-count", c.min_count, "Drop categories with fewer instances")
      ->capture_default_str();
  cmd->add_option("--max-objects", c.max_objects, "Keep at most this many objects per scene")
      ->capture_default_str();
  cmd->add_option("--synonyms", c.synonyms, "File of 'alias canonical' lines");
}

void add_model_options(CLI::App* cmd, ModelConfig& m) {
  cmd->add_option("--latent-dim", m.latent_dim, "Latent dimension")->capture_default_str();
  cmd->add_option("--encoder-width", m.encoder_width, "Encoder channels")->capture_default_str();
  cmd->add_option("--encoder-branch-layers", m.encoder_branch_layers, "Conv layers per branch")
      ->capture_default_str();
  cmd->add_option("--encoder-post-layers", m.encoder_post_layers, "Conv layers after concat")
      ->capture_default_str();
  cmd->add_option("--kernel", m.kernel, "Conv kernel size (odd)")->capture_default_str();
  cmd->add_option("--decoder-width", m.decoder_width, "GRU width")->capture_default_str();
  cmd->add_option("--decoder-layers", m.decoder_layers, "GRU layers")->capture_default_str();
  cmd->add_option("--lambda1", m.lambda1, "Attribute loss weight")->capture_default_str();
  cmd->add_option("--lambda2", m.lambda2, "Shape weight inside the attribute loss")
      ->capture_default_str();
  cmd->add_option("--kl-weight", m.kl_weight, "KL weight")->capture_default_str();
  cmd->add_option("--kl-anneal-epochs", m.kl_anneal_epochs, "KL warm-up epochs (0 = off)")
      ->capture_default_str();
  cmd->add_option("--lr", m.learning_rate, "Adam learning rate")->capture_default_str();
  cmd->add_option("--lr-final-scale", m.lr_final_scale, "Cosine decay target as a fraction of --lr")
      ->capture_default_str();
  cmd->add_option("--batch-size", m.batch_size, "Batch size")->capture_default_str();
  cmd->add_option("--epochs", m.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--grad-clip", m.grad_clip, "Gradient norm limit (0 = off)")
      ->capture_default_str();
}

void check_fingerprint(const std::string& found, const Grammar& g, const std::string& what) {
  if (found != g.fingerprint()) {
    throw ValidationError(what + " was built with grammar " + found + ", but the given grammar is " +
                          g.fingerprint());
  }
}

std::vector<double> parse_alphas(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ValidationError("bad alpha value '" + item + "'");
    }
  }
  if (out.empty()) throw ValidationError("no alpha values given");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scene grammar induction and grammar-masked sequence autoencoder"};
  app.set_config("--config", "", "Key = value configuration file; flags override it");
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  bool quiet = false;
  app.add_option("--seed", seed, "Master seed; each stage derives its own")->capture_default_str();
  app.add_option("--threads", threads, "Worker threads")->capture_default_str();
  app.add_flag("--quiet", quiet, "Suppress progress output");

  // discover
  CorpusArgs d_corpus;
  std::string d_out, d_prior;
  double tau = 0.05;
  bool yates = false;
  GeometricOptions geo;
  auto* discover = app.add_subcommand("discover", "Build the causal graph of a corpus");
  add_corpus_options(discover, d_corpus);
  discover->add_option("--out", d_out, "Graph file to write")->required();
  discover->add_option("--tau", tau, "Significance level of the independence tests")
      ->capture_default_str();
  discover->add_flag("--yates", yates, "Apply Yates' continuity correction");
  discover->add_option("--support-tol", geo.support_tol, "Support contact tolerance (m)")
      ->capture_default_str();
  discover->add_option("--enclose-margin", geo.enclose_margin, "Enclosure margin (m)")
      ->capture_default_str();
  discover->add_option("--ratio", geo.ratio, "Agreement ratio for geometric edges")
      ->capture_default_str();
  discover->add_option("--prior", d_prior, "Graph file of prior directed edges");

  // induce
  CorpusArgs i_corpus;
  std::string i_graph, i_out;
  PCoverOptions pc;
  std::string coverage_mode = "scenes";
  auto* induce = app.add_subcommand("induce", "Induce a grammar from a corpus and causal graph");
  add_corpus_options(induce, i_corpus);
  induce->add_option("--graph", i_graph, "Causal graph file")->required();
  induce->add_option("--out", i_out, "Grammar file to write")->required();
  induce->add_option("--p", pc.p, "Target coverage")->capture_default_str();
  induce->add_option("--eps", pc.eps, "Degree-ratio epsilon")->capture_default_str();
  induce->add_option("--coverage-mode", coverage_mode, "scenes | mean")
      ->check(CLI::IsMember({"scenes", "mean"}))
      ->capture_default_str();

  // parse
  CorpusArgs p_corpus;
  std::string p_grammar, p_out;
  std::size_t t_max = kDefaultTMax;
  auto* parse_cmd = app.add_subcommand("parse", "Parse a corpus into rule sequences");
  add_corpus_options(parse_cmd, p_corpus);
  parse_cmd->add_option("--grammar", p_grammar, "Grammar file")->required();
  parse_cmd->add_option("--out", p_out, "Sequence dump to write")->required();
  parse_cmd->add_option("--t-max", t_max, "Sequence length")->capture_default_str();

  // train
  std::string t_seqs, t_grammar, t_out, t_report;
  ModelConfig model;
  auto* train = app.add_subcommand("train", "Train the autoencoder on a sequence dump");
  train->add_option("--sequences", t_seqs, "Sequence dump")->required();
  train->add_option("--grammar", t_grammar, "Grammar file")->required();
  train->add_option("--out", t_out, "Checkpoint to write")->required();
  train->add_option("--report", t_report, "Per-epoch loss report (JSON)");
  add_model_options(train, model);

  // sample
  std::string s_ckpt, s_grammar, s_out;
  std::size_t s_n = 10;
  auto* sample = app.add_subcommand("sample", "Sample scenes from a trained model");
  sample->add_option("--checkpoint", s_ckpt, "Checkpoint")->required();
  sample->add_option("--grammar", s_grammar, "Grammar file")->required();
  sample->add_option("-n,--count", s_n, "Number of scenes")->capture_default_str();
  sample->add_option("--out", s_out, "Scene file to write")->required();

  // interpolate
  std::string n_ckpt, n_grammar, n_scenes, n_out, n_alphas = "0,0.25,0.5,0.75,1";
  std::size_t n_a = 0, n_b = 1;
  auto* interp = app.add_subcommand("interpolate", "Decode linear blends of two scenes' latents");
  interp->add_option("--checkpoint", n_ckpt, "Checkpoint")->required();
  interp->add_option("--grammar", n_grammar, "Grammar file")->required();
  interp->add_option("--scenes", n_scenes, "Scene file holding both endpoints")->required();
  interp->add_option("--a", n_a, "Index of the first scene")->capture_default_str();
  interp->add_option("--b", n_b, "Index of the second scene")->capture_default_str();
  interp->add_option("--alphas", n_alphas, "Comma-separated weights of the first scene")
      ->capture_default_str();
  interp->add_option("--out", n_out, "Scene file to write")->required();

  // eval
  std::string e_pred, e_gt, e_out;
  MatchOptions mo;
  bool hungarian = false;
  auto* eval = app.add_subcommand("eval", "Compare predicted and ground-truth layouts");
  eval->add_option("--pred", e_pred, "Predicted scenes")->required();
  eval->add_option("--gt", e_gt, "Ground-truth scenes")->required();
  eval->add_option("--out", e_out, "JSON report to write");
  eval->add_option("--iou", mo.iou_threshold, "IoU threshold for a true positive")
      ->capture_default_str();
  eval->add_option("--voxel", mo.voxel_size, "Voxel size of the layout IoU (m)")
      ->capture_default_str();
  eval->add_flag("--hungarian", hungarian, "Optimal instead of greedy matching");

  // render
  std::string r_scenes, r_out;
  std::size_t r_index = 0;
  RenderOptions ro;
  auto* render = app.add_subcommand("render", "Draw a scene as an SVG top view");
  render->add_option("--scenes", r_scenes, "Scene file")->required();
  render->add_option("--index", r_index, "Scene to draw")->capture_default_str();
  render->add_option("--out", r_out, "SVG file to write")->required();
  render->add_option("--scale", ro.pixels_per_meter, "Pixels per meter")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  auto log = [&](const std::string& msg) {
    if (!quiet) std::cerr << msg << '\n';
  };

  try {
    if (discover->parsed()) {
      const Corpus corpus = d_corpus.load(quiet);
      const CooccurrenceTables tables = build_tables(corpus.scenes, corpus.vocabulary);
      CausalGraph skeleton = dependence_skeleton(tables, corpus.vocabulary, tau, yates, threads);
      if (!d_prior.empty()) {
        const CausalGraph prior = load_graph(d_prior);
        for (const Edge& e : prior.edges()) {
          if (!e.directed) continue;
          const auto a = skeleton.find(prior.name(e.a));
          const auto b = skeleton.find(prior.name(e.b));
          if (!a || !b || skeleton.creates_cycle(*a, *b)) {
            log("warning: prior edge " + prior.name(e.a) + " -> " + prior.name(e.b) + " ignored");
            continue;
          }
          skeleton.add_directed(*a, *b);
        }
      }
      const CausalGraph oriented = ic_orient(skeleton);
      const CausalGraph geometric = geometric_edges(corpus.scenes, corpus.vocabulary, geo);
      const CausalGraph graph = union_acyclic(oriented, geometric);
      save_graph(d_out, graph);
      log("graph: " + std::to_string(graph.size()) + " nodes, " +
          std::to_string(graph.edges().size()) + " edges");
    } else if (induce->parsed()) {
      const Corpus corpus = i_corpus.load(quiet);
      const CausalGraph graph = load_graph(i_graph);
      pc.mode = coverage_mode == "mean" ? CoverageMode::kMeanRatio : CoverageMode::kSceneFraction;
      const PCoverResult r = p_cover(corpus.scenes, graph, pc);
      save_grammar(i_out, r.grammar);
      std::string anchors;
      for (const std::string& a : r.anchors) anchors += " " + a;
      log("grammar: " + std::to_string(r.grammar.size()) + " rules, anchors:" + anchors +
          ", coverage " + std::to_string(r.coverage));
    } else if (parse_cmd->parsed()) {
      const Corpus corpus = p_corpus.load(quiet);
      const Grammar grammar = load_grammar(p_grammar);
      SequenceDump dump;
      dump.grammar_fingerprint = grammar.fingerprint();
      dump.t_max = t_max;
      std::size_t skipped = 0;
      for (std::size_t i = 0; i < corpus.scenes.size(); ++i) {
        const Scene clipped = clip_to_language(corpus.scenes[i], grammar);
        try {
          dump.sequences.push_back(parse(clipped, grammar, t_max));
        } catch (const ValidationError& e) {
          ++skipped;
          log("warning: scene " + std::to_string(i) + " skipped: " + e.what());
        }
      }
      save_sequences(p_out, dump);
      log("parsed " + std::to_string(dump.sequences.size()) + " scenes, skipped " +
          std::to_string(skipped));
    } else if (train->parsed()) {
      const Grammar grammar = load_grammar(t_grammar);
      const SequenceDump dump = load_sequences(t_seqs);
      check_fingerprint(dump.grammar_fingerprint, grammar, "sequence dump");
      model.seed = derive_seed(seed, "train");
      SceneVae vae(grammar, dump.t_max, model);
      nlohmann::json report = nlohmann::json::array();
      vae.train(dump.sequences, [&](std::size_t epoch, const LossParts& p) {
        report.push_back({{"epoch", epoch + 1}, {"total", p.total}, {"ce", p.ce},
                          {"kl", p.kl}, {"pose", p.pose}, {"shape", p.shape}});
        if (!quiet) {
          std::cerr << "epoch " << epoch + 1 << " loss " << p.total << " ce " << p.ce << " kl "
                    << p.kl << " pose " << p.pose << " shape " << p.shape << '\n';
        }
      });
      save_checkpoint(t_out, vae);
      if (!t_report.empty()) write_text(t_report, report.dump(2) + "\n");
    } else if (sample->parsed()) {
      const Grammar grammar = load_grammar(s_grammar);
      const SceneVae vae = load_checkpoint(s_ckpt, grammar);
      save_corpus(s_out, vae.sample(s_n, derive_seed(seed, "sample")));
    } else if (interp->parsed()) {
      const Grammar grammar = load_grammar(n_grammar);
      const SceneVae vae = load_checkpoint(n_ckpt, grammar);
      const std::vector<Scene> scenes = load_scenes(n_scenes);
      if (n_a >= scenes.size() || n_b >= scenes.size()) {
        throw ValidationError("scene index out of range (file holds " + std::to_string(scenes.size()) +
                              " scenes)");
      }
      const std::vector<double> alphas = parse_alphas(n_alphas);
      save_corpus(n_out, vae.interpolate(clip_to_language(scenes[n_a], grammar),
                                         clip_to_language(scenes[n_b], grammar), alphas));
    } else if (eval->parsed()) {
      mo.matcher = hungarian ? Matcher::kHungarian : Matcher::kGreedy;
      const MatchReport r = evaluate_corpus(load_scenes(e_pred), load_scenes(e_gt), mo);
      if (!e_out.empty()) write_text(e_out, report_to_json(r).dump(2) + "\n");
      std::cout << report_to_table(r);
    } else if (render->parsed()) {
      const std::vector<Scene> scenes = load_scenes(r_scenes);
      if (r_index >= scenes.size()) {
        throw FormatError("scene file holds " + std::to_string(scenes.size()) + " scenes, no index " +
                          std::to_string(r_index));
      }
      write_text(r_out, render_svg(scenes[r_index], ro));
    }
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
