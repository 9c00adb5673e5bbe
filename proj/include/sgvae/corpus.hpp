#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgvae/scene.hpp"

namespace sgvae {

struct CorpusOptions {
  // Categories with fewer instances than this are dropped with their objects.
  std::size_t min_category_count = 10;
  // Scenes with more objects keep only the first max_objects.
  std::size_t max_objects = 15;
  // alias -> canonical category name, applied before counting.
  std::map<std::string, std::string> synonyms;
};

struct Corpus {
  Vocabulary vocabulary;
  std::vector<Scene> scenes;
  std::vector<std::string> warnings;  // non-fatal notices (unknown fields, ...)
};

// Reads the JSON-lines scene format. Blank lines are skipped. Throws
// IoError if the file cannot be read and FormatError("line N: ...") on
// malformed content.
Corpus load_corpus(const std::string& path, const CorpusOptions& options = {});
Corpus parse_corpus(std::istream& in, const CorpusOptions& options = {});

// Writes one scene per line; categories are written by name.
void save_corpus(const std::string& path, const std::vector<Scene>& scenes);
void write_corpus(std::ostream& out, const std::vector<Scene>& scenes);

nlohmann::json scene_to_json(const Scene& scene);
// `warnings` receives unknown-field notices when non-null.
Scene scene_from_json(const nlohmann::json& j, std::vector<std::string>* warnings = nullptr);

// Synonym file: one `alias canonical` pair per line, '#' starts a comment.
std::map<std::string, std::string> load_synonyms(const std::string& path);

// Vocabulary file: one category name per line, line number (from 0) = id.
void save_vocabulary(const std::string& path, const Vocabulary& vocab);
Vocabulary load_vocabulary(const std::string& path);

}  // namespace sgvae
