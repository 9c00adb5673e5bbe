#include "sgvae/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "sgvae/error.hpp"

namespace sgvae {

Vocabulary::Vocabulary() { add(kRoomCategory); }

std::size_t Vocabulary::add(const std::string& name) {
  auto it = ids_.find(name);
  if (it != ids_.end()) return it->second;
  const std::size_t id = names_.size();
  names_.push_back(name);
  ids_.emplace(name, id);
  return id;
}

std::optional<std::size_t> Vocabulary::find(const std::string& name) const {
  auto it = ids_.find(name);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::size_t Vocabulary::index(const std::string& name) const {
  auto it = ids_.find(name);
  if (it == ids_.end()) throw ValidationError("unknown category '" + name + "'");
  return it->second;
}

std::string normalize_category_name(const std::string& raw) {
  std::string out;
  out.reserve(raw.size());
  for (unsigned char c : raw) {
    if (std::isspace(c)) {
      out.push_back('_');
    } else {
      out.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  return out;
}

Vocabulary vocabulary_of(const std::vector<Scene>& scenes) {
  std::set<std::string> names;
  for (const Scene& s : scenes) {
    for (const ObjectInstance& o : s.objects) names.insert(o.category);
  }
  Vocabulary vocab;
  for (const std::string& n : names) vocab.add(n);
  return vocab;
}

namespace {

Vec3 read_vec3(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 3) {
    throw FormatError(std::string("field '") + key + "' must be an array of 3 numbers");
  }
  Vec3 out{};
  for (std::size_t i = 0; i < 3; ++i) {
    if (!v[i].is_number()) {
      throw FormatError(std::string("field '") + key + "' must hold numbers");
    }
    out[i] = v[i].get<double>();
    if (!std::isfinite(out[i])) {
      throw FormatError(std::string("field '") + key + "' is not finite");
    }
  }
  return out;
}

ObjectInstance object_from_json(const nlohmann::json& j, std::vector<std::string>* warnings) {
  if (!j.is_object()) throw FormatError("object entry must be a JSON object");
  static const std::set<std::string> known = {"category", "center", "yaw", "size"};
  if (warnings) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!known.count(it.key())) warnings->push_back("unknown field '" + it.key() + "'");
    }
  }
  ObjectInstance o;
  if (!j.contains("category") || !j["category"].is_string()) {
    throw FormatError("missing string field 'category'");
  }
  o.category = normalize_category_name(j["category"].get<std::string>());
  if (o.category.empty()) throw FormatError("empty category name");
  if (!j.contains("center")) throw FormatError("missing field 'center'");
  if (!j.contains("size")) throw FormatError("missing field 'size'");
  o.pose.center = read_vec3(j, "center");
  if (j.contains("yaw")) {
    if (!j["yaw"].is_number()) throw FormatError("field 'yaw' must be a number");
    o.pose.yaw = wrap_angle(j["yaw"].get<double>());
  }
  o.shape.size = read_vec3(j, "size");
  if (!o.shape.valid()) throw FormatError("box sizes must be strictly positive");
  return o;
}

nlohmann::json object_to_json(const ObjectInstance& o) {
  return nlohmann::json{{"category", o.category},
                        {"center", o.pose.center},
                        {"yaw", o.pose.yaw},
                        {"size", o.shape.size}};
}

}  // namespace

nlohmann::json scene_to_json(const Scene& scene) {
  nlohmann::json objects = nlohmann::json::array();
  for (const ObjectInstance& o : scene.objects) objects.push_back(object_to_json(o));
  return nlohmann::json{{"room", object_to_json(scene.room)}, {"objects", objects}};
}

Scene scene_from_json(const nlohmann::json& j, std::vector<std::string>* warnings) {
  if (!j.is_object()) throw FormatError("scene must be a JSON object");
  if (warnings) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key() != "room" && it.key() != "objects") {
        warnings->push_back("unknown field '" + it.key() + "'");
      }
    }
  }
  if (!j.contains("room")) throw FormatError("missing field 'room'");
  Scene s;
  s.room = object_from_json(j["room"], warnings);
  if (s.room.category != kRoomCategory) {
    throw FormatError("room category must be 'scene', got '" + s.room.category + "'");
  }
  if (j.contains("objects")) {
    if (!j["objects"].is_array()) throw FormatError("field 'objects' must be an array");
    for (const auto& o : j["objects"]) {
      s.objects.push_back(object_from_json(o, warnings));
      if (s.objects.back().category == kRoomCategory) {
        throw FormatError("objects may not use the reserved category 'scene'");
      }
    }
  }
  return s;
}

Corpus parse_corpus(std::istream& in, const CorpusOptions& options) {
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    std::vector<std::string> warnings;
    try {
      Scene s = scene_from_json(nlohmann::json::parse(line), &warnings);
      corpus.scenes.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
    }
    for (const std::string& w : warnings) {
      corpus.warnings.push_back("line " + std::to_string(line_no) + ": " + w);
    }
  }

  for (Scene& s : corpus.scenes) {
    for (ObjectInstance& o : s.objects) {
      auto it = options.synonyms.find(o.category);
      if (it != options.synonyms.end()) o.category = it->second;
    }
  }

  std::map<std::string, std::size_t> counts;
  for (const Scene& s : corpus.scenes) {
    for (const ObjectInstance& o : s.objects) ++counts[o.category];
  }
  for (Scene& s : corpus.scenes) {
    std::erase_if(s.objects, [&](const ObjectInstance& o) {
      return counts[o.category] < options.min_category_count;
    });
  }
  for (std::size_t i = 0; i < corpus.scenes.size(); ++i) {
    Scene& s = corpus.scenes[i];
    if (s.objects.size() > options.max_objects) {
      corpus.warnings.push_back("scene " + std::to_string(i) + ": truncated " +
                                std::to_string(s.objects.size()) + " objects to " +
                                std::to_string(options.max_objects));
      s.objects.resize(options.max_objects);
    }
  }
  corpus.vocabulary = vocabulary_of(corpus.scenes);
  return corpus;
}

Corpus load_corpus(const std::string& path, const CorpusOptions& options) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus '" + path + "'");
  return parse_corpus(in, options);
}

void write_corpus(std::ostream& out, const std::vector<Scene>& scenes) {
  for (const Scene& s : scenes) out << scene_to_json(s).dump() << '\n';
}

void save_corpus(const std::string& path, const std::vector<Scene>& scenes) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write corpus '" + path + "'");
  write_corpus(out, scenes);
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::map<std::string, std::string> load_synonyms(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open synonym file '" + path + "'");
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string alias, canonical, extra;
    if (!(ss >> alias)) continue;
    if (!(ss >> canonical) || (ss >> extra)) {
      throw FormatError("line " + std::to_string(line_no) + ": expected 'alias canonical'");
    }
    out[normalize_category_name(alias)] = normalize_category_name(canonical);
  }
  return out;
}

void save_vocabulary(const std::string& path, const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocabulary '" + path + "'");
  for (const std::string& n : vocab.names()) out << n << '\n';
}

Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary '" + path + "'");
  Vocabulary vocab;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    if (line_no == 0) {
      if (line != kRoomCategory) throw FormatError("line 1: first entry must be 'scene'");
    } else {
      if (line.empty()) throw FormatError("line " + std::to_string(line_no + 1) + ": empty name");
      if (vocab.contains(line)) {
        throw FormatError("line " + std::to_string(line_no + 1) + ": duplicate '" + line + "'");
      }
      vocab.add(line);
    }
    ++line_no;
  }
  return vocab;
}

}  // namespace sgvae
