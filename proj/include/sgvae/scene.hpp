#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "sgvae/geometry.hpp"

namespace sgvae {

// Reserved category of the room object.
inline constexpr const char* kRoomCategory = "scene";

// Category names are the identifiers used throughout the pipeline: they are
// what the corpus files, graph files and grammar terminals carry. Vocabulary
// assigns each name a dense index for the counting code.
struct ObjectInstance {
  std::string category;
  Pose pose;
  BoxShape shape;
};

struct Scene {
  ObjectInstance room{kRoomCategory, {}, {}};
  std::vector<ObjectInstance> objects;
};

class Vocabulary {
 public:
  Vocabulary();  // holds only the reserved room category at index 0

  // Appends `name` if absent; returns its index either way.
  std::size_t add(const std::string& name);
  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t index(const std::string& name) const;  // throws if absent

  const std::string& name(std::size_t id) const { return names_.at(id); }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  bool contains(const std::string& name) const { return ids_.count(name) > 0; }

  bool operator==(const Vocabulary& other) const { return names_ == other.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> ids_;
};

// Lower-cases and replaces whitespace with '_' so names are valid grammar
// terminals.
std::string normalize_category_name(const std::string& raw);

// Vocabulary over the categories actually used by `scenes`, sorted by name
// after the reserved room category.
Vocabulary vocabulary_of(const std::vector<Scene>& scenes);

}  // namespace sgvae
