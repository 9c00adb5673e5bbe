#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgvae/scene.hpp"

namespace sgvae {

// Exact IoU of two yaw-rotated boxes: footprint polygon overlap times
// vertical overlap, over the union volume.
double box_iou(const ObjectInstance& a, const ObjectInstance& b);

enum class Matcher { kGreedy, kHungarian };

struct MatchOptions {
  double iou_threshold = 0.25;
  Matcher matcher = Matcher::kGreedy;
  double voxel_size = 0.05;
};

struct Match {
  std::size_t pred = 0;
  std::size_t gt = 0;
  double iou = 0.0;
};

// True-positive pairs (same category, IoU > threshold). Greedy matching
// takes pairs by descending IoU; Hungarian maximizes the summed IoU.
std::vector<Match> match_objects(const Scene& pred, const Scene& gt, const MatchOptions& options = {});

struct CategoryStats {
  std::size_t ground_truth = 0;
  std::size_t true_positives = 0;
  double angular_sum = 0.0;       // degrees, over true positives
  double displacement_sum = 0.0;  // meters, over true positives

  double rate() const;
  std::optional<double> angular_error() const;
  std::optional<double> displacement_error() const;
};

struct MatchReport {
  std::map<std::string, CategoryStats> categories;
  CategoryStats overall;
  double layout_iou = 0.0;  // mean over evaluated scenes
  std::size_t scenes = 0;
};

// Occupied-space IoU by voxelization: the union covers every object box of
// both scenes, the intersection only the true-positive boxes. The room box
// is not part of the layout.
double layout_iou(const Scene& pred, const Scene& gt, const std::vector<Match>& matches,
                  double voxel_size = 0.05);
double layout_iou(const Scene& pred, const Scene& gt, const MatchOptions& options = {});

MatchReport match_scenes(const Scene& pred, const Scene& gt, const MatchOptions& options = {});
// Scenes are paired by position. Throws ValidationError on a count mismatch.
MatchReport evaluate_corpus(const std::vector<Scene>& pred, const std::vector<Scene>& gt,
                            const MatchOptions& options = {});

nlohmann::json report_to_json(const MatchReport& report);
std::string report_to_table(const MatchReport& report);

}  // namespace sgvae
