#pragma once
// Evaluation measures: adjusted Rand index, mean best overlap, box IoU and
// localization rates, mask-weighted feature pooling, seeded k-means, Hungarian
// assignment, and the dataset-level semantic-segmentation scorer.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "slotkit/masks.hpp"
#include "slotkit/mat.hpp"

namespace slotkit {

struct MetricsReport {
  std::string task;
  std::map<std::string, double> values;
  std::map<std::string, std::vector<double>> per_image;
  nlohmann::json settings;  // full provenance: mask source, seeds, counts

  nlohmann::json to_json() const;
  void write(const std::string& path) const;
};

// ARI over two equal-length label sequences. Degenerate inputs (fewer than
// two elements, or both labelings single-class) score 1.
double adjusted_rand_index(const std::vector<int>& pred, const std::vector<int>& gt);

// FG variant on label maps: gt label 0 is excluded when foreground_only.
// Returns false (undefined) when no pixels survive the filter.
bool ari_of_maps(const num::Mat<int>& pred, const num::Mat<int>& gt, bool foreground_only,
                 double& out);

// IoU of two same-sized binary masks (nonzero = inside); empty-vs-empty -> 0
double mask_iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b);

// per gt mask, the best IoU over all predicted masks (predictions reusable)
std::vector<double> best_overlaps(const std::vector<std::vector<uint8_t>>& pred_masks,
                                  const std::vector<std::vector<uint8_t>>& gt_masks);

double box_iou(const Box& a, const Box& b);

// per image: gt boxes and predicted boxes; images without gt are skipped
struct LocalizationResult {
  double corloc = 0.0;
  double detection_rate = 0.0;
  int images_used = 0;
};
LocalizationResult corloc_and_detection_rate(
    const std::vector<std::vector<Box>>& pred_boxes,
    const std::vector<std::vector<Box>>& gt_boxes, double threshold = 0.5);

// mask-weighted mean of features per slot, L2-normalized; slots whose total
// mass is below 1e-8 are dropped. Returns (slot index, vector) pairs.
std::vector<std::pair<int, std::vector<float>>> pool_slot_features(
    const SoftMasks& masks, const num::Mat<float>& features);

struct KmeansResult {
  std::vector<int> assignments;
  double inertia = 0.0;
};
// Lloyd's algorithm, `restarts` seeded restarts, k distinct init points each,
// best (lowest) inertia wins
KmeansResult kmeans(const num::Mat<float>& points, int k, int restarts, uint64_t seed);

// one-to-one partial assignment maximizing total score; result[row] = column
// or -1 for unmatched rows
std::vector<int> hungarian_match(const num::Mat<double>& score);

// Inputs for the semantic-segmentation scorer, one per image (a single
// inference repeat). slot_pixels holds per-pixel slot indices at gt
// resolution; pooled holds the (slot, vector) pairs from pool_slot_features.
struct SegImage {
  std::vector<std::pair<int, std::vector<float>>> pooled;
  num::Mat<int> slot_pixels;
  num::Mat<int> gt_class;
};
struct SegScore {
  double miou = 0.0;
  double pacc = 0.0;
};
// cluster all pooled vectors dataset-wide, Hungarian-assign clusters to
// classes by total IoU, unassigned clusters become background (class 0)
SegScore semantic_segmentation_score(const std::vector<SegImage>& images, int n_clusters,
                                     int restarts, uint64_t seed);

}  // namespace slotkit
