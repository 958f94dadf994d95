#pragma once
// Task evaluation drivers over a dataset split: discovery (FG-ARI, mBO),
// localization (CorLoc, detection rate), and semantic segmentation
// (dataset-wide k-means + Hungarian assignment, mIoU/pAcc).

#include <cstdint>
#include <string>

#include "slotkit/data.hpp"
#include "slotkit/metrics.hpp"
#include "slotkit/model.hpp"

namespace slotkit {

struct EvalConfig {
  std::string task = "discovery";  // discovery | localization | segmentation
  std::string mask_source = "auto";
  std::string split = "eval";
  int clusters = 0;          // segmentation; 0 = dataset class count (with background)
  int restarts = 20;         // k-means restarts
  int repeats = 3;           // segmentation inference+clustering repeats, averaged
  double iou_threshold = 0.5;
  uint64_t seed = 0;         // eval-time slot noise and clustering
  int max_samples = 0;       // 0 = whole split
  std::string overlay_dir;   // when set, hard-mask overlays are written here
};

MetricsReport evaluate_model(const SlotModel<float>& model, const DatasetReader& data,
                             const EvalConfig& cfg);

// the model-free block-pattern partition scored under the same protocols
MetricsReport evaluate_blocks(int num_masks, const DatasetReader& data, const EvalConfig& cfg);

}  // namespace slotkit
