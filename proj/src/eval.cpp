#include "slotkit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "slotkit/errors.hpp"
#include "slotkit/masks.hpp"
#include "slotkit/rng.hpp"

namespace fs = std::filesystem;

namespace slotkit {

namespace {

constexpr uint64_t kTagRepeat = 0x72657065ULL;    // per-repeat slot noise root
constexpr uint64_t kTagCluster = 0x636c7573ULL;  // per-repeat clustering seed

std::vector<int> pick_samples(const DatasetReader& data, const EvalConfig& cfg) {
  std::vector<int> idx = data.split_indices(cfg.split);
  if (idx.empty()) throw ConfigError("evaluation split '" + cfg.split + "' has no samples");
  if (cfg.max_samples > 0 && int(idx.size()) > cfg.max_samples)
    idx.resize(size_t(cfg.max_samples));
  return idx;
}

num::Mat<int> gt_class_map(const SceneSample& s) {
  num::Mat<int> out(s.instances.rows, s.instances.cols);
  for (size_t i = 0; i < out.size(); ++i) {
    int inst = s.instances.v[i];
    out.v[i] = inst == 0 ? 0 : s.instance_class.at(inst);
  }
  return out;
}

// one binary mask per label present in the map, ascending label order
std::vector<std::vector<uint8_t>> binary_masks(const num::Mat<int>& labels, bool skip_zero) {
  std::vector<int> present;
  for (int v : labels.v) present.push_back(v);
  std::sort(present.begin(), present.end());
  present.erase(std::unique(present.begin(), present.end()), present.end());
  std::vector<std::vector<uint8_t>> out;
  for (int label : present) {
    if (skip_zero && label == 0) continue;
    std::vector<uint8_t> m(labels.size(), 0);
    for (size_t i = 0; i < labels.size(); ++i) m[i] = labels.v[i] == label;
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<Box> boxes_of(const num::Mat<int>& labels, bool skip_zero) {
  std::vector<Box> out;
  for (auto& [label, box] : boxes_from_masks(labels)) {
    if (skip_zero && label == 0) continue;
    out.push_back(box);
  }
  return out;
}

void write_overlay(const std::string& dir, const std::string& id, const num::Mat<int>& pred) {
  if (dir.empty()) return;
  fs::create_directories(dir);
  num::Mat<int> shifted(pred.rows, pred.cols);
  for (size_t i = 0; i < pred.size(); ++i) shifted.v[i] = pred.v[i] + 1;  // color every slot
  write_png_rgb((fs::path(dir) / (id + ".png")).string(), colorize_labels(shifted));
}

// per-sample predicted label map at image resolution plus the mask stack on
// its native grid; shared by the model and block-pattern paths
struct SamplePrediction {
  SoftMasks native;        // mask stack on its source grid
  num::Mat<int> labels;    // hardened at image resolution
};

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual SamplePrediction predict(const SceneSample& s, int sample_index,
                                   uint64_t noise_root) const = 0;
  // features to pool for segmentation, with their grid
  virtual num::Mat<float> pool_features(const SceneSample& s, int& rows, int& cols) const = 0;
  virtual int n_masks() const = 0;
};

class ModelPredictor : public Predictor {
 public:
  ModelPredictor(const SlotModel<float>& model, const EvalConfig& cfg)
      : model_(model), source_(resolve_mask_source(cfg.mask_source, model.cfg.decoder)) {}

  SamplePrediction predict(const SceneSample& s, int sample_index,
                           uint64_t noise_root) const override {
    num::Tape<float> tape(false);
    num::Mat<float> eps = model_.sample_eps(noise_root, uint64_t(sample_index));
    auto fwd = model_.forward(tape, s, eps);
    SamplePrediction p;
    p.native = model_.masks_from(fwd, source_);
    SoftMasks at_image = p.native.rows == model_.image_h && p.native.cols == model_.image_w
                             ? p.native
                             : resize_masks(p.native, model_.image_h, model_.image_w);
    p.labels = hard_masks(at_image);
    return p;
  }

  num::Mat<float> pool_features(const SceneSample& s, int& rows, int& cols) const override {
    rows = model_.tgt_rows;
    cols = model_.tgt_cols;
    return model_.feature_target(s);
  }

  int n_masks() const override { return model_.cfg.n_slots; }
  const std::string& source() const { return source_; }

 private:
  const SlotModel<float>& model_;
  std::string source_;
};

class BlockPredictor : public Predictor {
 public:
  BlockPredictor(int num_masks, const DatasetManifest& man) : num_masks_(num_masks), man_(man) {}

  SamplePrediction predict(const SceneSample&, int, uint64_t) const override {
    SamplePrediction p;
    p.labels = block_pattern(num_masks_, man_.image_h, man_.image_w);
    num::Mat<int> grid = block_pattern(num_masks_, man_.grid_rows, man_.grid_cols);
    SoftMasks sm;
    sm.n_slots = num_masks_;
    sm.rows = man_.grid_rows;
    sm.cols = man_.grid_cols;
    sm.m = num::Mat<float>(num_masks_, grid.rows * grid.cols);
    for (size_t i = 0; i < grid.size(); ++i) sm.m.at(grid.v[i], int(i)) = 1.0f;
    p.native = std::move(sm);
    return p;
  }

  num::Mat<float> pool_features(const SceneSample& s, int& rows, int& cols) const override {
    rows = man_.grid_rows;
    cols = man_.grid_cols;
    return s.features.tokens;
  }

  int n_masks() const override { return num_masks_; }

 private:
  int num_masks_;
  const DatasetManifest& man_;
};

MetricsReport run_discovery(const Predictor& pred, const DatasetReader& data,
                            const EvalConfig& cfg) {
  MetricsReport rep;
  rep.task = "discovery";
  std::vector<int> idx = pick_samples(data, cfg);
  double ari_sum = 0.0;
  int ari_used = 0;
  std::vector<double> overlaps_i, overlaps_c, per_image_ari;
  for (int si : idx) {
    SceneSample s = data.load(si);
    SamplePrediction p = pred.predict(s, si, cfg.seed);
    write_overlay(cfg.overlay_dir, s.id, p.labels);

    double ari;
    if (ari_of_maps(p.labels, s.instances, true, ari)) {
      ari_sum += ari;
      ++ari_used;
      per_image_ari.push_back(ari);
    }

    auto pred_masks = binary_masks(p.labels, false);
    for (double o : best_overlaps(pred_masks, binary_masks(s.instances, true)))
      overlaps_i.push_back(o);
    for (double o : best_overlaps(pred_masks, binary_masks(gt_class_map(s), true)))
      overlaps_c.push_back(o);
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / double(v.size());
  };
  rep.values["fg_ari"] = ari_used > 0 ? ari_sum / ari_used : 0.0;
  rep.values["mbo_i"] = mean(overlaps_i);
  rep.values["mbo_c"] = mean(overlaps_c);
  rep.per_image["fg_ari"] = per_image_ari;
  rep.settings["images_evaluated"] = int(idx.size());
  rep.settings["images_with_foreground"] = ari_used;
  return rep;
}

MetricsReport run_localization(const Predictor& pred, const DatasetReader& data,
                               const EvalConfig& cfg) {
  MetricsReport rep;
  rep.task = "localization";
  std::vector<int> idx = pick_samples(data, cfg);
  std::vector<std::vector<Box>> pred_boxes, gt_boxes;
  for (int si : idx) {
    SceneSample s = data.load(si);
    SamplePrediction p = pred.predict(s, si, cfg.seed);
    pred_boxes.push_back(boxes_of(p.labels, false));
    gt_boxes.push_back(boxes_of(s.instances, true));
  }
  LocalizationResult res = corloc_and_detection_rate(pred_boxes, gt_boxes, cfg.iou_threshold);
  rep.values["corloc"] = res.corloc;
  rep.values["detection_rate"] = res.detection_rate;
  rep.settings["images_evaluated"] = int(idx.size());
  rep.settings["images_with_boxes"] = res.images_used;
  rep.settings["iou_threshold"] = cfg.iou_threshold;
  return rep;
}

MetricsReport run_segmentation(const Predictor& pred, const DatasetReader& data,
                               const EvalConfig& cfg) {
  MetricsReport rep;
  rep.task = "segmentation";
  std::vector<int> idx = pick_samples(data, cfg);
  const int clusters =
      cfg.clusters > 0 ? cfg.clusters : int(data.manifest().classes.size());
  if (cfg.repeats < 1) throw ArgumentError("segmentation repeats must be >= 1");

  double miou_sum = 0.0, pacc_sum = 0.0;
  for (int r = 0; r < cfg.repeats; ++r) {
    std::vector<SegImage> images;
    uint64_t noise_root = derive_seed(cfg.seed, kTagRepeat, uint64_t(r));
    for (int si : idx) {
      SceneSample s = data.load(si);
      SamplePrediction p = pred.predict(s, si, noise_root);
      SegImage im;
      int fr, fc;
      num::Mat<float> feats = pred.pool_features(s, fr, fc);
      SoftMasks on_grid = p.native.rows == fr && p.native.cols == fc
                              ? p.native
                              : resize_masks(p.native, fr, fc);
      im.pooled = pool_slot_features(on_grid, feats);
      im.slot_pixels = p.labels;
      im.gt_class = gt_class_map(s);
      images.push_back(std::move(im));
    }
    SegScore sc = semantic_segmentation_score(images, clusters, cfg.restarts,
                                              derive_seed(cfg.seed, kTagCluster, uint64_t(r)));
    miou_sum += sc.miou;
    pacc_sum += sc.pacc;
  }
  rep.values["miou"] = miou_sum / cfg.repeats;
  rep.values["pacc"] = pacc_sum / cfg.repeats;
  rep.settings["images_evaluated"] = int(idx.size());
  rep.settings["clusters"] = clusters;
  rep.settings["restarts"] = cfg.restarts;
  rep.settings["repeats"] = cfg.repeats;
  return rep;
}

MetricsReport dispatch(const Predictor& pred, const DatasetReader& data, const EvalConfig& cfg) {
  MetricsReport rep;
  if (cfg.task == "discovery")
    rep = run_discovery(pred, data, cfg);
  else if (cfg.task == "localization")
    rep = run_localization(pred, data, cfg);
  else if (cfg.task == "segmentation")
    rep = run_segmentation(pred, data, cfg);
  else
    throw ArgumentError("unknown task " + cfg.task +
                        " (valid: discovery, localization, segmentation)");
  rep.settings["split"] = cfg.split;
  rep.settings["seed"] = cfg.seed;
  rep.settings["n_masks"] = pred.n_masks();
  return rep;
}

}  // namespace

MetricsReport evaluate_model(const SlotModel<float>& model, const DatasetReader& data,
                             const EvalConfig& cfg) {
  ModelPredictor pred(model, cfg);
  MetricsReport rep = dispatch(pred, data, cfg);
  rep.settings["mask_source"] = pred.source();
  rep.settings["decoder"] = model.cfg.decoder;
  return rep;
}

MetricsReport evaluate_blocks(int num_masks, const DatasetReader& data, const EvalConfig& cfg) {
  if (num_masks < 1) throw ArgumentError("block baseline needs num_masks >= 1");
  BlockPredictor pred(num_masks, data.manifest());
  MetricsReport rep = dispatch(pred, data, cfg);
  rep.settings["baseline"] = "block-pattern";
  return rep;
}

}  // namespace slotkit
