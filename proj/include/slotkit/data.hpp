#pragma once
// Dataset layout, loading, and the synthetic prototype-feature scene
// generator: rectangles with z-order occlusion over a background class, patch
// features equal to the majority-occupancy class prototype plus noise.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "slotkit/features.hpp"
#include "slotkit/mat.hpp"
#include "slotkit/png_io.hpp"

namespace slotkit {

struct SynthConfig {
  int image_h = 64, image_w = 64;
  int patch_size = 8;
  int feature_dim = 32;
  int n_classes = 5;  // foreground classes; background is class 0
  int objects_min = 2, objects_max = 5;
  int size_min = 12, size_max = 28;  // object side length range, pixels
  float noise_std = 0.05f;
  int n_samples = 2000;  // train scenes; an eval split of n_samples/10 is added
  bool images = true;    // also render RGB scenes
  uint64_t seed = 0;

  void validate() const;  // ConfigError on violation
  int n_eval() const { return n_samples / 10; }
};

struct SampleRef {
  std::string id;
  std::string split;  // "train" or "eval"
};

struct DatasetManifest {
  int version = 1;
  int n_samples = 0;  // total across splits
  int feature_dim = 0;
  int grid_rows = 0, grid_cols = 0;
  int image_h = 0, image_w = 0;
  int patch_size = 0;
  std::map<int, std::string> classes;  // id -> name, 0 = background
  std::vector<SampleRef> samples;

  static DatasetManifest read(const std::string& path);
  void write(const std::string& path) const;
};

struct SceneSample {
  std::string id;
  std::string split;
  PatchFeatureMap features;
  num::Mat<int> instances;  // image-resolution instance ids, 0 = background
  std::map<int, int> instance_class;
  bool has_image = false;
  RgbImage image;
};

// Writes manifest.json plus samples/<id>/{features.bin, instances.png,
// classes.json[, image.png]}. Fully deterministic in cfg.
void generate_synthetic_dataset(const SynthConfig& cfg, const std::string& dir);

class DatasetReader {
 public:
  explicit DatasetReader(const std::string& dir);

  const DatasetManifest& manifest() const { return manifest_; }
  int size() const { return int(manifest_.samples.size()); }
  std::vector<int> split_indices(const std::string& split) const;

  // loads and shape-checks one sample; errors name the sample id and field
  SceneSample load(int index) const;

 private:
  std::string dir_;
  DatasetManifest manifest_;
};

}  // namespace slotkit
