#include "slotkit/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "json.hpp"
#include "slotkit/errors.hpp"
#include "slotkit/rng.hpp"

namespace fs = std::filesystem;

namespace slotkit {

namespace {

constexpr uint64_t kTagProto = 0x70726f746fULL;  // prototype draw
constexpr uint64_t kTagScene = 0x7363656e65ULL;  // per-scene layout
constexpr uint64_t kTagNoise = 0x6e6f697365ULL;  // per-scene feature noise
constexpr uint64_t kTagImage = 0x696d616765ULL;  // per-scene rendering

std::string sample_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d", index);
  return buf;
}

std::vector<int> snapped_sides(const SynthConfig& cfg) {
  std::vector<int> sides;
  int limit = std::min({cfg.size_max, cfg.image_h, cfg.image_w});
  for (int s = cfg.patch_size; s <= limit; s += cfg.patch_size)
    if (s >= cfg.size_min) sides.push_back(s);
  return sides;
}

}  // namespace

void SynthConfig::validate() const {
  if (image_h < 1 || image_w < 1) throw ConfigError("synth: image size must be positive");
  if (patch_size < 1) throw ConfigError("synth: patch size must be positive");
  if (image_h % patch_size != 0 || image_w % patch_size != 0)
    throw ConfigError("synth: image size must be divisible by patch size");
  if (feature_dim < 1) throw ConfigError("synth: feature dim must be positive");
  if (n_classes < 1) throw ConfigError("synth: need at least one foreground class");
  if (objects_min < 0) throw ConfigError("synth: objects_min must be >= 0");
  if (objects_max < objects_min) throw ConfigError("synth: objects range is empty");
  if (objects_max > n_classes)
    throw ConfigError("synth: objects_max exceeds class count (classes are drawn per scene without replacement)");
  if (size_min > size_max) throw ConfigError("synth: size range is empty");
  if (size_min > std::min(image_h, image_w))
    throw ConfigError("synth: object size exceeds image");
  if (noise_std < 0.0f) throw ConfigError("synth: noise_std must be >= 0");
  if (n_samples < 1) throw ConfigError("synth: n_samples must be >= 1");
  if (objects_max > 0 && snapped_sides(*this).empty())
    throw ConfigError("synth: size range holds no multiple of patch size that fits the image");
}

void DatasetManifest::write(const std::string& path) const {
  nlohmann::json j;
  j["version"] = version;
  j["n_samples"] = n_samples;
  j["feature_dim"] = feature_dim;
  j["grid"] = {{"rows", grid_rows}, {"cols", grid_cols}};
  j["image_size"] = {{"h", image_h}, {"w", image_w}};
  j["patch_size"] = patch_size;
  nlohmann::json cls = nlohmann::json::object();
  for (auto& [id, name] : classes) cls[std::to_string(id)] = name;
  j["classes"] = cls;
  nlohmann::json samp = nlohmann::json::array();
  for (auto& s : samples) samp.push_back({{"id", s.id}, {"split", s.split}});
  j["samples"] = samp;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

DatasetManifest DatasetManifest::read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest parse error: " + std::string(e.what()));
  }
  DatasetManifest m;
  try {
    m.version = j.at("version").get<int>();
    if (m.version != 1) throw FormatError("manifest: unsupported version");
    m.n_samples = j.at("n_samples").get<int>();
    m.feature_dim = j.at("feature_dim").get<int>();
    m.grid_rows = j.at("grid").at("rows").get<int>();
    m.grid_cols = j.at("grid").at("cols").get<int>();
    m.image_h = j.at("image_size").at("h").get<int>();
    m.image_w = j.at("image_size").at("w").get<int>();
    m.patch_size = j.at("patch_size").get<int>();
    for (auto& [key, val] : j.at("classes").items())
      m.classes[std::stoi(key)] = val.get<std::string>();
    for (auto& s : j.at("samples")) {
      SampleRef ref;
      ref.id = s.at("id").get<std::string>();
      ref.split = s.at("split").get<std::string>();
      m.samples.push_back(ref);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest field error: " + std::string(e.what()));
  }
  if (int(m.samples.size()) != m.n_samples)
    throw FormatError("manifest: n_samples does not match sample list length");
  return m;
}

namespace {

struct Rect {
  int r0, c0, h, w;  // pixel units
};

// majority-occupancy label per patch; ties prefer foreground, then lower id
num::Mat<int> patch_labels(const num::Mat<int>& instances, int patch) {
  int gr = instances.rows / patch, gc = instances.cols / patch;
  num::Mat<int> labels(gr, gc);
  std::map<int, int> count;
  for (int pr = 0; pr < gr; ++pr)
    for (int pc = 0; pc < gc; ++pc) {
      count.clear();
      for (int r = pr * patch; r < (pr + 1) * patch; ++r)
        for (int c = pc * patch; c < (pc + 1) * patch; ++c) ++count[instances.at(r, c)];
      int best_id = 0, best_count = -1;
      for (auto& [id, n] : count) {
        bool better = n > best_count;
        if (n == best_count) {
          if (best_id == 0 && id != 0) better = true;  // foreground over background
          // among foreground ties the map order already visited the lower id
        }
        if (better) {
          best_id = id;
          best_count = n;
        }
      }
      labels.at(pr, pc) = best_id;
    }
  return labels;
}

void render_stripes(RgbImage& img, const num::Mat<int>& instances, int n_objects,
                    const float base[3], Rng& rng, float noise_std) {
  // one stripe palette for the whole scene; regions differ only in stripe
  // orientation and phase, so raw pixel statistics barely separate objects
  const int period = 4;
  float other[3] = {1.0f - base[0], 1.0f - base[1], 1.0f - base[2]};
  std::vector<int> vertical(size_t(n_objects) + 1, 0);
  std::vector<int> phase(size_t(n_objects) + 1, 0);
  for (int k = 0; k <= n_objects; ++k) {
    vertical[size_t(k)] = int(rng.uniform_int(0, 1));
    phase[size_t(k)] = int(rng.uniform_int(0, period - 1));
  }
  for (int r = 0; r < img.rows; ++r)
    for (int c = 0; c < img.cols; ++c) {
      int id = instances.at(r, c);
      int coord = vertical[size_t(id)] ? c : r;
      bool first = ((coord + phase[size_t(id)]) / (period / 2)) % 2 == 0;
      const float* col = first ? base : other;
      uint8_t* px = img.at(r, c);
      for (int ch = 0; ch < 3; ++ch) {
        float v = col[ch] + noise_std * float(rng.normal());
        v = std::clamp(v, 0.0f, 1.0f);
        px[ch] = uint8_t(std::lround(v * 255.0f));
      }
    }
}

}  // namespace

void generate_synthetic_dataset(const SynthConfig& cfg, const std::string& dir) {
  cfg.validate();
  fs::create_directories(fs::path(dir) / "samples");

  // fixed unit-norm prototype per class (0 = background), then scene palette
  Rng proto_rng(derive_seed(cfg.seed, kTagProto, 0));
  num::Mat<float> protos(cfg.n_classes + 1, cfg.feature_dim);
  for (int k = 0; k <= cfg.n_classes; ++k) {
    double norm = 0.0;
    std::vector<double> v(static_cast<size_t>(cfg.feature_dim));
    for (int j = 0; j < cfg.feature_dim; ++j) {
      v[size_t(j)] = proto_rng.normal();
      norm += v[size_t(j)] * v[size_t(j)];
    }
    norm = std::sqrt(norm);
    for (int j = 0; j < cfg.feature_dim; ++j) protos.at(k, j) = float(v[size_t(j)] / norm);
  }
  float palette[3];
  for (float& ch : palette) ch = float(proto_rng.uniform(0.1, 0.9));

  const std::vector<int> sides = snapped_sides(cfg);
  const int gr = cfg.image_h / cfg.patch_size, gc = cfg.image_w / cfg.patch_size;

  DatasetManifest manifest;
  manifest.n_samples = cfg.n_samples + cfg.n_eval();
  manifest.feature_dim = cfg.feature_dim;
  manifest.grid_rows = gr;
  manifest.grid_cols = gc;
  manifest.image_h = cfg.image_h;
  manifest.image_w = cfg.image_w;
  manifest.patch_size = cfg.patch_size;
  manifest.classes[0] = "background";
  for (int k = 1; k <= cfg.n_classes; ++k) manifest.classes[k] = "class_" + std::to_string(k);

  for (int s = 0; s < manifest.n_samples; ++s) {
    std::string id = sample_id(s);
    std::string split = s < cfg.n_samples ? "train" : "eval";
    manifest.samples.push_back({id, split});
    fs::path sdir = fs::path(dir) / "samples" / id;
    fs::create_directories(sdir);

    // layout: object count, distinct classes, snapped rectangles (later on top)
    Rng scene_rng(derive_seed(cfg.seed, kTagScene, uint64_t(s)));
    int n_obj = int(scene_rng.uniform_int(uint64_t(cfg.objects_min), uint64_t(cfg.objects_max)));
    std::vector<int> class_perm;
    scene_rng.permutation(class_perm, cfg.n_classes);
    num::Mat<int> instances(cfg.image_h, cfg.image_w);
    instances.fill(0);
    std::map<int, int> inst_class;
    for (int k = 0; k < n_obj; ++k) {
      int w = sides[size_t(scene_rng.uniform_int(0, uint64_t(sides.size()) - 1))];
      int h = sides[size_t(scene_rng.uniform_int(0, uint64_t(sides.size()) - 1))];
      int c0 = cfg.patch_size * int(scene_rng.uniform_int(0, uint64_t((cfg.image_w - w) / cfg.patch_size)));
      int r0 = cfg.patch_size * int(scene_rng.uniform_int(0, uint64_t((cfg.image_h - h) / cfg.patch_size)));
      for (int r = r0; r < r0 + h; ++r)
        for (int c = c0; c < c0 + w; ++c) instances.at(r, c) = k + 1;
      inst_class[k + 1] = class_perm[size_t(k)] + 1;
    }
    // drop instances hidden by later rectangles
    std::vector<char> visible(size_t(n_obj) + 1, 0);
    for (int v : instances.v) visible[size_t(v)] = 1;
    for (auto it = inst_class.begin(); it != inst_class.end();)
      it = visible[size_t(it->first)] ? std::next(it) : inst_class.erase(it);

    // patch features: majority-label prototype plus Gaussian noise
    num::Mat<int> labels = patch_labels(instances, cfg.patch_size);
    PatchFeatureMap fmap;
    fmap.grid_rows = gr;
    fmap.grid_cols = gc;
    fmap.source_tag = "synthetic";
    fmap.tokens = num::Mat<float>(gr * gc, cfg.feature_dim);
    Rng noise_rng(derive_seed(cfg.seed, kTagNoise, uint64_t(s)));
    for (int p = 0; p < gr * gc; ++p) {
      int inst = labels.v[size_t(p)];
      int cls = inst == 0 ? 0 : inst_class.at(inst);
      for (int j = 0; j < cfg.feature_dim; ++j)
        fmap.tokens.at(p, j) = protos.at(cls, j) + cfg.noise_std * float(noise_rng.normal());
    }

    save_features((sdir / "features.bin").string(), fmap);
    write_png_gray16((sdir / "instances.png").string(), instances);
    nlohmann::json cls_json = nlohmann::json::object();
    for (auto& [inst, cls] : inst_class) cls_json[std::to_string(inst)] = cls;
    std::ofstream cj(sdir / "classes.json");
    if (!cj) throw DataError("cannot write " + (sdir / "classes.json").string());
    cj << cls_json.dump() << "\n";

    if (cfg.images) {
      Rng img_rng(derive_seed(cfg.seed, kTagImage, uint64_t(s)));
      RgbImage img;
      img.rows = cfg.image_h;
      img.cols = cfg.image_w;
      img.px.assign(size_t(img.rows) * img.cols * 3, 0);
      render_stripes(img, instances, n_obj, palette, img_rng, cfg.noise_std);
      write_png_rgb((sdir / "image.png").string(), img);
    }
  }

  manifest.write((fs::path(dir) / "manifest.json").string());
}

DatasetReader::DatasetReader(const std::string& dir)
    : dir_(dir), manifest_(DatasetManifest::read((fs::path(dir) / "manifest.json").string())) {}

std::vector<int> DatasetReader::split_indices(const std::string& split) const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (manifest_.samples[size_t(i)].split == split) out.push_back(i);
  return out;
}

SceneSample DatasetReader::load(int index) const {
  if (index < 0 || index >= size()) throw ArgumentError("dataset: sample index out of range");
  const SampleRef& ref = manifest_.samples[size_t(index)];
  fs::path sdir = fs::path(dir_) / "samples" / ref.id;
  SceneSample sample;
  sample.id = ref.id;
  sample.split = ref.split;

  sample.features = load_features((sdir / "features.bin").string());
  if (sample.features.feature_dim() != manifest_.feature_dim)
    throw DataError("sample " + ref.id + ": feature_dim does not match manifest");
  if (sample.features.grid_rows != manifest_.grid_rows ||
      sample.features.grid_cols != manifest_.grid_cols)
    throw DataError("sample " + ref.id + ": feature grid does not match manifest");

  sample.instances = read_png_gray16((sdir / "instances.png").string());
  if (sample.instances.rows != manifest_.image_h || sample.instances.cols != manifest_.image_w)
    throw DataError("sample " + ref.id + ": instances shape does not match manifest");

  std::ifstream cj(sdir / "classes.json");
  if (!cj) throw DataError("sample " + ref.id + ": classes.json missing");
  nlohmann::json j;
  try {
    cj >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("sample " + ref.id + ": classes.json parse error: " + e.what());
  }
  for (auto& [key, val] : j.items()) sample.instance_class[std::stoi(key)] = val.get<int>();

  std::set<int> seen;
  for (int v : sample.instances.v)
    if (v != 0) seen.insert(v);
  for (int v : seen)
    if (!sample.instance_class.count(v))
      throw DataError("sample " + ref.id + ": instances holds id " + std::to_string(v) +
                      " absent from classes.json");
  for (auto& [inst, cls] : sample.instance_class)
    if (!seen.count(inst))
      throw DataError("sample " + ref.id + ": classes.json holds id " + std::to_string(inst) +
                      " absent from instances");

  fs::path img_path = sdir / "image.png";
  if (fs::exists(img_path)) {
    sample.image = read_png_rgb(img_path.string());
    if (sample.image.rows != manifest_.image_h || sample.image.cols != manifest_.image_w)
      throw DataError("sample " + ref.id + ": image shape does not match manifest");
    sample.has_image = true;
  }
  return sample;
}

}  // namespace slotkit
