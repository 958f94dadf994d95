#include "slotkit/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

namespace slotkit {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(uint8_t(v));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 24));
}

uint32_t get_u32(const uint8_t* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}

}  // namespace

PatchFeatureMap load_features(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw DataError("cannot open feature file: " + path);
  uint8_t header[20];
  if (std::fread(header, 1, 20, f.get()) != 20)
    throw FormatError(path + ": header truncated");
  if (std::memcmp(header, "DNSR", 4) != 0) throw FormatError(path + ": bad magic");
  uint32_t version = get_u32(header + 4);
  if (version != 1) throw FormatError(path + ": unsupported version " + std::to_string(version));
  uint32_t rows = get_u32(header + 8);
  uint32_t cols = get_u32(header + 12);
  uint32_t d_feat = get_u32(header + 16);
  if (rows < 1 || rows > 1u << 16) throw FormatError(path + ": bad rows field");
  if (cols < 1 || cols > 1u << 16) throw FormatError(path + ": bad cols field");
  if (d_feat < 1 || d_feat > 1u << 16) throw FormatError(path + ": bad feature-dim field");

  size_t count = size_t(rows) * cols * d_feat;
  std::vector<uint8_t> payload(count * 4);
  if (std::fread(payload.data(), 1, payload.size(), f.get()) != payload.size())
    throw FormatError(path + ": payload truncated");
  uint8_t extra;
  if (std::fread(&extra, 1, 1, f.get()) != 0) throw FormatError(path + ": trailing bytes");

  PatchFeatureMap map;
  map.grid_rows = int(rows);
  map.grid_cols = int(cols);
  map.tokens = num::Mat<float>(int(rows * cols), int(d_feat));
  map.source_tag = "precomputed";
  for (size_t i = 0; i < count; ++i) {
    float v = std::bit_cast<float>(get_u32(payload.data() + i * 4));
    if (!std::isfinite(v)) throw DataError(path + ": non-finite feature value");
    map.tokens.v[i] = v;
  }
  return map;
}

void save_features(const std::string& path, const PatchFeatureMap& map) {
  if (map.tokens.rows != map.grid_rows * map.grid_cols)
    throw ArgumentError("save_features: token count does not match grid");
  std::vector<uint8_t> out;
  out.reserve(20 + map.tokens.size() * 4);
  out.insert(out.end(), {'D', 'N', 'S', 'R'});
  put_u32(out, 1);
  put_u32(out, uint32_t(map.grid_rows));
  put_u32(out, uint32_t(map.grid_cols));
  put_u32(out, uint32_t(map.tokens.cols));
  for (float v : map.tokens.v) put_u32(out, std::bit_cast<uint32_t>(v));
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw DataError("cannot open for write: " + path);
  if (std::fwrite(out.data(), 1, out.size(), f.get()) != out.size())
    throw DataError("short write: " + path);
}

ToyEncoder::ToyEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
  if (cfg.patch_size < 1) throw ConfigError("patch size must be >= 1");
  if (cfg.feature_dim < 2) throw ConfigError("feature dim must be >= 2");
  int in = 3 * cfg.patch_size * cfg.patch_size;
  Rng rng(derive_seed(cfg.seed, 0x746f79 /* "toy" */, 0));
  proj_ = num::Mat<float>(in, cfg.feature_dim);
  double s = 1.0 / std::sqrt(double(in));
  for (auto& v : proj_.v) v = float(rng.normal(0.0, s));
}

num::Mat<float> ToyEncoder::grid_code(int grid_rows, int grid_cols) const {
  const int d = cfg_.feature_dim;
  num::Mat<float> code(grid_rows * grid_cols, d);
  const int half = d / 2;
  for (int r = 0; r < grid_rows; ++r)
    for (int c = 0; c < grid_cols; ++c) {
      float* row = code.row(r * grid_cols + c);
      for (int i = 0; i < d; ++i) {
        bool row_axis = i < half;
        int j = row_axis ? i : i - half;
        int span = row_axis ? half : d - half;
        double pos = row_axis ? double(r) : double(c);
        double freq = std::pow(100.0, -double(2 * (j / 2)) / double(span));
        double arg = pos * freq;
        row[i] = float(j % 2 == 0 ? std::sin(arg) : std::cos(arg));
      }
    }
  return code;
}

PatchFeatureMap ToyEncoder::encode(const num::Mat<float>& image, int height, int width) const {
  const int p = cfg_.patch_size;
  if (height % p != 0 || width % p != 0)
    throw ConfigError("image size not divisible by patch size");
  if (image.rows != 3 || image.cols != height * width)
    throw ArgumentError("toy encoder expects a [3, H*W] image");
  const int gr = height / p, gc = width / p;
  const int in = 3 * p * p;

  num::Mat<float> patches(gr * gc, in);  // flattened channel-major patch per row
  for (int br = 0; br < gr; ++br)
    for (int bc = 0; bc < gc; ++bc) {
      float* dst = patches.row(br * gc + bc);
      int i = 0;
      for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < p; ++y)
          for (int x = 0; x < p; ++x)
            dst[i++] = image.at(ch, (br * p + y) * width + (bc * p + x));
    }

  PatchFeatureMap map;
  map.grid_rows = gr;
  map.grid_cols = gc;
  map.source_tag = "toy-frozen";
  map.tokens = num::Mat<float>(gr * gc, cfg_.feature_dim);
  kern::gemm_nn(patches.rows, cfg_.feature_dim, in, patches.data(), proj_.data(),
                map.tokens.data(), false);
  num::Mat<float> code = grid_code(gr, gc);
  kern::add(map.tokens.data(), code.data(), map.tokens.data(), map.tokens.size());
  return map;
}

namespace {

// Catmull-Rom taps at fractional offset t in [0,1): weights for samples at
// offsets {-1, 0, 1, 2}
void catmull_rom(double t, double w[4]) {
  double t2 = t * t, t3 = t2 * t;
  w[0] = -0.5 * t3 + t2 - 0.5 * t;
  w[1] = 1.5 * t3 - 2.5 * t2 + 1.0;
  w[2] = -1.5 * t3 + 2.0 * t2 + 0.5 * t;
  w[3] = 0.5 * t3 - 0.5 * t2;
}

// one separable pass along the row axis: src [rows, cols] -> [new_rows, cols]
void bicubic_rows(const std::vector<double>& src, int rows, int cols, int new_rows,
                  std::vector<double>& dst) {
  dst.assign(size_t(new_rows) * cols, 0.0);
  for (int y = 0; y < new_rows; ++y) {
    double sy = (y + 0.5) * double(rows) / double(new_rows) - 0.5;
    int y0 = int(std::floor(sy));
    double w[4];
    catmull_rom(sy - y0, w);
    for (int k = 0; k < 4; ++k) {
      int yy = std::clamp(y0 - 1 + k, 0, rows - 1);
      const double* srow = src.data() + size_t(yy) * cols;
      double* drow = dst.data() + size_t(y) * cols;
      for (int x = 0; x < cols; ++x) drow[x] += w[k] * srow[x];
    }
  }
}

}  // namespace

PatchFeatureMap rescale_target_map(const PatchFeatureMap& map, double factor) {
  if (!(factor > 0.0) || factor > 1.0)
    throw ArgumentError("rescale factor must be in (0, 1]");
  if (factor == 1.0) return map;
  int nr = rescaled_extent(map.grid_rows, factor);
  int nc = rescaled_extent(map.grid_cols, factor);
  if (nr < 1 || nc < 1) throw ArgumentError("rescale collapses the grid");

  const int d = map.feature_dim();
  PatchFeatureMap out;
  out.grid_rows = nr;
  out.grid_cols = nc;
  out.source_tag = map.source_tag;
  out.tokens = num::Mat<float>(nr * nc, d);

  // per channel: treat the grid as an image, two separable bicubic passes
  std::vector<double> plane(size_t(map.grid_rows) * map.grid_cols);
  std::vector<double> tmp, res;
  for (int ch = 0; ch < d; ++ch) {
    for (int r = 0; r < map.grid_rows; ++r)
      for (int c = 0; c < map.grid_cols; ++c)
        plane[size_t(r) * map.grid_cols + c] = map.tokens.at(r * map.grid_cols + c, ch);
    bicubic_rows(plane, map.grid_rows, map.grid_cols, nr, tmp);
    // column pass = transpose, row pass, transpose back
    std::vector<double> tposed(size_t(map.grid_cols) * nr);
    for (int r = 0; r < nr; ++r)
      for (int c = 0; c < map.grid_cols; ++c)
        tposed[size_t(c) * nr + r] = tmp[size_t(r) * map.grid_cols + c];
    bicubic_rows(tposed, map.grid_cols, nr, nc, res);
    for (int r = 0; r < nr; ++r)
      for (int c = 0; c < nc; ++c)
        out.tokens.at(r * nc + c, ch) = float(res[size_t(c) * nr + r]);
  }
  return out;
}

}  // namespace slotkit
