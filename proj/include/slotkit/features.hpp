#pragma once
// Patch-feature providers: precomputed feature files, a deterministic toy
// encoder (fixed random projection + sinusoidal grid code), and a small
// trainable strided-conv encoder. Also the bicubic target-map rescaler.

#include <cmath>
#include <cstdint>
#include <string>

#include "slotkit/errors.hpp"
#include "slotkit/graph.hpp"
#include "slotkit/mat.hpp"
#include "slotkit/params.hpp"
#include "slotkit/rng.hpp"

namespace slotkit {

struct PatchFeatureMap {
  num::Mat<float> tokens;  // [N, d_feat], row-major token order (raster)
  int grid_rows = 0;
  int grid_cols = 0;
  std::string source_tag;

  int n_tokens() const { return grid_rows * grid_cols; }
  int feature_dim() const { return tokens.cols; }
};

struct EncoderConfig {
  std::string provider = "precomputed";  // precomputed | toy-frozen | trainable-conv
  int patch_size = 8;
  int feature_dim = 32;
  uint64_t seed = 0;
};

// Feature file: magic "DNSR", u32 version=1, u32 rows, u32 cols, u32 d_feat,
// then rows*cols*d_feat little-endian f32, token-major.
PatchFeatureMap load_features(const std::string& path);
void save_features(const std::string& path, const PatchFeatureMap& map);

// Frozen random projection of flattened patches plus a fixed 2-D sinusoidal
// grid code. Parameters live outside every ParamStore by construction.
class ToyEncoder {
 public:
  ToyEncoder(const EncoderConfig& cfg);

  // image: [3, H*W] channel-major, values typically in [0,1]
  PatchFeatureMap encode(const num::Mat<float>& image, int height, int width) const;

  const num::Mat<float>& projection() const { return proj_; }
  num::Mat<float> grid_code(int grid_rows, int grid_cols) const;

 private:
  EncoderConfig cfg_;
  num::Mat<float> proj_;  // [3*p*p, d_feat]
};

// grid extent after rescaling by factor; matches rescale_target_map
inline int rescaled_extent(int n, double factor) {
  return factor == 1.0 ? n : int(std::llround(n * factor));
}

// pixel-space bicubic (Catmull-Rom, a = -0.5), half-pixel centers, edge clamp
PatchFeatureMap rescale_target_map(const PatchFeatureMap& map, double factor);

// Trainable strided conv stack: log2(patch_size) stride-2 3x3 conv+ReLU
// layers, then a linear head per cell. One output token per patch cell.
template <class T>
struct ConvEncoder {
  int patch_size = 0;
  int d_feat = 0;
  std::vector<num::Var<T>> conv_w, conv_b;
  std::vector<int> chans;  // per layer output channels
  num::Linear<T> proj;

  ConvEncoder() = default;
  ConvEncoder(num::ParamStore<T>& ps, Rng& rng, int patch, int feature_dim)
      : patch_size(patch), d_feat(feature_dim) {
    int levels = 0;
    for (int p = patch; p > 1; p /= 2) {
      if (p % 2 != 0) throw ConfigError("trainable-conv requires power-of-two patch size");
      ++levels;
    }
    if (levels < 1) throw ConfigError("trainable-conv requires patch size >= 2");
    int in_ch = 3;
    int out_ch = 16;
    for (int l = 0; l < levels; ++l) {
      auto w = num::init_linear<T>(rng, in_ch * 9, out_ch);  // draw with fan-in scaling
      num::Mat<T> wm(out_ch, in_ch * 9);
      for (int o = 0; o < out_ch; ++o)
        for (int i = 0; i < in_ch * 9; ++i) wm.at(o, i) = w.at(i, o);
      conv_w.push_back(ps.add("enc_conv.c" + std::to_string(l) + ".w", std::move(wm)));
      conv_b.push_back(ps.add("enc_conv.c" + std::to_string(l) + ".b", num::Mat<T>(1, out_ch)));
      chans.push_back(out_ch);
      in_ch = out_ch;
      out_ch = std::min(out_ch * 2, 128);
    }
    proj = num::Linear<T>(ps, rng, "enc_conv.proj", in_ch, d_feat);
  }

  // image [3, H*W] -> tokens [(H/p)*(W/p), d_feat]
  num::Var<T> encode(num::Tape<T>& t, const num::Var<T>& image, int height, int width) const {
    if (height % patch_size != 0 || width % patch_size != 0)
      throw ConfigError("image size not divisible by patch size");
    num::Var<T> x = image;
    int h = height, w = width, in_ch = 3;
    for (size_t l = 0; l < conv_w.size(); ++l) {
      num::ConvGeom g;
      g.in_ch = in_ch;
      g.out_ch = chans[l];
      g.kh = g.kw = 3;
      g.stride = 2;
      g.pad = 1;
      g.h_in = h;
      g.w_in = w;
      g = num::conv_out(g);
      x = relu(t, conv2d(t, x, conv_w[l], conv_b[l], g));
      h = g.h_out;
      w = g.w_out;
      in_ch = chans[l];
    }
    // [C, cells] -> [cells, C] -> [cells, d_feat]
    return proj(t, transpose(t, x));
  }
};

}  // namespace slotkit
