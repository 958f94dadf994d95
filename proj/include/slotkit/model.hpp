#pragma once
// Full model: a feature provider feeding slot grouping, and a decoder
// reconstructing either the provider's features or raw pixels. Holds the
// trainable parameter store; frozen providers live outside it.

#include <cmath>
#include <memory>
#include <string>

#include "slotkit/data.hpp"
#include "slotkit/decoding.hpp"
#include "slotkit/errors.hpp"
#include "slotkit/features.hpp"
#include "slotkit/graph.hpp"
#include "slotkit/grouping.hpp"
#include "slotkit/masks.hpp"
#include "slotkit/rng.hpp"

namespace slotkit {

constexpr uint64_t kTagInit = 0x696e6974ULL;   // parameter init stream
constexpr uint64_t kTagSlots = 0x736c6f74ULL;  // per-sample slot noise

// architectural widths not fixed by TrainConfig
struct ModelSpec {
  int d_slots = 64;
  int mlp_hidden = 64;      // MLP decoder hidden width
  int tf_blocks = 4;
  int tf_heads = 8;
  int pixel_base = 8;       // pixel decoder broadcast grid side
  int pixel_channels = 16;  // pixel decoder conv width
};

struct ProviderConfig {
  std::string provider = "precomputed";  // grouping input source
  std::string target = "";               // feature-target source; "" = provider
  int patch_size = 8;
  int feature_dim = 32;
  uint64_t seed = 0;

  std::string resolved_target() const { return target.empty() ? provider : target; }
};

struct ModelConfig {
  int n_slots = 6;     // K
  int iterations = 3;  // T
  std::string decoder = "mlp";  // mlp | transformer | pixel
  double target_scale = 1.0;
  uint64_t seed = 0;
  ModelSpec spec;
  ProviderConfig provider;
};

namespace detail {

inline void check_source_name(const std::string& s, const char* role) {
  if (s != "precomputed" && s != "toy-frozen" && s != "trainable-conv")
    throw ConfigError(std::string(role) +
                      " must be one of precomputed, toy-frozen, trainable-conv (got " + s + ")");
}

}  // namespace detail

// canonical mask source for a decoder; requested may be "auto"
inline std::string resolve_mask_source(const std::string& requested,
                                       const std::string& decoder) {
  std::string s = requested.empty() ? "auto" : requested;
  if (s == "auto") return decoder == "transformer" ? "decoder-attention" : "mlp-alpha";
  if (s == "slot-attention") return s;
  if (s == "mlp-alpha") {
    if (decoder == "transformer")
      throw ConfigError("mask source mlp-alpha needs the mlp or pixel decoder; valid here: "
                        "decoder-attention, slot-attention");
    return s;
  }
  if (s == "decoder-attention") {
    if (decoder != "transformer")
      throw ConfigError("mask source decoder-attention needs the transformer decoder; valid "
                        "here: mlp-alpha, slot-attention");
    return s;
  }
  throw ConfigError("unknown mask source " + s +
                    " (valid: auto, mlp-alpha, decoder-attention, slot-attention)");
}

// RGB bytes -> channel-major planes [3, H*W] in [0,1]
inline num::Mat<float> image_planes(const RgbImage& img) {
  num::Mat<float> out(3, img.rows * img.cols);
  for (int r = 0; r < img.rows; ++r)
    for (int c = 0; c < img.cols; ++c) {
      const uint8_t* px = img.at(r, c);
      for (int ch = 0; ch < 3; ++ch)
        out.at(ch, r * img.cols + c) = float(px[ch]) / 255.0f;
    }
  return out;
}

// RGB bytes -> pixel-major rows [H*W, 3] in [0,1]
template <class T>
num::Mat<T> image_rows(const RgbImage& img) {
  num::Mat<T> out(img.rows * img.cols, 3);
  for (int r = 0; r < img.rows; ++r)
    for (int c = 0; c < img.cols; ++c) {
      const uint8_t* px = img.at(r, c);
      for (int ch = 0; ch < 3; ++ch) out.at(r * img.cols + c, ch) = T(px[ch]) / T(255);
    }
  return out;
}

template <class T>
struct SlotModel {
  ModelConfig cfg;
  int image_h = 0, image_w = 0;
  int in_rows = 0, in_cols = 0;    // grouping-input grid
  int tgt_rows = 0, tgt_cols = 0;  // feature-target grid (after target_scale)

  num::ParamStore<T> params;  // everything the optimizer may touch
  GroupingNet<T> grouping;
  ConvEncoder<T> conv;  // active when provider == trainable-conv
  MlpDecoder<T> dec_mlp;
  TransformerDecoder<T> dec_tf;
  PixelDecoder<T> dec_px;
  std::unique_ptr<ToyEncoder> toy;  // frozen; outside the parameter store

  SlotModel(const ModelConfig& mc, int img_h, int img_w, int grid_rows, int grid_cols)
      : cfg(mc), image_h(img_h), image_w(img_w) {
    const ProviderConfig& pc = cfg.provider;
    detail::check_source_name(pc.provider, "provider");
    detail::check_source_name(pc.resolved_target(), "target provider");
    if (cfg.decoder != "mlp" && cfg.decoder != "transformer" && cfg.decoder != "pixel")
      throw ConfigError("decoder must be one of mlp, transformer, pixel (got " + cfg.decoder +
                        ")");
    if (cfg.n_slots < 1) throw ConfigError("slot count must be >= 1");
    if (cfg.iterations < 1) throw ConfigError("iteration count must be >= 1");
    if (!(cfg.target_scale > 0.0) || cfg.target_scale > 1.0)
      throw ConfigError("target_scale must be in (0, 1]");
    if (cfg.decoder != "pixel" && pc.resolved_target() == "trainable-conv")
      throw ConfigError(
          "the trainable encoder cannot provide its own reconstruction target; configure a "
          "frozen target provider");

    if (pc.provider == "precomputed") {
      in_rows = grid_rows;
      in_cols = grid_cols;
    } else {
      if (image_h % pc.patch_size != 0 || image_w % pc.patch_size != 0)
        throw ConfigError("image size must be divisible by patch size");
      in_rows = image_h / pc.patch_size;
      in_cols = image_w / pc.patch_size;
    }
    if (pc.resolved_target() == "precomputed" && (grid_rows != in_rows || grid_cols != in_cols) &&
        pc.provider != "precomputed")
      throw ConfigError("precomputed target grid does not match the encoder's patch grid");

    tgt_rows = rescaled_extent(in_rows, cfg.target_scale);
    tgt_cols = rescaled_extent(in_cols, cfg.target_scale);
    if (tgt_rows < 1 || tgt_cols < 1) throw ConfigError("target_scale collapses the grid");

    Rng init_rng(derive_seed(cfg.seed, kTagInit, 0));
    if (pc.provider == "trainable-conv")
      conv = ConvEncoder<T>(params, init_rng, pc.patch_size, pc.feature_dim);
    grouping = GroupingNet<T>(params, init_rng, pc.feature_dim, cfg.spec.d_slots);
    if (cfg.decoder == "mlp") {
      dec_mlp = MlpDecoder<T>(params, init_rng, tgt_rows * tgt_cols, cfg.spec.d_slots,
                              cfg.spec.mlp_hidden, pc.feature_dim);
    } else if (cfg.decoder == "transformer") {
      dec_tf = TransformerDecoder<T>(params, init_rng, pc.feature_dim, cfg.spec.d_slots,
                                     cfg.spec.tf_blocks, cfg.spec.tf_heads);
    } else {
      if (image_h != image_w)
        throw ConfigError("pixel decoder requires a square image");
      dec_px = PixelDecoder<T>(params, init_rng, cfg.spec.d_slots, image_h,
                               cfg.spec.pixel_channels, cfg.spec.pixel_base);
    }
    if (pc.provider == "toy-frozen" || pc.resolved_target() == "toy-frozen") {
      EncoderConfig ec;
      ec.provider = "toy-frozen";
      ec.patch_size = pc.patch_size;
      ec.feature_dim = pc.feature_dim;
      ec.seed = pc.seed;
      toy = std::make_unique<ToyEncoder>(ec);
    }
  }

  struct Forward {
    num::Var<T> loss;       // [1,1]
    num::Var<T> slots;      // [K, d_slots]
    num::Var<T> slot_attn;  // [K, N_in]
    num::Var<T> recon;
    num::Var<T> dec_masks;  // [K, N_target] or [K, pixels]
  };

  // eps: reparameterization noise [K, d_slots] (zeros collapse init to mu)
  Forward forward(num::Tape<T>& t, const SceneSample& sample, const num::Mat<T>& eps) const {
    const ProviderConfig& pc = cfg.provider;

    // grouping input
    num::Var<T> input;
    if (pc.provider == "precomputed") {
      if (sample.features.feature_dim() != pc.feature_dim)
        throw ConfigError("sample " + sample.id + ": feature_dim does not match the model");
      input = t.make(num::cast_mat<T>(sample.features.tokens), false);
    } else {
      if (!sample.has_image)
        throw DataError("sample " + sample.id + ": provider needs image.png");
      num::Mat<float> planes = image_planes(sample.image);
      if (pc.provider == "toy-frozen") {
        PatchFeatureMap fm = toy->encode(planes, image_h, image_w);
        input = t.make(num::cast_mat<T>(fm.tokens), false);
      } else {
        auto img_leaf = t.make(num::cast_mat<T>(planes), false);
        input = conv.encode(t, img_leaf, image_h, image_w);
      }
    }

    // slots
    auto slots0 = grouping.slots_init(t, eps);
    auto grouped = grouping.group(t, input, slots0, cfg.iterations);

    // decode + loss
    Forward f;
    f.slots = grouped.slots;
    f.slot_attn = grouped.attn;
    if (cfg.decoder == "pixel") {
      if (!sample.has_image)
        throw DataError("sample " + sample.id + ": pixel decoder needs image.png");
      Decoded<T> d = dec_px.decode(t, grouped.slots);
      num::Mat<T> target = image_rows<T>(sample.image);
      f.recon = d.recon;
      f.dec_masks = d.masks;
      f.loss = mse_loss(t, d.recon, target);
      return f;
    }

    num::Mat<T> target = feature_target(sample);
    if (cfg.decoder == "mlp") {
      Decoded<T> d = dec_mlp.decode(t, grouped.slots);
      f.recon = d.recon;
      f.dec_masks = d.masks;
      f.loss = mse_loss(t, d.recon, target);
    } else {
      auto tgt_leaf = t.make(num::Mat<T>(target), false);
      Decoded<T> d = dec_tf.decode(t, grouped.slots, tgt_leaf);
      f.recon = d.recon;
      f.dec_masks = d.masks;
      f.loss = mse_loss(t, d.recon, target);
    }
    return f;
  }

  // reconstruction target tokens [N_target, feature_dim]
  num::Mat<T> feature_target(const SceneSample& sample) const {
    const ProviderConfig& pc = cfg.provider;
    PatchFeatureMap fm;
    if (pc.resolved_target() == "precomputed") {
      if (sample.features.feature_dim() != pc.feature_dim)
        throw ConfigError("sample " + sample.id + ": feature_dim does not match the model");
      fm = sample.features;
    } else if (pc.resolved_target() == "toy-frozen") {
      if (!sample.has_image)
        throw DataError("sample " + sample.id + ": target provider needs image.png");
      fm = toy->encode(image_planes(sample.image), image_h, image_w);
    } else {
      throw ConfigError("no frozen feature target available; configure precomputed or toy-frozen");
    }
    if (fm.grid_rows != in_rows || fm.grid_cols != in_cols)
      throw ConfigError("sample " + sample.id + ": target grid does not match the model");
    fm = rescale_target_map(fm, cfg.target_scale);
    return num::cast_mat<T>(fm.tokens);
  }

  // per-sample reparameterization noise, stable in (seed, sample counter)
  num::Mat<T> sample_eps(uint64_t root_seed, uint64_t counter) const {
    Rng rng(derive_seed(root_seed, kTagSlots, counter));
    return grouping.sample_eps(rng, cfg.n_slots);
  }

  // grid the given mask source lives on
  void mask_grid(const std::string& source, int& rows, int& cols) const {
    if (source == "slot-attention") {
      rows = in_rows;
      cols = in_cols;
    } else if (cfg.decoder == "pixel") {
      rows = image_h;
      cols = image_w;
    } else {
      rows = tgt_rows;
      cols = tgt_cols;
    }
  }

  // masks from a finished forward as a SoftMasks stack on mask_grid(source)
  SoftMasks masks_from(const Forward& f, const std::string& source) const {
    std::string s = resolve_mask_source(source, cfg.decoder);
    const num::Mat<T>& m = s == "slot-attention" ? f.slot_attn->val : f.dec_masks->val;
    SoftMasks sm;
    sm.n_slots = m.rows;
    mask_grid(s, sm.rows, sm.cols);
    sm.m = num::cast_mat<float>(m);
    return sm;
  }
};

}  // namespace slotkit
