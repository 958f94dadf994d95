#pragma once
// Slot decoders: spatial-broadcast MLP, autoregressive Transformer, and the
// pixel-space broadcast baseline. Feature decoders return the reconstruction
// plus a per-slot soft mask stack over grid positions.

#include <cmath>
#include <string>
#include <vector>

#include "slotkit/errors.hpp"
#include "slotkit/graph.hpp"
#include "slotkit/params.hpp"
#include "slotkit/rng.hpp"

namespace slotkit {

template <class T>
struct Decoded {
  num::Var<T> recon;  // [N, d_feat] or [H*W, 3]
  num::Var<T> masks;  // [K, N] or [K, H*W]; columns sum to 1
};

// Broadcast decoder: per slot, broadcast over positions, add a learned
// positional table, run a shared MLP to d_feat+1; the trailing channel is the
// mixing logit.
template <class T>
struct MlpDecoder {
  int n_positions = 0;
  int d_feat = 0;
  num::Var<T> pos;  // [N, d_slots]
  num::Linear<T> l1, l2, l3, l4;

  MlpDecoder() = default;
  MlpDecoder(num::ParamStore<T>& ps, Rng& rng, int positions, int d_slots, int hidden,
             int feature_dim)
      : n_positions(positions), d_feat(feature_dim) {
    pos = ps.add("dec_mlp.pos", num::init_normal<T>(rng, positions, d_slots, 0.02));
    l1 = num::Linear<T>(ps, rng, "dec_mlp.l1", d_slots, hidden);
    l2 = num::Linear<T>(ps, rng, "dec_mlp.l2", hidden, hidden);
    l3 = num::Linear<T>(ps, rng, "dec_mlp.l3", hidden, hidden);
    l4 = num::Linear<T>(ps, rng, "dec_mlp.l4", hidden, feature_dim + 1);
  }

  Decoded<T> decode(num::Tape<T>& t, const num::Var<T>& slots) const {
    const int n_slots = slots->val.rows;
    if (slots->val.cols != pos->val.cols) throw ArgumentError("slot dim mismatch");
    auto x = add(t, broadcast_slots(t, slots, n_positions), tile_rows(t, pos, n_slots));
    x = relu(t, l1(t, x));
    x = relu(t, l2(t, x));
    x = relu(t, l3(t, x));
    x = l4(t, x);  // [K*N, d_feat+1]
    auto y_stack = slice_cols(t, x, 0, d_feat);
    auto alpha = slice_cols(t, x, d_feat, 1);  // [K*N, 1]
    std::vector<num::Var<T>> alpha_cols;
    for (int k = 0; k < n_slots; ++k)
      alpha_cols.push_back(slice_rows(t, alpha, k * n_positions, n_positions));
    auto m = softmax_srows(t, concat_cols(t, alpha_cols));  // [N, K], softmax over slots
    return {mix_slots(t, m, y_stack), transpose(t, m)};
  }
};

// Teacher-forced autoregressive decoder over raster token order: causal
// self-attention, cross-attention into the slots, pre-norm residual blocks.
// The mask stack is the last block's cross-attention averaged over heads.
template <class T>
struct TransformerDecoder {
  struct Block {
    num::LayerNorm<T> ln1, ln2, ln3;
    num::Linear<T> self_q, self_k, self_v, self_o;
    num::Linear<T> cross_q, cross_k, cross_v, cross_o;
    num::Mlp2<T> mlp;
  };

  int d_feat = 0;
  int heads = 0;
  num::Var<T> bos;  // [1, d_feat]
  num::Linear<T> in_proj;
  num::LayerNorm<T> in_norm;
  num::Linear<T> slot_proj;
  num::LayerNorm<T> slot_norm;
  std::vector<Block> blocks;

  TransformerDecoder() = default;
  TransformerDecoder(num::ParamStore<T>& ps, Rng& rng, int feature_dim, int d_slots,
                     int n_blocks = 4, int n_heads = 8)
      : d_feat(feature_dim), heads(n_heads) {
    if (feature_dim % n_heads != 0)
      throw ConfigError("feature dim must be divisible by the head count");
    bos = ps.add("dec_tf.bos", num::init_normal<T>(rng, 1, feature_dim, 0.02));
    in_proj = num::Linear<T>(ps, rng, "dec_tf.in_proj", feature_dim, feature_dim);
    in_norm = num::LayerNorm<T>(ps, "dec_tf.in_norm", feature_dim);
    slot_proj = num::Linear<T>(ps, rng, "dec_tf.slot_proj", d_slots, feature_dim);
    slot_norm = num::LayerNorm<T>(ps, "dec_tf.slot_norm", feature_dim);
    blocks.resize(size_t(n_blocks));
    for (int b = 0; b < n_blocks; ++b) {
      std::string p = "dec_tf.blk" + std::to_string(b);
      Block& blk = blocks[size_t(b)];
      blk.ln1 = num::LayerNorm<T>(ps, p + ".ln1", feature_dim);
      blk.self_q = num::Linear<T>(ps, rng, p + ".self.wq", feature_dim, feature_dim);
      blk.self_k = num::Linear<T>(ps, rng, p + ".self.wk", feature_dim, feature_dim);
      blk.self_v = num::Linear<T>(ps, rng, p + ".self.wv", feature_dim, feature_dim);
      blk.self_o = num::Linear<T>(ps, rng, p + ".self.wo", feature_dim, feature_dim);
      blk.ln2 = num::LayerNorm<T>(ps, p + ".ln2", feature_dim);
      blk.cross_q = num::Linear<T>(ps, rng, p + ".cross.wq", feature_dim, feature_dim);
      blk.cross_k = num::Linear<T>(ps, rng, p + ".cross.wk", feature_dim, feature_dim);
      blk.cross_v = num::Linear<T>(ps, rng, p + ".cross.wv", feature_dim, feature_dim);
      blk.cross_o = num::Linear<T>(ps, rng, p + ".cross.wo", feature_dim, feature_dim);
      blk.ln3 = num::LayerNorm<T>(ps, p + ".ln3", feature_dim);
      blk.mlp = num::Mlp2<T>(ps, rng, p + ".mlp", feature_dim, 4 * feature_dim, feature_dim);
    }
  }

  // targets: [N, d_feat] constants; decoder input is targets shifted right
  // with the learned start token at position 0
  Decoded<T> decode(num::Tape<T>& t, const num::Var<T>& slots,
                    const num::Var<T>& targets) const {
    const int n = targets->val.rows;
    if (targets->val.cols != d_feat) throw ArgumentError("target dim mismatch");
    const int dh = d_feat / heads;
    const T sc = T(1) / std::sqrt(T(dh));

    num::Var<T> x;
    if (n > 1)
      x = concat_rows<T>(t, {bos, slice_rows(t, targets, 0, n - 1)});
    else
      x = bos;
    x = in_norm(t, in_proj(t, x));
    auto smem = slot_norm(t, slot_proj(t, slots));  // [K, d_feat]

    num::Var<T> mask_sum;
    for (size_t b = 0; b < blocks.size(); ++b) {
      const Block& blk = blocks[b];
      // causal multi-head self-attention
      auto h = blk.ln1(t, x);
      auto qs = blk.self_q(t, h);
      auto ks = blk.self_k(t, h);
      auto vs = blk.self_v(t, h);
      std::vector<num::Var<T>> head_out;
      for (int hd = 0; hd < heads; ++hd) {
        auto qi = slice_cols(t, qs, hd * dh, dh);
        auto ki = slice_cols(t, ks, hd * dh, dh);
        auto vi = slice_cols(t, vs, hd * dh, dh);
        head_out.push_back(causal_self_attention(t, qi, ki, vi, sc));
      }
      x = add(t, x, blk.self_o(t, concat_cols(t, head_out)));

      // cross-attention over the slots
      auto h2 = blk.ln2(t, x);
      auto qc = blk.cross_q(t, h2);
      auto kc = blk.cross_k(t, smem);
      auto vc = blk.cross_v(t, smem);
      std::vector<num::Var<T>> cross_out;
      num::Var<T> attn_acc;
      for (int hd = 0; hd < heads; ++hd) {
        auto qi = slice_cols(t, qc, hd * dh, dh);
        auto ki = slice_cols(t, kc, hd * dh, dh);
        auto vi = slice_cols(t, vc, hd * dh, dh);
        auto attn = softmax_srows(t, scale(t, matmul_nt(t, qi, ki), sc));  // [N, K]
        cross_out.push_back(matmul(t, attn, vi));
        if (b + 1 == blocks.size())
          attn_acc = attn_acc ? add(t, attn_acc, attn) : attn;
      }
      x = add(t, x, blk.cross_o(t, concat_cols(t, cross_out)));
      if (b + 1 == blocks.size())
        mask_sum = scale(t, attn_acc, T(1) / T(heads));

      // residual MLP
      x = add(t, x, blk.mlp(t, blk.ln3(t, x)));
    }
    return {x, transpose(t, mask_sum)};
  }
};

// Pixel-space broadcast baseline: per slot, broadcast to a base grid, add a
// positional table, upsample with stride-2 transposed convs, emit RGB+alpha.
template <class T>
struct PixelDecoder {
  int base = 0;       // starting grid side
  int out_size = 0;   // output image side
  int d_slots = 0;
  num::Var<T> pos;    // [base*base, d_slots]
  std::vector<num::Var<T>> up_w, up_b;
  std::vector<int> chans;
  num::Linear<T> head;  // 1x1 conv as a linear over channels -> RGB + alpha

  PixelDecoder() = default;
  PixelDecoder(num::ParamStore<T>& ps, Rng& rng, int slot_dim, int output_size, int channels,
               int base_grid = 8)
      : base(base_grid), out_size(output_size), d_slots(slot_dim) {
    pos = ps.add("dec_px.pos", num::init_normal<T>(rng, base_grid * base_grid, slot_dim, 0.02));
    int side = base_grid;
    int in_ch = slot_dim;
    int l = 0;
    while (side < output_size) {
      auto w = ps.add("dec_px.ct" + std::to_string(l) + ".w",
                      num::init_linear<T>(rng, in_ch, channels * 25));
      auto b = ps.add("dec_px.ct" + std::to_string(l) + ".b", num::Mat<T>(1, channels));
      up_w.push_back(w);
      up_b.push_back(b);
      chans.push_back(channels);
      in_ch = channels;
      side *= 2;
      ++l;
    }
    if (side != output_size)
      throw ConfigError("pixel decoder cannot reach the requested output size from base " +
                        std::to_string(base_grid));
    head = num::Linear<T>(ps, rng, "dec_px.head", in_ch, 4);
  }

  Decoded<T> decode(num::Tape<T>& t, const num::Var<T>& slots) const {
    const int n_slots = slots->val.rows;
    if (slots->val.cols != d_slots) throw ArgumentError("slot dim mismatch");
    std::vector<num::Var<T>> rgb_parts, alpha_cols;
    for (int k = 0; k < n_slots; ++k) {
      auto sk = slice_rows(t, slots, k, 1);
      auto grid = add(t, broadcast_slots(t, sk, base * base), pos);  // [base*base, D]
      num::Var<T> x = transpose(t, grid);                            // [D, base*base]
      int side = base, in_ch = d_slots;
      for (size_t l = 0; l < up_w.size(); ++l) {
        num::ConvGeom g;
        g.in_ch = in_ch;
        g.out_ch = chans[l];
        g.kh = g.kw = 5;
        g.stride = 2;
        g.pad = 2;
        g.h_in = g.w_in = side;
        g = num::convt_out(g, 1);
        x = conv_transpose2d(t, x, up_w[l], up_b[l], g);
        if (l + 1 < up_w.size()) x = relu(t, x);
        side = g.h_out;
        in_ch = chans[l];
      }
      auto per_pix = head(t, transpose(t, x));  // [pix, 4]
      rgb_parts.push_back(slice_cols(t, per_pix, 0, 3));
      alpha_cols.push_back(slice_cols(t, per_pix, 3, 1));
    }
    auto m = softmax_srows(t, concat_cols(t, alpha_cols));  // [H*W, K]
    auto rgb_stack = concat_rows(t, rgb_parts);             // [K*H*W, 3]
    return {mix_slots(t, m, rgb_stack), transpose(t, m)};
  }
};

}  // namespace slotkit
