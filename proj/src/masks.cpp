#include "slotkit/masks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "slotkit/errors.hpp"

namespace slotkit {

SoftMasks resize_masks(const SoftMasks& masks, int out_rows, int out_cols) {
  if (out_rows < 1 || out_cols < 1) throw ArgumentError("resize_masks: target size must be >= 1");
  if (masks.rows == out_rows && masks.cols == out_cols) return masks;
  SoftMasks out;
  out.n_slots = masks.n_slots;
  out.rows = out_rows;
  out.cols = out_cols;
  out.m = num::Mat<float>(masks.n_slots, out_rows * out_cols);

  const int h = masks.rows, w = masks.cols;
  std::vector<int> x0(static_cast<size_t>(out_cols)), x1(static_cast<size_t>(out_cols));
  std::vector<float> fx(static_cast<size_t>(out_cols));
  for (int x = 0; x < out_cols; ++x) {
    double sx = (x + 0.5) * double(w) / double(out_cols) - 0.5;
    int xf = int(std::floor(sx));
    fx[size_t(x)] = float(sx - xf);
    x0[size_t(x)] = std::clamp(xf, 0, w - 1);
    x1[size_t(x)] = std::clamp(xf + 1, 0, w - 1);
  }
  for (int k = 0; k < masks.n_slots; ++k) {
    const float* src = masks.m.row(k);
    float* dst = out.m.row(k);
    for (int y = 0; y < out_rows; ++y) {
      double sy = (y + 0.5) * double(h) / double(out_rows) - 0.5;
      int yf = int(std::floor(sy));
      float fy = float(sy - yf);
      const float* r0 = src + size_t(std::clamp(yf, 0, h - 1)) * w;
      const float* r1 = src + size_t(std::clamp(yf + 1, 0, h - 1)) * w;
      for (int x = 0; x < out_cols; ++x) {
        float top = r0[x0[size_t(x)]] * (1.0f - fx[size_t(x)]) + r0[x1[size_t(x)]] * fx[size_t(x)];
        float bot = r1[x0[size_t(x)]] * (1.0f - fx[size_t(x)]) + r1[x1[size_t(x)]] * fx[size_t(x)];
        dst[size_t(y) * out_cols + x] = top * (1.0f - fy) + bot * fy;
      }
    }
  }
  return out;
}

num::Mat<int> hard_masks(const SoftMasks& masks) {
  num::Mat<int> labels(masks.rows, masks.cols);
  const int pix = masks.rows * masks.cols;
  for (int p = 0; p < pix; ++p) {
    int best = 0;
    float best_v = masks.m.at(0, p);
    for (int k = 1; k < masks.n_slots; ++k) {
      float v = masks.m.at(k, p);
      if (v > best_v) {
        best_v = v;
        best = k;
      }
    }
    labels.v[size_t(p)] = best;
  }
  return labels;
}

std::vector<std::pair<int, Box>> boxes_from_masks(const num::Mat<int>& labels) {
  std::map<int, Box> acc;
  for (int r = 0; r < labels.rows; ++r)
    for (int c = 0; c < labels.cols; ++c) {
      int id = labels.at(r, c);
      auto it = acc.find(id);
      if (it == acc.end()) {
        acc[id] = Box{c, r, c + 1, r + 1};
      } else {
        Box& b = it->second;
        b.xmin = std::min(b.xmin, c);
        b.ymin = std::min(b.ymin, r);
        b.xmax = std::max(b.xmax, c + 1);
        b.ymax = std::max(b.ymax, r + 1);
      }
    }
  return {acc.begin(), acc.end()};
}

num::Mat<int> block_pattern(int num_masks, int rows, int cols) {
  if (num_masks < 1) throw ArgumentError("block_pattern: mask count must be >= 1");
  if (rows < 1 || cols < 1) throw ArgumentError("block_pattern: image size must be >= 1");
  int n_cols = num_masks < 9 ? 2 : (num_masks <= 15 ? 3 : 4);
  // never more columns than masks (each column needs at least one block)
  n_cols = std::min(n_cols, num_masks);
  int base = num_masks / n_cols;
  int extra = num_masks % n_cols;  // leftmost columns take one extra block
  num::Mat<int> labels(rows, cols);
  int label = 0;
  for (int c = 0; c < n_cols; ++c) {
    int cx0 = int(size_t(c) * cols / size_t(n_cols));
    int cx1 = int(size_t(c + 1) * cols / size_t(n_cols));
    int blocks = base + (c < extra ? 1 : 0);
    for (int b = 0; b < blocks; ++b) {
      int ry0 = int(size_t(b) * rows / size_t(blocks));
      int ry1 = int(size_t(b + 1) * rows / size_t(blocks));
      for (int r = ry0; r < ry1; ++r)
        for (int x = cx0; x < cx1; ++x) labels.at(r, x) = label;
      ++label;
    }
  }
  return labels;
}

RgbImage colorize_labels(const num::Mat<int>& labels) {
  RgbImage img;
  img.rows = labels.rows;
  img.cols = labels.cols;
  img.px.assign(size_t(labels.rows) * labels.cols * 3, 0);
  for (int r = 0; r < labels.rows; ++r)
    for (int c = 0; c < labels.cols; ++c) {
      int id = labels.at(r, c);
      uint8_t* px = img.at(r, c);
      if (id <= 0) {
        px[0] = px[1] = px[2] = 40;
        continue;
      }
      // golden-angle hue walk keeps nearby ids visually distinct
      double h = std::fmod(double(id) * 0.61803398875, 1.0) * 6.0;
      double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
      double rgb[3] = {0, 0, 0};
      switch (int(h)) {
        case 0: rgb[0] = 1; rgb[1] = x; break;
        case 1: rgb[0] = x; rgb[1] = 1; break;
        case 2: rgb[1] = 1; rgb[2] = x; break;
        case 3: rgb[1] = x; rgb[2] = 1; break;
        case 4: rgb[0] = x; rgb[2] = 1; break;
        default: rgb[0] = 1; rgb[2] = x; break;
      }
      for (int ch = 0; ch < 3; ++ch) px[ch] = uint8_t(std::lround(rgb[ch] * 255.0));
    }
  return img;
}

}  // namespace slotkit
