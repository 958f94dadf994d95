#pragma once
// Mask utilities: soft-mask resizing, hardening, bounding boxes, and the
// model-free block-pattern baseline labeling.

#include <utility>
#include <vector>

#include "slotkit/mat.hpp"
#include "slotkit/png_io.hpp"

namespace slotkit {

struct SoftMasks {
  int n_slots = 0;
  int rows = 0;
  int cols = 0;
  num::Mat<float> m;  // [n_slots, rows*cols]; per position, slot column sums to 1

  float at(int slot, int r, int c) const { return m.at(slot, r * cols + c); }
};

struct Box {
  int xmin = 0, ymin = 0, xmax = 0, ymax = 0;  // half-open [min, max)
};

// bilinear, half-pixel-centered sample points, edge-clamped
SoftMasks resize_masks(const SoftMasks& masks, int out_rows, int out_cols);

// per position argmax over slots; ties -> lowest slot index
num::Mat<int> hard_masks(const SoftMasks& masks);

// tightest half-open box per label value present in the map
std::vector<std::pair<int, Box>> boxes_from_masks(const num::Mat<int>& labels);

// geometric baseline: partition into columns of stacked blocks;
// 2 columns below 9 masks, 3 for 9..15, 4 above
num::Mat<int> block_pattern(int num_masks, int rows, int cols);

// fixed per-label color table for overlay export (label 0 dark gray)
RgbImage colorize_labels(const num::Mat<int>& labels);

}  // namespace slotkit
