#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <map>
#include <set>
#include <vector>

#include "slotkit/errors.hpp"
#include "slotkit/masks.hpp"
#include "slotkit/rng.hpp"

using namespace slotkit;

namespace {

SoftMasks random_simplex(Rng& rng, int n_slots, int rows, int cols) {
  SoftMasks s;
  s.n_slots = n_slots;
  s.rows = rows;
  s.cols = cols;
  s.m = num::Mat<float>(n_slots, rows * cols);
  for (int p = 0; p < rows * cols; ++p) {
    double total = 0.0;
    std::vector<double> raw(static_cast<size_t>(n_slots));
    for (int k = 0; k < n_slots; ++k) {
      raw[size_t(k)] = rng.uniform(0.05, 1.0);
      total += raw[size_t(k)];
    }
    for (int k = 0; k < n_slots; ++k) s.m.at(k, p) = float(raw[size_t(k)] / total);
  }
  return s;
}

}  // namespace

TEST_CASE("resize keeps identity and constants") {
  Rng rng(1);
  SoftMasks s = random_simplex(rng, 3, 5, 4);
  SoftMasks same = resize_masks(s, 5, 4);
  CHECK(std::memcmp(same.m.data(), s.m.data(), s.m.size() * sizeof(float)) == 0);

  SoftMasks flat;
  flat.n_slots = 2;
  flat.rows = 3;
  flat.cols = 3;
  flat.m = num::Mat<float>(2, 9);
  for (int p = 0; p < 9; ++p) {
    flat.m.at(0, p) = 0.3f;
    flat.m.at(1, p) = 0.7f;
  }
  SoftMasks big = resize_masks(flat, 7, 5);
  REQUIRE(big.rows == 7);
  REQUIRE(big.cols == 5);
  for (int p = 0; p < 35; ++p) {
    CHECK(big.m.at(0, p) == doctest::Approx(0.3).epsilon(1e-6));
    CHECK(big.m.at(1, p) == doctest::Approx(0.7).epsilon(1e-6));
  }
}

TEST_CASE("resize interpolates a two-column step exactly") {
  SoftMasks s;
  s.n_slots = 1;
  s.rows = 2;
  s.cols = 2;
  s.m = num::Mat<float>(1, 4);
  s.m.at(0, 0) = 0.0f;
  s.m.at(0, 1) = 1.0f;
  s.m.at(0, 2) = 0.0f;
  s.m.at(0, 3) = 1.0f;
  SoftMasks out = resize_masks(s, 2, 4);
  const float want[4] = {0.0f, 0.25f, 0.75f, 1.0f};
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 4; ++c) CHECK(out.at(0, r, c) == want[c]);
}

TEST_CASE("resize preserves the slot simplex") {
  Rng rng(2);
  SoftMasks s = random_simplex(rng, 4, 6, 8);
  SoftMasks out = resize_masks(s, 17, 11);
  for (int p = 0; p < 17 * 11; ++p) {
    double total = 0.0;
    for (int k = 0; k < 4; ++k) {
      CHECK(out.m.at(k, p) >= 0.0f);
      total += double(out.m.at(k, p));
    }
    CHECK(std::abs(total - 1.0) <= 1e-5);
  }
}

TEST_CASE("resize validates the requested size") {
  Rng rng(3);
  SoftMasks s = random_simplex(rng, 2, 3, 3);
  CHECK_THROWS_AS(resize_masks(s, 0, 4), ArgumentError);
  CHECK_THROWS_AS(resize_masks(s, 4, -1), ArgumentError);
}

TEST_CASE("hard masks take the argmax with ties to the lowest slot") {
  SoftMasks s;
  s.n_slots = 2;
  s.rows = 1;
  s.cols = 2;
  s.m = num::Mat<float>(2, 2);
  s.m.at(0, 0) = 0.6f;
  s.m.at(1, 0) = 0.4f;
  s.m.at(0, 1) = 0.5f;  // tie
  s.m.at(1, 1) = 0.5f;
  num::Mat<int> h = hard_masks(s);
  CHECK(h.at(0, 0) == 0);
  CHECK(h.at(0, 1) == 0);

  Rng rng(4);
  SoftMasks r = random_simplex(rng, 5, 6, 7);
  num::Mat<int> hr = hard_masks(r);
  REQUIRE(hr.rows == 6);
  REQUIRE(hr.cols == 7);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 7; ++x) {
      int best = 0;
      for (int k = 1; k < 5; ++k)
        if (r.at(k, y, x) > r.at(best, y, x)) best = k;
      CHECK(hr.at(y, x) == best);
    }
}

TEST_CASE("bounding boxes are tight and half-open") {
  num::Mat<int> labels(8, 10);  // all zeros
  labels.at(3, 5) = 1;
  auto boxes = boxes_from_masks(labels);
  REQUIRE(boxes.size() == 2);
  CHECK(boxes[0].first == 0);
  CHECK(boxes[0].second.xmin == 0);
  CHECK(boxes[0].second.ymin == 0);
  CHECK(boxes[0].second.xmax == 10);
  CHECK(boxes[0].second.ymax == 8);
  CHECK(boxes[1].first == 1);
  CHECK(boxes[1].second.xmin == 5);
  CHECK(boxes[1].second.ymin == 3);
  CHECK(boxes[1].second.xmax == 6);
  CHECK(boxes[1].second.ymax == 4);

  num::Mat<int> ell(4, 4);
  for (auto& v : ell.v) v = 7;
  ell.at(0, 0) = 2;
  ell.at(1, 0) = 2;
  ell.at(1, 1) = 2;
  auto eb = boxes_from_masks(ell);
  REQUIRE(eb.size() == 2);
  CHECK(eb[0].first == 2);
  CHECK(eb[0].second.xmin == 0);
  CHECK(eb[0].second.ymin == 0);
  CHECK(eb[0].second.xmax == 2);
  CHECK(eb[0].second.ymax == 2);
  CHECK(eb[1].first == 7);
}

TEST_CASE("block pattern uses the documented column counts") {
  const std::pair<int, int> cases[] = {{4, 2}, {8, 2}, {9, 3}, {11, 3},
                                       {15, 3}, {16, 4}, {24, 4}};
  for (auto [num_masks, want_cols] : cases) {
    num::Mat<int> labels = block_pattern(num_masks, 60, 60);
    std::set<int> first_row;
    for (int c = 0; c < 60; ++c) first_row.insert(labels.at(0, c));
    CHECK(int(first_row.size()) == want_cols);
  }
}

TEST_CASE("block pattern partitions every pixel across all labels") {
  for (int num_masks : {1, 2, 5, 9, 13, 24}) {
    num::Mat<int> labels = block_pattern(num_masks, 33, 47);
    std::map<int, int> counts;
    for (int v : labels.v) {
      REQUIRE(v >= 0);
      REQUIRE(v < num_masks);
      ++counts[v];
    }
    CHECK(int(counts.size()) == num_masks);
    int total = 0;
    for (auto& [label, n] : counts) total += n;
    CHECK(total == 33 * 47);
  }
}

TEST_CASE("four blocks on a square image are quadrants") {
  num::Mat<int> labels = block_pattern(4, 64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      int want = (x / 32) * 2 + (y / 32);
      CHECK(labels.at(y, x) == want);
    }
}

TEST_CASE("block pattern validates its arguments") {
  CHECK_THROWS_AS(block_pattern(0, 8, 8), ArgumentError);
  CHECK_THROWS_AS(block_pattern(-2, 8, 8), ArgumentError);
  CHECK_THROWS_AS(block_pattern(4, 0, 8), ArgumentError);
}

TEST_CASE("label colors are stable and distinct") {
  num::Mat<int> labels(2, 3);
  labels.at(0, 0) = 0;
  labels.at(0, 1) = 1;
  labels.at(0, 2) = 2;
  labels.at(1, 0) = 3;
  labels.at(1, 1) = 1;
  labels.at(1, 2) = 0;
  RgbImage img = colorize_labels(labels);
  REQUIRE(img.cols == 3);
  REQUIRE(img.rows == 2);
  auto px = [&](int y, int x) {
    const uint8_t* p = img.at(y, x);
    return std::array<uint8_t, 3>{p[0], p[1], p[2]};
  };
  CHECK(px(0, 0) == std::array<uint8_t, 3>{40, 40, 40});  // background stays gray
  CHECK(px(0, 1) == px(1, 1));
  CHECK(px(0, 0) == px(1, 2));
  CHECK(px(0, 1) != px(0, 2));
  CHECK(px(0, 2) != px(1, 0));
  CHECK(px(0, 1) != px(1, 0));
}
