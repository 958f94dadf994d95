#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include "json.hpp"
#include "slotkit/errors.hpp"
#include "slotkit/metrics.hpp"
#include "slotkit/rng.hpp"

using namespace slotkit;
namespace fs = std::filesystem;

namespace {

// pair-counting form of the adjusted Rand index, independent of the
// contingency-table implementation under test
double ref_ari(const std::vector<int>& p, const std::vector<int>& g) {
  const size_t n = p.size();
  if (n < 2) return 1.0;
  double a = 0, b = 0, c = 0;
  double pairs = 0;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      bool sp = p[i] == p[j], sg = g[i] == g[j];
      a += sp && sg;
      b += sp && !sg;
      c += !sp && sg;
      pairs += 1;
    }
  double expected = (a + b) * (a + c) / pairs;
  double maxi = ((a + b) + (a + c)) / 2.0;
  if (maxi - expected == 0.0) return 1.0;
  return (a - expected) / (maxi - expected);
}

double best_injection_score(const num::Mat<double>& s) {
  if (s.rows > s.cols) {
    num::Mat<double> tr(s.cols, s.rows);
    for (int i = 0; i < s.rows; ++i)
      for (int j = 0; j < s.cols; ++j) tr.at(j, i) = s.at(i, j);
    return best_injection_score(tr);
  }
  std::vector<int> cols(static_cast<size_t>(s.cols));
  std::iota(cols.begin(), cols.end(), 0);
  double best = -1e300;
  do {
    double tot = 0.0;
    for (int i = 0; i < s.rows; ++i) tot += s.at(i, cols[size_t(i)]);
    best = std::max(best, tot);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

SoftMasks masks_of(int n_slots, int rows, int cols, const std::vector<float>& vals) {
  SoftMasks s;
  s.n_slots = n_slots;
  s.rows = rows;
  s.cols = cols;
  s.m = num::Mat<float>(n_slots, rows * cols);
  REQUIRE(vals.size() == s.m.size());
  std::copy(vals.begin(), vals.end(), s.m.v.begin());
  return s;
}

num::Mat<int> label_map(int rows, int cols, const std::vector<int>& vals) {
  num::Mat<int> m(rows, cols);
  REQUIRE(vals.size() == m.size());
  std::copy(vals.begin(), vals.end(), m.v.begin());
  return m;
}

}  // namespace

TEST_CASE("adjusted rand index on the canonical pairs") {
  CHECK(adjusted_rand_index({1, 1, 2, 2}, {5, 5, 7, 7}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(adjusted_rand_index({1, 1, 2, 2}, {1, 2, 1, 2}) == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(adjusted_rand_index({3, 3, 3}, {1, 2, 3}) == ref_ari({3, 3, 3}, {1, 2, 3}));
  // identical labelings and relabelings are perfect
  std::vector<int> x = {0, 2, 2, 1, 0, 1, 2};
  CHECK(adjusted_rand_index(x, x) == doctest::Approx(1.0).epsilon(1e-12));
  std::vector<int> relabeled = {9, 4, 4, 7, 9, 7, 4};
  CHECK(adjusted_rand_index(x, relabeled) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("adjusted rand index matches pair counting on random labelings") {
  Rng rng(101);
  for (int trial = 0; trial < 200; ++trial) {
    int n = int(rng.uniform_int(2, 12));
    int kp = int(rng.uniform_int(1, 4));
    int kg = int(rng.uniform_int(1, 4));
    std::vector<int> p(static_cast<size_t>(n)), g(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      p[size_t(i)] = int(rng.uniform_int(0, kp - 1));
      g[size_t(i)] = int(rng.uniform_int(0, kg - 1));
    }
    double got = adjusted_rand_index(p, g);
    double want = ref_ari(p, g);
    CHECK(std::abs(got - want) <= 1e-9);
  }
}

TEST_CASE("foreground-only ari excludes background pixels") {
  num::Mat<int> gt = label_map(1, 4, {0, 0, 1, 1});
  num::Mat<int> pred = label_map(1, 4, {3, 4, 5, 5});
  double out = -1.0;
  REQUIRE(ari_of_maps(pred, gt, true, out));
  CHECK(out == doctest::Approx(1.0).epsilon(1e-12));  // surviving pixels agree

  num::Mat<int> pred_split = label_map(1, 4, {3, 3, 5, 6});
  REQUIRE(ari_of_maps(pred_split, gt, true, out));
  CHECK(out == doctest::Approx(ref_ari({5, 6}, {1, 1})).epsilon(1e-9));

  num::Mat<int> all_bg = label_map(1, 4, {0, 0, 0, 0});
  CHECK_FALSE(ari_of_maps(pred, all_bg, true, out));
  REQUIRE(ari_of_maps(pred, all_bg, false, out));
}

TEST_CASE("mask iou and best overlaps") {
  std::vector<uint8_t> a = {1, 1, 0, 0};
  std::vector<uint8_t> b = {1, 1, 0, 0};
  std::vector<uint8_t> c = {0, 0, 1, 1};
  std::vector<uint8_t> none(4, 0);
  CHECK(mask_iou(a, b) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mask_iou(a, c) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(mask_iou(none, none) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(mask_iou({1, 1, 1, 0}, {0, 1, 1, 1}) == doctest::Approx(0.5).epsilon(1e-12));

  std::vector<uint8_t> full = {1, 1, 1, 1};
  auto bo = best_overlaps({a, c}, {full});
  REQUIRE(bo.size() == 1);
  CHECK(bo[0] == doctest::Approx(0.5).epsilon(1e-12));

  auto perfect = best_overlaps({full, a}, {full});
  CHECK(perfect[0] == doctest::Approx(1.0).epsilon(1e-12));

  auto empty_preds = best_overlaps({}, {full, a});
  REQUIRE(empty_preds.size() == 2);
  CHECK(empty_preds[0] == 0.0);
  CHECK(empty_preds[1] == 0.0);

  // adding predictions never lowers any best overlap
  Rng rng(55);
  for (int trial = 0; trial < 20; ++trial) {
    auto random_mask = [&]() {
      std::vector<uint8_t> m(static_cast<size_t>(12));
      for (auto& v : m) v = uint8_t(rng.uniform_int(0, 1));
      return m;
    };
    std::vector<std::vector<uint8_t>> preds = {random_mask(), random_mask()};
    std::vector<std::vector<uint8_t>> gts = {random_mask(), random_mask(), random_mask()};
    auto before = best_overlaps(preds, gts);
    preds.push_back(random_mask());
    auto after = best_overlaps(preds, gts);
    for (size_t i = 0; i < gts.size(); ++i) CHECK(after[i] >= before[i]);
  }
}

TEST_CASE("box iou arithmetic") {
  Box a{0, 0, 2, 2};
  CHECK(box_iou(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(box_iou(a, Box{2, 2, 4, 4}) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(box_iou(a, Box{1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));

  Rng rng(66);
  for (int trial = 0; trial < 100; ++trial) {
    auto rand_box = [&]() {
      int x0 = int(rng.uniform_int(0, 19)), y0 = int(rng.uniform_int(0, 19));
      return Box{x0, y0, x0 + int(rng.uniform_int(1, 10)), y0 + int(rng.uniform_int(1, 10))};
    };
    Box p = rand_box(), q = rand_box();
    long iw = std::max(0, std::min(p.xmax, q.xmax) - std::max(p.xmin, q.xmin));
    long ih = std::max(0, std::min(p.ymax, q.ymax) - std::max(p.ymin, q.ymin));
    long inter = iw * ih;
    long area_p = long(p.xmax - p.xmin) * (p.ymax - p.ymin);
    long area_q = long(q.xmax - q.xmin) * (q.ymax - q.ymin);
    long uni = area_p + area_q - inter;
    double want = uni > 0 ? double(inter) / double(uni) : 0.0;
    CHECK(std::abs(box_iou(p, q) - want) <= 1e-12);
  }
}

TEST_CASE("corloc and detection rate") {
  Box g1{0, 0, 10, 10}, g2{20, 20, 30, 30}, g3{40, 0, 50, 10};
  // perfect predictions
  auto perfect = corloc_and_detection_rate({{g1, g2}}, {{g1, g2}});
  CHECK(perfect.corloc == doctest::Approx(1.0));
  CHECK(perfect.detection_rate == doctest::Approx(1.0));
  CHECK(perfect.images_used == 1);

  // image A: one of two gt boxes found; image B: the only gt missed
  auto partial = corloc_and_detection_rate({{g1}, {g1}}, {{g1, g2}, {g3}});
  CHECK(partial.corloc == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(partial.detection_rate == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(partial.images_used == 2);

  // images without gt boxes are excluded
  auto with_empty = corloc_and_detection_rate({{g1}, {g1}, {g2}}, {{g1, g2}, {g3}, {}});
  CHECK(with_empty.images_used == 2);
  CHECK(with_empty.corloc == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(with_empty.detection_rate == doctest::Approx(0.25).epsilon(1e-12));

  CHECK_THROWS_AS(corloc_and_detection_rate({{g1}}, {{g1}, {g2}}), ArgumentError);
}

TEST_CASE("slot feature pooling") {
  num::Mat<float> feats(2, 2);
  feats.at(0, 0) = 1.0f;
  feats.at(0, 1) = 0.0f;
  feats.at(1, 0) = 0.0f;
  feats.at(1, 1) = 1.0f;

  // one-hot slot picks its token, normalized
  SoftMasks onehot = masks_of(2, 1, 2, {1, 0, 0, 1});
  auto pooled = pool_slot_features(onehot, feats);
  REQUIRE(pooled.size() == 2);
  CHECK(pooled[0].first == 0);
  CHECK(pooled[0].second[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(pooled[0].second[1] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(pooled[1].second[1] == doctest::Approx(1.0).epsilon(1e-6));

  // weighted mean (0.25, 0.75) of the unit features, then L2 normalization
  SoftMasks weighted = masks_of(1, 1, 2, {0.25f, 0.75f});
  auto wp = pool_slot_features(weighted, feats);
  REQUIRE(wp.size() == 1);
  double norm = std::sqrt(10.0);
  CHECK(wp[0].second[0] == doctest::Approx(1.0 / norm).epsilon(1e-6));
  CHECK(wp[0].second[1] == doctest::Approx(3.0 / norm).epsilon(1e-6));

  // a slot with no mass is dropped
  SoftMasks dead = masks_of(2, 1, 2, {1, 1, 0, 0});
  auto dp = pool_slot_features(dead, feats);
  REQUIRE(dp.size() == 1);
  CHECK(dp[0].first == 0);

  num::Mat<float> wrong(3, 2);
  CHECK_THROWS_AS(pool_slot_features(onehot, wrong), ArgumentError);
}

TEST_CASE("kmeans clusters simple point sets") {
  num::Mat<float> pts(4, 1);
  pts.at(0, 0) = 0.0f;
  pts.at(1, 0) = 1.0f;
  pts.at(2, 0) = 10.0f;
  pts.at(3, 0) = 11.0f;
  KmeansResult two = kmeans(pts, 2, 8, 3);
  CHECK(two.inertia == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(two.assignments[0] == two.assignments[1]);
  CHECK(two.assignments[2] == two.assignments[3]);
  CHECK(two.assignments[0] != two.assignments[2]);

  KmeansResult one = kmeans(pts, 1, 4, 3);
  CHECK(one.inertia == doctest::Approx(101.0).epsilon(1e-9));
  for (int v : one.assignments) CHECK(v == 0);

  num::Mat<float> repeats(4, 2);
  repeats.at(0, 0) = 1.0f;
  repeats.at(0, 1) = 1.0f;
  repeats.at(1, 0) = 1.0f;
  repeats.at(1, 1) = 1.0f;
  repeats.at(2, 0) = 5.0f;
  repeats.at(2, 1) = 5.0f;
  repeats.at(3, 0) = 5.0f;
  repeats.at(3, 1) = 5.0f;
  CHECK(kmeans(repeats, 2, 8, 1).inertia == doctest::Approx(0.0).epsilon(1e-12));

  // determinism under a fixed seed
  Rng rng(77);
  num::Mat<float> cloud(30, 3);
  for (auto& x : cloud.v) x = float(rng.uniform(-1.0, 1.0));
  KmeansResult r1 = kmeans(cloud, 4, 10, 9);
  KmeansResult r2 = kmeans(cloud, 4, 10, 9);
  CHECK(r1.inertia == r2.inertia);
  CHECK(r1.assignments == r2.assignments);

  CHECK_THROWS_AS(kmeans(pts, 0, 4, 0), ArgumentError);
  CHECK_THROWS_AS(kmeans(pts, 5, 4, 0), ConfigError);
  CHECK_THROWS_AS(kmeans(pts, 2, 0, 0), ArgumentError);
}

TEST_CASE("hungarian assignment on canonical matrices") {
  num::Mat<double> diag(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) diag.at(i, j) = i == j ? 1.0 : 0.0;
  CHECK(hungarian_match(diag) == std::vector<int>{0, 1, 2});

  num::Mat<double> cross(2, 2);
  cross.at(0, 0) = 0.5;
  cross.at(0, 1) = 0.9;
  cross.at(1, 0) = 0.8;
  cross.at(1, 1) = 0.2;
  CHECK(hungarian_match(cross) == std::vector<int>{1, 0});

  num::Mat<double> one(1, 1);
  one.at(0, 0) = 0.3;
  CHECK(hungarian_match(one) == std::vector<int>{0});

  num::Mat<double> wide(3, 2);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) wide.at(i, j) = 0.1 * (i + 1) + 0.01 * j;
  std::vector<int> partial = hungarian_match(wide);
  int unmatched = 0, matched = 0;
  for (int v : partial) (v < 0 ? unmatched : matched) += 1;
  CHECK(matched == 2);
  CHECK(unmatched == 1);
}

TEST_CASE("hungarian assignment equals exhaustive search on random matrices") {
  Rng rng(202);
  for (int trial = 0; trial < 100; ++trial) {
    int r = int(rng.uniform_int(1, 6));
    int c = int(rng.uniform_int(1, 6));
    num::Mat<double> s(r, c);
    for (auto& x : s.v) x = rng.uniform(0.0, 1.0);
    std::vector<int> match = hungarian_match(s);
    REQUIRE(int(match.size()) == r);
    std::vector<char> used(static_cast<size_t>(c), 0);
    double total = 0.0;
    int assigned = 0;
    for (int i = 0; i < r; ++i) {
      if (match[size_t(i)] < 0) continue;
      REQUIRE(match[size_t(i)] < c);
      REQUIRE(!used[size_t(match[size_t(i)])]);
      used[size_t(match[size_t(i)])] = 1;
      total += s.at(i, match[size_t(i)]);
      ++assigned;
    }
    CHECK(assigned == std::min(r, c));
    CHECK(std::abs(total - best_injection_score(s)) <= 1e-9);
  }
}

TEST_CASE("semantic segmentation scores a perfectly aligned fixture") {
  // two images, two slots each; slot pixels coincide with the class map and
  // pooled vectors are consistent per class
  auto image = [&](int flip) {
    SegImage im;
    im.gt_class = num::Mat<int>(2, 2);
    im.gt_class.at(0, 0) = 0;
    im.gt_class.at(0, 1) = 0;
    im.gt_class.at(1, 0) = 1;
    im.gt_class.at(1, 1) = 1;
    im.slot_pixels = num::Mat<int>(2, 2);
    int bg_slot = flip ? 1 : 0, fg_slot = flip ? 0 : 1;
    im.slot_pixels.at(0, 0) = bg_slot;
    im.slot_pixels.at(0, 1) = bg_slot;
    im.slot_pixels.at(1, 0) = fg_slot;
    im.slot_pixels.at(1, 1) = fg_slot;
    im.pooled.emplace_back(bg_slot, std::vector<float>{1.0f, 0.0f});
    im.pooled.emplace_back(fg_slot, std::vector<float>{0.0f, 1.0f});
    if (flip) std::swap(im.pooled[0], im.pooled[1]);
    return im;
  };
  SegScore sc = semantic_segmentation_score({image(0), image(1)}, 2, 5, 0);
  CHECK(sc.miou == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sc.pacc == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("semantic segmentation scores a single-cluster collapse") {
  SegImage im;
  im.gt_class = num::Mat<int>(2, 2);
  im.gt_class.at(0, 0) = 0;
  im.gt_class.at(0, 1) = 0;
  im.gt_class.at(1, 0) = 1;
  im.gt_class.at(1, 1) = 1;
  im.slot_pixels = num::Mat<int>(2, 2);  // one slot everywhere
  im.pooled.emplace_back(0, std::vector<float>{1.0f, 0.0f});
  SegScore sc = semantic_segmentation_score({im}, 1, 3, 0);
  CHECK(sc.miou == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(sc.pacc == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("semantic segmentation is invariant to slot order") {
  Rng rng(303);
  auto sample = [&](bool swap_slots) {
    SegImage im;
    im.gt_class = num::Mat<int>(3, 3);
    im.slot_pixels = num::Mat<int>(3, 3);
    for (size_t i = 0; i < im.gt_class.size(); ++i) {
      im.gt_class.v[i] = int(i) % 3 == 0 ? 0 : (int(i) % 3 == 1 ? 1 : 2);
      int slot = int(i / 3) % 3;
      im.slot_pixels.v[i] = swap_slots ? 2 - slot : slot;
    }
    for (int k = 0; k < 3; ++k) {
      int slot = swap_slots ? 2 - k : k;
      im.pooled.emplace_back(slot, std::vector<float>{float(k * k), 1.0f - float(k), 0.5f});
    }
    return im;
  };
  SegScore a = semantic_segmentation_score({sample(false)}, 2, 5, 4);
  SegScore b = semantic_segmentation_score({sample(true)}, 2, 5, 4);
  CHECK(a.miou == doctest::Approx(b.miou).epsilon(1e-12));
  CHECK(a.pacc == doctest::Approx(b.pacc).epsilon(1e-12));
}

TEST_CASE("semantic segmentation validates cluster count") {
  SegImage im;
  im.gt_class = num::Mat<int>(1, 2);
  im.slot_pixels = num::Mat<int>(1, 2);
  im.pooled.emplace_back(0, std::vector<float>{1.0f, 0.0f});
  CHECK_THROWS_AS(semantic_segmentation_score({im}, 2, 3, 0), ConfigError);
  CHECK_THROWS_AS(semantic_segmentation_score({im}, 0, 3, 0), ArgumentError);
}

TEST_CASE("metrics report serializes its fields") {
  MetricsReport rep;
  rep.task = "discovery";
  rep.values["fg_ari"] = 0.75;
  rep.values["mbo_i"] = 0.5;
  rep.per_image["fg_ari"] = {0.5, 1.0};
  rep.settings["split"] = "eval";
  rep.settings["seed"] = 7;
  nlohmann::json j = rep.to_json();
  CHECK(j.at("task") == "discovery");
  CHECK(j.at("values").at("fg_ari") == doctest::Approx(0.75));
  CHECK(j.at("per_image").at("fg_ari").size() == 2);
  CHECK(j.at("settings").at("split") == "eval");

  fs::path dir = fs::temp_directory_path() / "slotkit_test_metrics";
  fs::create_directories(dir);
  fs::path p = dir / "report.json";
  rep.write(p.string());
  std::ifstream in(p);
  REQUIRE(in.good());
  nlohmann::json back;
  in >> back;
  CHECK(back.at("values").at("mbo_i") == doctest::Approx(0.5));
  CHECK(back.at("settings").at("seed") == 7);
}
