#include "slotkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "slotkit/errors.hpp"
#include "slotkit/rng.hpp"

namespace slotkit {

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["task"] = task;
  j["values"] = values;
  if (!per_image.empty()) j["per_image"] = per_image;
  j["settings"] = settings;
  return j;
}

void MetricsReport::write(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for write: " + path);
  out << to_json().dump(2) << "\n";
}

double adjusted_rand_index(const std::vector<int>& pred, const std::vector<int>& gt) {
  if (pred.size() != gt.size()) throw ArgumentError("ARI: label sequences differ in length");
  const size_t n = pred.size();
  if (n < 2) return 1.0;

  std::map<std::pair<int, int>, int64_t> cell;
  std::map<int, int64_t> row, col;
  for (size_t i = 0; i < n; ++i) {
    ++cell[{pred[i], gt[i]}];
    ++row[pred[i]];
    ++col[gt[i]];
  }
  auto choose2 = [](int64_t c) { return double(c) * double(c - 1) / 2.0; };
  double sum_cells = 0.0, sum_rows = 0.0, sum_cols = 0.0;
  for (auto& [k, c] : cell) sum_cells += choose2(c);
  for (auto& [k, c] : row) sum_rows += choose2(c);
  for (auto& [k, c] : col) sum_cols += choose2(c);
  double pairs = choose2(int64_t(n));
  double expected = sum_rows * sum_cols / pairs;
  double max_index = 0.5 * (sum_rows + sum_cols);
  if (std::abs(max_index - expected) < 1e-12)
    return 1.0;  // degenerate: both single-class or both all-singletons
  return (sum_cells - expected) / (max_index - expected);
}

bool ari_of_maps(const num::Mat<int>& pred, const num::Mat<int>& gt, bool foreground_only,
                 double& out) {
  if (!pred.same_shape(gt)) throw ArgumentError("ARI: label maps differ in shape");
  std::vector<int> p, g;
  p.reserve(pred.size());
  g.reserve(pred.size());
  for (size_t i = 0; i < pred.size(); ++i) {
    if (foreground_only && gt.v[i] == 0) continue;
    p.push_back(pred.v[i]);
    g.push_back(gt.v[i]);
  }
  if (p.empty()) return false;
  out = adjusted_rand_index(p, g);
  return true;
}

double mask_iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
  if (a.size() != b.size()) throw ArgumentError("mask_iou: size mismatch");
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    bool ia = a[i] != 0, ib = b[i] != 0;
    inter += ia && ib;
    uni += ia || ib;
  }
  return uni == 0 ? 0.0 : double(inter) / double(uni);
}

std::vector<double> best_overlaps(const std::vector<std::vector<uint8_t>>& pred_masks,
                                  const std::vector<std::vector<uint8_t>>& gt_masks) {
  std::vector<double> best;
  best.reserve(gt_masks.size());
  for (auto& g : gt_masks) {
    double b = 0.0;
    for (auto& p : pred_masks) b = std::max(b, mask_iou(p, g));
    best.push_back(b);
  }
  return best;
}

double box_iou(const Box& a, const Box& b) {
  if (a.xmax <= a.xmin || a.ymax <= a.ymin || b.xmax <= b.xmin || b.ymax <= b.ymin)
    throw ArgumentError("box_iou: degenerate box");
  double iw = std::max(0, std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin));
  double ih = std::max(0, std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin));
  double inter = iw * ih;
  double area_a = double(a.xmax - a.xmin) * double(a.ymax - a.ymin);
  double area_b = double(b.xmax - b.xmin) * double(b.ymax - b.ymin);
  return inter / (area_a + area_b - inter);
}

LocalizationResult corloc_and_detection_rate(const std::vector<std::vector<Box>>& pred_boxes,
                                             const std::vector<std::vector<Box>>& gt_boxes,
                                             double threshold) {
  if (pred_boxes.size() != gt_boxes.size())
    throw ArgumentError("localization: per-image lists differ in length");
  LocalizationResult res;
  double corloc_sum = 0.0, rate_sum = 0.0;
  for (size_t i = 0; i < gt_boxes.size(); ++i) {
    if (gt_boxes[i].empty()) continue;
    int localized = 0;
    for (auto& g : gt_boxes[i]) {
      bool hit = false;
      for (auto& p : pred_boxes[i])
        if (box_iou(p, g) >= threshold) {
          hit = true;
          break;
        }
      localized += hit;
    }
    corloc_sum += localized > 0 ? 1.0 : 0.0;
    rate_sum += double(localized) / double(gt_boxes[i].size());
    ++res.images_used;
  }
  if (res.images_used > 0) {
    res.corloc = corloc_sum / res.images_used;
    res.detection_rate = rate_sum / res.images_used;
  }
  return res;
}

std::vector<std::pair<int, std::vector<float>>> pool_slot_features(
    const SoftMasks& masks, const num::Mat<float>& features) {
  if (masks.rows * masks.cols != features.rows)
    throw ArgumentError("pool_slot_features: mask grid does not match feature count");
  const int d = features.cols;
  std::vector<std::pair<int, std::vector<float>>> out;
  for (int k = 0; k < masks.n_slots; ++k) {
    double mass = 0.0;
    std::vector<double> acc(size_t(d), 0.0);
    for (int nn = 0; nn < features.rows; ++nn) {
      double w = masks.m.at(k, nn);
      mass += w;
      const float* f = features.row(nn);
      for (int j = 0; j < d; ++j) acc[size_t(j)] += w * f[j];
    }
    if (mass < 1e-8) continue;
    double norm = 0.0;
    for (int j = 0; j < d; ++j) {
      acc[size_t(j)] /= mass;
      norm += acc[size_t(j)] * acc[size_t(j)];
    }
    norm = std::sqrt(norm);
    if (norm < 1e-12) continue;
    std::vector<float> vec(static_cast<size_t>(d));
    for (int j = 0; j < d; ++j) vec[size_t(j)] = float(acc[size_t(j)] / norm);
    out.emplace_back(k, std::move(vec));
  }
  return out;
}

namespace {

double sq_dist(const float* a, const double* b, int d) {
  double s = 0.0;
  for (int j = 0; j < d; ++j) {
    double diff = double(a[j]) - b[j];
    s += diff * diff;
  }
  return s;
}

KmeansResult lloyd_once(const num::Mat<float>& pts, int k, uint64_t seed) {
  const int n = pts.rows, d = pts.cols;
  Rng rng(seed);
  // k distinct starting points
  std::vector<int> order;
  rng.permutation(order, n);
  std::vector<std::vector<double>> centers(static_cast<size_t>(k),
                                           std::vector<double>(static_cast<size_t>(d)));
  for (int c = 0; c < k; ++c)
    for (int j = 0; j < d; ++j) centers[size_t(c)][size_t(j)] = pts.at(order[size_t(c)], j);

  std::vector<int> assign(size_t(n), 0);
  for (int iter = 0; iter < 300; ++iter) {
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double bd = sq_dist(pts.row(i), centers[0].data(), d);
      for (int c = 1; c < k; ++c) {
        double dd = sq_dist(pts.row(i), centers[size_t(c)].data(), d);
        if (dd < bd) {
          bd = dd;
          best = c;
        }
      }
      assign[size_t(i)] = best;
    }
    std::vector<std::vector<double>> next(size_t(k), std::vector<double>(size_t(d), 0.0));
    std::vector<int64_t> count(size_t(k), 0);
    for (int i = 0; i < n; ++i) {
      ++count[size_t(assign[size_t(i)])];
      const float* p = pts.row(i);
      auto& acc = next[size_t(assign[size_t(i)])];
      for (int j = 0; j < d; ++j) acc[size_t(j)] += p[j];
    }
    double moved = 0.0;
    for (int c = 0; c < k; ++c) {
      if (count[size_t(c)] == 0) continue;  // empty cluster keeps its center
      double dist = 0.0;
      for (int j = 0; j < d; ++j) {
        next[size_t(c)][size_t(j)] /= double(count[size_t(c)]);
        double diff = next[size_t(c)][size_t(j)] - centers[size_t(c)][size_t(j)];
        dist += diff * diff;
      }
      centers[size_t(c)] = next[size_t(c)];
      moved = std::max(moved, std::sqrt(dist));
    }
    if (moved < 1e-6) break;
  }
  KmeansResult res;
  res.assignments = assign;
  res.inertia = 0.0;
  for (int i = 0; i < n; ++i)
    res.inertia += sq_dist(pts.row(i), centers[size_t(assign[size_t(i)])].data(), d);
  return res;
}

}  // namespace

KmeansResult kmeans(const num::Mat<float>& points, int k, int restarts, uint64_t seed) {
  if (k < 1) throw ArgumentError("kmeans: k must be >= 1");
  if (points.rows < k) throw ConfigError("kmeans: fewer points than clusters");
  if (restarts < 1) throw ArgumentError("kmeans: restarts must be >= 1");
  KmeansResult best;
  bool have = false;
  for (int r = 0; r < restarts; ++r) {
    KmeansResult cur = lloyd_once(points, k, derive_seed(seed, 0x6b6d65616e73ULL, uint64_t(r)));
    if (!have || cur.inertia < best.inertia) {
      best = std::move(cur);
      have = true;
    }
  }
  return best;
}

std::vector<int> hungarian_match(const num::Mat<double>& score) {
  const int r = score.rows, c = score.cols;
  if (r == 0 || c == 0) return std::vector<int>(size_t(r), -1);
  for (double v : score.v)
    if (!std::isfinite(v)) throw ArgumentError("hungarian_match: non-finite score");

  // minimize cost = max_score - score over an n<=m rectangular matrix
  bool transposed = r > c;
  const int n = transposed ? c : r;
  const int m = transposed ? r : c;
  double mx = *std::max_element(score.v.begin(), score.v.end());
  auto cost = [&](int i, int j) {
    return transposed ? mx - score.at(j, i) : mx - score.at(i, j);
  };

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(size_t(n) + 1, 0.0), v(size_t(m) + 1, 0.0);
  std::vector<int> p(size_t(m) + 1, 0), way(size_t(m) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(size_t(m) + 1, inf);
    std::vector<char> used(size_t(m) + 1, 0);
    do {
      used[size_t(j0)] = 1;
      int i0 = p[size_t(j0)], j1 = 0;
      double delta = inf;
      for (int j = 1; j <= m; ++j) {
        if (used[size_t(j)]) continue;
        double cur = cost(i0 - 1, j - 1) - u[size_t(i0)] - v[size_t(j)];
        if (cur < minv[size_t(j)]) {
          minv[size_t(j)] = cur;
          way[size_t(j)] = j0;
        }
        if (minv[size_t(j)] < delta) {
          delta = minv[size_t(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[size_t(j)]) {
          u[size_t(p[size_t(j)])] += delta;
          v[size_t(j)] -= delta;
        } else {
          minv[size_t(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[size_t(j0)] != 0);
    do {
      int j1 = way[size_t(j0)];
      p[size_t(j0)] = p[size_t(j1)];
      j0 = j1;
    } while (j0);
  }

  std::vector<int> row_to_col(size_t(n), -1);
  for (int j = 1; j <= m; ++j)
    if (p[size_t(j)] != 0) row_to_col[size_t(p[size_t(j)] - 1)] = j - 1;

  if (!transposed) return row_to_col;
  std::vector<int> out(size_t(r), -1);
  for (int i = 0; i < n; ++i)
    if (row_to_col[size_t(i)] >= 0) out[size_t(row_to_col[size_t(i)])] = i;
  return out;
}

SegScore semantic_segmentation_score(const std::vector<SegImage>& images, int n_clusters,
                                     int restarts, uint64_t seed) {
  int total_slots = 0;
  int dim = -1;
  for (auto& im : images) {
    total_slots += int(im.pooled.size());
    for (auto& pv : im.pooled)
      if (dim < 0)
        dim = int(pv.second.size());
      else if (dim != int(pv.second.size()))
        throw ArgumentError("semantic segmentation: pooled dims differ");
  }
  if (n_clusters < 1) throw ArgumentError("semantic segmentation: clusters must be >= 1");
  if (n_clusters > total_slots)
    throw ConfigError("semantic segmentation: more clusters than pooled slots");

  num::Mat<float> all(total_slots, dim);
  int rr = 0;
  for (auto& im : images)
    for (auto& pv : im.pooled) {
      std::copy(pv.second.begin(), pv.second.end(), all.row(rr));
      ++rr;
    }
  KmeansResult km = kmeans(all, n_clusters, restarts, seed);

  // dataset-aggregated (cluster, class) overlap counts
  int n_classes = 1;
  for (auto& im : images)
    for (int v : im.gt_class.v) n_classes = std::max(n_classes, v + 1);

  std::vector<std::vector<int64_t>> inter(size_t(n_clusters),
                                          std::vector<int64_t>(size_t(n_classes), 0));
  std::vector<int64_t> cluster_px(size_t(n_clusters), 0), class_px(size_t(n_classes), 0);

  // per image: slot index -> cluster; unmapped slots count as background later
  int offset = 0;
  std::vector<std::vector<int>> slot_cluster(images.size());
  for (size_t i = 0; i < images.size(); ++i) {
    auto& im = images[i];
    int max_slot = -1;
    for (auto& pv : im.pooled) max_slot = std::max(max_slot, pv.first);
    slot_cluster[i].assign(size_t(max_slot + 1), -1);
    for (auto& pv : im.pooled) slot_cluster[i][size_t(pv.first)] = km.assignments[size_t(offset++)];
  }

  for (size_t i = 0; i < images.size(); ++i) {
    auto& im = images[i];
    if (!im.slot_pixels.same_shape(im.gt_class))
      throw ArgumentError("semantic segmentation: prediction and gt shapes differ");
    for (size_t px = 0; px < im.slot_pixels.size(); ++px) {
      int slot = im.slot_pixels.v[px];
      int cluster = slot >= 0 && slot < int(slot_cluster[i].size())
                        ? slot_cluster[i][size_t(slot)]
                        : -1;
      int cls = im.gt_class.v[px];
      ++class_px[size_t(cls)];
      if (cluster >= 0) {
        ++cluster_px[size_t(cluster)];
        ++inter[size_t(cluster)][size_t(cls)];
      }
    }
  }

  num::Mat<double> iou(n_clusters, n_classes);
  for (int cl = 0; cl < n_clusters; ++cl)
    for (int k = 0; k < n_classes; ++k) {
      int64_t is = inter[size_t(cl)][size_t(k)];
      int64_t un = cluster_px[size_t(cl)] + class_px[size_t(k)] - is;
      iou.at(cl, k) = un > 0 ? double(is) / double(un) : 0.0;
    }
  std::vector<int> assign = hungarian_match(iou);  // cluster -> class, -1 = background

  // final per-class tallies with clusters mapped to classes
  std::vector<int64_t> inter2(size_t(n_classes), 0), pred_px(size_t(n_classes), 0);
  int64_t correct = 0, total = 0;
  for (size_t i = 0; i < images.size(); ++i) {
    auto& im = images[i];
    for (size_t px = 0; px < im.slot_pixels.size(); ++px) {
      int slot = im.slot_pixels.v[px];
      int cluster = slot >= 0 && slot < int(slot_cluster[i].size())
                        ? slot_cluster[i][size_t(slot)]
                        : -1;
      int pred_cls = cluster >= 0 && assign[size_t(cluster)] >= 0 ? assign[size_t(cluster)] : 0;
      int cls = im.gt_class.v[px];
      ++pred_px[size_t(pred_cls)];
      if (pred_cls == cls) {
        ++inter2[size_t(cls)];
        ++correct;
      }
      ++total;
    }
  }

  SegScore sc;
  int counted = 0;
  for (int k = 0; k < n_classes; ++k) {
    int64_t un = class_px[size_t(k)] + pred_px[size_t(k)] - inter2[size_t(k)];
    if (un <= 0) continue;  // class absent from both gt and prediction
    sc.miou += double(inter2[size_t(k)]) / double(un);
    ++counted;
  }
  if (counted > 0) sc.miou /= counted;
  if (total > 0) sc.pacc = double(correct) / double(total);
  return sc;
}

}  // namespace slotkit
