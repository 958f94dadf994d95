#pragma once
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "slotkit/errors.hpp"

namespace slotkit::num {

// Dense row-major matrix. The whole numeric stack is templated on the scalar
// type: float for training/inference, double for finite-difference checks.
template <class T>
struct Mat {
  int rows = 0, cols = 0;
  std::vector<T> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(size_t(r) * size_t(c), T(0)) {
    if (r < 0 || c < 0) throw ArgumentError("negative matrix dimension");
  }
  static Mat of(int r, int c, std::initializer_list<T> vals) {
    Mat m(r, c);
    if (vals.size() != m.v.size()) throw ArgumentError("initializer size mismatch");
    size_t i = 0;
    for (T x : vals) m.v[i++] = x;
    return m;
  }

  T& at(int r, int c) { return v[size_t(r) * cols + c]; }
  const T& at(int r, int c) const { return v[size_t(r) * cols + c]; }
  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
  T* row(int r) { return v.data() + size_t(r) * cols; }
  const T* row(int r) const { return v.data() + size_t(r) * cols; }
  size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }
  void fill(T x) {
    for (T& e : v) e = x;
  }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

template <class T, class U>
Mat<T> cast_mat(const Mat<U>& m) {
  Mat<T> out(m.rows, m.cols);
  for (size_t i = 0; i < m.v.size(); ++i) out.v[i] = T(m.v[i]);
  return out;
}

}  // namespace slotkit::num
