#pragma once
// Define-by-run reverse-mode autodiff over Mat<T>. A Tape records ops in
// creation order; backward() walks them in reverse. Parameters are leaves
// (nodes without a backward closure) owned outside the tape, so one set of
// parameters can be reused across many step tapes.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "slotkit/errors.hpp"
#include "slotkit/mat.hpp"
#include "slotkit/simd.hpp"

namespace slotkit::num {

template <class T>
struct Node {
  Mat<T> val;
  Mat<T> grad;  // allocated lazily on first gradient write
  bool needs_grad = false;
  std::function<void()> back;

  void ensure_grad() {
    if (grad.empty()) grad = Mat<T>(val.rows, val.cols);
  }
  bool has_grad() const { return !grad.empty(); }
  void zero_grad() { grad = Mat<T>(); }
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
Var<T> make_leaf(Mat<T> m, bool needs_grad) {
  auto n = std::make_shared<Node<T>>();
  n->val = std::move(m);
  n->needs_grad = needs_grad;
  return n;
}

template <class T>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> make(Mat<T> val, bool needs) {
    auto n = std::make_shared<Node<T>>();
    n->val = std::move(val);
    n->needs_grad = needs && grad_enabled_;
    return n;
  }
  void record(const Var<T>& n, std::function<void()> back) {
    if (!n->needs_grad) return;
    n->back = std::move(back);
    order_.push_back(n);
  }

  void backward(const Var<T>& loss) {
    if (loss->val.rows != 1 || loss->val.cols != 1)
      throw ArgumentError("backward expects a 1x1 loss");
    loss->ensure_grad();
    loss->grad.at(0, 0) = T(1);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      Node<T>* n = it->get();
      if (n->back && n->has_grad()) n->back();
    }
  }

  size_t recorded() const { return order_.size(); }

 private:
  bool grad_enabled_;
  std::vector<Var<T>> order_;
};

namespace detail {
template <class T>
inline void madd(T* dst, const T* x, const T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) dst[i] += x[i] * y[i];
}
}  // namespace detail

// ---------- linear algebra ----------

template <class T>
Var<T> matmul(Tape<T>& t, const Var<T>& a, const Var<T>& b) {
  if (a->val.cols != b->val.rows) throw ArgumentError("matmul shape mismatch");
  const int m = a->val.rows, k = a->val.cols, n = b->val.cols;
  Mat<T> out(m, n);
  kern::gemm_nn(m, n, k, a->val.data(), b->val.data(), out.data(), false);
  auto o = t.make(std::move(out), a->needs_grad || b->needs_grad);
  t.record(o, [o_raw = o.get(), a, b, m, k, n]() {
    const Mat<T>& g = o_raw->grad;
    if (a->needs_grad) {
      a->ensure_grad();
      kern::gemm_nt(m, k, n, g.data(), b->val.data(), a->grad.data(), true);
    }
    if (b->needs_grad) {
      b->ensure_grad();
      kern::gemm_tn(k, n, m, a->val.data(), g.data(), b->grad.data(), true);
    }
  });
  return o;
}

// a [m,k] * b[n,k]^T -> [m,n]
template <class T>
Var<T> matmul_nt(Tape<T>& t, const Var<T>& a, const Var<T>& b) {
  if (a->val.cols != b->val.cols) throw ArgumentError("matmul_nt shape mismatch");
  const int m = a->val.rows, k = a->val.cols, n = b->val.rows;
  Mat<T> out(m, n);
  kern::gemm_nt(m, n, k, a->val.data(), b->val.data(), out.data(), false);
  auto o = t.make(std::move(out), a->needs_grad || b->needs_grad);
  t.record(o, [o_raw = o.get(), a, b, m, k, n]() {
    const Mat<T>& g = o_raw->grad;
    if (a->needs_grad) {
      a->ensure_grad();
      kern::gemm_nn(m, k, n, g.data(), b->val.data(), a->grad.data(), true);
    }
    if (b->needs_grad) {
      b->ensure_grad();
      kern::gemm_tn(n, k, m, g.data(), a->val.data(), b->grad.data(), true);
    }
  });
  return o;
}

template <class T>
Var<T> add(Tape<T>& t, const Var<T>& a, const Var<T>& b) {
  if (!a->val.same_shape(b->val)) throw ArgumentError("add shape mismatch");
  Mat<T> out(a->val.rows, a->val.cols);
  kern::add(a->val.data(), b->val.data(), out.data(), out.size());
  auto o = t.make(std::move(out), a->needs_grad || b->needs_grad);
  t.record(o, [o_raw = o.get(), a, b]() {
    const Mat<T>& g = o_raw->grad;
    if (a->needs_grad) {
      a->ensure_grad();
      kern::axpy(T(1), g.data(), a->grad.data(), g.size());
    }
    if (b->needs_grad) {
      b->ensure_grad();
      kern::axpy(T(1), g.data(), b->grad.data(), g.size());
    }
  });
  return o;
}

template <class T>
Var<T> sub(Tape<T>& t, const Var<T>& a, const Var<T>& b) {
  if (!a->val.same_shape(b->val)) throw ArgumentError("sub shape mismatch");
  Mat<T> out(a->val.rows, a->val.cols);
  kern::sub(a->val.data(), b->val.data(), out.data(), out.size());
  auto o = t.make(std::move(out), a->needs_grad || b->needs_grad);
  t.record(o, [o_raw = o.get(), a, b]() {
    const Mat<T>& g = o_raw->grad;
    if (a->needs_grad) {
      a->ensure_grad();
      kern::axpy(T(1), g.data(), a->grad.data(), g.size());
    }
    if (b->needs_grad) {
      b->ensure_grad();
      kern::axpy(T(-1), g.data(), b->grad.data(), g.size());
    }
  });
  return o;
}

template <class T>
Var<T> mul(Tape<T>& t, const Var<T>& a, const Var<T>& b) {
  if (!a->val.same_shape(b->val)) throw ArgumentError("mul shape mismatch");
  Mat<T> out(a->val.rows, a->val.cols);
  kern::mul(a->val.data(), b->val.data(), out.data(), out.size());
  auto o = t.make(std::move(out), a->needs_grad || b->needs_grad);
  t.record(o, [o_raw = o.get(), a, b]() {
    const Mat<T>& g = o_raw->grad;
    if (a->needs_grad) {
      a->ensure_grad();
      detail::madd(a->grad.data(), g.data(), b->val.data(), g.size());
    }
    if (b->needs_grad) {
      b->ensure_grad();
      detail::madd(b->grad.data(), g.data(), a->val.data(), g.size());
    }
  });
  return o;
}

template <class T>
Var<T> scale(Tape<T>& t, const Var<T>& a, T c) {
  Mat<T> out = a->val;
  kern::scale(c, out.data(), out.size());
  auto o = t.make(std::move(out), a->needs_grad);
  t.record(o, [o_raw = o.get(), a, c]() {
    a->ensure_grad();
    kern::axpy(c, o_raw->grad.data(), a->grad.data(), o_raw->grad.size());
  });
  return o;
}

template <class T>
Var<T> add_scalar(Tape<T>& t, const Var<T>& a, T c) {
  Mat<T> out = a->val;
  for (T& x : out.v) x += c;
  auto o = t.make(std::move(out), a->needs_grad);
  t.record(o, [o_raw = o.get(), a]() {
    a->ensure_grad();
    kern::axpy(T(1), o_raw->grad.data(), a->grad.data(), o_raw->grad.size());
  });
  return o;
}

// c - a, elementwise
template <class T>
Var<T> rsub_scalar(Tape<T>& t, T c, const Var<T>& a) {
  Mat<T> out(a->val.rows, a->val.cols);
  for (size_t i = 0; i < out.size(); ++i) out.v[i] = c - a->val.v[i];
  auto o = t.make(std::move(out), a->needs_grad);
  t.record(o, [o_raw = o.get(), a]() {
    a->ensure_grad();
    kern::axpy(T(-1), o_raw->grad.data(), a->grad.data(), o_raw->grad.size());
  });
  return o;
}

// a [m,n] + row [1,n] broadcast over rows
template <class T>
Var<T> add_rowvec(Tape<T>& t, const Var<T>& a, const Var<T>& row) {
  if (row->val.rows != 1 || row->val.cols != a->val.cols)
    throw ArgumentError("add_rowvec shape mismatch");
  Mat<T> out(a->val.rows, a->val.cols);
  for (int i = 0; i < a->val.rows; ++i)
    kern::add(a->val.row(i), row->val.data(), out.row(i), size_t(a->val.cols));
  auto o = t.make(std::move(out), a->needs_grad || row->needs_grad);
  t.record(o, [o_raw = o.get(), a, row]() {
    const Mat<T>& g = o_raw->grad;
    if (a->needs_grad) {
      a->ensure_grad();
      kern::axpy(T(1), g.data(), a->grad.data(), g.size());
    }
    if (row->needs_grad) {
      row->ensure_grad();
      for (int i = 0; i < g.rows; ++i)
        kern::axpy(T(1), g.row(i), row->grad.data(), size_t(g.cols));
    }
  });
  return o;
}

// ---------- activations ----------

template <class T>
Var<T> relu(Tape<T>& t, const Var<T>& a) {
  Mat<T> out(a->val.rows, a->val.cols);
  kern::relu_fwd(a->val.data(), out.data(), out.size());
  auto o = t.make(std::move(out), a->needs_grad);
  t.record(o, [o_raw = o.get(), a]() {
    a->ensure_grad();
    kern::relu_bwd(a->val.data(), o_raw->grad.data(), a->grad.data(), o_raw->grad.size());
  });
  return o;
}

template <class T>
Var<T> sigmoid(Tape<T>& t, const Var<T>& a) {
  Mat<T> out(a->val.rows, a->val.cols);
  for (size_t i = 0; i < out.size(); ++i) out.v[i] = T(1) / (T(1) + std::exp(-a->val.v[i]));
  auto o = t.make(std::move(out), a->needs_grad);
  t.record(o, [o_raw = o.get(), a]() {
    a->ensure_grad();
    const Mat<T>& y = o_raw->val;
    const Mat<T>& g = o_raw->grad;
    for (size_t i = 0; i < g.size(); ++i)
      a->grad.v[i] += g.v[i] * y.v[i] * (T(1) - y.v[i]);
  });
  return o;
}

template <class T>
Var<T> tanh_op(Tape<T>& t, const Var<T>& a) {
  Mat<T> out(a->val.rows, a->val.cols);
  for (size_t i = 0; i < out.size(); ++i) out.v[i] = std::tanh(a->val.v[i]);
  auto o = t.make(std::move(out), a->needs_grad);
  t.record(o, [o_raw = o.get(), a]() {
    a->ensure_grad();
    const Mat<T>& y = o_raw->val;
    const Mat<T>& g = o_raw->grad;
    for (size_t i = 0; i < g.size(); ++i)
      a->grad.v[i] += g.v[i] * (T(1) - y.v[i] * y.v[i]);
  });
  return o;
}

template <class T>
Var<T> exp_op(Tape<T>& t, const Var<T>& a) {
  Mat<T> out(a->val.rows, a->val.cols);
  for (size_t i = 0; i < out.size(); ++i) out.v[i] = std::exp(a->val.v[i]);
  auto o = t.make(std::move(out), a->needs_grad);
  t.record(o, [o_raw = o.get(), a]() {
    a->ensure_grad();
    const Mat<T>& y = o_raw->val;
    const Mat<T>& g = o_raw->grad;
    for (size_t i = 0; i < g.size(); ++i) a->grad.v[i] += g.v[i] * y.v[i];
  });
  return o;
}

// ---------- normalization / softmax ----------

template <class T>
Var<T> layer_norm(Tape<T>& t, const Var<T>& a, const Var<T>& gain, const Var<T>& bias,
                  T eps = T(1e-5)) {
  const int m = a->val.rows, n = a->val.cols;
  if (gain->val.rows != 1 || gain->val.cols != n || bias->val.rows != 1 || bias->val.cols != n)
    throw ArgumentError("layer_norm affine shape mismatch");
  auto xhat = std::make_shared<Mat<T>>(m, n);
  auto inv_sigma = std::make_shared<std::vector<T>>(size_t(m));
  Mat<T> out(m, n);
  for (int i = 0; i < m; ++i) {
    const T* x = a->val.row(i);
    T mu = T(0);
    for (int j = 0; j < n; ++j) mu += x[j];
    mu /= T(n);
    T var = T(0);
    for (int j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= T(n);
    T is = T(1) / std::sqrt(var + eps);
    (*inv_sigma)[i] = is;
    T* xh = xhat->row(i);
    T* y = out.row(i);
    for (int j = 0; j < n; ++j) {
      xh[j] = (x[j] - mu) * is;
      y[j] = gain->val.v[j] * xh[j] + bias->val.v[j];
    }
  }
  auto o = t.make(std::move(out), a->needs_grad || gain->needs_grad || bias->needs_grad);
  t.record(o, [o_raw = o.get(), a, gain, bias, xhat, inv_sigma, m, n]() {
    const Mat<T>& g = o_raw->grad;
    if (gain->needs_grad) {
      gain->ensure_grad();
      for (int i = 0; i < m; ++i)
        detail::madd(gain->grad.data(), g.row(i), xhat->row(i), size_t(n));
    }
    if (bias->needs_grad) {
      bias->ensure_grad();
      for (int i = 0; i < m; ++i)
        kern::axpy(T(1), g.row(i), bias->grad.data(), size_t(n));
    }
    if (a->needs_grad) {
      a->ensure_grad();
      std::vector<T> dxh(static_cast<size_t>(n));
      for (int i = 0; i < m; ++i) {
        const T* gr = g.row(i);
        const T* xh = xhat->row(i);
        T mean_d = T(0), mean_dx = T(0);
        for (int j = 0; j < n; ++j) {
          dxh[j] = gr[j] * gain->val.v[j];
          mean_d += dxh[j];
          mean_dx += dxh[j] * xh[j];
        }
        mean_d /= T(n);
        mean_dx /= T(n);
        T is = (*inv_sigma)[i];
        T* da = a->grad.row(i);
        for (int j = 0; j < n; ++j)
          da[j] += (dxh[j] - mean_d - xh[j] * mean_dx) * is;
      }
    }
  });
  return o;
}

// Row softmax whose denominator is summed in ascending value order, making the
// result invariant to permutations of the row entries. Used wherever the
// softmax axis ranges over slots, so slot permutation equivariance is exact.
template <class T>
Var<T> softmax_srows(Tape<T>& t, const Var<T>& a) {
  const int m = a->val.rows, n = a->val.cols;
  Mat<T> out(m, n);
  std::vector<T> buf(static_cast<size_t>(n));
  for (int i = 0; i < m; ++i) {
    const T* x = a->val.row(i);
    T mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    T* y = out.row(i);
    for (int j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      buf[j] = y[j];
    }
    std::sort(buf.begin(), buf.end());
    T denom = T(0);
    for (int j = 0; j < n; ++j) denom += buf[j];
    for (int j = 0; j < n; ++j) y[j] /= denom;
  }
  auto o = t.make(std::move(out), a->needs_grad);
  t.record(o, [o_raw = o.get(), a, m, n]() {
    a->ensure_grad();
    const Mat<T>& p = o_raw->val;
    const Mat<T>& g = o_raw->grad;
    for (int i = 0; i < m; ++i) {
      const T* pr = p.row(i);
      const T* gr = g.row(i);
      T dot = T(0);
      for (int j = 0; j < n; ++j) dot += pr[j] * gr[j];
      T* da = a->grad.row(i);
      for (int j = 0; j < n; ++j) da[j] += pr[j] * (gr[j] - dot);
    }
  });
  return o;
}

template <class T>
Var<T> col_sums(Tape<T>& t, const Var<T>& a) {
  const int m = a->val.rows, n = a->val.cols;
  Mat<T> out(1, n);
  for (int i = 0; i < m; ++i)
    kern::add(out.data(), a->val.row(i), out.data(), size_t(n));
  auto o = t.make(std::move(out), a->needs_grad);
  t.record(o, [o_raw = o.get(), a, m, n]() {
    a->ensure_grad();
    for (int i = 0; i < m; ++i)
      kern::axpy(T(1), o_raw->grad.data(), a->grad.row(i), size_t(n));
  });
  return o;
}

// out[i,j] = a[i,j] / s[0,j]
template <class T>
Var<T> div_colwise(Tape<T>& t, const Var<T>& a, const Var<T>& s) {
  const int m = a->val.rows, n = a->val.cols;
  if (s->val.rows != 1 || s->val.cols != n) throw ArgumentError("div_colwise shape mismatch");
  Mat<T> out(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) = a->val.at(i, j) / s->val.v[j];
  auto o = t.make(std::move(out), a->needs_grad || s->needs_grad);
  t.record(o, [o_raw = o.get(), a, s, m, n]() {
    const Mat<T>& g = o_raw->grad;
    const Mat<T>& y = o_raw->val;
    if (a->needs_grad) {
      a->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) a->grad.at(i, j) += g.at(i, j) / s->val.v[j];
    }
    if (s->needs_grad) {
      s->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          s->grad.v[j] -= g.at(i, j) * y.at(i, j) / s->val.v[j];
    }
  });
  return o;
}

// ---------- shape ops ----------

template <class T>
Var<T> transpose(Tape<T>& t, const Var<T>& a) {
  const int m = a->val.rows, n = a->val.cols;
  Mat<T> out(n, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j, i) = a->val.at(i, j);
  auto o = t.make(std::move(out), a->needs_grad);
  t.record(o, [o_raw = o.get(), a, m, n]() {
    a->ensure_grad();
    const Mat<T>& g = o_raw->grad;
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < m; ++i) a->grad.at(i, j) += g.at(j, i);
  });
  return o;
}

template <class T>
Var<T> slice_rows(Tape<T>& t, const Var<T>& a, int r0, int nrows) {
  if (r0 < 0 || nrows < 0 || r0 + nrows > a->val.rows) throw ArgumentError("slice_rows range");
  const int n = a->val.cols;
  Mat<T> out(nrows, n);
  std::copy(a->val.row(r0), a->val.row(r0) + size_t(nrows) * n, out.data());
  auto o = t.make(std::move(out), a->needs_grad);
  t.record(o, [o_raw = o.get(), a, r0, nrows, n]() {
    a->ensure_grad();
    kern::axpy(T(1), o_raw->grad.data(), a->grad.row(r0), size_t(nrows) * n);
  });
  return o;
}

template <class T>
Var<T> concat_rows(Tape<T>& t, const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ArgumentError("concat_rows of nothing");
  const int n = parts[0]->val.cols;
  int m = 0;
  bool needs = false;
  for (auto& p : parts) {
    if (p->val.cols != n) throw ArgumentError("concat_rows column mismatch");
    m += p->val.rows;
    needs = needs || p->needs_grad;
  }
  Mat<T> out(m, n);
  int r = 0;
  for (auto& p : parts) {
    std::copy(p->val.data(), p->val.data() + p->val.size(), out.row(r));
    r += p->val.rows;
  }
  auto o = t.make(std::move(out), needs);
  t.record(o, [o_raw = o.get(), parts, n]() {
    int r = 0;
    for (auto& p : parts) {
      if (p->needs_grad) {
        p->ensure_grad();
        kern::axpy(T(1), o_raw->grad.row(r), p->grad.data(), p->val.size());
      }
      r += p->val.rows;
    }
  });
  return o;
}

template <class T>
Var<T> slice_cols(Tape<T>& t, const Var<T>& a, int c0, int ncols) {
  if (c0 < 0 || ncols < 0 || c0 + ncols > a->val.cols) throw ArgumentError("slice_cols range");
  const int m = a->val.rows;
  Mat<T> out(m, ncols);
  for (int i = 0; i < m; ++i)
    std::copy(a->val.row(i) + c0, a->val.row(i) + c0 + ncols, out.row(i));
  auto o = t.make(std::move(out), a->needs_grad);
  t.record(o, [o_raw = o.get(), a, c0, ncols, m]() {
    a->ensure_grad();
    for (int i = 0; i < m; ++i)
      kern::axpy(T(1), o_raw->grad.row(i), a->grad.row(i) + c0, size_t(ncols));
  });
  return o;
}

template <class T>
Var<T> concat_cols(Tape<T>& t, const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ArgumentError("concat_cols of nothing");
  const int m = parts[0]->val.rows;
  int n = 0;
  bool needs = false;
  for (auto& p : parts) {
    if (p->val.rows != m) throw ArgumentError("concat_cols row mismatch");
    n += p->val.cols;
    needs = needs || p->needs_grad;
  }
  Mat<T> out(m, n);
  int c = 0;
  for (auto& p : parts) {
    for (int i = 0; i < m; ++i)
      std::copy(p->val.row(i), p->val.row(i) + p->val.cols, out.row(i) + c);
    c += p->val.cols;
  }
  auto o = t.make(std::move(out), needs);
  t.record(o, [o_raw = o.get(), parts, m]() {
    int c = 0;
    for (auto& p : parts) {
      if (p->needs_grad) {
        p->ensure_grad();
        for (int i = 0; i < m; ++i)
          kern::axpy(T(1), o_raw->grad.row(i) + c, p->grad.row(i), size_t(p->val.cols));
      }
      c += p->val.cols;
    }
  });
  return o;
}

// ---------- slot-shaped broadcasts ----------

// out row (k*reps + r) = slots row k
template <class T>
Var<T> broadcast_slots(Tape<T>& t, const Var<T>& slots, int reps) {
  const int k = slots->val.rows, d = slots->val.cols;
  Mat<T> out(k * reps, d);
  for (int s = 0; s < k; ++s)
    for (int r = 0; r < reps; ++r)
      std::copy(slots->val.row(s), slots->val.row(s) + d, out.row(s * reps + r));
  auto o = t.make(std::move(out), slots->needs_grad);
  t.record(o, [o_raw = o.get(), slots, k, reps, d]() {
    slots->ensure_grad();
    for (int s = 0; s < k; ++s)
      for (int r = 0; r < reps; ++r)
        kern::axpy(T(1), o_raw->grad.row(s * reps + r), slots->grad.row(s), size_t(d));
  });
  return o;
}

// out row (k*rows + r) = m row r, repeated for k = 0..reps-1
template <class T>
Var<T> tile_rows(Tape<T>& t, const Var<T>& m, int reps) {
  const int rows = m->val.rows, d = m->val.cols;
  Mat<T> out(reps * rows, d);
  for (int k = 0; k < reps; ++k)
    std::copy(m->val.data(), m->val.data() + m->val.size(), out.row(k * rows));
  auto o = t.make(std::move(out), m->needs_grad);
  t.record(o, [o_raw = o.get(), m, reps, rows, d]() {
    m->ensure_grad();
    for (int k = 0; k < reps; ++k)
      kern::axpy(T(1), o_raw->grad.row(k * rows), m->grad.data(), size_t(rows) * d);
  });
  return o;
}

// y[n,f] = sum_k w[n,k] * stack[k*N + n, f]   (per-position mixture over slots)
template <class T>
Var<T> mix_slots(Tape<T>& t, const Var<T>& w, const Var<T>& stack) {
  const int n = w->val.rows, k = w->val.cols, f = stack->val.cols;
  if (stack->val.rows != k * n) throw ArgumentError("mix_slots shape mismatch");
  Mat<T> out(n, f);
  for (int s = 0; s < k; ++s)
    for (int i = 0; i < n; ++i)
      kern::axpy(w->val.at(i, s), stack->val.row(s * n + i), out.row(i), size_t(f));
  auto o = t.make(std::move(out), w->needs_grad || stack->needs_grad);
  t.record(o, [o_raw = o.get(), w, stack, n, k, f]() {
    const Mat<T>& g = o_raw->grad;
    if (w->needs_grad) {
      w->ensure_grad();
      for (int s = 0; s < k; ++s)
        for (int i = 0; i < n; ++i) {
          const T* gr = g.row(i);
          const T* yr = stack->val.row(s * n + i);
          T acc = T(0);
          for (int j = 0; j < f; ++j) acc += gr[j] * yr[j];
          w->grad.at(i, s) += acc;
        }
    }
    if (stack->needs_grad) {
      stack->ensure_grad();
      for (int s = 0; s < k; ++s)
        for (int i = 0; i < n; ++i)
          kern::axpy(w->val.at(i, s), g.row(i), stack->grad.row(s * n + i), size_t(f));
    }
  });
  return o;
}

// ---------- attention ----------

// Causal single-head attention: out[i] = sum_{j<=i} softmax_j(scale*q_i.k_j) v_j.
// Masked positions are never touched, so outputs at rows <= n are bitwise
// independent of rows > n of all inputs.
template <class T>
Var<T> causal_self_attention(Tape<T>& t, const Var<T>& q, const Var<T>& k, const Var<T>& v,
                             T scale_v) {
  const int n = q->val.rows, d = q->val.cols;
  if (k->val.rows != n || k->val.cols != d || v->val.rows != n || v->val.cols != d)
    throw ArgumentError("causal_self_attention shape mismatch");
  auto probs = std::make_shared<Mat<T>>(n, n);
  Mat<T> out(n, d);
  std::vector<T> dots(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const T* qi = q->val.row(i);
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j <= i; ++j) {
      const T* kj = k->val.row(j);
      T s = T(0);
      for (int c = 0; c < d; ++c) s += qi[c] * kj[c];
      dots[j] = s * scale_v;
      mx = std::max(mx, dots[j]);
    }
    T denom = T(0);
    for (int j = 0; j <= i; ++j) {
      dots[j] = std::exp(dots[j] - mx);
      denom += dots[j];
    }
    T* pr = probs->row(i);
    T* oi = out.row(i);
    for (int j = 0; j <= i; ++j) {
      pr[j] = dots[j] / denom;
      kern::axpy(pr[j], v->val.row(j), oi, size_t(d));
    }
  }
  auto o = t.make(std::move(out), q->needs_grad || k->needs_grad || v->needs_grad);
  t.record(o, [o_raw = o.get(), q, k, v, probs, scale_v, n, d]() {
    const Mat<T>& g = o_raw->grad;
    q->ensure_grad();
    k->ensure_grad();
    v->ensure_grad();
    std::vector<T> dp(static_cast<size_t>(n)), ds(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      const T* gr = g.row(i);
      const T* pr = probs->row(i);
      T dot = T(0);
      for (int j = 0; j <= i; ++j) {
        const T* vj = v->val.row(j);
        T acc = T(0);
        for (int c = 0; c < d; ++c) acc += gr[c] * vj[c];
        dp[j] = acc;
        dot += acc * pr[j];
        kern::axpy(pr[j], gr, v->grad.row(j), size_t(d));
      }
      const T* qi = q->val.row(i);
      T* dqi = q->grad.row(i);
      for (int j = 0; j <= i; ++j) {
        ds[j] = pr[j] * (dp[j] - dot) * scale_v;
        kern::axpy(ds[j], k->val.row(j), dqi, size_t(d));
        kern::axpy(ds[j], qi, k->grad.row(j), size_t(d));
      }
    }
  });
  return o;
}

// ---------- losses ----------

template <class T>
Var<T> mse_loss(Tape<T>& t, const Var<T>& a, const Mat<T>& target) {
  if (!a->val.same_shape(target)) throw ArgumentError("mse_loss shape mismatch");
  auto diff = std::make_shared<Mat<T>>(a->val.rows, a->val.cols);
  kern::sub(a->val.data(), target.data(), diff->data(), diff->size());
  double s = kern::sum_sq(diff->data(), diff->size());
  Mat<T> out(1, 1);
  out.at(0, 0) = T(s / double(diff->size()));
  auto o = t.make(std::move(out), a->needs_grad);
  t.record(o, [o_raw = o.get(), a, diff]() {
    a->ensure_grad();
    T c = o_raw->grad.at(0, 0) * T(2) / T(diff->size());
    kern::axpy(c, diff->data(), a->grad.data(), diff->size());
  });
  return o;
}

// ---------- convolution ----------

struct ConvGeom {
  int in_ch = 0, out_ch = 0;
  int kh = 0, kw = 0;
  int stride = 1, pad = 0;
  int h_in = 0, w_in = 0;   // spatial dims of the op's input
  int h_out = 0, w_out = 0;  // derived by conv_out / convt_out
};

inline ConvGeom conv_out(ConvGeom g) {
  g.h_out = (g.h_in + 2 * g.pad - g.kh) / g.stride + 1;
  g.w_out = (g.w_in + 2 * g.pad - g.kw) / g.stride + 1;
  if (g.h_out < 1 || g.w_out < 1) throw ConfigError("conv output collapses to zero size");
  return g;
}
inline ConvGeom convt_out(ConvGeom g, int out_pad) {
  g.h_out = (g.h_in - 1) * g.stride - 2 * g.pad + g.kh + out_pad;
  g.w_out = (g.w_in - 1) * g.stride - 2 * g.pad + g.kw + out_pad;
  if (g.h_out < 1 || g.w_out < 1) throw ConfigError("transposed conv output collapses");
  return g;
}

namespace detail {
// img [C, H*W] -> cols [C*kh*kw, Ho*Wo]; (H, W, Ho, Wo, stride, pad) describe
// the *convolution view*: position p = (oy, ox) reads img at
// (oy*stride - pad + ki, ox*stride - pad + kj), out-of-bounds taps are zero.
template <class T>
void im2col(const T* img, int C, int H, int W, int kh, int kw, int stride, int pad,
            int Ho, int Wo, T* cols) {
  const int P = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    const T* im = img + size_t(c) * H * W;
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        T* dst = cols + size_t((c * kh + ki) * kw + kj) * P;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * stride - pad + ki;
          T* drow = dst + size_t(oy) * Wo;
          if (iy < 0 || iy >= H) {
            for (int ox = 0; ox < Wo; ++ox) drow[ox] = T(0);
            continue;
          }
          const T* irow = im + size_t(iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * stride - pad + kj;
            drow[ox] = (ix < 0 || ix >= W) ? T(0) : irow[ix];
          }
        }
      }
  }
}

template <class T>
void col2im_add(const T* cols, int C, int H, int W, int kh, int kw, int stride, int pad,
                int Ho, int Wo, T* img) {
  const int P = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    T* im = img + size_t(c) * H * W;
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        const T* src = cols + size_t((c * kh + ki) * kw + kj) * P;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) continue;
          const T* srow = src + size_t(oy) * Wo;
          T* irow = im + size_t(iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < W) irow[ix] += srow[ox];
          }
        }
      }
  }
}
}  // namespace detail

// x [Cin, H*W], w [Cout, Cin*kh*kw], bias [1, Cout] or null -> [Cout, Ho*Wo]
template <class T>
Var<T> conv2d(Tape<T>& t, const Var<T>& x, const Var<T>& w, const Var<T>& bias,
              const ConvGeom& g) {
  if (x->val.rows != g.in_ch || x->val.cols != g.h_in * g.w_in)
    throw ArgumentError("conv2d input shape mismatch");
  if (w->val.rows != g.out_ch || w->val.cols != g.in_ch * g.kh * g.kw)
    throw ArgumentError("conv2d weight shape mismatch");
  const int P = g.h_out * g.w_out;
  auto cols = std::make_shared<Mat<T>>(g.in_ch * g.kh * g.kw, P);
  detail::im2col(x->val.data(), g.in_ch, g.h_in, g.w_in, g.kh, g.kw, g.stride, g.pad,
                 g.h_out, g.w_out, cols->data());
  Mat<T> out(g.out_ch, P);
  kern::gemm_nn(g.out_ch, P, cols->rows, w->val.data(), cols->data(), out.data(), false);
  if (bias) {
    for (int c = 0; c < g.out_ch; ++c) {
      T b = bias->val.v[size_t(c)];
      for (int p = 0; p < P; ++p) out.at(c, p) += b;
    }
  }
  bool needs = x->needs_grad || w->needs_grad || (bias && bias->needs_grad);
  auto o = t.make(std::move(out), needs);
  t.record(o, [o_raw = o.get(), x, w, bias, cols, g, P]() {
    const Mat<T>& gr = o_raw->grad;
    if (bias && bias->needs_grad) {
      bias->ensure_grad();
      for (int c = 0; c < g.out_ch; ++c) {
        T s = T(0);
        for (int p = 0; p < P; ++p) s += gr.at(c, p);
        bias->grad.v[size_t(c)] += s;
      }
    }
    if (w->needs_grad) {
      w->ensure_grad();
      kern::gemm_nt(g.out_ch, cols->rows, P, gr.data(), cols->data(), w->grad.data(), true);
    }
    if (x->needs_grad) {
      x->ensure_grad();
      Mat<T> dcols(cols->rows, P);
      kern::gemm_tn(cols->rows, P, g.out_ch, w->val.data(), gr.data(), dcols.data(), false);
      detail::col2im_add(dcols.data(), g.in_ch, g.h_in, g.w_in, g.kh, g.kw, g.stride, g.pad,
                         g.h_out, g.w_out, x->grad.data());
    }
  });
  return o;
}

// x [Cin, Hi*Wi], w [Cin, Cout*kh*kw], bias [1, Cout] or null -> [Cout, Ho*Wo]
template <class T>
Var<T> conv_transpose2d(Tape<T>& t, const Var<T>& x, const Var<T>& w, const Var<T>& bias,
                        const ConvGeom& g) {
  if (x->val.rows != g.in_ch || x->val.cols != g.h_in * g.w_in)
    throw ArgumentError("conv_transpose2d input shape mismatch");
  if (w->val.rows != g.in_ch || w->val.cols != g.out_ch * g.kh * g.kw)
    throw ArgumentError("conv_transpose2d weight shape mismatch");
  const int Pin = g.h_in * g.w_in;
  const int ckk = g.out_ch * g.kh * g.kw;
  Mat<T> cols(ckk, Pin);
  kern::gemm_tn(ckk, Pin, g.in_ch, w->val.data(), x->val.data(), cols.data(), false);
  Mat<T> out(g.out_ch, g.h_out * g.w_out);
  detail::col2im_add(cols.data(), g.out_ch, g.h_out, g.w_out, g.kh, g.kw, g.stride, g.pad,
                     g.h_in, g.w_in, out.data());
  if (bias) {
    const int P = g.h_out * g.w_out;
    for (int c = 0; c < g.out_ch; ++c) {
      T b = bias->val.v[size_t(c)];
      for (int p = 0; p < P; ++p) out.at(c, p) += b;
    }
  }
  bool needs = x->needs_grad || w->needs_grad || (bias && bias->needs_grad);
  auto o = t.make(std::move(out), needs);
  t.record(o, [o_raw = o.get(), x, w, bias, g, Pin, ckk]() {
    const Mat<T>& gr = o_raw->grad;
    const int P = g.h_out * g.w_out;
    if (bias && bias->needs_grad) {
      bias->ensure_grad();
      for (int c = 0; c < g.out_ch; ++c) {
        T s = T(0);
        for (int p = 0; p < P; ++p) s += gr.at(c, p);
        bias->grad.v[size_t(c)] += s;
      }
    }
    Mat<T> dcols(ckk, Pin);
    detail::im2col(gr.data(), g.out_ch, g.h_out, g.w_out, g.kh, g.kw, g.stride, g.pad,
                   g.h_in, g.w_in, dcols.data());
    if (w->needs_grad) {
      w->ensure_grad();
      kern::gemm_nt(g.in_ch, ckk, Pin, x->val.data(), dcols.data(), w->grad.data(), true);
    }
    if (x->needs_grad) {
      x->ensure_grad();
      kern::gemm_nn(g.in_ch, Pin, ckk, w->val.data(), dcols.data(), x->grad.data(), true);
    }
  });
  return o;
}

}  // namespace slotkit::num
