#pragma once
// Named, ordered parameter storage. Models register parameters in a fixed
// order at construction; serialization and optimizer state both key off that
// order, so checkpoints are stable across runs of the same configuration.

#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "slotkit/errors.hpp"
#include "slotkit/graph.hpp"
#include "slotkit/mat.hpp"
#include "slotkit/rng.hpp"

namespace slotkit::num {

template <class T>
class ParamStore {
 public:
  Var<T> add(const std::string& name, Mat<T> init) {
    if (index_.count(name)) throw ArgumentError("duplicate parameter name: " + name);
    auto v = make_leaf(std::move(init), true);
    index_[name] = entries_.size();
    entries_.emplace_back(name, v);
    return v;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  const Var<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ArgumentError("unknown parameter: " + name);
    return entries_[it->second].second;
  }

  const std::vector<std::pair<std::string, Var<T>>>& entries() const { return entries_; }
  size_t count() const { return entries_.size(); }

  size_t total_size() const {
    size_t n = 0;
    for (auto& e : entries_) n += e.second->val.size();
    return n;
  }

  void zero_grads() {
    for (auto& e : entries_) e.second->zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> entries_;
  std::unordered_map<std::string, size_t> index_;
};

// fan-in uniform: U(-1/sqrt(in), 1/sqrt(in)), weight laid out [in, out] for y = x W + b
template <class T>
Mat<T> init_linear(Rng& rng, int in, int out) {
  Mat<T> w(in, out);
  double bound = 1.0 / std::sqrt(double(in));
  for (T& x : w.v) x = T(rng.uniform(-bound, bound));
  return w;
}

template <class T>
Mat<T> init_normal(Rng& rng, int rows, int cols, double stddev) {
  Mat<T> m(rows, cols);
  for (T& x : m.v) x = T(rng.normal(0.0, stddev));
  return m;
}

template <class T>
Mat<T> init_const(int rows, int cols, T value) {
  Mat<T> m(rows, cols);
  m.fill(value);
  return m;
}

// ---------- reusable layers ----------

template <class T>
struct Linear {
  Var<T> w;
  Var<T> b;  // null when bias-free

  Linear() = default;
  Linear(ParamStore<T>& ps, Rng& rng, const std::string& prefix, int in, int out,
         bool bias = true) {
    w = ps.add(prefix + ".w", init_linear<T>(rng, in, out));
    if (bias) b = ps.add(prefix + ".b", Mat<T>(1, out));
  }

  Var<T> operator()(Tape<T>& t, const Var<T>& x) const {
    auto y = matmul(t, x, w);
    return b ? add_rowvec(t, y, b) : y;
  }
};

template <class T>
struct LayerNorm {
  Var<T> gain;
  Var<T> bias;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& ps, const std::string& prefix, int dim) {
    gain = ps.add(prefix + ".gain", init_const<T>(1, dim, T(1)));
    bias = ps.add(prefix + ".bias", Mat<T>(1, dim));
  }

  Var<T> operator()(Tape<T>& t, const Var<T>& x) const { return layer_norm(t, x, gain, bias); }
};

// two-layer MLP with ReLU, parameter names <prefix>.w1/b1/w2/b2
template <class T>
struct Mlp2 {
  Linear<T> l1, l2;

  Mlp2() = default;
  Mlp2(ParamStore<T>& ps, Rng& rng, const std::string& prefix, int in, int hidden, int out) {
    l1.w = ps.add(prefix + ".w1", init_linear<T>(rng, in, hidden));
    l1.b = ps.add(prefix + ".b1", Mat<T>(1, hidden));
    l2.w = ps.add(prefix + ".w2", init_linear<T>(rng, hidden, out));
    l2.b = ps.add(prefix + ".b2", Mat<T>(1, out));
  }

  Var<T> operator()(Tape<T>& t, const Var<T>& x) const { return l2(t, relu(t, l1(t, x))); }
};

// GRU cell, gates r/z/n with the usual coupling: h' = (1-z) n + z h
template <class T>
struct GruCell {
  Var<T> w_ir, w_iz, w_in;  // [in, hidden]
  Var<T> u_hr, u_hz, u_hn;  // [hidden, hidden]
  Var<T> b_ir, b_iz, b_in, b_hr, b_hz, b_hn;

  GruCell() = default;
  GruCell(ParamStore<T>& ps, Rng& rng, const std::string& prefix, int in, int hidden) {
    w_ir = ps.add(prefix + ".w_ir", init_linear<T>(rng, in, hidden));
    w_iz = ps.add(prefix + ".w_iz", init_linear<T>(rng, in, hidden));
    w_in = ps.add(prefix + ".w_in", init_linear<T>(rng, in, hidden));
    u_hr = ps.add(prefix + ".u_hr", init_linear<T>(rng, hidden, hidden));
    u_hz = ps.add(prefix + ".u_hz", init_linear<T>(rng, hidden, hidden));
    u_hn = ps.add(prefix + ".u_hn", init_linear<T>(rng, hidden, hidden));
    b_ir = ps.add(prefix + ".b_ir", Mat<T>(1, hidden));
    b_iz = ps.add(prefix + ".b_iz", Mat<T>(1, hidden));
    b_in = ps.add(prefix + ".b_in", Mat<T>(1, hidden));
    b_hr = ps.add(prefix + ".b_hr", Mat<T>(1, hidden));
    b_hz = ps.add(prefix + ".b_hz", Mat<T>(1, hidden));
    b_hn = ps.add(prefix + ".b_hn", Mat<T>(1, hidden));
  }

  Var<T> operator()(Tape<T>& t, const Var<T>& x, const Var<T>& h) const {
    auto r = sigmoid(t, add(t, add_rowvec(t, matmul(t, x, w_ir), b_ir),
                            add_rowvec(t, matmul(t, h, u_hr), b_hr)));
    auto z = sigmoid(t, add(t, add_rowvec(t, matmul(t, x, w_iz), b_iz),
                            add_rowvec(t, matmul(t, h, u_hz), b_hz)));
    auto n = tanh_op(t, add(t, add_rowvec(t, matmul(t, x, w_in), b_in),
                            mul(t, r, add_rowvec(t, matmul(t, h, u_hn), b_hn))));
    // (1 - z) * n + z * h
    return add(t, mul(t, rsub_scalar(t, T(1), z), n), mul(t, z, h));
  }
};

}  // namespace slotkit::num
