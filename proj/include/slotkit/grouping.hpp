#pragma once
// Iterative Slot Attention: competitive grouping of patch tokens into K slot
// vectors. The slot-axis softmax uses an order-invariant (sorted) denominator,
// so permuting the initial slots permutes the outputs bitwise.

#include <cmath>
#include <string>

#include "slotkit/errors.hpp"
#include "slotkit/graph.hpp"
#include "slotkit/params.hpp"
#include "slotkit/rng.hpp"

namespace slotkit {

template <class T>
struct GroupingNet {
  int d_feat = 0;
  int d_slots = 0;
  num::LayerNorm<T> input_norm;      // over token features
  num::Mlp2<T> input_mlp;            // d_feat -> d_feat -> d_slots
  num::LayerNorm<T> input_mlp_norm;  // over projected tokens
  num::Var<T> mu, log_sigma;         // [1, d_slots] shared slot-init parameters
  num::LayerNorm<T> slot_norm;       // applied to slots before the query
  num::Linear<T> q, k, v;            // bias-free d_slots x d_slots
  num::GruCell<T> gru;
  num::LayerNorm<T> mlp_norm;
  num::Mlp2<T> mlp;                  // residual, hidden 4*d_slots

  GroupingNet() = default;
  GroupingNet(num::ParamStore<T>& ps, Rng& rng, int feature_dim, int slot_dim)
      : d_feat(feature_dim), d_slots(slot_dim) {
    input_norm = num::LayerNorm<T>(ps, "grouping.input_norm", d_feat);
    input_mlp = num::Mlp2<T>(ps, rng, "grouping.input_mlp", d_feat, d_feat, d_slots);
    input_mlp_norm = num::LayerNorm<T>(ps, "grouping.input_mlp_norm", d_slots);
    mu = ps.add("grouping.slot_init.mu", num::init_normal<T>(rng, 1, d_slots, 1.0));
    log_sigma = ps.add("grouping.slot_init.log_sigma", num::Mat<T>(1, d_slots));
    slot_norm = num::LayerNorm<T>(ps, "grouping.slot_norm", d_slots);
    q = num::Linear<T>(ps, rng, "grouping.q", d_slots, d_slots, false);
    k = num::Linear<T>(ps, rng, "grouping.k", d_slots, d_slots, false);
    v = num::Linear<T>(ps, rng, "grouping.v", d_slots, d_slots, false);
    gru = num::GruCell<T>(ps, rng, "grouping.gru", d_slots, d_slots);
    mlp_norm = num::LayerNorm<T>(ps, "grouping.mlp_norm", d_slots);
    mlp = num::Mlp2<T>(ps, rng, "grouping.mlp", d_slots, 4 * d_slots, d_slots);
  }

  // slots0[k] = mu + exp(log_sigma) * eps_k; sigma_zero collapses every slot to mu
  num::Mat<T> sample_slots(Rng& rng, int n_slots, bool sigma_zero = false) const {
    if (n_slots < 1) throw ArgumentError("slot count must be >= 1");
    num::Mat<T> s(n_slots, d_slots);
    for (int i = 0; i < n_slots; ++i)
      for (int j = 0; j < d_slots; ++j) {
        T eps = sigma_zero ? T(0) : T(rng.normal());
        s.at(i, j) = mu->val.v[size_t(j)] + std::exp(log_sigma->val.v[size_t(j)]) * eps;
      }
    return s;
  }

  // standard-normal noise for the reparameterized init, one row per slot
  num::Mat<T> sample_eps(Rng& rng, int n_slots, bool sigma_zero = false) const {
    if (n_slots < 1) throw ArgumentError("slot count must be >= 1");
    num::Mat<T> e(n_slots, d_slots);
    for (size_t i = 0; i < e.size(); ++i) e.v[i] = sigma_zero ? T(0) : T(rng.normal());
    return e;
  }

  // graph form of the init so mu and log_sigma receive gradients
  num::Var<T> slots_init(num::Tape<T>& t, const num::Mat<T>& eps) const {
    const int n_slots = eps.rows;
    auto sigma = exp_op(t, log_sigma);
    auto noise = t.make(num::Mat<T>(eps), false);
    return add(t, tile_rows(t, mu, n_slots), mul(t, tile_rows(t, sigma, n_slots), noise));
  }

  // LN -> MLP -> LN; run once per sample before the iterations
  num::Var<T> project_inputs(num::Tape<T>& t, const num::Var<T>& features) const {
    if (features->val.cols != d_feat) throw ArgumentError("feature dim mismatch");
    return input_mlp_norm(t, input_mlp(t, input_norm(t, features)));
  }

  struct Result {
    num::Var<T> slots;  // [K, d_slots]
    num::Var<T> attn;   // [K, N], final-iteration softmax over slots
  };

  // proj: [N, d_slots] already projected; slots0: [K, d_slots]
  Result run(num::Tape<T>& t, const num::Var<T>& proj, const num::Var<T>& slots0,
             int iterations) const {
    if (iterations < 1) throw ArgumentError("iteration count must be >= 1");
    if (proj->val.cols != d_slots || slots0->val.cols != d_slots)
      throw ArgumentError("slot dim mismatch");
    auto keys = k(t, proj);    // [N, D]
    auto vals = v(t, proj);    // [N, D]
    T scale_v = T(1) / std::sqrt(T(d_slots));
    num::Var<T> slots = slots0;
    num::Var<T> last_a;
    for (int it = 0; it < iterations; ++it) {
      auto queries = q(t, slot_norm(t, slots));                    // [K, D]
      auto dots = scale(t, matmul_nt(t, keys, queries), scale_v);  // [N, K]
      auto a = softmax_srows(t, dots);                             // softmax over slots
      auto a_eps = add_scalar(t, a, T(1e-8));
      auto weights = div_colwise(t, a_eps, col_sums(t, a_eps));    // normalize over tokens
      auto updates = matmul(t, transpose(t, weights), vals);       // [K, D]
      auto gated = gru(t, updates, slots);
      slots = add(t, gated, mlp(t, mlp_norm(t, gated)));
      last_a = a;
    }
    return {slots, transpose(t, last_a)};
  }

  Result group(num::Tape<T>& t, const num::Var<T>& features, const num::Var<T>& slots0,
               int iterations) const {
    return run(t, project_inputs(t, features), slots0, iterations);
  }
};

}  // namespace slotkit
