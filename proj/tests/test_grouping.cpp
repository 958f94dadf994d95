#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "slotkit/errors.hpp"
#include "slotkit/grouping.hpp"
#include "slotkit/rng.hpp"

using namespace slotkit;
using MatD = num::Mat<double>;
using TapeD = num::Tape<double>;

namespace {

template <class T>
num::Mat<T> randm(Rng& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
  num::Mat<T> m(r, c);
  for (auto& x : m.v) x = T(rng.uniform(lo, hi));
  return m;
}

template <class T>
bool bitwise_equal(const num::Mat<T>& a, const num::Mat<T>& b) {
  return a.rows == b.rows && a.cols == b.cols &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

double ref_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("slot init collapses to mu when sigma is zeroed") {
  num::ParamStore<double> ps;
  Rng rng(1);
  GroupingNet<double> net(ps, rng, 4, 3);
  Rng noise(9);
  MatD slots = net.sample_slots(noise, 5, true);
  REQUIRE(slots.rows == 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j) CHECK(slots.at(i, j) == net.mu->val.at(0, j));
}

TEST_CASE("slot init is deterministic for a fixed seed") {
  num::ParamStore<double> ps;
  Rng rng(2);
  GroupingNet<double> net(ps, rng, 4, 3);
  Rng n1(123), n2(123);
  CHECK(bitwise_equal(net.sample_slots(n1, 4), net.sample_slots(n2, 4)));
  Rng e1(123), e2(123);
  CHECK(bitwise_equal(net.sample_eps(e1, 4), net.sample_eps(e2, 4)));
}

TEST_CASE("slot init matches its distribution parameters in the large-K limit") {
  num::ParamStore<double> ps;
  Rng rng(3);
  GroupingNet<double> net(ps, rng, 4, 4);
  for (int j = 0; j < 4; ++j) {
    net.mu->val.at(0, j) = 0.0;
    net.log_sigma->val.at(0, j) = 0.0;  // sigma = 1
  }
  Rng noise(77);
  MatD slots = net.sample_slots(noise, 1000);
  for (int j = 0; j < 4; ++j) {
    double mean = 0.0;
    for (int i = 0; i < 1000; ++i) mean += slots.at(i, j);
    mean /= 1000.0;
    double var = 0.0;
    for (int i = 0; i < 1000; ++i) var += (slots.at(i, j) - mean) * (slots.at(i, j) - mean);
    var /= 1000.0;
    CHECK(std::abs(mean) < 0.1);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 0.1);
  }
}

TEST_CASE("graph slot init equals the sampled arithmetic") {
  num::ParamStore<double> ps;
  Rng rng(4);
  GroupingNet<double> net(ps, rng, 4, 3);
  for (int j = 0; j < 3; ++j) net.log_sigma->val.at(0, j) = 0.1 * (j + 1);
  Rng n1(55), n2(55);
  MatD eps = net.sample_eps(n1, 4);
  MatD direct = net.sample_slots(n2, 4);
  TapeD t(false);
  MatD graph = net.slots_init(t, eps)->val;
  REQUIRE(graph.rows == 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(graph.at(i, j) == doctest::Approx(direct.at(i, j)).epsilon(1e-15));
}

TEST_CASE("single slot receives full attention") {
  num::ParamStore<float> ps;
  Rng rng(5);
  GroupingNet<float> net(ps, rng, 3, 2);
  num::Tape<float> t(false);
  auto feats = t.make(randm<float>(rng, 5, 3), false);
  auto slots0 = t.make(randm<float>(rng, 1, 2), false);
  auto res = net.group(t, feats, slots0, 3);
  REQUIRE(res.attn->val.rows == 1);
  REQUIRE(res.attn->val.cols == 5);
  for (int n = 0; n < 5; ++n) CHECK(res.attn->val.at(0, n) == 1.0f);
}

TEST_CASE("attention columns form a simplex over slots") {
  num::ParamStore<float> ps;
  Rng rng(6);
  GroupingNet<float> net(ps, rng, 5, 4);
  num::Tape<float> t(false);
  auto feats = t.make(randm<float>(rng, 9, 5), false);
  Rng noise(15);
  auto slots0 = t.make(net.sample_slots(noise, 3), false);
  auto res = net.group(t, feats, slots0, 3);
  REQUIRE(res.attn->val.rows == 3);
  REQUIRE(res.attn->val.cols == 9);
  for (int n = 0; n < 9; ++n) {
    double s = 0.0;
    for (int k = 0; k < 3; ++k) {
      float a = res.attn->val.at(k, n);
      CHECK(a >= 0.0f);
      s += double(a);
    }
    CHECK(std::abs(s - 1.0) <= 1e-6);
  }
}

TEST_CASE("permuting initial slots permutes outputs bitwise") {
  num::ParamStore<float> ps;
  Rng rng(7);
  GroupingNet<float> net(ps, rng, 5, 6);
  num::Mat<float> feats_m = randm<float>(rng, 7, 5);
  Rng noise(31);
  num::Mat<float> slots_m = net.sample_slots(noise, 4);
  const std::vector<int> perm = {2, 0, 3, 1};
  num::Mat<float> slots_p(4, 6);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 6; ++j) slots_p.at(i, j) = slots_m.at(perm[i], j);

  num::Tape<float> t(false);
  auto base = net.group(t, t.make(num::Mat<float>(feats_m), false),
                        t.make(std::move(slots_m), false), 3);
  num::Tape<float> t2(false);
  auto permuted = net.group(t2, t2.make(num::Mat<float>(feats_m), false),
                            t2.make(std::move(slots_p), false), 3);

  for (int i = 0; i < 4; ++i) {
    CHECK(std::memcmp(permuted.slots->val.row(i), base.slots->val.row(perm[i]),
                      6 * sizeof(float)) == 0);
    CHECK(std::memcmp(permuted.attn->val.row(i), base.attn->val.row(perm[i]),
                      7 * sizeof(float)) == 0);
  }
}

TEST_CASE("identical tokens draw identical attention columns") {
  num::ParamStore<float> ps;
  Rng rng(8);
  GroupingNet<float> net(ps, rng, 4, 3);
  num::Mat<float> feats_m(6, 4);
  num::Mat<float> one_row = randm<float>(rng, 1, 4);
  for (int n = 0; n < 6; ++n)
    for (int j = 0; j < 4; ++j) feats_m.at(n, j) = one_row.at(0, j);
  Rng noise(3);
  num::Tape<float> t(false);
  auto res = net.group(t, t.make(std::move(feats_m), false),
                       t.make(net.sample_slots(noise, 3), false), 2);
  for (int k = 0; k < 3; ++k)
    for (int n = 1; n < 6; ++n) CHECK(res.attn->val.at(k, n) == res.attn->val.at(k, 0));
}

TEST_CASE("one iteration matches a scalar reference") {
  num::ParamStore<double> ps;
  Rng rng(9);
  GroupingNet<double> net(ps, rng, 1, 1);
  // overwrite every parameter with hand-picked scalars
  int idx = 0;
  for (auto& e : ps.entries())
    for (auto& x : e.second->val.v) x = 0.05 * (++idx % 13) - 0.3;

  const double x1 = 0.4, x2 = -0.9;   // projected inputs
  const double s1 = 0.25, s2 = -0.6;  // initial slots
  MatD proj_m(2, 1);
  proj_m.at(0, 0) = x1;
  proj_m.at(1, 0) = x2;
  MatD slots_m(2, 1);
  slots_m.at(0, 0) = s1;
  slots_m.at(1, 0) = s2;

  TapeD t(false);
  auto res = net.run(t, t.make(std::move(proj_m), false), t.make(std::move(slots_m), false), 1);

  // reference: the same update written out in scalars
  auto val = [&](const num::Var<double>& v) { return v->val.at(0, 0); };
  const double kw = val(net.k.w), vw = val(net.v.w), qw = val(net.q.w);
  const double sn_b = val(net.slot_norm.bias);  // dim-1 layer norm outputs its bias
  double keys[2] = {kw * x1, kw * x2};
  double vals[2] = {vw * x1, vw * x2};
  double query = qw * sn_b;  // identical for both slots
  double slots_in[2] = {s1, s2};
  double attn_ref[2][2];
  double updates[2];
  for (int k = 0; k < 2; ++k) {
    // softmax over slots with equal logits per token -> exactly 1/2
    for (int n = 0; n < 2; ++n) attn_ref[k][n] = 0.5;
  }
  for (int k = 0; k < 2; ++k) {
    double w[2];
    double col = attn_ref[k][0] + 1e-8 + attn_ref[k][1] + 1e-8;
    for (int n = 0; n < 2; ++n) w[n] = (attn_ref[k][n] + 1e-8) / col;
    updates[k] = w[0] * vals[0] + w[1] * vals[1];
  }
  for (int k = 0; k < 2; ++k) {
    double u = updates[k], h = slots_in[k];
    double r = ref_sigmoid(u * val(net.gru.w_ir) + val(net.gru.b_ir) + h * val(net.gru.u_hr) +
                           val(net.gru.b_hr));
    double z = ref_sigmoid(u * val(net.gru.w_iz) + val(net.gru.b_iz) + h * val(net.gru.u_hz) +
                           val(net.gru.b_hz));
    double nn = std::tanh(u * val(net.gru.w_in) + val(net.gru.b_in) +
                          r * (h * val(net.gru.u_hn) + val(net.gru.b_hn)));
    double gated = (1.0 - z) * nn + z * h;
    // dim-1 layer norm collapses to its bias, then the residual mlp
    double mn_b = val(net.mlp_norm.bias);
    double hidden[4];
    for (int j = 0; j < 4; ++j)
      hidden[j] = std::max(0.0, mn_b * net.mlp.l1.w->val.at(0, j) + net.mlp.l1.b->val.at(0, j));
    double res_v = val(net.mlp.l2.b);
    for (int j = 0; j < 4; ++j) res_v += hidden[j] * net.mlp.l2.w->val.at(j, 0);
    double expected = gated + res_v;
    CHECK(res.slots->val.at(k, 0) == doctest::Approx(expected).epsilon(1e-12));
    for (int n = 0; n < 2; ++n)
      CHECK(res.attn->val.at(k, n) == doctest::Approx(attn_ref[k][n]).epsilon(1e-12));
  }
  (void)query;
  (void)keys;
}

TEST_CASE("grouping gradients match finite differences") {
  num::ParamStore<double> ps;
  Rng rng(10);
  GroupingNet<double> net(ps, rng, 4, 3);
  MatD feats = randm<double>(rng, 4, 4);
  Rng noise(21);
  MatD eps = net.sample_eps(noise, 2);
  MatD target = randm<double>(rng, 2, 3);

  auto build = [&](TapeD& t) {
    auto f = t.make(MatD(feats), false);
    auto slots0 = net.slots_init(t, eps);
    auto res = net.group(t, f, slots0, 2);
    return mse_loss(t, res.slots, target);
  };

  std::vector<num::Var<double>> leaves;
  for (auto& e : ps.entries()) leaves.push_back(e.second);
  for (auto& w : leaves) w->zero_grad();
  TapeD t;
  auto loss = build(t);
  t.backward(loss);
  for (auto& w : leaves) {
    REQUIRE(w->has_grad());
    for (size_t i = 0; i < w->val.size(); ++i) {
      double save = w->val.v[i];
      double h = 1e-6 * std::max(1.0, std::abs(save));
      w->val.v[i] = save + h;
      TapeD tp(false);
      double fp = build(tp)->val.at(0, 0);
      w->val.v[i] = save - h;
      TapeD tm(false);
      double fm = build(tm)->val.at(0, 0);
      w->val.v[i] = save;
      double fd = (fp - fm) / (2.0 * h);
      double an = w->grad.v[i];
      double err = std::abs(fd - an);
      if (err > 1e-9) CHECK(err / std::max({1e-8, std::abs(fd), std::abs(an)}) <= 1e-4);
    }
  }
}

TEST_CASE("grouping validates its arguments") {
  num::ParamStore<float> ps;
  Rng rng(11);
  GroupingNet<float> net(ps, rng, 4, 3);
  num::Tape<float> t(false);
  auto feats = t.make(randm<float>(rng, 4, 4), false);
  auto slots0 = t.make(randm<float>(rng, 2, 3), false);
  CHECK_THROWS_AS(net.group(t, feats, slots0, 0), ArgumentError);
  Rng noise(1);
  CHECK_THROWS_AS(net.sample_slots(noise, 0), ArgumentError);
  CHECK_THROWS_AS(net.sample_eps(noise, 0), ArgumentError);
  auto bad_feats = t.make(randm<float>(rng, 4, 5), false);
  CHECK_THROWS_AS(net.group(t, bad_feats, slots0, 2), ArgumentError);
}
