#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "slotkit/errors.hpp"
#include "slotkit/features.hpp"
#include "slotkit/graph.hpp"
#include "slotkit/params.hpp"
#include "slotkit/rng.hpp"

using namespace slotkit;
namespace fs = std::filesystem;
using MatF = num::Mat<float>;

namespace {

fs::path scratch() {
  fs::path d = fs::temp_directory_path() / "slotkit_test_features";
  fs::create_directories(d);
  return d;
}

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& out, float x) {
  uint32_t bits;
  std::memcpy(&bits, &x, 4);
  put_u32(out, bits);
}

// header + n payload floats, with hooks to corrupt individual fields
std::string raw_file(const std::string& name, const std::string& magic, uint32_t version,
                     uint32_t rows, uint32_t cols, uint32_t d_feat,
                     const std::vector<float>& payload, int extra_bytes = 0) {
  fs::path p = scratch() / name;
  std::ofstream out(p, std::ios::binary);
  out.write(magic.data(), std::streamsize(magic.size()));
  put_u32(out, version);
  put_u32(out, rows);
  put_u32(out, cols);
  put_u32(out, d_feat);
  for (float x : payload) put_f32(out, x);
  for (int i = 0; i < extra_bytes; ++i) out.put('\0');
  return p.string();
}

MatF rand_mat(Rng& rng, int r, int c, float lo = -1.0f, float hi = 1.0f) {
  MatF m(r, c);
  for (auto& x : m.v) x = float(rng.uniform(double(lo), double(hi)));
  return m;
}

bool bitwise_equal(const MatF& a, const MatF& b) {
  return a.rows == b.rows && a.cols == b.cols &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("feature file round-trip is bitwise exact") {
  Rng rng(11);
  PatchFeatureMap map;
  map.grid_rows = 14;
  map.grid_cols = 14;
  map.tokens = rand_mat(rng, 196, 768);
  fs::path p = scratch() / "roundtrip.dnsr";
  save_features(p.string(), map);
  PatchFeatureMap back = load_features(p.string());
  CHECK(back.grid_rows == 14);
  CHECK(back.grid_cols == 14);
  CHECK(back.feature_dim() == 768);
  CHECK(back.source_tag == "precomputed");
  CHECK(bitwise_equal(back.tokens, map.tokens));
}

TEST_CASE("feature file small map decodes to expected values") {
  std::vector<float> payload = {0.0f, 1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f, 7.0f};
  std::string p = raw_file("small.dnsr", "DNSR", 1, 2, 2, 2, payload);
  PatchFeatureMap map = load_features(p);
  REQUIRE(map.n_tokens() == 4);
  REQUIRE(map.feature_dim() == 2);
  for (int n = 0; n < 4; ++n)
    for (int j = 0; j < 2; ++j) CHECK(map.tokens.at(n, j) == float(2 * n + j));
}

TEST_CASE("feature file malformed inputs raise typed errors") {
  std::vector<float> ok(8, 0.5f);
  CHECK_THROWS_AS(load_features((scratch() / "missing.dnsr").string()), DataError);
  CHECK_THROWS_AS(load_features(raw_file("badmagic.dnsr", "XXXX", 1, 2, 2, 2, ok)), FormatError);
  CHECK_THROWS_AS(load_features(raw_file("badver.dnsr", "DNSR", 2, 2, 2, 2, ok)), FormatError);
  CHECK_THROWS_AS(load_features(raw_file("zerorows.dnsr", "DNSR", 1, 0, 2, 2, ok)), FormatError);
  CHECK_THROWS_AS(load_features(raw_file("hugecols.dnsr", "DNSR", 1, 2, 70000, 2, ok)),
                  FormatError);
  std::vector<float> short_payload(7, 0.5f);
  CHECK_THROWS_AS(load_features(raw_file("trunc.dnsr", "DNSR", 1, 2, 2, 2, short_payload)),
                  FormatError);
  CHECK_THROWS_AS(load_features(raw_file("trail.dnsr", "DNSR", 1, 2, 2, 2, ok, 1)), FormatError);
  {
    fs::path p = scratch() / "header_only.dnsr";
    std::ofstream out(p, std::ios::binary);
    out.write("DNSR", 4);
    put_u32(out, 1);
  }
  CHECK_THROWS_AS(load_features((scratch() / "header_only.dnsr").string()), FormatError);
  std::vector<float> naned = ok;
  naned[3] = std::nanf("");
  CHECK_THROWS_AS(load_features(raw_file("nan.dnsr", "DNSR", 1, 2, 2, 2, naned)), DataError);
  std::vector<float> inf = ok;
  inf[0] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(load_features(raw_file("inf.dnsr", "DNSR", 1, 2, 2, 2, inf)), DataError);
}

TEST_CASE("toy encoder zero image yields the grid code exactly") {
  EncoderConfig cfg;
  cfg.provider = "toy-frozen";
  cfg.patch_size = 8;
  cfg.feature_dim = 16;
  cfg.seed = 5;
  ToyEncoder enc(cfg);
  MatF image(3, 32 * 32);  // zeros
  PatchFeatureMap out = enc.encode(image, 32, 32);
  REQUIRE(out.grid_rows == 4);
  REQUIRE(out.grid_cols == 4);
  MatF code = enc.grid_code(4, 4);
  CHECK(bitwise_equal(out.tokens, code));
}

TEST_CASE("toy encoder is deterministic for a fixed seed") {
  EncoderConfig cfg;
  cfg.patch_size = 4;
  cfg.feature_dim = 8;
  cfg.seed = 77;
  ToyEncoder a(cfg), b(cfg);
  CHECK(bitwise_equal(a.projection(), b.projection()));
  Rng rng(3);
  MatF image = rand_mat(rng, 3, 16 * 16, 0.0f, 1.0f);
  PatchFeatureMap fa = a.encode(image, 16, 16);
  PatchFeatureMap fb = b.encode(image, 16, 16);
  CHECK(bitwise_equal(fa.tokens, fb.tokens));
  EncoderConfig other = cfg;
  other.seed = 78;
  ToyEncoder c(other);
  CHECK_FALSE(bitwise_equal(c.projection(), a.projection()));
}

TEST_CASE("toy encoder matches a hand projection oracle") {
  EncoderConfig cfg;
  cfg.patch_size = 8;
  cfg.feature_dim = 4;
  cfg.seed = 9;
  ToyEncoder enc(cfg);
  Rng rng(4);
  const int h = 16, w = 16, p = 8;
  MatF image = rand_mat(rng, 3, h * w, 0.0f, 1.0f);
  PatchFeatureMap out = enc.encode(image, h, w);
  REQUIRE(out.n_tokens() == 4);

  const MatF& proj = enc.projection();
  REQUIRE(proj.rows == 3 * p * p);
  REQUIRE(proj.cols == 4);
  MatF code = enc.grid_code(2, 2);
  for (int br = 0; br < 2; ++br) {
    for (int bc = 0; bc < 2; ++bc) {
      int n = br * 2 + bc;
      std::vector<double> flat;
      for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < p; ++y)
          for (int x = 0; x < p; ++x)
            flat.push_back(double(image.at(ch, (br * p + y) * w + (bc * p + x))));
      for (int j = 0; j < 4; ++j) {
        double acc = 0.0;
        for (size_t i = 0; i < flat.size(); ++i) acc += flat[i] * double(proj.at(int(i), j));
        acc += double(code.at(n, j));
        CHECK(double(out.tokens.at(n, j)) == doctest::Approx(acc).epsilon(1e-5));
      }
    }
  }
}

TEST_CASE("toy encoder validates configuration and image shape") {
  EncoderConfig bad;
  bad.patch_size = 0;
  CHECK_THROWS_AS(ToyEncoder{bad}, ConfigError);
  bad.patch_size = 8;
  bad.feature_dim = 1;
  CHECK_THROWS_AS(ToyEncoder{bad}, ConfigError);
  EncoderConfig ok;
  ok.patch_size = 8;
  ok.feature_dim = 8;
  ToyEncoder enc(ok);
  MatF image(3, 20 * 20);
  CHECK_THROWS_AS(enc.encode(image, 20, 20), ConfigError);  // 20 not divisible by 8
}

TEST_CASE("target rescale identity and shape") {
  Rng rng(6);
  PatchFeatureMap map;
  map.grid_rows = 28;
  map.grid_cols = 28;
  map.tokens = rand_mat(rng, 28 * 28, 3);
  PatchFeatureMap same = rescale_target_map(map, 1.0);
  CHECK(bitwise_equal(same.tokens, map.tokens));
  PatchFeatureMap half = rescale_target_map(map, 0.5);
  CHECK(half.grid_rows == 14);
  CHECK(half.grid_cols == 14);
  CHECK(half.tokens.rows == 196);
  CHECK(half.tokens.cols == 3);
  CHECK(rescaled_extent(28, 0.5) == 14);
  CHECK(rescaled_extent(28, 1.0) == 28);
}

TEST_CASE("target rescale preserves constant maps") {
  PatchFeatureMap map;
  map.grid_rows = 6;
  map.grid_cols = 6;
  map.tokens = MatF(36, 2);
  for (int n = 0; n < 36; ++n) {
    map.tokens.at(n, 0) = 0.7f;
    map.tokens.at(n, 1) = -1.3f;
  }
  PatchFeatureMap out = rescale_target_map(map, 0.5);
  REQUIRE(out.n_tokens() == 9);
  for (int n = 0; n < 9; ++n) {
    CHECK(out.tokens.at(n, 0) == doctest::Approx(0.7).epsilon(1e-6));
    CHECK(out.tokens.at(n, 1) == doctest::Approx(-1.3).epsilon(1e-6));
  }
}

TEST_CASE("target rescale reproduces linear ramps away from edges") {
  // value(row r) = r; catmull-rom interpolates linear data exactly where all
  // four taps are interior
  PatchFeatureMap map;
  map.grid_rows = 8;
  map.grid_cols = 8;
  map.tokens = MatF(64, 1);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) map.tokens.at(r * 8 + c, 0) = float(r);
  PatchFeatureMap out = rescale_target_map(map, 0.5);
  REQUIRE(out.grid_rows == 4);
  for (int r = 1; r <= 2; ++r) {
    double src = (r + 0.5) / 0.5 - 0.5;
    for (int c = 1; c <= 2; ++c)
      CHECK(double(out.tokens.at(r * 4 + c, 0)) == doctest::Approx(src).epsilon(1e-5));
  }
}

TEST_CASE("target rescale rejects factors outside (0, 1]") {
  PatchFeatureMap map;
  map.grid_rows = 4;
  map.grid_cols = 4;
  map.tokens = MatF(16, 2);
  CHECK_THROWS_AS(rescale_target_map(map, 0.0), ArgumentError);
  CHECK_THROWS_AS(rescale_target_map(map, -0.5), ArgumentError);
  CHECK_THROWS_AS(rescale_target_map(map, 1.5), ArgumentError);
}

TEST_CASE("conv encoder is deterministic and trainable") {
  num::ParamStore<float> ps_a, ps_b;
  Rng ra(42), rb(42);
  ConvEncoder<float> a(ps_a, ra, 4, 8), b(ps_b, rb, 4, 8);
  REQUIRE(ps_a.count() == ps_b.count());
  for (size_t i = 0; i < ps_a.entries().size(); ++i)
    CHECK(bitwise_equal(ps_a.entries()[i].second->val, ps_b.entries()[i].second->val));

  Rng rng(7);
  MatF img = rand_mat(rng, 3, 8 * 8, 0.0f, 1.0f);
  auto run = [&](ConvEncoder<float>& enc) {
    num::Tape<float> t(false);
    auto image = num::make_leaf(img, false);
    return enc.encode(t, image, 8, 8)->val;
  };
  MatF ya = run(a);
  CHECK(bitwise_equal(ya, run(b)));
  REQUIRE(ya.rows == 4);
  REQUIRE(ya.cols == 8);

  // one gradient step moves the output
  {
    num::Tape<float> t;
    auto image = num::make_leaf(img, false);
    auto out = a.encode(t, image, 8, 8);
    MatF target(4, 8);
    auto loss = mse_loss(t, out, target);
    ps_a.zero_grads();
    t.backward(loss);
    bool any_nonzero = false;
    for (auto& e : ps_a.entries()) {
      REQUIRE(e.second->has_grad());
      for (float g : e.second->grad.v) any_nonzero = any_nonzero || g != 0.0f;
    }
    CHECK(any_nonzero);
    for (auto& e : ps_a.entries())
      for (size_t i = 0; i < e.second->val.size(); ++i)
        e.second->val.v[i] -= 0.1f * e.second->grad.v[i];
  }
  CHECK_FALSE(bitwise_equal(run(a), ya));
}

TEST_CASE("conv encoder gradients match finite differences") {
  num::ParamStore<double> ps;
  Rng rng(13);
  ConvEncoder<double> enc(ps, rng, 4, 4);
  num::Mat<double> img(3, 8 * 8);
  for (auto& x : img.v) x = rng.uniform(0.0, 1.0);
  auto image = num::make_leaf(img, true);
  num::Mat<double> target(4, 4);
  for (auto& x : target.v) x = rng.uniform(-1.0, 1.0);

  std::vector<num::Var<double>> leaves;
  for (auto& e : ps.entries()) leaves.push_back(e.second);
  leaves.push_back(image);

  for (auto& w : leaves) w->zero_grad();
  num::Tape<double> t;
  auto loss = mse_loss(t, enc.encode(t, image, 8, 8), target);
  t.backward(loss);
  for (auto& w : leaves) {
    REQUIRE(w->has_grad());
    for (size_t i = 0; i < w->val.size(); i += 3) {  // samples every third element
      double save = w->val.v[i];
      double h = 1e-6 * std::max(1.0, std::abs(save));
      w->val.v[i] = save + h;
      num::Tape<double> tp(false);
      double fp = mse_loss(tp, enc.encode(tp, image, 8, 8), target)->val.at(0, 0);
      w->val.v[i] = save - h;
      num::Tape<double> tm(false);
      double fm = mse_loss(tm, enc.encode(tm, image, 8, 8), target)->val.at(0, 0);
      w->val.v[i] = save;
      double fd = (fp - fm) / (2.0 * h);
      double an = w->grad.v[i];
      double err = std::abs(fd - an);
      if (err > 1e-9) CHECK(err / std::max({1e-8, std::abs(fd), std::abs(an)}) <= 1e-4);
    }
  }
}

TEST_CASE("conv encoder rejects unusable patch sizes") {
  num::ParamStore<float> ps;
  Rng rng(1);
  CHECK_THROWS_AS(ConvEncoder<float>(ps, rng, 3, 8), ConfigError);
  CHECK_THROWS_AS(ConvEncoder<float>(ps, rng, 1, 8), ConfigError);
  num::ParamStore<float> ps2;
  ConvEncoder<float> enc(ps2, rng, 4, 8);
  num::Tape<float> t(false);
  auto image = num::make_leaf(MatF(3, 10 * 10), false);
  CHECK_THROWS_AS(enc.encode(t, image, 10, 10), ConfigError);
}
