#include "slotkit/training.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "slotkit/errors.hpp"

namespace fs = std::filesystem;

namespace slotkit {

namespace {

constexpr uint64_t kTagEpoch = 0x65706f6368ULL;  // per-epoch batch order

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, uint64_t v) {
  put_u32(out, uint32_t(v));
  put_u32(out, uint32_t(v >> 32));
}

bool get_u32(std::istream& in, uint32_t& v) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
  v = uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
  return true;
}

bool get_u64(std::istream& in, uint64_t& v) {
  uint32_t lo, hi;
  if (!get_u32(in, lo) || !get_u32(in, hi)) return false;
  v = uint64_t(lo) | uint64_t(hi) << 32;
  return true;
}

void put_f32(std::ostream& out, const float* p, size_t n) {
  for (size_t i = 0; i < n; ++i) put_u32(out, std::bit_cast<uint32_t>(p[i]));
}

bool get_f32(std::istream& in, float* p, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    uint32_t bits;
    if (!get_u32(in, bits)) return false;
    p[i] = std::bit_cast<float>(bits);
  }
  return true;
}

}  // namespace

void TrainConfig::validate() const {
  if (steps < 0) throw ConfigError("train: steps must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (warmup_steps < 1) throw ConfigError("train: warmup_steps must be >= 1");
  if (decay_half_life < 1) throw ConfigError("train: decay_half_life must be >= 1");
  if (!(peak_lr > 0.0)) throw ConfigError("train: peak_lr must be > 0");
  if (!(grad_clip_norm > 0.0)) throw ConfigError("train: grad_clip_norm must be > 0");
  if (k < 1) throw ConfigError("train: k must be >= 1");
  if (t < 1) throw ConfigError("train: t must be >= 1");
  if (decoder != "mlp" && decoder != "transformer" && decoder != "pixel")
    throw ConfigError("train: decoder must be one of mlp, transformer, pixel");
  if (!(target_scale > 0.0) || target_scale > 1.0)
    throw ConfigError("train: target_scale must be in (0, 1]");
}

double lr_schedule(int64_t step, const TrainConfig& cfg) {
  if (step < 0) throw ArgumentError("lr_schedule: step must be >= 0");
  double warm = std::min(1.0, double(step) / double(cfg.warmup_steps));
  double decay = std::exp2(-double(step) / double(cfg.decay_half_life));
  return cfg.peak_lr * warm * decay;
}

namespace {

ModelConfig to_model_config(const TrainConfig& tc, const ModelSpec& spec,
                            const ProviderConfig& pc) {
  tc.validate();
  ModelConfig mc;
  mc.n_slots = tc.k;
  mc.iterations = tc.t;
  mc.decoder = tc.decoder;
  mc.target_scale = tc.target_scale;
  mc.seed = tc.seed;
  mc.spec = spec;
  mc.provider = pc;
  return mc;
}

}  // namespace

Trainer::Trainer(const TrainConfig& tc, const ModelSpec& spec, const ProviderConfig& pc,
                 const DatasetReader& data)
    : cfg_(tc),
      spec_(spec),
      prov_(pc),
      data_(&data),
      model_(to_model_config(tc, spec, pc), data.manifest().image_h, data.manifest().image_w,
             data.manifest().grid_rows, data.manifest().grid_cols) {
  const DatasetManifest& man = data.manifest();
  if ((pc.provider == "precomputed" || pc.resolved_target() == "precomputed") &&
      man.feature_dim != pc.feature_dim)
    throw ConfigError("dataset feature_dim " + std::to_string(man.feature_dim) +
                      " does not match configured feature_dim " +
                      std::to_string(pc.feature_dim));
  train_idx_ = data.split_indices("train");
  if (train_idx_.empty()) throw ConfigError("dataset has no training samples");
  if (int(train_idx_.size()) < cfg_.batch_size)
    throw ConfigError("batch_size exceeds the training split");
  m_.assign(model_.params.total_size(), 0.0f);
  v_.assign(model_.params.total_size(), 0.0f);
}

std::vector<int> Trainer::batch_indices(uint64_t step) const {
  const uint64_t per_epoch = train_idx_.size() / uint64_t(cfg_.batch_size);  // drop last
  const uint64_t epoch = step / per_epoch;
  const uint64_t offset = (step % per_epoch) * uint64_t(cfg_.batch_size);
  Rng rng(derive_seed(cfg_.seed, kTagEpoch, epoch));
  std::vector<int> perm;
  rng.permutation(perm, int(train_idx_.size()));
  std::vector<int> batch(size_t(cfg_.batch_size));
  for (int i = 0; i < cfg_.batch_size; ++i)
    batch[size_t(i)] = train_idx_[size_t(perm[size_t(offset + uint64_t(i))])];
  return batch;
}

StepStats Trainer::train_step() {
  const std::vector<int> batch = batch_indices(step_);
  model_.params.zero_grads();

  const float inv_b = 1.0f / float(batch.size());
  double loss_sum = 0.0;
  for (size_t i = 0; i < batch.size(); ++i) {
    SceneSample sample = data_->load(batch[i]);
    num::Tape<float> tape;
    num::Mat<float> eps =
        model_.sample_eps(cfg_.seed, step_ * uint64_t(cfg_.batch_size) + uint64_t(i));
    auto fwd = model_.forward(tape, sample, eps);
    double lv = double(fwd.loss->val.at(0, 0));
    if (!std::isfinite(lv))
      throw NumericalError("non-finite loss at step " + std::to_string(step_) + ", sample " +
                           sample.id);
    loss_sum += lv;
    tape.backward(num::scale(tape, fwd.loss, inv_b));
  }

  auto& entries = model_.params.entries();
  double sq = 0.0;
  for (auto& e : entries) {
    e.second->ensure_grad();  // grad-free parameters contribute zeros
    sq += kern::fk().sum_sq(e.second->grad.data(), e.second->grad.size());
  }
  const double grad_norm = std::sqrt(sq);
  if (!std::isfinite(grad_norm))
    throw NumericalError("non-finite gradient norm at step " + std::to_string(step_));
  if (grad_norm > cfg_.grad_clip_norm) {
    const float s = float(cfg_.grad_clip_norm / grad_norm);
    for (auto& e : entries) kern::fk().scale(s, e.second->grad.data(), e.second->grad.size());
  }

  const double lr = lr_schedule(int64_t(step_), cfg_);
  const double t_adam = double(step_ + 1);
  const float bc1 = float(1.0 / (1.0 - std::pow(kBeta1, t_adam)));
  const float bc2 = float(1.0 / (1.0 - std::pow(kBeta2, t_adam)));
  size_t off = 0;
  for (auto& e : entries) {
    const size_t n = e.second->val.size();
    kern::fk().adam(e.second->val.data(), m_.data() + off, v_.data() + off,
                    e.second->grad.data(), n, float(lr), float(kBeta1), float(kBeta2),
                    float(kAdamEps), bc1, bc2);
    off += n;
  }

  StepStats st;
  st.step = step_;
  st.lr = lr;
  st.loss = loss_sum / double(batch.size());
  st.grad_norm = grad_norm;
  ++step_;
  return st;
}

void Trainer::run(const std::function<void(const StepStats&)>& on_step, int checkpoint_every,
                  const std::string& checkpoint_dir) {
  while (step_ < uint64_t(cfg_.steps)) {
    StepStats st = train_step();
    if (on_step) on_step(st);
    if (checkpoint_every > 0 && !checkpoint_dir.empty() && step_ % uint64_t(checkpoint_every) == 0)
      save(checkpoint_dir);
  }
}

void Trainer::save(const std::string& dir) const {
  fs::create_directories(dir);

  nlohmann::json j;
  j["format_version"] = 1;
  j["train"] = {{"steps", cfg_.steps},
                {"batch_size", cfg_.batch_size},
                {"peak_lr", cfg_.peak_lr},
                {"warmup_steps", cfg_.warmup_steps},
                {"decay_half_life", cfg_.decay_half_life},
                {"grad_clip_norm", cfg_.grad_clip_norm},
                {"k", cfg_.k},
                {"t", cfg_.t},
                {"decoder", cfg_.decoder},
                {"target_scale", cfg_.target_scale},
                {"seed", cfg_.seed}};
  j["model"] = {{"d_slots", spec_.d_slots},       {"mlp_hidden", spec_.mlp_hidden},
                {"tf_blocks", spec_.tf_blocks},   {"tf_heads", spec_.tf_heads},
                {"pixel_base", spec_.pixel_base}, {"pixel_channels", spec_.pixel_channels}};
  j["encoder"] = {{"provider", prov_.provider},
                  {"target", prov_.target},
                  {"patch_size", prov_.patch_size},
                  {"feature_dim", prov_.feature_dim},
                  {"seed", prov_.seed}};
  std::ofstream cj(fs::path(dir) / "config.json");
  if (!cj) throw DataError("cannot write checkpoint config");
  cj << j.dump(2) << "\n";

  nlohmann::json pm;
  pm["format"] = "f32-le";
  nlohmann::json tensors = nlohmann::json::array();
  std::ofstream pb(fs::path(dir) / "params.bin", std::ios::binary);
  if (!pb) throw DataError("cannot write params.bin");
  size_t off = 0;
  for (auto& e : model_.params.entries()) {
    const num::Mat<float>& mt = e.second->val;
    tensors.push_back({{"name", e.first},
                       {"shape", {mt.rows, mt.cols}},
                       {"offset", off * sizeof(float)}});
    put_f32(pb, mt.data(), mt.size());
    off += mt.size();
  }
  pm["tensors"] = tensors;
  std::ofstream pj(fs::path(dir) / "params.json");
  if (!pj) throw DataError("cannot write params.json");
  pj << pm.dump(2) << "\n";

  std::ofstream ob(fs::path(dir) / "optim.bin", std::ios::binary);
  if (!ob) throw DataError("cannot write optim.bin");
  ob.write("SKOP", 4);
  put_u32(ob, 1);
  put_u64(ob, step_);
  put_f32(ob, m_.data(), m_.size());
  put_f32(ob, v_.data(), v_.size());

  std::ofstream rj(fs::path(dir) / "rng.json");
  if (!rj) throw DataError("cannot write rng.json");
  rj << nlohmann::json{{"seed", cfg_.seed}}.dump() << "\n";
}

Trainer Trainer::load(const std::string& dir, const DatasetReader& data, int steps_override) {
  std::ifstream cj(fs::path(dir) / "config.json");
  if (!cj) throw DataError("cannot open checkpoint config: " + dir);
  nlohmann::json j;
  try {
    cj >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint config parse error: " + std::string(e.what()));
  }
  TrainConfig tc;
  ModelSpec spec;
  ProviderConfig pc;
  try {
    if (j.at("format_version").get<int>() != 1)
      throw FormatError("checkpoint: unsupported format_version");
    const auto& tr = j.at("train");
    tc.steps = tr.at("steps").get<int>();
    tc.batch_size = tr.at("batch_size").get<int>();
    tc.peak_lr = tr.at("peak_lr").get<double>();
    tc.warmup_steps = tr.at("warmup_steps").get<int>();
    tc.decay_half_life = tr.at("decay_half_life").get<int>();
    tc.grad_clip_norm = tr.at("grad_clip_norm").get<double>();
    tc.k = tr.at("k").get<int>();
    tc.t = tr.at("t").get<int>();
    tc.decoder = tr.at("decoder").get<std::string>();
    tc.target_scale = tr.at("target_scale").get<double>();
    tc.seed = tr.at("seed").get<uint64_t>();
    const auto& mo = j.at("model");
    spec.d_slots = mo.at("d_slots").get<int>();
    spec.mlp_hidden = mo.at("mlp_hidden").get<int>();
    spec.tf_blocks = mo.at("tf_blocks").get<int>();
    spec.tf_heads = mo.at("tf_heads").get<int>();
    spec.pixel_base = mo.at("pixel_base").get<int>();
    spec.pixel_channels = mo.at("pixel_channels").get<int>();
    const auto& en = j.at("encoder");
    pc.provider = en.at("provider").get<std::string>();
    pc.target = en.at("target").get<std::string>();
    pc.patch_size = en.at("patch_size").get<int>();
    pc.feature_dim = en.at("feature_dim").get<int>();
    pc.seed = en.at("seed").get<uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint config field error: " + std::string(e.what()));
  }
  if (steps_override >= 0) tc.steps = steps_override;

  Trainer tr(tc, spec, pc, data);

  std::ifstream pj(fs::path(dir) / "params.json");
  if (!pj) throw DataError("cannot open params.json: " + dir);
  nlohmann::json pm;
  try {
    pj >> pm;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("params.json parse error: " + std::string(e.what()));
  }
  std::ifstream pb(fs::path(dir) / "params.bin", std::ios::binary);
  if (!pb) throw DataError("cannot open params.bin: " + dir);
  try {
    if (pm.at("format").get<std::string>() != "f32-le")
      throw FormatError("params.json: unsupported tensor format");
    const auto& tensors = pm.at("tensors");
    if (tensors.size() != tr.model_.params.count())
      throw FormatError("params.json: tensor count does not match the model");
    size_t off = 0;
    for (size_t i = 0; i < tensors.size(); ++i) {
      const auto& te = tensors[i];
      auto& entry = tr.model_.params.entries()[i];
      if (te.at("name").get<std::string>() != entry.first)
        throw FormatError("params.json: tensor " + std::to_string(i) + " name mismatch");
      num::Mat<float>& mt = entry.second->val;
      if (te.at("shape").at(0).get<int>() != mt.rows ||
          te.at("shape").at(1).get<int>() != mt.cols)
        throw FormatError("params.json: shape mismatch for " + entry.first);
      if (te.at("offset").get<size_t>() != off * sizeof(float))
        throw FormatError("params.json: offset mismatch for " + entry.first);
      if (!get_f32(pb, mt.data(), mt.size()))
        throw FormatError("params.bin: truncated at " + entry.first);
      off += mt.size();
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("params.json field error: " + std::string(e.what()));
  }
  if (pb.peek() != std::char_traits<char>::eof())
    throw FormatError("params.bin: trailing bytes");

  std::ifstream ob(fs::path(dir) / "optim.bin", std::ios::binary);
  if (!ob) throw DataError("cannot open optim.bin: " + dir);
  char magic[4];
  if (!ob.read(magic, 4) || std::memcmp(magic, "SKOP", 4) != 0)
    throw FormatError("optim.bin: bad magic");
  uint32_t version;
  if (!get_u32(ob, version)) throw FormatError("optim.bin: truncated header");
  if (version != 1) throw FormatError("optim.bin: unsupported version");
  if (!get_u64(ob, tr.step_)) throw FormatError("optim.bin: truncated step");
  if (!get_f32(ob, tr.m_.data(), tr.m_.size())) throw FormatError("optim.bin: truncated m blob");
  if (!get_f32(ob, tr.v_.data(), tr.v_.size())) throw FormatError("optim.bin: truncated v blob");
  if (ob.peek() != std::char_traits<char>::eof())
    throw FormatError("optim.bin: trailing bytes");

  std::ifstream rj(fs::path(dir) / "rng.json");
  if (!rj) throw DataError("cannot open rng.json: " + dir);
  nlohmann::json rng_j;
  try {
    rj >> rng_j;
    if (rng_j.at("seed").get<uint64_t>() != tc.seed)
      throw FormatError("rng.json: seed does not match checkpoint config");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("rng.json field error: " + std::string(e.what()));
  }

  return tr;
}

}  // namespace slotkit
