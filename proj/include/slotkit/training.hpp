#pragma once
// Optimization of grouping + decoder parameters against frozen targets:
// schedule, Adam with global-norm clipping, seeded batch order, and
// bitwise-restoring checkpoints.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "slotkit/data.hpp"
#include "slotkit/model.hpp"

namespace slotkit {

struct TrainConfig {
  int steps = 5000;
  int batch_size = 64;
  double peak_lr = 4e-4;
  int warmup_steps = 10000;
  int decay_half_life = 100000;
  double grad_clip_norm = 1.0;
  int k = 6;  // slots
  int t = 3;  // attention iterations
  std::string decoder = "mlp";  // mlp | transformer | pixel
  double target_scale = 1.0;
  uint64_t seed = 0;

  void validate() const;  // ConfigError on violation
};

// peak_lr * min(1, step/warmup) * 2^(-step/half_life); warmup and decay
// apply concurrently
double lr_schedule(int64_t step, const TrainConfig& cfg);

struct StepStats {
  uint64_t step = 0;  // index of the step that ran (0-based)
  double lr = 0.0;
  double loss = 0.0;       // batch-mean loss
  double grad_norm = 0.0;  // global norm before clipping
};

class Trainer {
 public:
  Trainer(const TrainConfig& tc, const ModelSpec& spec, const ProviderConfig& pc,
          const DatasetReader& data);

  SlotModel<float>& model() { return model_; }
  const SlotModel<float>& model() const { return model_; }
  const TrainConfig& config() const { return cfg_; }
  uint64_t step() const { return step_; }

  // training batch for a given step; pure function of (seed, step)
  std::vector<int> batch_indices(uint64_t step) const;

  // one forward/backward/clip/Adam pass; increments the step counter
  StepStats train_step();

  // steps up to cfg.steps (resume-aware); on_step runs after each step;
  // checkpoint_every > 0 saves to checkpoint_dir periodically
  void run(const std::function<void(const StepStats&)>& on_step = {}, int checkpoint_every = 0,
           const std::string& checkpoint_dir = "");

  void save(const std::string& dir) const;
  // steps_override >= 0 replaces the saved step target (extends or shortens the run)
  static Trainer load(const std::string& dir, const DatasetReader& data, int steps_override = -1);

 private:
  TrainConfig cfg_;
  ModelSpec spec_;
  ProviderConfig prov_;
  const DatasetReader* data_;
  SlotModel<float> model_;
  std::vector<int> train_idx_;
  std::vector<float> m_, v_;  // Adam moments, parameter registration order
  uint64_t step_ = 0;
};

}  // namespace slotkit
