// slotkit command line: dataset synthesis, training, task evaluation, and the
// model-free block baseline. Configuration precedence: flags > --config file
// > built-in defaults.

#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "slotkit/data.hpp"
#include "slotkit/errors.hpp"
#include "slotkit/eval.hpp"
#include "slotkit/training.hpp"

using nlohmann::json;
using namespace slotkit;

namespace {

bool verbose() {
  const char* v = std::getenv("SLOTKIT_VERBOSE");
  return v == nullptr || std::string(v) != "0";
}

void note(const std::string& msg) {
  if (verbose()) std::cerr << msg << "\n";
}

// config-file fallback for options the user did not pass on the command line;
// json keys are the long option names with dashes turned into underscores
class FileConfig {
 public:
  template <class T>
  void bind(CLI::Option* opt, T* target) {
    entries_.push_back({key_of(opt), opt, [target](const json& v) { *target = v.get<T>(); }});
  }

  void apply(const std::string& path) const {
    std::ifstream in(path);
    if (!in) throw ArgumentError("cannot open config file " + path);
    json j;
    try {
      in >> j;
    } catch (const json::parse_error& e) {
      throw FormatError("config file " + path + ": " + e.what());
    }
    if (!j.is_object()) throw FormatError("config file " + path + " must hold a JSON object");
    std::map<std::string, const Entry*> by_key;
    for (const Entry& e : entries_) by_key[e.key] = &e;
    for (auto& [k, v] : j.items()) {
      auto it = by_key.find(k);
      if (it == by_key.end()) throw ConfigError("unknown config key '" + k + "' in " + path);
      if (it->second->opt->count() > 0) continue;  // flag wins
      try {
        it->second->set(v);
      } catch (const json::exception&) {
        throw ConfigError("config key '" + k + "' in " + path + " has the wrong type");
      }
    }
  }

 private:
  struct Entry {
    std::string key;
    CLI::Option* opt;
    std::function<void(const json&)> set;
  };

  static std::string key_of(CLI::Option* opt) {
    std::string k = opt->get_lnames().front();
    for (char& c : k)
      if (c == '-') c = '_';
    return k;
  }

  std::vector<Entry> entries_;
};

template <class T>
CLI::Option* opt(CLI::App& cmd, FileConfig& fc, const std::string& flag, T& target,
                 const std::string& desc) {
  CLI::Option* o = cmd.add_option(flag, target, desc);
  fc.bind(o, &target);
  return o;
}

void require_path(const std::string& value, const char* flag) {
  if (value.empty()) throw ArgumentError(std::string("missing required option ") + flag);
}

void emit_report(MetricsReport& rep, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << rep.to_json().dump(2) << "\n";
  } else {
    rep.write(out_path);
    note("report written to " + out_path);
  }
}

struct EvalFlags {
  EvalConfig ec;
  std::string data_dir, out_path, config_path;

  void add_common(CLI::App& cmd, FileConfig& fc) {
    opt(cmd, fc, "--data", data_dir, "dataset directory");
    opt(cmd, fc, "--task", ec.task, "discovery | localization | segmentation");
    opt(cmd, fc, "--split", ec.split, "dataset split to score");
    opt(cmd, fc, "--clusters", ec.clusters, "k-means clusters; 0 = dataset class count");
    opt(cmd, fc, "--restarts", ec.restarts, "k-means restarts");
    opt(cmd, fc, "--repeats", ec.repeats, "segmentation inference repeats");
    opt(cmd, fc, "--iou-threshold", ec.iou_threshold, "localization IoU threshold");
    opt(cmd, fc, "--seed", ec.seed, "evaluation seed (slot noise, clustering)");
    opt(cmd, fc, "--max-samples", ec.max_samples, "cap on scored samples; 0 = whole split");
    opt(cmd, fc, "--overlay-dir", ec.overlay_dir, "write hard-mask overlay PNGs here");
    opt(cmd, fc, "--out", out_path, "report path; default prints to stdout");
    cmd.add_option("--config", config_path, "JSON config file (flags win)");
  }
};

void setup_synth(CLI::App& app) {
  auto* cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  auto fc = std::make_shared<FileConfig>();
  auto out = std::make_shared<std::string>();
  auto config_path = std::make_shared<std::string>();
  auto sc = std::make_shared<SynthConfig>();
  opt(*cmd, *fc, "--out", *out, "dataset directory");
  cmd->add_option("--config", *config_path, "JSON config file (flags win)");
  opt(*cmd, *fc, "--seed", sc->seed, "generator seed");
  opt(*cmd, *fc, "--n", sc->n_samples, "train scenes; eval split adds n/10");
  opt(*cmd, *fc, "--classes", sc->n_classes, "foreground classes");
  opt(*cmd, *fc, "--objects-min", sc->objects_min, "objects per scene, lower bound");
  opt(*cmd, *fc, "--objects-max", sc->objects_max, "objects per scene, upper bound");
  opt(*cmd, *fc, "--size-min", sc->size_min, "object side, pixels, lower bound");
  opt(*cmd, *fc, "--size-max", sc->size_max, "object side, pixels, upper bound");
  opt(*cmd, *fc, "--noise-std", sc->noise_std, "feature noise standard deviation");
  opt(*cmd, *fc, "--feature-dim", sc->feature_dim, "patch feature dimension");
  opt(*cmd, *fc, "--image-h", sc->image_h, "image height");
  opt(*cmd, *fc, "--image-w", sc->image_w, "image width");
  opt(*cmd, *fc, "--patch-size", sc->patch_size, "patch side length");
  fc->bind(cmd->add_flag("--images,!--no-images", sc->images, "also render RGB scenes"),
           &sc->images);

  cmd->callback([=]() {
    if (!config_path->empty()) fc->apply(*config_path);
    require_path(*out, "--out");
    generate_synthetic_dataset(*sc, *out);
    DatasetReader data(*out);
    const DatasetManifest& man = data.manifest();
    json summary = {{"command", "synth"},
                    {"out", *out},
                    {"n_samples", man.n_samples},
                    {"train_samples", int(data.split_indices("train").size())},
                    {"eval_samples", int(data.split_indices("eval").size())},
                    {"grid_rows", man.grid_rows},
                    {"grid_cols", man.grid_cols},
                    {"feature_dim", man.feature_dim},
                    {"classes", int(man.classes.size())}};
    std::cout << summary.dump() << "\n";
  });
}

void setup_train(CLI::App& app) {
  auto* cmd = app.add_subcommand("train", "optimize a model on a dataset");
  auto fc = std::make_shared<FileConfig>();
  struct Flags {
    std::string data_dir, out_dir, resume_dir, log_path, config_path;
    TrainConfig tc;
    ModelSpec spec;
    ProviderConfig pc;
    int feature_dim = 0;  // 0 = dataset feature_dim
    int checkpoint_every = 0;
  };
  auto f = std::make_shared<Flags>();
  auto hyper = std::make_shared<std::vector<CLI::Option*>>();
  auto h = [&](CLI::Option* o) {
    hyper->push_back(o);
    return o;
  };
  opt(*cmd, *fc, "--data", f->data_dir, "dataset directory");
  opt(*cmd, *fc, "--out", f->out_dir, "checkpoint directory");
  cmd->add_option("--resume", f->resume_dir,
                  "checkpoint to restore and continue; only --steps may extend it");
  cmd->add_option("--config", f->config_path, "JSON config file (flags win)");
  opt(*cmd, *fc, "--log", f->log_path, "loss log path (line-delimited JSON); default stdout");
  opt(*cmd, *fc, "--checkpoint-every", f->checkpoint_every, "periodic save interval; 0 = off");
  CLI::Option* steps_opt = opt(*cmd, *fc, "--steps", f->tc.steps, "optimization steps");
  h(opt(*cmd, *fc, "--batch", f->tc.batch_size, "batch size"));
  h(opt(*cmd, *fc, "--lr", f->tc.peak_lr, "peak learning rate"));
  h(opt(*cmd, *fc, "--warmup", f->tc.warmup_steps, "linear warmup steps"));
  h(opt(*cmd, *fc, "--half-life", f->tc.decay_half_life, "exponential decay half-life, steps"));
  h(opt(*cmd, *fc, "--clip", f->tc.grad_clip_norm, "global gradient-norm clip"));
  h(opt(*cmd, *fc, "--k", f->tc.k, "slot count"));
  h(opt(*cmd, *fc, "--t", f->tc.t, "attention iterations"));
  h(opt(*cmd, *fc, "--decoder", f->tc.decoder, "mlp | transformer | pixel"));
  h(opt(*cmd, *fc, "--target-scale", f->tc.target_scale, "target grid scale in (0, 1]"));
  h(opt(*cmd, *fc, "--seed", f->tc.seed, "training seed"));
  h(opt(*cmd, *fc, "--d-slots", f->spec.d_slots, "slot dimension"));
  h(opt(*cmd, *fc, "--mlp-hidden", f->spec.mlp_hidden, "mlp decoder hidden width"));
  h(opt(*cmd, *fc, "--tf-blocks", f->spec.tf_blocks, "transformer decoder blocks"));
  h(opt(*cmd, *fc, "--tf-heads", f->spec.tf_heads, "transformer decoder heads"));
  h(opt(*cmd, *fc, "--pixel-base", f->spec.pixel_base, "pixel decoder broadcast side"));
  h(opt(*cmd, *fc, "--pixel-channels", f->spec.pixel_channels, "pixel decoder conv width"));
  h(opt(*cmd, *fc, "--provider", f->pc.provider, "precomputed | toy-frozen | trainable-conv"));
  h(opt(*cmd, *fc, "--target", f->pc.target, "reconstruction-target provider; default = provider"));
  h(opt(*cmd, *fc, "--patch-size", f->pc.patch_size, "encoder patch side"));
  h(opt(*cmd, *fc, "--feature-dim", f->feature_dim, "encoder feature dim; 0 = dataset value"));
  h(opt(*cmd, *fc, "--provider-seed", f->pc.seed, "frozen-encoder weight seed"));

  cmd->callback([=]() {
    if (!f->config_path.empty()) fc->apply(f->config_path);
    require_path(f->data_dir, "--data");
    require_path(f->out_dir, "--out");
    if (!f->resume_dir.empty())
      for (CLI::Option* o : *hyper)
        if (o->count() > 0)
          throw ArgumentError("--resume restores the saved configuration; remove --" +
                              o->get_lnames().front());

    DatasetReader data(f->data_dir);
    f->pc.feature_dim = f->feature_dim > 0 ? f->feature_dim : data.manifest().feature_dim;
    const int steps_override = steps_opt->count() > 0 ? f->tc.steps : -1;

    std::ofstream log_file;
    std::ostream* log = &std::cout;
    if (!f->log_path.empty()) {
      log_file.open(f->log_path, std::ios::app);
      if (!log_file) throw ArgumentError("cannot open log file " + f->log_path);
      log = &log_file;
    }

    Trainer tr = f->resume_dir.empty() ? Trainer(f->tc, f->spec, f->pc, data)
                                       : Trainer::load(f->resume_dir, data, steps_override);
    const TrainConfig& tc = tr.config();
    json echo = {{"event", "config"},     {"steps", tc.steps},
                 {"batch_size", tc.batch_size}, {"peak_lr", tc.peak_lr},
                 {"warmup_steps", tc.warmup_steps}, {"decay_half_life", tc.decay_half_life},
                 {"grad_clip_norm", tc.grad_clip_norm}, {"k", tc.k},
                 {"t", tc.t},             {"decoder", tc.decoder},
                 {"target_scale", tc.target_scale}, {"seed", tc.seed},
                 {"start_step", tr.step()}};
    *log << echo.dump() << "\n";

    tr.run(
        [&](const StepStats& s) {
          json line = {
              {"step", s.step}, {"lr", s.lr}, {"loss", s.loss}, {"grad_norm", s.grad_norm}};
          *log << line.dump() << "\n";
        },
        f->checkpoint_every, f->out_dir);
    tr.save(f->out_dir);
    note("checkpoint written to " + f->out_dir + " at step " + std::to_string(tr.step()));
  });
}

void setup_eval(CLI::App& app) {
  auto* cmd = app.add_subcommand("eval", "score a checkpoint on a task");
  auto fc = std::make_shared<FileConfig>();
  auto f = std::make_shared<EvalFlags>();
  auto checkpoint = std::make_shared<std::string>();
  opt(*cmd, *fc, "--checkpoint", *checkpoint, "checkpoint directory");
  opt(*cmd, *fc, "--mask-source", f->ec.mask_source,
      "auto | mlp-alpha | decoder-attention | slot-attention");
  f->add_common(*cmd, *fc);

  cmd->callback([=]() {
    if (!f->config_path.empty()) fc->apply(f->config_path);
    require_path(*checkpoint, "--checkpoint");
    require_path(f->data_dir, "--data");
    DatasetReader data(f->data_dir);
    Trainer tr = Trainer::load(*checkpoint, data);
    MetricsReport rep = evaluate_model(tr.model(), data, f->ec);
    rep.settings["dataset"] = f->data_dir;
    rep.settings["checkpoint"] = *checkpoint;
    rep.settings["checkpoint_step"] = tr.step();
    emit_report(rep, f->out_path);
  });
}

void setup_baseline(CLI::App& app) {
  auto* cmd = app.add_subcommand("baseline-blocks", "score the block-pattern baseline");
  auto fc = std::make_shared<FileConfig>();
  auto f = std::make_shared<EvalFlags>();
  auto num_masks = std::make_shared<int>(0);
  opt(*cmd, *fc, "--num-masks", *num_masks, "block-pattern mask count");
  f->add_common(*cmd, *fc);

  cmd->callback([=]() {
    if (!f->config_path.empty()) fc->apply(f->config_path);
    require_path(f->data_dir, "--data");
    if (*num_masks < 1) throw ArgumentError("missing required option --num-masks");
    DatasetReader data(f->data_dir);
    MetricsReport rep = evaluate_blocks(*num_masks, data, f->ec);
    rep.settings["dataset"] = f->data_dir;
    emit_report(rep, f->out_path);
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"slot grouping over frozen patch features: data, training, evaluation"};
  app.require_subcommand(1);
  setup_synth(app);
  setup_train(app);
  setup_eval(app);
  setup_baseline(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
