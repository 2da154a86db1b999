#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "snstitch/anchor.hpp"
#include "snstitch/budget.hpp"
#include "snstitch/dataio.hpp"
#include "snstitch/errors.hpp"
#include "snstitch/stitching.hpp"
#include "snstitch/training.hpp"

namespace snstitch {

// One experiment file describes one reproducible run: anchors, task, space,
// budget and training knobs. Flat `key = value` lines, '#' comments, a
// TOML-compatible subset. Unknown keys are rejected.
struct ExperimentConfig {
  std::uint64_t seed = 42;

  std::size_t small_depth = 4, small_width = 32, small_heads = 4;
  std::size_t large_depth = 8, large_width = 64, large_heads = 8;
  double mlp_ratio = 4.0;
  std::size_t patch_dim = 16, num_classes = 10, seq_len = 8;

  std::string task = "synthetic";  // "synthetic" | "idx"
  std::size_t synth_train_per_class = 100, synth_val_per_class = 25;
  double synth_noise_std = 1.0, synth_margin = 3.0;
  std::string idx_train_images, idx_train_labels, idx_val_images, idx_val_labels;
  std::size_t idx_patch = 4;

  std::string space_mode = "tws";  // "tws" | "v1-fs"
  std::size_t lora_rank = 16;
  std::string stitch_layer_mode = "lora";  // "lora" | "full" | "frozen"
  std::size_t calib_samples = 100;
  double lora_b_std = 0.02;

  double flops_step = 1e6;
  bool count_crossing_flops = true;

  std::size_t pretrain_iterations = 2000;
  std::size_t train_iterations = 2000;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double lr_scale_anchors = 1.0;
  double weight_decay = 0.05;
  std::string sampler = "ros";  // "ros" | "uniform"

  AnchorSpec small_spec() const {
    return {small_depth, small_width, small_heads, mlp_ratio,
            patch_dim,   num_classes, seq_len};
  }
  AnchorSpec large_spec() const {
    return {large_depth, large_width, large_heads, mlp_ratio,
            patch_dim,   num_classes, seq_len};
  }
  SpaceMode mode_enum() const {
    if (space_mode == "tws") return SpaceMode::TwoWay;
    if (space_mode == "v1-fs") return SpaceMode::V1FastToSlow;
    throw ConfigError("space_mode must be 'tws' or 'v1-fs'", 0, 0);
  }
  SamplerKind sampler_enum() const {
    if (sampler == "ros") return SamplerKind::Ros;
    if (sampler == "uniform") return SamplerKind::Uniform;
    throw ConfigError("sampler must be 'ros' or 'uniform'", 0, 0);
  }
  StitchLayerMode layer_mode_enum() const {
    if (stitch_layer_mode == "lora") return StitchLayerMode::Lora;
    if (stitch_layer_mode == "full") return StitchLayerMode::Full;
    if (stitch_layer_mode == "frozen") return StitchLayerMode::Frozen;
    throw ConfigError("stitch_layer_mode must be 'lora', 'full' or 'frozen'", 0, 0);
  }

  SynthTaskSpec synth_spec() const {
    SynthTaskSpec s;
    s.num_classes = num_classes;
    s.train_per_class = synth_train_per_class;
    s.val_per_class = synth_val_per_class;
    s.seq_len = seq_len;
    s.patch_dim = patch_dim;
    s.noise_std = synth_noise_std;
    s.margin = synth_margin;
    s.prototype_seed = derive_seed(seed, "prototypes");
    return s;
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.iterations = train_iterations;
    t.batch_size = batch_size;
    t.learning_rate = learning_rate;
    t.lr_scale_anchors = lr_scale_anchors;
    t.sampler = sampler_enum();
    t.layer_mode = layer_mode_enum();
    t.weight_decay = weight_decay;
    t.seed = seed;
    t.calib_samples = calib_samples;
    t.lora_b_std = lora_b_std;
    return t;
  }

  void validate() const {
    small_spec().validate();
    large_spec().validate();
    mode_enum();
    sampler_enum();
    layer_mode_enum();
    if (task != "synthetic" && task != "idx")
      throw ConfigError("task must be 'synthetic' or 'idx'", 0, 0);
    if (task == "idx" &&
        (idx_train_images.empty() || idx_train_labels.empty() ||
         idx_val_images.empty() || idx_val_labels.empty()))
      throw ConfigError("idx task requires idx_train_images/idx_train_labels/"
                        "idx_val_images/idx_val_labels",
                        0, 0);
    if (flops_step <= 0.0) throw ConfigError("flops_step must be positive", 0, 0);
    if (lora_rank < 1) throw ConfigError("lora_rank must be >= 1", 0, 0);
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline ExperimentConfig parse_experiment_text(const std::string& text) {
  ExperimentConfig cfg;

  using Setter = std::function<void(const std::string&, int, int)>;
  auto num = [](auto* dst) {
    return [dst](const std::string& v, int line, int col) {
      std::istringstream in(v);
      in >> *dst;
      char rest;
      if (in.fail() || (in >> rest))
        throw ConfigError("invalid numeric value '" + v + "'", line, col);
    };
  };
  auto str = [](std::string* dst) {
    return [dst](const std::string& v, int line, int col) {
      std::string s = v;
      if (s.size() >= 2 && s.front() == '"' && s.back() == '"')
        s = s.substr(1, s.size() - 2);
      if (s.empty()) throw ConfigError("empty string value", line, col);
      *dst = s;
    };
  };
  auto boolean = [](bool* dst) {
    return [dst](const std::string& v, int line, int col) {
      if (v == "true") *dst = true;
      else if (v == "false") *dst = false;
      else throw ConfigError("invalid boolean value '" + v + "'", line, col);
    };
  };

  const std::map<std::string, Setter> setters = {
      {"seed", num(&cfg.seed)},
      {"small_depth", num(&cfg.small_depth)},
      {"small_width", num(&cfg.small_width)},
      {"small_heads", num(&cfg.small_heads)},
      {"large_depth", num(&cfg.large_depth)},
      {"large_width", num(&cfg.large_width)},
      {"large_heads", num(&cfg.large_heads)},
      {"mlp_ratio", num(&cfg.mlp_ratio)},
      {"patch_dim", num(&cfg.patch_dim)},
      {"num_classes", num(&cfg.num_classes)},
      {"seq_len", num(&cfg.seq_len)},
      {"task", str(&cfg.task)},
      {"synth_train_per_class", num(&cfg.synth_train_per_class)},
      {"synth_val_per_class", num(&cfg.synth_val_per_class)},
      {"synth_noise_std", num(&cfg.synth_noise_std)},
      {"synth_margin", num(&cfg.synth_margin)},
      {"idx_train_images", str(&cfg.idx_train_images)},
      {"idx_train_labels", str(&cfg.idx_train_labels)},
      {"idx_val_images", str(&cfg.idx_val_images)},
      {"idx_val_labels", str(&cfg.idx_val_labels)},
      {"idx_patch", num(&cfg.idx_patch)},
      {"space_mode", str(&cfg.space_mode)},
      {"lora_rank", num(&cfg.lora_rank)},
      {"stitch_layer_mode", str(&cfg.stitch_layer_mode)},
      {"calib_samples", num(&cfg.calib_samples)},
      {"lora_b_std", num(&cfg.lora_b_std)},
      {"flops_step", num(&cfg.flops_step)},
      {"count_crossing_flops", boolean(&cfg.count_crossing_flops)},
      {"pretrain_iterations", num(&cfg.pretrain_iterations)},
      {"train_iterations", num(&cfg.train_iterations)},
      {"batch_size", num(&cfg.batch_size)},
      {"learning_rate", num(&cfg.learning_rate)},
      {"lr_scale_anchors", num(&cfg.lr_scale_anchors)},
      {"weight_decay", num(&cfg.weight_decay)},
      {"sampler", str(&cfg.sampler)},
  };

  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    bool in_quotes = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_quotes = !in_quotes;
      if (line[i] == '#' && !in_quotes) {
        line = line.substr(0, i);
        break;
      }
    }
    if (detail::trim(line).empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected 'key = value'", line_no,
                        static_cast<int>(line.find_first_not_of(" \t") + 1));
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const int key_col = static_cast<int>(raw.find(key.empty() ? "=" : key) + 1);
    if (key.empty()) throw ConfigError("missing key before '='", line_no, key_col);
    auto it = setters.find(key);
    if (it == setters.end())
      throw ConfigError("unknown key '" + key + "'", line_no, key_col);
    if (value.empty())
      throw ConfigError("missing value for '" + key + "'", line_no,
                        static_cast<int>(eq + 2));
    it->second(value, line_no, static_cast<int>(raw.find(value, eq) + 1));
  }
  return cfg;
}

inline ExperimentConfig parse_experiment_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open experiment file: " + path, 0, 0);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_experiment_text(text);
}

// Builds the task datasets named by the config.
inline SynthTask load_task(const ExperimentConfig& cfg) {
  if (cfg.task == "synthetic") {
    Rng rng(derive_seed(cfg.seed, "task"));
    return make_synthetic(cfg.synth_spec(), rng);
  }
  SynthTask task;
  task.train = load_idx(cfg.idx_train_images, cfg.idx_train_labels, cfg.idx_patch);
  task.train.split = "train";
  task.val = load_idx(cfg.idx_val_images, cfg.idx_val_labels, cfg.idx_patch);
  task.val.split = "val";
  task.train.num_classes = task.val.num_classes =
      std::max(task.train.num_classes, task.val.num_classes);
  return task;
}

}  // namespace snstitch
