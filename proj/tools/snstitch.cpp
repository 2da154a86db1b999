// Command-line driver wiring the library into reproducible experiments. Every
// command reads one experiment file, writes its artifacts under --out, and
// prints a one-line summary.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "snstitch/evalbench.hpp"
#include "snstitch/experiment.hpp"
#include "snstitch/snv2_io.hpp"
#include "snstitch/space_json.hpp"
#include "snstitch/training.hpp"

namespace fs = std::filesystem;
using namespace snstitch;

namespace {

constexpr int kExitMissingArtifact = 2;
constexpr int kExitConfigError = 3;
constexpr int kExitNumericalError = 4;

struct Paths {
  fs::path out;
  fs::path anchor_small() const { return out / "anchor_small.snv2"; }
  fs::path anchor_large() const { return out / "anchor_large.snv2"; }
  fs::path pretrain_small_csv() const { return out / "pretrain_small.csv"; }
  fs::path pretrain_large_csv() const { return out / "pretrain_large.csv"; }
  fs::path space_json() const { return out / "stitch_space.json"; }
  fs::path distribution_csv() const { return out / "distribution.csv"; }
  fs::path distribution_svg() const { return out / "distribution.svg"; }
  fs::path snnet() const { return out / "snnet.snv2"; }
  fs::path train_log() const { return out / "train_log.jsonl"; }
  fs::path sweep_csv() const { return out / "sweep.csv"; }
  fs::path sweep_svg() const { return out / "sweep.svg"; }
  fs::path sample_demo_csv() const { return out / "sample_demo.csv"; }
};

struct MissingArtifact : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const fs::path& p, const std::string& hint) {
  if (!fs::exists(p))
    throw MissingArtifact("missing " + p.string() + " (run `snstitch " + hint +
                          "` first)");
}

ExperimentConfig load_config(const std::string& path) {
  ExperimentConfig cfg = parse_experiment_file(path);
  if (const char* env = std::getenv("SNSTITCH_SEED")) {
    try {
      cfg.seed = std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError("SNSTITCH_SEED is not an integer: " + std::string(env), 0, 0);
    }
  }
  cfg.validate();
  return cfg;
}

void write_loss_csv(const std::vector<double>& curve, const fs::path& path) {
  std::ofstream f(path, std::ios::trunc);
  f << "iter,loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%zu,%.10g\n", i, curve[i]);
    f << buf;
  }
}

TrainConfig pretrain_config(const ExperimentConfig& cfg, const char* label) {
  TrainConfig t;
  t.iterations = cfg.pretrain_iterations;
  t.batch_size = cfg.batch_size;
  t.learning_rate = cfg.learning_rate;
  t.weight_decay = cfg.weight_decay;
  t.seed = derive_seed(cfg.seed, label);
  return t;
}

int cmd_pretrain(const ExperimentConfig& cfg, const Paths& paths) {
  const SynthTask task = load_task(cfg);
  Rng small_rng(derive_seed(cfg.seed, "anchor-small"));
  Rng large_rng(derive_seed(cfg.seed, "anchor-large"));
  AnchorModel small = AnchorModel::init(cfg.small_spec(), small_rng);
  AnchorModel large = AnchorModel::init(cfg.large_spec(), large_rng);

  const PretrainResult rs = pretrain_anchor(small, task.train, pretrain_config(cfg, "pretrain-small"));
  const PretrainResult rl = pretrain_anchor(large, task.train, pretrain_config(cfg, "pretrain-large"));
  save_checkpoint(small, paths.anchor_small().string());
  save_checkpoint(large, paths.anchor_large().string());
  write_loss_csv(rs.loss_curve, paths.pretrain_small_csv());
  write_loss_csv(rl.loss_curve, paths.pretrain_large_csv());

  const double acc_s = model_accuracy(small, task.val);
  const double acc_l = model_accuracy(large, task.val);
  std::printf("pretrain: small val_acc=%.4f large val_acc=%.4f iters=%zu -> %s\n", acc_s,
              acc_l, cfg.pretrain_iterations, paths.out.string().c_str());
  return 0;
}

int cmd_enumerate(const ExperimentConfig& cfg, const Paths& paths) {
  const StitchSpace space = enumerate_space(cfg.small_spec(), cfg.large_spec(),
                                            cfg.mode_enum(), cfg.lora_rank);
  write_space_json(space, paths.space_json().string());
  std::printf("configs: %zu\n", space.size());
  return 0;
}

int cmd_distribution(const ExperimentConfig& cfg, const Paths& paths) {
  const StitchSpace space = enumerate_space(cfg.small_spec(), cfg.large_spec(),
                                            cfg.mode_enum(), cfg.lora_rank);
  const CostModel cost = cost_model_for(space, cfg.count_crossing_flops);
  const BudgetDistribution dist = build_distribution(space, cost, cfg.flops_step);
  write_distribution_csv(dist, paths.distribution_csv().string());
  write_distribution_svg(dist, paths.distribution_svg().string());
  std::printf("distribution: %zu bins over %zu configs, step=%.6g -> %s\n",
              dist.bins.size(), space.size(), cfg.flops_step,
              paths.distribution_csv().string().c_str());
  return 0;
}

int cmd_train(const ExperimentConfig& cfg, const Paths& paths) {
  require_file(paths.anchor_small(), "pretrain");
  require_file(paths.anchor_large(), "pretrain");
  const SynthTask task = load_task(cfg);
  AnchorModel small = load_checkpoint(paths.anchor_small().string(), cfg.small_spec());
  AnchorModel large = load_checkpoint(paths.anchor_large().string(), cfg.large_spec());
  StitchSpace space = enumerate_space(cfg.small_spec(), cfg.large_spec(),
                                      cfg.mode_enum(), cfg.lora_rank);
  const CostModel cost = cost_model_for(space, cfg.count_crossing_flops);
  const BudgetDistribution dist = build_distribution(space, cost, cfg.flops_step);

  const TrainLog log = train_snnet(space, small, large, task.train, dist,
                                   cfg.train_config());

  std::ofstream jl(paths.train_log(), std::ios::trunc);
  for (const TrainRecord& r : log.records) {
    nlohmann::json j{{"iter", r.iter}, {"tau0", r.tau0}, {"config_id", r.config_id},
                     {"loss", r.loss}};
    jl << j.dump() << '\n';
  }
  save_space_checkpoint(space, small, large, paths.snnet().string());
  const double last = log.records.empty() ? 0.0 : log.records.back().loss;
  std::printf("train: %zu iters over %zu configs (%zu bins), final loss=%.6f -> %s\n",
              cfg.train_iterations, space.size(), dist.bins.size(), last,
              paths.snnet().string().c_str());
  return 0;
}

int cmd_sweep(const ExperimentConfig& cfg, const Paths& paths, std::size_t workers) {
  require_file(paths.snnet(), "train");
  const SynthTask task = load_task(cfg);
  AnchorModel small = AnchorModel::zeros(cfg.small_spec());
  AnchorModel large = AnchorModel::zeros(cfg.large_spec());
  StitchSpace space = enumerate_space(cfg.small_spec(), cfg.large_spec(),
                                      cfg.mode_enum(), cfg.lora_rank);
  load_space_checkpoint(space, small, large, paths.snnet().string());
  const CostModel cost = cost_model_for(space, cfg.count_crossing_flops);

  const SweepResult result = sweep(space, small, large, task.val, cost, workers);
  emit_curve(result, paths.sweep_csv().string(), paths.sweep_svg().string());
  std::size_t pareto = 0;
  for (bool b : result.pareto_mask) pareto += b;
  std::printf("sweep: %zu configs, %zu on pareto frontier -> %s\n", result.rows.size(),
              pareto, paths.sweep_csv().string().c_str());
  return 0;
}

int cmd_sample_demo(const ExperimentConfig& cfg, const Paths& paths, std::size_t draws) {
  const StitchSpace space = enumerate_space(cfg.small_spec(), cfg.large_spec(),
                                            cfg.mode_enum(), cfg.lora_rank);
  const CostModel cost = cost_model_for(space, cfg.count_crossing_flops);
  const BudgetDistribution dist = build_distribution(space, cost, cfg.flops_step);

  Rng ros_rng(derive_seed(cfg.seed, "sampler"));
  Rng uni_rng(derive_seed(cfg.seed, "sampler-uniform"));
  std::vector<std::size_t> ros_counts(space.size(), 0), uni_counts(space.size(), 0);
  for (std::size_t i = 0; i < draws; ++i) {
    ++ros_counts[ros_sample_index(dist, ros_rng)];
    ++uni_counts[uniform_sample_index(space, uni_rng)];
  }
  const std::size_t anchor_ros =
      ros_counts[space.anchor_small_id] + ros_counts[space.anchor_large_id];
  const std::size_t anchor_uni =
      uni_counts[space.anchor_small_id] + uni_counts[space.anchor_large_id];

  std::ofstream f(paths.sample_demo_csv(), std::ios::trunc);
  f << "config_id,kind,ros_count,uniform_count\n";
  for (std::size_t id = 0; id < space.size(); ++id)
    f << id << ',' << kind_name(space.configs[id].kind) << ',' << ros_counts[id] << ','
      << uni_counts[id] << '\n';

  std::printf("sample-demo: draws=%zu bins=%zu E=%zu ros_anchor_freq=%.4f "
              "uniform_anchor_freq=%.4f\n",
              draws, dist.bins.size(), space.size(),
              static_cast<double>(anchor_ros) / static_cast<double>(draws),
              static_cast<double>(anchor_uni) / static_cast<double>(draws));
  return 0;
}

nlohmann::json error_json(int code, const std::string& kind, const std::string& message) {
  return nlohmann::json{{"error", {{"code", code}, {"kind", kind}, {"message", message}}}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-anchor transformer stitching: enumerate, budget, train, sweep"};
  app.fallthrough();
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::size_t workers = 1;
  std::size_t draws = 10000;
  app.add_option("--config", config_path, "experiment file")->required();
  app.add_option("--out", out_dir, "output directory (default: out)");
  app.add_option("--workers", workers, "evaluation worker threads (default: 1)");

  auto* sc_pretrain = app.add_subcommand("pretrain", "train both anchors solo");
  auto* sc_enumerate = app.add_subcommand("enumerate", "enumerate the stitch space");
  auto* sc_distribution =
      app.add_subcommand("distribution", "FLOPs bins and categorical probabilities");
  auto* sc_train = app.add_subcommand("train", "joint stitch-space training");
  auto* sc_sweep = app.add_subcommand("sweep", "accuracy-vs-FLOPs sweep of every config");
  auto* sc_demo = app.add_subcommand("sample-demo", "compare ROS and uniform sampling");
  sc_demo->add_option("--draws", draws, "number of Monte-Carlo draws (default: 10000)");

  CLI11_PARSE(app, argc, argv);

  try {
    const ExperimentConfig cfg = load_config(config_path);
    Paths paths{fs::path(out_dir)};
    fs::create_directories(paths.out);
    if (sc_pretrain->parsed()) return cmd_pretrain(cfg, paths);
    if (sc_enumerate->parsed()) return cmd_enumerate(cfg, paths);
    if (sc_distribution->parsed()) return cmd_distribution(cfg, paths);
    if (sc_train->parsed()) return cmd_train(cfg, paths);
    if (sc_sweep->parsed()) return cmd_sweep(cfg, paths, workers);
    if (sc_demo->parsed()) return cmd_sample_demo(cfg, paths, draws);
    std::cerr << error_json(1, "usage", "no subcommand").dump() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    nlohmann::json j = error_json(kExitConfigError, "config_error", e.what());
    j["error"]["line"] = e.line;
    j["error"]["column"] = e.column;
    std::cerr << j.dump() << '\n';
    return kExitConfigError;
  } catch (const MissingArtifact& e) {
    std::cerr << error_json(kExitMissingArtifact, "missing_checkpoint", e.what()).dump()
              << '\n';
    return kExitMissingArtifact;
  } catch (const NumericalError& e) {
    std::cerr << error_json(kExitNumericalError, "numerical_abort", e.what()).dump()
              << '\n';
    return kExitNumericalError;
  } catch (const std::exception& e) {
    std::cerr << error_json(1, "error", e.what()).dump() << '\n';
    return 1;
  }
}
