#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "snstitch/anchor.hpp"
#include "snstitch/budget.hpp"
#include "snstitch/dataio.hpp"
#include "snstitch/errors.hpp"
#include "snstitch/rng.hpp"
#include "snstitch/stitching.hpp"

namespace snstitch {

enum class SamplerKind { Uniform, Ros };
enum class StitchLayerMode { Lora, Full, Frozen };

struct TrainConfig {
  std::size_t iterations = 2000;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double lr_scale_anchors = 1.0;
  SamplerKind sampler = SamplerKind::Ros;
  StitchLayerMode layer_mode = StitchLayerMode::Lora;
  double weight_decay = 0.05;
  std::uint64_t seed = 0;
  std::size_t calib_samples = 100;
  double lora_b_std = 0.02;

  void validate() const {
    if (batch_size == 0) throw ShapeError("TrainConfig: batch_size must be positive");
    if (learning_rate < 0.0) throw NumericalError("TrainConfig: negative learning rate");
  }
};

struct LossResult {
  double loss = 0.0;
  Matrix dlogits;
};

// Mean cross-entropy over the batch with the softmax gradient folded in.
inline LossResult softmax_cross_entropy(const Matrix& logits,
                                        const std::vector<std::size_t>& labels) {
  if (logits.rows() != labels.size())
    throw ShapeError("softmax_cross_entropy: batch mismatch");
  const std::size_t b = logits.rows(), c = logits.cols();
  LossResult r;
  r.dlogits = Matrix(b, c);
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = logits.row(i);
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    double* dr = r.dlogits.row(i);
    for (std::size_t j = 0; j < c; ++j) {
      dr[j] = std::exp(row[j] - mx);
      sum += dr[j];
    }
    const std::size_t y = labels[i];
    if (y >= c) throw IndexError("softmax_cross_entropy: label out of range");
    r.loss -= (row[y] - mx - std::log(sum)) * inv_b;
    for (std::size_t j = 0; j < c; ++j) dr[j] = (dr[j] / sum - (j == y ? 1.0 : 0.0)) * inv_b;
  }
  return r;
}

// Decoupled-weight-decay Adam. State is keyed by tensor name and created on
// first use; frozen tensors simply never get stepped, so they carry no state.
struct AdamW {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;

  struct State {
    Matrix m, v;
    std::size_t step = 0;
  };
  std::map<std::string, State> states;

  void step(const std::string& name, Matrix& param, const Matrix& grad, double lr,
            bool decay) {
    if (!param.same_shape(grad))
      throw ShapeError("AdamW::step: grad shape " + shape_str(grad) + " vs param " +
                       shape_str(param));
    State& s = states[name];
    if (s.step == 0) {
      s.m = Matrix(param.rows(), param.cols());
      s.v = Matrix(param.rows(), param.cols());
    }
    ++s.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(s.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double g = grad.data()[i];
      double& m = s.m.data()[i];
      double& v = s.v.data()[i];
      m = beta1 * m + (1.0 - beta1) * g;
      v = beta2 * v + (1.0 - beta2) * g * g;
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      double& p = param.data()[i];
      if (decay) p *= 1.0 - lr * weight_decay;  // decoupled decay, pre-update value
      p -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
};

// Weight decay applies to weight matrices only; biases and norm scales are
// stored as single-row tensors.
inline bool decays(const Matrix& param) { return param.rows() > 1; }

// ---------------------------------------------------------------------------
// solo anchor pretraining
// ---------------------------------------------------------------------------

struct PretrainResult {
  std::vector<double> loss_curve;
};

inline PretrainResult pretrain_anchor(AnchorModel& model, const Dataset& train,
                                      const TrainConfig& cfg) {
  cfg.validate();
  if (train.patch_dim() != model.spec.patch_dim || train.seq_len() != model.spec.seq_len)
    throw ShapeError("pretrain_anchor: dataset geometry does not match the spec");
  Rng data_rng(derive_seed(cfg.seed, "pretrain-data"));
  AdamW opt;
  opt.weight_decay = cfg.weight_decay;
  PretrainResult result;
  result.loss_curve.reserve(cfg.iterations);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const Batch batch = make_batch(train, sample_indices(data_rng, train.size(),
                                                         cfg.batch_size));
    ForwardResult fwd = forward(model, batch.tokens, batch.size());
    LossResult loss = softmax_cross_entropy(fwd.logits, batch.labels);
    if (!std::isfinite(loss.loss)) {
      std::string last = "none";
      if (!result.loss_curve.empty()) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.6g", result.loss_curve.back());
        last = buf;
      }
      throw NumericalError("pretrain_anchor: non-finite loss at iteration " +
                           std::to_string(it) + " (last good loss " + last + ")");
    }
    AnchorModel grads = backward(model, fwd.trace, loss.dlogits);
    std::vector<std::pair<std::string, Matrix*>> params, gradps;
    for_each_param(model, [&](const std::string& n, Matrix& p) {
      params.emplace_back(n, &p);
    });
    for_each_param(grads, [&](const std::string& n, Matrix& g) {
      gradps.emplace_back(n, &g);
    });
    for (std::size_t k = 0; k < params.size(); ++k)
      opt.step(params[k].first, *params[k].second, *gradps[k].second, cfg.learning_rate,
               decays(*params[k].second));
    result.loss_curve.push_back(loss.loss);
  }
  return result;
}

// ---------------------------------------------------------------------------
// joint stitch-space training
// ---------------------------------------------------------------------------

struct TrainRecord {
  std::size_t iter = 0;
  double tau0 = 0.0;  // sampled FLOPs constraint (bin key)
  std::size_t config_id = 0;
  double loss = 0.0;
};

struct TrainLog {
  std::vector<TrainRecord> records;
};

namespace detail {

struct ParamRef {
  std::string name;
  Matrix* param;
  const Matrix* grad;
  double lr;
  bool decay;
};

// The tensors one route touches: the start anchor's embedding, every block in
// its segments, the head anchor's norm + classifier, and the crossing layers
// according to the layer mode.
inline std::vector<ParamRef> route_params(const StitchConfig& cfg, StitchSpace& space,
                                          AnchorModel& small, AnchorModel& large,
                                          StitchGrads& grads, const TrainConfig& tc) {
  std::vector<ParamRef> refs;
  const double lr_anchor = tc.learning_rate * tc.lr_scale_anchors;
  auto add_anchor = [&](AnchorId id, auto&& pick) {
    AnchorModel& model = id == AnchorId::Small ? small : large;
    AnchorModel& g = grads.anchor(id);
    const std::string prefix = id == AnchorId::Small ? "small/" : "large/";
    pick(model, g, prefix);
  };

  add_anchor(cfg.segments.front().anchor,
             [&](AnchorModel& m, AnchorModel& g, const std::string& prefix) {
               refs.push_back({prefix + "embed.w", &m.embed_w, &g.embed_w, lr_anchor, true});
               refs.push_back({prefix + "embed.b", &m.embed_b, &g.embed_b, lr_anchor, false});
             });
  for (const Segment& seg : cfg.segments) {
    add_anchor(seg.anchor, [&](AnchorModel& m, AnchorModel& g, const std::string& prefix) {
      for (std::size_t k = seg.from; k < seg.to; ++k) {
        std::vector<std::pair<std::string, Matrix*>> ps, gs;
        for_each_block_param(m.blocks[k], prefix + "block" + std::to_string(k) + ".",
                             [&](const std::string& n, Matrix& t) { ps.emplace_back(n, &t); });
        for_each_block_param(g.blocks[k], "",
                             [&](const std::string&, Matrix& t) { gs.emplace_back("", &t); });
        for (std::size_t i = 0; i < ps.size(); ++i)
          refs.push_back({ps[i].first, ps[i].second, gs[i].second, lr_anchor,
                          decays(*ps[i].second)});
      }
    });
  }
  add_anchor(cfg.head_anchor, [&](AnchorModel& m, AnchorModel& g, const std::string& prefix) {
    refs.push_back({prefix + "norm.g", &m.norm_g, &g.norm_g, lr_anchor, false});
    refs.push_back({prefix + "norm.b", &m.norm_b, &g.norm_b, lr_anchor, false});
    refs.push_back({prefix + "head.w", &m.head_w, &g.head_w, lr_anchor, true});
    refs.push_back({prefix + "head.b", &m.head_b, &g.head_b, lr_anchor, false});
  });

  for (const CrossingId& cid : cfg.crossings) {
    StitchLayer& layer = space.layers.at(cid);
    StitchGrads::LayerGrads& lg = grads.layers.at(cid);
    const std::string prefix = "layer/" + cid.str() + "/";
    switch (tc.layer_mode) {
      case StitchLayerMode::Lora:
        refs.push_back({prefix + "b", &layer.b, &lg.b, tc.learning_rate, true});
        refs.push_back({prefix + "a", &layer.a, &lg.a, tc.learning_rate, true});
        break;
      case StitchLayerMode::Full:
        refs.push_back({prefix + "m", &layer.m, &lg.m, tc.learning_rate, true});
        break;
      case StitchLayerMode::Frozen:
        break;
    }
  }
  return refs;
}

}  // namespace detail

// Joint training over the stitch space: least-squares init of every stitching
// layer, then per iteration one sampled constraint, one sampled stitch, one
// forward/backward, one optimizer step on that route's parameters only.
inline TrainLog train_snnet(StitchSpace& space, AnchorModel& small, AnchorModel& large,
                            const Dataset& train, const BudgetDistribution& dist,
                            const TrainConfig& cfg) {
  cfg.validate();
  if (dist.total != space.size())
    throw StateError("train_snnet: distribution does not match the space");

  // Least-squares matching on a calibration batch; LoRA mode keeps M frozen
  // afterwards and trains the low-rank factors instead.
  {
    Rng calib_rng(derive_seed(cfg.seed, "calib"));
    const std::size_t n = std::min(cfg.calib_samples, train.size());
    const Batch calib = make_batch(train, sample_indices(calib_rng, train.size(), n));
    Rng init_rng(derive_seed(cfg.seed, "init"));
    const double b_std = cfg.layer_mode == StitchLayerMode::Lora ? cfg.lora_b_std : 0.0;
    init_stitch_layers(space, small, large, calib.tokens, calib.size(), init_rng, b_std);
  }

  Rng data_rng(derive_seed(cfg.seed, "data"));
  Rng sampler_rng(derive_seed(cfg.seed, "sampler"));
  AdamW opt;
  opt.weight_decay = cfg.weight_decay;

  TrainLog log;
  log.records.reserve(cfg.iterations);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::size_t config_id = 0;
    double tau0 = 0.0;
    if (cfg.sampler == SamplerKind::Ros) {
      const auto& bin = dist.bins[sampler_rng.below(dist.bins.size())];
      tau0 = bin.flops;
      config_id = bin.members[sampler_rng.below(bin.members.size())];
    } else {
      config_id = uniform_sample_index(space, sampler_rng);
      tau0 = dist.bins[dist.member_bin[config_id]].flops;
    }

    const Batch batch = make_batch(train, sample_indices(data_rng, train.size(),
                                                         cfg.batch_size));
    StitchForwardResult fwd =
        forward_stitched(space, config_id, small, large, batch.tokens, batch.size());
    LossResult loss = softmax_cross_entropy(fwd.logits, batch.labels);
    if (!std::isfinite(loss.loss))
      throw NumericalError("train_snnet: non-finite loss at iteration " +
                           std::to_string(it) + " on config " +
                           std::to_string(config_id) + " (" +
                           kind_name(space.configs[config_id].kind) + ")");
    StitchGrads grads =
        backward_stitched(space, config_id, small, large, fwd.trace, loss.dlogits);

    for (auto& ref : detail::route_params(space.configs[config_id], space, small, large,
                                          grads, cfg))
      opt.step(ref.name, *ref.param, *ref.grad, ref.lr, ref.decay);

    log.records.push_back({it, tau0, config_id, loss.loss});
  }
  return log;
}

}  // namespace snstitch
