#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <vector>

#include "snstitch/errors.hpp"
#include "snstitch/rng.hpp"
#include "snstitch/stitching.hpp"

namespace snstitch {

// FLOPs accounting for stitch routes. Block cost is fixed at
// 12*N*D^2 + 2*N^2*D (qkv 3ND^2, proj ND^2, attention 2N^2D, MLP 8ND^2) with
// multiply-accumulate counted as two FLOPs.
struct CostModel {
  std::size_t seq_len = 0;
  AnchorSpec small, large;
  bool count_crossing_flops = true;

  double block_flops(std::size_t width) const {
    const double n = static_cast<double>(seq_len);
    const double d = static_cast<double>(width);
    return 12.0 * n * d * d + 2.0 * n * n * d;
  }

  double embed_flops(const AnchorSpec& spec) const {
    return 2.0 * static_cast<double>(seq_len) * static_cast<double>(spec.patch_dim) *
           static_cast<double>(spec.width);
  }

  double head_flops(const AnchorSpec& spec) const {
    return 2.0 * static_cast<double>(spec.width) * static_cast<double>(spec.num_classes);
  }

  double crossing_flops(std::size_t d_in, std::size_t d_out) const {
    return 2.0 * static_cast<double>(seq_len) * static_cast<double>(d_in) *
           static_cast<double>(d_out);
  }

  // All blocks of one anchor; the Table-style backbone figure.
  double backbone_flops(const AnchorSpec& spec) const {
    return static_cast<double>(spec.depth) * block_flops(spec.width);
  }

  const AnchorSpec& spec_of(AnchorId id) const {
    return id == AnchorId::Small ? small : large;
  }
};

inline CostModel cost_model_for(const StitchSpace& space, bool count_crossing_flops = true) {
  return CostModel{space.small.seq_len, space.small, space.large, count_crossing_flops};
}

inline double flops_of(const StitchConfig& cfg, const CostModel& cost) {
  double total = cost.embed_flops(cost.spec_of(cfg.segments.front().anchor));
  for (const Segment& seg : cfg.segments)
    total += static_cast<double>(seg.to - seg.from) *
             cost.block_flops(cost.spec_of(seg.anchor).width);
  if (cost.count_crossing_flops) {
    for (const CrossingId& cid : cfg.crossings) {
      const std::size_t din = cid.dir == CrossDir::SmallToLarge ? cost.small.width
                                                                : cost.large.width;
      const std::size_t dout = cid.dir == CrossDir::SmallToLarge ? cost.large.width
                                                                 : cost.small.width;
      total += cost.crossing_flops(din, dout);
    }
  }
  total += cost.head_flops(cost.spec_of(cfg.head_anchor));
  return total;
}

inline std::size_t block_param_count(const AnchorSpec& spec) {
  const std::size_t d = spec.width, h = spec.mlp_hidden();
  return 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * h + h) + (h * d + d);
}

inline std::size_t params_of(const StitchConfig& cfg, const StitchSpace& space) {
  const AnchorSpec& first = cfg.segments.front().anchor == AnchorId::Small
                                ? space.small
                                : space.large;
  const AnchorSpec& last =
      cfg.head_anchor == AnchorId::Small ? space.small : space.large;
  std::size_t total = first.patch_dim * first.width + first.width;  // embed
  for (const Segment& seg : cfg.segments) {
    const AnchorSpec& spec = seg.anchor == AnchorId::Small ? space.small : space.large;
    total += (seg.to - seg.from) * block_param_count(spec);
  }
  total += 2 * last.width + last.width * last.num_classes + last.num_classes;  // norm+head
  for (const CrossingId& cid : cfg.crossings) {
    const StitchLayer& layer = space.layers.at(cid);
    total += layer.m.size() + layer.b.size() + layer.a.size();
  }
  return total;
}

// Categorical distribution of configs over FLOPs bins discretized at step t.
// Bin keys are round-half-up multiples of t; probabilities are exact counts
// over E, so they sum to one by construction.
struct BudgetDistribution {
  double step = 0.0;
  struct Bin {
    double flops = 0.0;  // bin key, a multiple of step
    std::vector<std::size_t> members;
  };
  std::vector<Bin> bins;               // sorted by flops
  std::vector<std::size_t> member_bin;  // config id -> bin index
  std::size_t total = 0;               // E

  double probability(std::size_t bin_idx) const {
    return static_cast<double>(bins[bin_idx].members.size()) /
           static_cast<double>(total);
  }
};

inline BudgetDistribution build_distribution(const StitchSpace& space,
                                             const CostModel& cost, double step) {
  if (step <= 0.0) throw NumericalError("build_distribution: step must be positive");
  std::map<long long, std::vector<std::size_t>> by_key;
  for (std::size_t id = 0; id < space.size(); ++id) {
    const double f = flops_of(space.configs[id], cost);
    const long long key = static_cast<long long>(std::floor(f / step + 0.5));
    by_key[key].push_back(id);
  }
  BudgetDistribution dist;
  dist.step = step;
  dist.total = space.size();
  dist.member_bin.resize(space.size());
  for (auto& [key, members] : by_key) {
    for (std::size_t id : members) dist.member_bin[id] = dist.bins.size();
    dist.bins.push_back({static_cast<double>(key) * step, std::move(members)});
  }
  return dist;
}

// Two-stage resource-constrained draw: a uniform occupied bin, then a uniform
// member of that bin. Marginal P(config) = 1 / (num_bins * bin_size).
inline std::size_t ros_sample_index(const BudgetDistribution& dist, Rng& rng) {
  if (dist.bins.empty()) throw StateError("ros_sample: empty distribution");
  const auto& bin = dist.bins[rng.below(dist.bins.size())];
  return bin.members[rng.below(bin.members.size())];
}

inline std::size_t uniform_sample_index(const StitchSpace& space, Rng& rng) {
  if (space.size() == 0) throw StateError("uniform_sample: empty space");
  return rng.below(space.size());
}

inline const StitchConfig& ros_sample(const BudgetDistribution& dist,
                                      const StitchSpace& space, Rng& rng) {
  return space.configs[ros_sample_index(dist, rng)];
}

inline const StitchConfig& uniform_sample(const StitchSpace& space, Rng& rng) {
  return space.configs[uniform_sample_index(space, rng)];
}

}  // namespace snstitch
