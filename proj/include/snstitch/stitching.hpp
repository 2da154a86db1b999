#pragma once

#include <compare>
#include <cstddef>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "snstitch/anchor.hpp"
#include "snstitch/errors.hpp"
#include "snstitch/matrix.hpp"
#include "snstitch/rng.hpp"
#include "snstitch/svd.hpp"

namespace snstitch {

enum class AnchorId { Small, Large };  // small = fast, large = slow
enum class CrossDir { SmallToLarge, LargeToSmall };
enum class StitchKind { AnchorSmall, AnchorLarge, FS, SF, FSF, SFS };
enum class SpaceMode { TwoWay, V1FastToSlow };

inline const char* kind_name(StitchKind k) {
  switch (k) {
    case StitchKind::AnchorSmall: return "anchor_small";
    case StitchKind::AnchorLarge: return "anchor_large";
    case StitchKind::FS: return "fs";
    case StitchKind::SF: return "sf";
    case StitchKind::FSF: return "fsf";
    case StitchKind::SFS: return "sfs";
  }
  return "?";
}

// A boundary where activations transfer between anchors. Parameterized at
// small-anchor granularity; the paired large-anchor boundary is
// small_boundary * (L_large / L_small).
struct CrossingId {
  CrossDir dir = CrossDir::SmallToLarge;
  std::size_t small_boundary = 0;  // in [1, L_small - 1]

  auto operator<=>(const CrossingId&) const = default;

  std::size_t large_boundary(std::size_t depth_ratio) const {
    return small_boundary * depth_ratio;
  }

  std::string str() const {
    return (dir == CrossDir::SmallToLarge ? "s2l@" : "l2s@") +
           std::to_string(small_boundary);
  }
};

struct Segment {
  AnchorId anchor = AnchorId::Small;
  std::size_t from = 0;  // block range [from, to)
  std::size_t to = 0;

  bool operator==(const Segment&) const = default;
};

// One routed network: ordered block ranges over the two anchors, joined by
// stitching layers at the listed crossings.
struct StitchConfig {
  StitchKind kind = StitchKind::AnchorSmall;
  std::vector<Segment> segments;
  std::vector<CrossingId> crossings;  // size == segments.size() - 1
  AnchorId head_anchor = AnchorId::Small;

  bool operator==(const StitchConfig&) const = default;
};

// Frozen least-squares map M plus trainable low-rank factors B, A. At
// construction A is zero, so the update B*A does not perturb M.
struct StitchLayer {
  Matrix m;  // d_in x d_out
  Matrix b;  // d_in x rank
  Matrix a;  // rank x d_out
  std::size_t rank = 0;

  std::size_t d_in() const { return m.rows(); }
  std::size_t d_out() const { return m.cols(); }
};

inline Matrix stitch_layer_forward(const StitchLayer& layer, const Matrix& x) {
  if (x.cols() != layer.d_in())
    throw ShapeError("stitch_layer_forward: input " + shape_str(x) + " vs layer " +
                     shape_str(layer.m));
  Matrix y = matmul(x, layer.m);
  y += matmul(matmul(x, layer.b), layer.a);
  return y;
}

struct StitchSpace {
  AnchorSpec small, large;
  SpaceMode mode = SpaceMode::TwoWay;
  std::size_t lora_rank = 16;
  std::vector<StitchConfig> configs;
  std::map<CrossingId, StitchLayer> layers;  // one shared layer per crossing
  std::size_t anchor_small_id = 0;
  std::size_t anchor_large_id = 1;

  std::size_t size() const { return configs.size(); }
  std::size_t depth_ratio() const { return large.depth / small.depth; }

  const StitchConfig& config(std::size_t id) const {
    if (id >= configs.size())
      throw LookupError("StitchSpace: config id " + std::to_string(id) +
                        " out of range (E=" + std::to_string(configs.size()) + ")");
    return configs[id];
  }
};

// Enumerates the stitch space. V1FastToSlow reproduces the one-direction
// baseline {anchors} + FS(l); TwoWay adds SF(l) plus FSF/SFS round trips at
// boundary pairs l1 < l2, giving 2 + 2(L-1) + (L-1)(L-2) configs for small
// depth L.
inline StitchSpace enumerate_space(const AnchorSpec& small, const AnchorSpec& large,
                                   SpaceMode mode, std::size_t lora_rank = 16) {
  small.validate();
  large.validate();
  if (small.depth == 0 || large.depth % small.depth != 0)
    throw ShapeError("enumerate_space: large depth must be an integer multiple of "
                     "small depth");
  if (small.width > large.width)
    throw ShapeError("enumerate_space: small anchor must not be wider than large");
  if (small.patch_dim != large.patch_dim || small.num_classes != large.num_classes ||
      small.seq_len != large.seq_len)
    throw ShapeError("enumerate_space: anchors must share patch_dim, num_classes "
                     "and seq_len");
  if (lora_rank < 1 || lora_rank > std::min(small.width, large.width))
    throw ShapeError("enumerate_space: lora rank must be in [1, min(D1, D2)]");

  StitchSpace space;
  space.small = small;
  space.large = large;
  space.mode = mode;
  space.lora_rank = lora_rank;
  const std::size_t ls = small.depth, ll = large.depth;
  const std::size_t ratio = ll / ls;

  auto add = [&](StitchConfig c) { space.configs.push_back(std::move(c)); };

  add({StitchKind::AnchorSmall, {{AnchorId::Small, 0, ls}}, {}, AnchorId::Small});
  add({StitchKind::AnchorLarge, {{AnchorId::Large, 0, ll}}, {}, AnchorId::Large});

  for (std::size_t l = 1; l < ls; ++l) {
    add({StitchKind::FS,
         {{AnchorId::Small, 0, l}, {AnchorId::Large, l * ratio, ll}},
         {{CrossDir::SmallToLarge, l}},
         AnchorId::Large});
  }
  if (mode == SpaceMode::TwoWay) {
    for (std::size_t l = 1; l < ls; ++l) {
      add({StitchKind::SF,
           {{AnchorId::Large, 0, l * ratio}, {AnchorId::Small, l, ls}},
           {{CrossDir::LargeToSmall, l}},
           AnchorId::Small});
    }
    for (std::size_t l1 = 1; l1 < ls; ++l1) {
      for (std::size_t l2 = l1 + 1; l2 < ls; ++l2) {
        add({StitchKind::FSF,
             {{AnchorId::Small, 0, l1},
              {AnchorId::Large, l1 * ratio, l2 * ratio},
              {AnchorId::Small, l2, ls}},
             {{CrossDir::SmallToLarge, l1}, {CrossDir::LargeToSmall, l2}},
             AnchorId::Small});
      }
    }
    for (std::size_t l1 = 1; l1 < ls; ++l1) {
      for (std::size_t l2 = l1 + 1; l2 < ls; ++l2) {
        add({StitchKind::SFS,
             {{AnchorId::Large, 0, l1 * ratio},
              {AnchorId::Small, l1, l2},
              {AnchorId::Large, l2 * ratio, ll}},
             {{CrossDir::LargeToSmall, l1}, {CrossDir::SmallToLarge, l2}},
             AnchorId::Large});
      }
    }
  }

  // One shared layer per crossing identity referenced by any config.
  for (const auto& cfg : space.configs) {
    for (const auto& cid : cfg.crossings) {
      if (space.layers.count(cid)) continue;
      const std::size_t din =
          cid.dir == CrossDir::SmallToLarge ? small.width : large.width;
      const std::size_t dout =
          cid.dir == CrossDir::SmallToLarge ? large.width : small.width;
      StitchLayer layer;
      layer.m = Matrix(din, dout);
      layer.b = Matrix(din, lora_rank);
      layer.a = Matrix(lora_rank, dout);
      layer.rank = lora_rank;
      space.layers.emplace(cid, std::move(layer));
    }
  }
  return space;
}

// Closed-form size of the two-way space for a ratio-compatible anchor pair.
inline std::size_t two_way_count(std::size_t small_depth) {
  return 2 + 2 * (small_depth - 1) + (small_depth - 1) * (small_depth - 2);
}

// ---------------------------------------------------------------------------
// least-squares initialization
// ---------------------------------------------------------------------------

struct LsInitInfo {
  std::size_t rank = 0;
  bool rank_deficient = false;
};

// M = pinv(X_in) * X_out, the Frobenius-optimal linear map from calibration
// activations X_in to targets X_out. Rank-deficient inputs fall back to the
// minimum-norm solution and are reported through info.
inline Matrix ls_init(const Matrix& x_in, const Matrix& x_out, double tol = 1e-10,
                      LsInitInfo* info = nullptr) {
  if (x_in.rows() != x_out.rows())
    throw ShapeError("ls_init: row mismatch " + shape_str(x_in) + " vs " +
                     shape_str(x_out));
  if (x_in.rows() < x_in.cols())
    throw ShapeError("ls_init: need at least " + std::to_string(x_in.cols()) +
                     " calibration rows, got " + std::to_string(x_in.rows()));
  PinvInfo pi;
  Matrix m = matmul(pinv(x_in, tol, &pi), x_out);
  if (info) {
    info->rank = pi.rank;
    info->rank_deficient = pi.rank < x_in.cols();
  }
  return m;
}

// Stacked activations entering every block boundary of the model, index 0 the
// patch embedding output, index depth the final block output.
inline std::vector<Matrix> boundary_activations(const AnchorModel& m,
                                                const Matrix& tokens,
                                                std::size_t batch) {
  std::vector<Matrix> acts;
  acts.reserve(m.spec.depth + 1);
  Matrix x = embed_forward(m, tokens);
  acts.push_back(x);
  for (std::size_t k = 0; k < m.spec.depth; ++k) {
    x = block_forward(m.blocks[k], m.spec.heads, x, batch, nullptr);
    acts.push_back(x);
  }
  return acts;
}

// Least-squares-initializes every stitching layer from calibration tokens and
// Gaussian-initializes the low-rank B factors (A stays zero, so the initial
// update is zero). lora_b_std <= 0 keeps B at zero (full/frozen layer modes).
inline void init_stitch_layers(StitchSpace& space, const AnchorModel& small,
                               const AnchorModel& large, const Matrix& calib_tokens,
                               std::size_t batch, Rng& rng, double lora_b_std = 0.02) {
  const std::vector<Matrix> small_acts = boundary_activations(small, calib_tokens, batch);
  const std::vector<Matrix> large_acts = boundary_activations(large, calib_tokens, batch);
  const std::size_t ratio = space.depth_ratio();
  for (auto& [cid, layer] : space.layers) {
    const std::size_t l = cid.small_boundary;
    const std::size_t lb = cid.large_boundary(ratio);
    const Matrix& x_in =
        cid.dir == CrossDir::SmallToLarge ? small_acts[l] : large_acts[lb];
    const Matrix& x_out =
        cid.dir == CrossDir::SmallToLarge ? large_acts[lb] : small_acts[l];
    LsInitInfo info;
    layer.m = ls_init(x_in, x_out, 1e-10, &info);
    if (info.rank_deficient)
      std::cerr << "warning: rank-deficient calibration activations at crossing "
                << cid.str() << " (rank " << info.rank << " of " << x_in.cols()
                << "); using minimum-norm solution\n";
    if (lora_b_std > 0.0)
      layer.b = gaussian(rng, layer.d_in(), layer.rank, lora_b_std);
    else
      layer.b.set_zero();
    layer.a.set_zero();
  }
}

// ---------------------------------------------------------------------------
// stitched forward / backward
// ---------------------------------------------------------------------------

struct RouteTrace {
  std::size_t batch = 0;
  Matrix tokens;
  struct SegmentTrace {
    std::vector<BlockCache> blocks;
  };
  struct CrossingTrace {
    Matrix x_in;  // activations entering the stitching layer
    Matrix xb;    // x_in * B
  };
  std::vector<SegmentTrace> segments;
  std::vector<CrossingTrace> crossings;
  HeadCache head;
  Matrix logits;

  bool present() const { return batch > 0; }
};

struct StitchForwardResult {
  Matrix logits;
  RouteTrace trace;
};

// Gradients for the tensors a single route touches; crossings not on the
// route are absent from the map.
struct StitchGrads {
  AnchorModel small, large;
  struct LayerGrads {
    Matrix m, b, a;
  };
  std::map<CrossingId, LayerGrads> layers;

  AnchorModel& anchor(AnchorId id) { return id == AnchorId::Small ? small : large; }
};

inline const AnchorModel& route_model(AnchorId id, const AnchorModel& small,
                                      const AnchorModel& large) {
  return id == AnchorId::Small ? small : large;
}

// Executes one stitch route: the first segment's anchor embeds the tokens,
// segments run through forward_range with stitching layers applied at each
// crossing, and the final segment's anchor supplies norm + head.
inline StitchForwardResult forward_stitched(const StitchSpace& space,
                                            std::size_t config_id,
                                            const AnchorModel& small,
                                            const AnchorModel& large,
                                            const Matrix& tokens, std::size_t batch) {
  const StitchConfig& cfg = space.config(config_id);
  if (small.spec != space.small || large.spec != space.large)
    throw LookupError("forward_stitched: models do not match the enumerated specs");

  StitchForwardResult r;
  RouteTrace& tr = r.trace;
  tr.batch = batch;
  tr.tokens = tokens;
  tr.segments.resize(cfg.segments.size());
  tr.crossings.resize(cfg.crossings.size());

  Matrix x = embed_forward(route_model(cfg.segments.front().anchor, small, large), tokens);
  for (std::size_t i = 0; i < cfg.segments.size(); ++i) {
    const Segment& seg = cfg.segments[i];
    x = forward_range(route_model(seg.anchor, small, large), std::move(x), seg.from,
                      seg.to, batch, &tr.segments[i].blocks);
    if (i + 1 < cfg.segments.size()) {
      const StitchLayer& layer = space.layers.at(cfg.crossings[i]);
      tr.crossings[i].x_in = x;
      tr.crossings[i].xb = matmul(x, layer.b);
      Matrix y = matmul(x, layer.m);
      y += matmul(tr.crossings[i].xb, layer.a);
      x = std::move(y);
    }
  }
  r.logits = head_forward(route_model(cfg.head_anchor, small, large), x, batch, &tr.head);
  tr.logits = r.logits;
  return r;
}

// Cache-free stitched forward for evaluation sweeps; numerically identical
// to forward_stitched.
inline Matrix stitched_logits(const StitchSpace& space, std::size_t config_id,
                              const AnchorModel& small, const AnchorModel& large,
                              const Matrix& tokens, std::size_t batch) {
  const StitchConfig& cfg = space.config(config_id);
  Matrix x = embed_forward(route_model(cfg.segments.front().anchor, small, large), tokens);
  for (std::size_t i = 0; i < cfg.segments.size(); ++i) {
    const Segment& seg = cfg.segments[i];
    x = forward_range(route_model(seg.anchor, small, large), std::move(x), seg.from,
                      seg.to, batch, nullptr);
    if (i + 1 < cfg.segments.size())
      x = stitch_layer_forward(space.layers.at(cfg.crossings[i]), x);
  }
  return head_forward(route_model(cfg.head_anchor, small, large), x, batch, nullptr);
}

inline StitchGrads backward_stitched(const StitchSpace& space, std::size_t config_id,
                                     const AnchorModel& small, const AnchorModel& large,
                                     const RouteTrace& trace, const Matrix& dlogits) {
  const StitchConfig& cfg = space.config(config_id);
  if (!trace.present()) throw StateError("backward_stitched: forward cache missing");

  StitchGrads grads;
  grads.small = AnchorModel::zeros(small.spec);
  grads.large = AnchorModel::zeros(large.spec);
  for (const auto& cid : cfg.crossings) {
    const StitchLayer& layer = space.layers.at(cid);
    StitchGrads::LayerGrads g;
    g.m = Matrix(layer.m.rows(), layer.m.cols());
    g.b = Matrix(layer.b.rows(), layer.b.cols());
    g.a = Matrix(layer.a.rows(), layer.a.cols());
    grads.layers.emplace(cid, std::move(g));
  }

  const AnchorModel& head_model = route_model(cfg.head_anchor, small, large);
  Matrix dx = head_backward(head_model, trace.head, dlogits, trace.batch,
                            grads.anchor(cfg.head_anchor));

  for (std::size_t i = cfg.segments.size(); i > 0; --i) {
    const Segment& seg = cfg.segments[i - 1];
    const AnchorModel& model = route_model(seg.anchor, small, large);
    dx = backward_range(model, trace.segments[i - 1].blocks, seg.from, seg.to,
                        std::move(dx), trace.batch, grads.anchor(seg.anchor));
    if (i - 1 > 0) {
      const CrossingId& cid = cfg.crossings[i - 2];
      const StitchLayer& layer = space.layers.at(cid);
      const RouteTrace::CrossingTrace& ct = trace.crossings[i - 2];
      StitchGrads::LayerGrads& lg = grads.layers.at(cid);
      lg.a += matmul_tn(ct.xb, dx);
      Matrix dxb = matmul_nt(dx, layer.a);
      lg.b += matmul_tn(ct.x_in, dxb);
      lg.m += matmul_tn(ct.x_in, dx);
      Matrix dprev = matmul_nt(dx, layer.m);
      dprev += matmul_nt(dxb, layer.b);
      dx = std::move(dprev);
    }
  }
  embed_backward(trace.tokens, dx, grads.anchor(cfg.segments.front().anchor));
  return grads;
}

}  // namespace snstitch
