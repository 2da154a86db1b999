#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "snstitch/errors.hpp"
#include "snstitch/matrix.hpp"
#include "snstitch/rng.hpp"

namespace snstitch {

// Architecture of one anchor: a plain pre-norm transformer over N tokens of
// patch_dim features, mean-pooled into a classification head. No class token.
struct AnchorSpec {
  std::size_t depth = 0;       // block count
  std::size_t width = 0;       // embedding dim D
  std::size_t heads = 0;
  double mlp_ratio = 4.0;
  std::size_t patch_dim = 0;   // input token feature size
  std::size_t num_classes = 0;
  std::size_t seq_len = 0;     // tokens per sample N

  std::size_t mlp_hidden() const {
    return static_cast<std::size_t>(static_cast<double>(width) * mlp_ratio);
  }

  void validate() const {
    if (depth < 2) throw ShapeError("AnchorSpec: depth must be >= 2");
    if (width == 0 || heads == 0 || width % heads != 0)
      throw ShapeError("AnchorSpec: width must be a positive multiple of heads");
    if (seq_len < 1) throw ShapeError("AnchorSpec: seq_len must be >= 1");
    if (patch_dim == 0 || num_classes == 0)
      throw ShapeError("AnchorSpec: patch_dim and num_classes must be positive");
  }

  bool operator==(const AnchorSpec&) const = default;
};

// Pre-norm ViT block: x + attn(ln1(x)), then + mlp(ln2(.)), GELU activation.
struct TransformerBlock {
  Matrix ln1_g, ln1_b;    // 1 x D
  Matrix qkv_w, qkv_b;    // D x 3D, 1 x 3D
  Matrix proj_w, proj_b;  // D x D, 1 x D
  Matrix ln2_g, ln2_b;    // 1 x D
  Matrix fc1_w, fc1_b;    // D x H, 1 x H
  Matrix fc2_w, fc2_b;    // H x D, 1 x D
};

struct AnchorModel {
  AnchorSpec spec;
  Matrix embed_w, embed_b;  // patch_dim x D, 1 x D
  std::vector<TransformerBlock> blocks;
  Matrix norm_g, norm_b;    // 1 x D
  Matrix head_w, head_b;    // D x num_classes, 1 x num_classes

  // All-zero parameter container with the spec's shapes; doubles as the
  // gradient accumulator.
  static AnchorModel zeros(const AnchorSpec& spec) {
    spec.validate();
    AnchorModel m;
    m.spec = spec;
    const std::size_t d = spec.width, h = spec.mlp_hidden();
    m.embed_w = Matrix(spec.patch_dim, d);
    m.embed_b = Matrix(1, d);
    m.blocks.resize(spec.depth);
    for (auto& b : m.blocks) {
      b.ln1_g = Matrix(1, d);
      b.ln1_b = Matrix(1, d);
      b.qkv_w = Matrix(d, 3 * d);
      b.qkv_b = Matrix(1, 3 * d);
      b.proj_w = Matrix(d, d);
      b.proj_b = Matrix(1, d);
      b.ln2_g = Matrix(1, d);
      b.ln2_b = Matrix(1, d);
      b.fc1_w = Matrix(d, h);
      b.fc1_b = Matrix(1, h);
      b.fc2_w = Matrix(h, d);
      b.fc2_b = Matrix(1, d);
    }
    m.norm_g = Matrix(1, d);
    m.norm_b = Matrix(1, d);
    m.head_w = Matrix(d, spec.num_classes);
    m.head_b = Matrix(1, spec.num_classes);
    return m;
  }

  static AnchorModel init(const AnchorSpec& spec, Rng& rng, double init_std = 0.02) {
    AnchorModel m = zeros(spec);
    const std::size_t d = spec.width, h = spec.mlp_hidden();
    m.embed_w = gaussian(rng, spec.patch_dim, d, init_std);
    for (auto& b : m.blocks) {
      b.ln1_g.fill(1.0);
      b.qkv_w = gaussian(rng, d, 3 * d, init_std);
      b.proj_w = gaussian(rng, d, d, init_std);
      b.ln2_g.fill(1.0);
      b.fc1_w = gaussian(rng, d, h, init_std);
      b.fc2_w = gaussian(rng, h, d, init_std);
    }
    m.norm_g.fill(1.0);
    m.head_w = gaussian(rng, d, spec.num_classes, init_std);
    return m;
  }
};

template <class Block, class Fn>
void for_each_block_param(Block& b, const std::string& prefix, Fn&& fn) {
  fn(prefix + "ln1.g", b.ln1_g);
  fn(prefix + "ln1.b", b.ln1_b);
  fn(prefix + "qkv.w", b.qkv_w);
  fn(prefix + "qkv.b", b.qkv_b);
  fn(prefix + "proj.w", b.proj_w);
  fn(prefix + "proj.b", b.proj_b);
  fn(prefix + "ln2.g", b.ln2_g);
  fn(prefix + "ln2.b", b.ln2_b);
  fn(prefix + "fc1.w", b.fc1_w);
  fn(prefix + "fc1.b", b.fc1_b);
  fn(prefix + "fc2.w", b.fc2_w);
  fn(prefix + "fc2.b", b.fc2_b);
}

template <class Model, class Fn>
void for_each_param(Model& m, Fn&& fn) {
  fn(std::string("embed.w"), m.embed_w);
  fn(std::string("embed.b"), m.embed_b);
  for (std::size_t i = 0; i < m.blocks.size(); ++i)
    for_each_block_param(m.blocks[i], "block" + std::to_string(i) + ".", fn);
  fn(std::string("norm.g"), m.norm_g);
  fn(std::string("norm.b"), m.norm_b);
  fn(std::string("head.w"), m.head_w);
  fn(std::string("head.b"), m.head_b);
}

// ---------------------------------------------------------------------------
// elementwise / rowwise primitives
// ---------------------------------------------------------------------------

inline void add_row_vector(Matrix& x, const Matrix& b) {
  if (b.rows() != 1 || b.cols() != x.cols())
    throw ShapeError("add_row_vector: " + shape_str(x) + " += " + shape_str(b));
  const double* bp = b.data();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double* r = x.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) r[j] += bp[j];
  }
}

inline Matrix col_sums(const Matrix& x) {
  Matrix s(1, x.cols());
  double* sp = s.data();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* r = x.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) sp[j] += r[j];
  }
  return s;
}

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

inline double gelu_grad(double x) {
  const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)) + x * phi;
}

constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
  Matrix xhat;                  // normalized rows before scale/shift
  std::vector<double> inv_std;  // per row
  Matrix out;
};

inline Matrix layer_norm(const Matrix& x, const Matrix& g, const Matrix& b,
                         LayerNormCache* cache = nullptr) {
  const std::size_t d = x.cols();
  Matrix out(x.rows(), d);
  Matrix xhat(x.rows(), d);
  std::vector<double> inv_std(x.rows());
  const double* gp = g.data();
  const double* bp = b.data();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* r = x.row(i);
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += r[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = r[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_std[i] = inv;
    double* xh = xhat.row(i);
    double* o = out.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      xh[j] = (r[j] - mean) * inv;
      o[j] = xh[j] * gp[j] + bp[j];
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->out = out;
  }
  return out;
}

// Accumulates dgamma/dbeta, returns dx.
inline Matrix layer_norm_backward(const LayerNormCache& c, const Matrix& g,
                                  const Matrix& dy, Matrix& dgamma, Matrix& dbeta) {
  const std::size_t d = c.xhat.cols();
  Matrix dx(c.xhat.rows(), d);
  const double* gp = g.data();
  double* dgp = dgamma.data();
  double* dbp = dbeta.data();
  std::vector<double> dxhat(d);
  for (std::size_t i = 0; i < c.xhat.rows(); ++i) {
    const double* dyr = dy.row(i);
    const double* xh = c.xhat.row(i);
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dgp[j] += dyr[j] * xh[j];
      dbp[j] += dyr[j];
      dxhat[j] = dyr[j] * gp[j];
      mean_dxhat += dxhat[j];
      mean_dxhat_xhat += dxhat[j] * xh[j];
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    const double inv = c.inv_std[i];
    double* dxr = dx.row(i);
    for (std::size_t j = 0; j < d; ++j)
      dxr[j] = inv * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
  }
  return dx;
}

inline void softmax_rows(Matrix& x) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double* r = x.row(i);
    double mx = r[0];
    for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, r[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      r[j] = std::exp(r[j] - mx);
      sum += r[j];
    }
    for (std::size_t j = 0; j < x.cols(); ++j) r[j] /= sum;
  }
}

// ---------------------------------------------------------------------------
// transformer block forward/backward over batch-stacked activations
// ---------------------------------------------------------------------------

// Everything block_backward needs, captured by block_forward. Activations are
// stacked (batch * seq_len) x D; attention runs per sample, per head.
struct BlockCache {
  LayerNormCache ln1;
  Matrix qkv;                 // (B*N) x 3D
  std::vector<Matrix> probs;  // batch*heads softmax matrices, each N x N
  Matrix att_concat;          // (B*N) x D, heads concatenated before proj
  LayerNormCache ln2;
  Matrix fc1_pre;             // (B*N) x H
  Matrix fc1_act;             // (B*N) x H
};

inline Matrix block_forward(const TransformerBlock& blk, std::size_t heads,
                            const Matrix& x, std::size_t batch, BlockCache* cache) {
  const std::size_t d = blk.proj_w.rows();
  if (x.cols() != d) throw ShapeError("block_forward: width mismatch " + shape_str(x));
  if (batch == 0 || x.rows() % batch != 0)
    throw ShapeError("block_forward: rows not divisible by batch");
  const std::size_t n = x.rows() / batch;
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  BlockCache local;
  BlockCache& c = cache ? *cache : local;

  Matrix ln1_out = layer_norm(x, blk.ln1_g, blk.ln1_b, &c.ln1);
  Matrix qkv = matmul(ln1_out, blk.qkv_w);
  add_row_vector(qkv, blk.qkv_b);

  Matrix concat(x.rows(), d);
  c.probs.clear();
  c.probs.reserve(batch * heads);
  for (std::size_t s = 0; s < batch; ++s) {
    const std::size_t base = s * n;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
      Matrix scores(n, n);
      for (std::size_t i = 0; i < n; ++i) {
        const double* qi = qkv.row(base + i) + qo;
        for (std::size_t j = 0; j < n; ++j) {
          const double* kj = qkv.row(base + j) + ko;
          double acc = 0.0;
          for (std::size_t t = 0; t < dh; ++t) acc += qi[t] * kj[t];
          scores(i, j) = acc * scale;
        }
      }
      softmax_rows(scores);
      for (std::size_t i = 0; i < n; ++i) {
        double* out = concat.row(base + i) + qo;
        const double* p = scores.row(i);
        for (std::size_t j = 0; j < n; ++j) {
          const double* vj = qkv.row(base + j) + vo;
          const double pij = p[j];
          for (std::size_t t = 0; t < dh; ++t) out[t] += pij * vj[t];
        }
      }
      c.probs.push_back(std::move(scores));
    }
  }

  Matrix att = matmul(concat, blk.proj_w);
  add_row_vector(att, blk.proj_b);
  Matrix a = x;
  a += att;  // residual 1

  Matrix ln2_out = layer_norm(a, blk.ln2_g, blk.ln2_b, &c.ln2);
  Matrix fc1 = matmul(ln2_out, blk.fc1_w);
  add_row_vector(fc1, blk.fc1_b);
  Matrix act(fc1.rows(), fc1.cols());
  for (std::size_t i = 0; i < fc1.size(); ++i) act.data()[i] = gelu(fc1.data()[i]);
  Matrix mlp = matmul(act, blk.fc2_w);
  add_row_vector(mlp, blk.fc2_b);
  Matrix y = a;
  y += mlp;  // residual 2

  if (cache) {
    c.qkv = std::move(qkv);
    c.att_concat = std::move(concat);
    c.fc1_pre = std::move(fc1);
    c.fc1_act = std::move(act);
  }
  return y;
}

// Accumulates parameter gradients into grad, returns dx.
inline Matrix block_backward(const TransformerBlock& blk, std::size_t heads,
                             const BlockCache& c, std::size_t batch, const Matrix& dy,
                             TransformerBlock& grad) {
  const std::size_t d = blk.proj_w.rows();
  const std::size_t n = dy.rows() / batch;
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // MLP branch: y = a + fc2(gelu(fc1(ln2(a))))
  grad.fc2_b += col_sums(dy);
  grad.fc2_w += matmul_tn(c.fc1_act, dy);
  Matrix dact = matmul_nt(dy, blk.fc2_w);
  for (std::size_t i = 0; i < dact.size(); ++i)
    dact.data()[i] *= gelu_grad(c.fc1_pre.data()[i]);
  grad.fc1_b += col_sums(dact);
  grad.fc1_w += matmul_tn(c.ln2.out, dact);
  Matrix dln2_out = matmul_nt(dact, blk.fc1_w);
  Matrix da = layer_norm_backward(c.ln2, blk.ln2_g, dln2_out, grad.ln2_g, grad.ln2_b);
  da += dy;  // residual 2

  // Attention branch: a = x + proj(attn(ln1(x)))
  grad.proj_b += col_sums(da);
  grad.proj_w += matmul_tn(c.att_concat, da);
  Matrix dconcat = matmul_nt(da, blk.proj_w);

  Matrix dqkv(dy.rows(), 3 * d);
  for (std::size_t s = 0; s < batch; ++s) {
    const std::size_t base = s * n;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
      const Matrix& p = c.probs[s * heads + h];
      // dP = dO . V^T ; dV = P^T . dO
      Matrix dp(n, n);
      for (std::size_t i = 0; i < n; ++i) {
        const double* doi = dconcat.row(base + i) + qo;
        for (std::size_t j = 0; j < n; ++j) {
          const double* vj = c.qkv.row(base + j) + vo;
          double acc = 0.0;
          for (std::size_t t = 0; t < dh; ++t) acc += doi[t] * vj[t];
          dp(i, j) = acc;
        }
      }
      for (std::size_t j = 0; j < n; ++j) {
        double* dvj = dqkv.row(base + j) + vo;
        for (std::size_t i = 0; i < n; ++i) {
          const double pij = p(i, j);
          const double* doi = dconcat.row(base + i) + qo;
          for (std::size_t t = 0; t < dh; ++t) dvj[t] += pij * doi[t];
        }
      }
      // softmax backward: dS = P o (dP - rowsum(dP o P))
      Matrix ds(n, n);
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += dp(i, j) * p(i, j);
        for (std::size_t j = 0; j < n; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot);
      }
      // dQ = dS . K * scale ; dK = dS^T . Q * scale
      for (std::size_t i = 0; i < n; ++i) {
        double* dqi = dqkv.row(base + i) + qo;
        for (std::size_t j = 0; j < n; ++j) {
          const double dsij = ds(i, j) * scale;
          const double* kj = c.qkv.row(base + j) + ko;
          for (std::size_t t = 0; t < dh; ++t) dqi[t] += dsij * kj[t];
        }
      }
      for (std::size_t j = 0; j < n; ++j) {
        double* dkj = dqkv.row(base + j) + ko;
        for (std::size_t i = 0; i < n; ++i) {
          const double dsij = ds(i, j) * scale;
          const double* qi = c.qkv.row(base + i) + qo;
          for (std::size_t t = 0; t < dh; ++t) dkj[t] += dsij * qi[t];
        }
      }
    }
  }

  grad.qkv_b += col_sums(dqkv);
  grad.qkv_w += matmul_tn(c.ln1.out, dqkv);
  Matrix dln1_out = matmul_nt(dqkv, blk.qkv_w);
  Matrix dx = layer_norm_backward(c.ln1, blk.ln1_g, dln1_out, grad.ln1_g, grad.ln1_b);
  dx += da;  // residual 1
  return dx;
}

// ---------------------------------------------------------------------------
// anchor-level forward/backward
// ---------------------------------------------------------------------------

inline Matrix embed_forward(const AnchorModel& m, const Matrix& tokens) {
  if (tokens.cols() != m.spec.patch_dim)
    throw ShapeError("embed_forward: token dim " + shape_str(tokens) + " vs patch_dim " +
                     std::to_string(m.spec.patch_dim));
  Matrix x = matmul(tokens, m.embed_w);
  add_row_vector(x, m.embed_b);
  return x;
}

inline void embed_backward(const Matrix& tokens, const Matrix& dx, AnchorModel& grads) {
  grads.embed_w += matmul_tn(tokens, dx);
  grads.embed_b += col_sums(dx);
}

// Applies blocks [from, to) to stacked activations h.
inline Matrix forward_range(const AnchorModel& m, Matrix h, std::size_t from,
                            std::size_t to, std::size_t batch,
                            std::vector<BlockCache>* caches = nullptr) {
  if (from > to || to > m.spec.depth)
    throw IndexError("forward_range: bad block range [" + std::to_string(from) + ", " +
                     std::to_string(to) + ") for depth " + std::to_string(m.spec.depth));
  if (caches) caches->resize(to - from);
  for (std::size_t k = from; k < to; ++k)
    h = block_forward(m.blocks[k], m.spec.heads, h, batch,
                      caches ? &(*caches)[k - from] : nullptr);
  return h;
}

inline Matrix backward_range(const AnchorModel& m, const std::vector<BlockCache>& caches,
                             std::size_t from, std::size_t to, Matrix dy,
                             std::size_t batch, AnchorModel& grads) {
  if (from > to || to > m.spec.depth) throw IndexError("backward_range: bad block range");
  if (caches.size() != to - from) throw StateError("backward_range: cache count mismatch");
  for (std::size_t k = to; k > from; --k)
    dy = block_backward(m.blocks[k - 1], m.spec.heads, caches[k - 1 - from], batch, dy,
                        grads.blocks[k - 1]);
  return dy;
}

struct HeadCache {
  LayerNormCache ln;
  Matrix pooled;  // batch x D
};

// Final norm over tokens, mean-pool per sample, then the linear classifier.
inline Matrix head_forward(const AnchorModel& m, const Matrix& x, std::size_t batch,
                           HeadCache* cache = nullptr) {
  if (x.cols() != m.spec.width) throw ShapeError("head_forward: width mismatch");
  if (batch == 0 || x.rows() % batch != 0)
    throw ShapeError("head_forward: rows not divisible by batch");
  const std::size_t n = x.rows() / batch;
  HeadCache local;
  HeadCache& c = cache ? *cache : local;
  Matrix normed = layer_norm(x, m.norm_g, m.norm_b, &c.ln);
  Matrix pooled(batch, m.spec.width);
  for (std::size_t s = 0; s < batch; ++s) {
    double* pr = pooled.row(s);
    for (std::size_t i = 0; i < n; ++i) {
      const double* r = normed.row(s * n + i);
      for (std::size_t j = 0; j < m.spec.width; ++j) pr[j] += r[j];
    }
    for (std::size_t j = 0; j < m.spec.width; ++j) pr[j] /= static_cast<double>(n);
  }
  Matrix logits = matmul(pooled, m.head_w);
  add_row_vector(logits, m.head_b);
  if (cache) c.pooled = std::move(pooled);
  return logits;
}

inline Matrix head_backward(const AnchorModel& m, const HeadCache& c,
                            const Matrix& dlogits, std::size_t batch, AnchorModel& grads) {
  const std::size_t n = c.ln.xhat.rows() / batch;
  grads.head_b += col_sums(dlogits);
  grads.head_w += matmul_tn(c.pooled, dlogits);
  Matrix dpooled = matmul_nt(dlogits, m.head_w);
  Matrix dnormed(c.ln.xhat.rows(), m.spec.width);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t s = 0; s < batch; ++s) {
    const double* dp = dpooled.row(s);
    for (std::size_t i = 0; i < n; ++i) {
      double* r = dnormed.row(s * n + i);
      for (std::size_t j = 0; j < m.spec.width; ++j) r[j] = dp[j] * inv_n;
    }
  }
  return layer_norm_backward(c.ln, m.norm_g, dnormed, grads.norm_g, grads.norm_b);
}

struct AnchorTrace {
  std::size_t batch = 0;
  Matrix tokens;                 // (B*N) x patch_dim
  std::vector<Matrix> boundary;  // depth+1 stacked (B*N) x D activations
  std::vector<BlockCache> blocks;
  HeadCache head;
  Matrix logits;

  bool present() const { return batch > 0; }
};

struct ForwardResult {
  Matrix logits;
  AnchorTrace trace;
};

inline ForwardResult forward(const AnchorModel& m, const Matrix& tokens,
                             std::size_t batch) {
  if (tokens.rows() != batch * m.spec.seq_len)
    throw ShapeError("forward: expected " + std::to_string(batch * m.spec.seq_len) +
                     " token rows, got " + std::to_string(tokens.rows()));
  ForwardResult r;
  r.trace.batch = batch;
  r.trace.tokens = tokens;
  Matrix x = embed_forward(m, tokens);
  r.trace.boundary.reserve(m.spec.depth + 1);
  r.trace.boundary.push_back(x);
  r.trace.blocks.resize(m.spec.depth);
  for (std::size_t k = 0; k < m.spec.depth; ++k) {
    x = block_forward(m.blocks[k], m.spec.heads, x, batch, &r.trace.blocks[k]);
    r.trace.boundary.push_back(x);
  }
  r.logits = head_forward(m, x, batch, &r.trace.head);
  r.trace.logits = r.logits;
  return r;
}

inline AnchorModel backward(const AnchorModel& m, const AnchorTrace& trace,
                            const Matrix& dlogits) {
  if (!trace.present()) throw StateError("backward: forward cache missing");
  AnchorModel grads = AnchorModel::zeros(m.spec);
  Matrix dx = head_backward(m, trace.head, dlogits, trace.batch, grads);
  dx = backward_range(m, trace.blocks, 0, m.spec.depth, std::move(dx), trace.batch, grads);
  embed_backward(trace.tokens, dx, grads);
  return grads;
}

}  // namespace snstitch
