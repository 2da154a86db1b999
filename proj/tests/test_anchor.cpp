#include <gtest/gtest.h>

#include "snstitch/anchor.hpp"
#include "snstitch/training.hpp"
#include "test_helpers.hpp"

using namespace snstitch;

namespace {

AnchorSpec tiny_spec() { return {2, 8, 2, 4.0, 4, 3, 4}; }

Matrix random_tokens(Rng& rng, const AnchorSpec& spec, std::size_t batch) {
  return gaussian(rng, batch * spec.seq_len, spec.patch_dim, 1.0);
}

std::vector<std::size_t> cyclic_labels(std::size_t batch, std::size_t classes) {
  std::vector<std::size_t> labels(batch);
  for (std::size_t i = 0; i < batch; ++i) labels[i] = i % classes;
  return labels;
}

}  // namespace

TEST(Anchor, SpecValidation) {
  EXPECT_THROW((AnchorSpec{1, 8, 2, 4.0, 4, 3, 4}).validate(), ShapeError);
  EXPECT_THROW((AnchorSpec{2, 9, 2, 4.0, 4, 3, 4}).validate(), ShapeError);
  EXPECT_THROW((AnchorSpec{2, 8, 2, 4.0, 4, 3, 0}).validate(), ShapeError);
  EXPECT_NO_THROW(tiny_spec().validate());
}

TEST(Anchor, ZeroInputZeroHeadGivesUniformLogits) {
  Rng rng(1);
  AnchorModel m = AnchorModel::init(tiny_spec(), rng);
  m.head_w.set_zero();
  m.head_b.set_zero();
  Matrix tokens(2 * m.spec.seq_len, m.spec.patch_dim);  // all zero
  ForwardResult r = forward(m, tokens, 2);
  for (std::size_t i = 0; i < r.logits.rows(); ++i)
    for (std::size_t j = 0; j < r.logits.cols(); ++j)
      EXPECT_DOUBLE_EQ(r.logits(i, j), r.logits(i, 0));
}

TEST(Anchor, ForwardDeterminism) {
  Rng ra(5), rb(5);
  AnchorModel a = AnchorModel::init(tiny_spec(), ra);
  AnchorModel b = AnchorModel::init(tiny_spec(), rb);
  Rng ta(9), tb(9);
  Matrix xa = random_tokens(ta, a.spec, 3);
  Matrix xb = random_tokens(tb, b.spec, 3);
  EXPECT_TRUE(forward(a, xa, 3).logits.bit_equal(forward(b, xb, 3).logits));
}

TEST(Anchor, BoundaryActivationShape) {
  Rng rng(2);
  AnchorModel m = AnchorModel::init(tiny_spec(), rng);
  const std::size_t batch = 3;
  ForwardResult r = forward(m, random_tokens(rng, m.spec, batch), batch);
  ASSERT_EQ(r.trace.boundary.size(), m.spec.depth + 1);
  for (const Matrix& b : r.trace.boundary) {
    EXPECT_EQ(b.rows(), batch * m.spec.seq_len);
    EXPECT_EQ(b.cols(), m.spec.width);
  }
}

TEST(Anchor, ForwardRangeEmptyIdentity) {
  Rng rng(3);
  AnchorModel m = AnchorModel::init(tiny_spec(), rng);
  Matrix h = gaussian(rng, 2 * m.spec.seq_len, m.spec.width, 1.0);
  for (std::size_t k = 0; k <= m.spec.depth; ++k)
    EXPECT_TRUE(forward_range(m, h, k, k, 2).bit_equal(h));
}

TEST(Anchor, ForwardRangePlusHeadMatchesForward) {
  Rng rng(4);
  AnchorModel m = AnchorModel::init(tiny_spec(), rng);
  Matrix tokens = random_tokens(rng, m.spec, 2);
  ForwardResult full = forward(m, tokens, 2);
  Matrix x = embed_forward(m, tokens);
  x = forward_range(m, std::move(x), 0, m.spec.depth, 2);
  Matrix logits = head_forward(m, x, 2);
  EXPECT_TRUE(logits.bit_equal(full.logits));
}

TEST(Anchor, SplitCompositionality) {
  Rng rng(6);
  AnchorSpec spec{4, 8, 2, 4.0, 4, 3, 4};
  AnchorModel m = AnchorModel::init(spec, rng);
  Matrix h = gaussian(rng, 2 * spec.seq_len, spec.width, 1.0);
  Matrix whole = forward_range(m, h, 0, spec.depth, 2);
  for (std::size_t k = 0; k <= spec.depth; ++k) {
    Matrix split = forward_range(m, forward_range(m, h, 0, k, 2), k, spec.depth, 2);
    EXPECT_TRUE(split.bit_equal(whole)) << "split at " << k;
  }
}

TEST(Anchor, ForwardRangeIndexErrors) {
  Rng rng(7);
  AnchorModel m = AnchorModel::init(tiny_spec(), rng);
  Matrix h(m.spec.seq_len, m.spec.width);
  EXPECT_THROW(forward_range(m, h, 0, m.spec.depth + 1, 1), IndexError);
  EXPECT_THROW(forward_range(m, h, 2, 1, 1), IndexError);
}

TEST(Anchor, ResidualIdentityPathWithZeroBlocks) {
  Rng rng(8);
  AnchorModel m = AnchorModel::init(tiny_spec(), rng);
  for (auto& blk : m.blocks) {
    for_each_block_param(blk, "", [](const std::string&, Matrix& t) { t.set_zero(); });
  }
  Matrix tokens = random_tokens(rng, m.spec, 2);
  ForwardResult r = forward(m, tokens, 2);
  EXPECT_TRUE(r.trace.boundary.back().bit_equal(r.trace.boundary.front()));
}

TEST(Anchor, GradientMatchesFiniteDifferences) {
  Rng rng(10);
  AnchorModel m = AnchorModel::init(tiny_spec(), rng);
  const std::size_t batch = 2;
  Matrix tokens = random_tokens(rng, m.spec, batch);
  const std::vector<std::size_t> labels = cyclic_labels(batch, m.spec.num_classes);

  ForwardResult fwd = forward(m, tokens, batch);
  LossResult loss = softmax_cross_entropy(fwd.logits, labels);
  AnchorModel grads = backward(m, fwd.trace, loss.dlogits);

  auto loss_fn = [&]() {
    return softmax_cross_entropy(forward(m, tokens, batch).logits, labels).loss;
  };

  std::vector<std::pair<std::string, Matrix*>> params, gradps;
  for_each_param(m, [&](const std::string& n, Matrix& p) { params.emplace_back(n, &p); });
  for_each_param(grads,
                 [&](const std::string& n, Matrix& g) { gradps.emplace_back(n, &g); });
  ASSERT_EQ(params.size(), gradps.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double err =
        testutil::max_grad_rel_error(*params[i].second, *gradps[i].second, loss_fn);
    EXPECT_LE(err, 1e-4) << params[i].first;
  }
}

TEST(Anchor, ZeroLossGradientGivesZeroGrads) {
  Rng rng(12);
  AnchorModel m = AnchorModel::init(tiny_spec(), rng);
  Matrix tokens = random_tokens(rng, m.spec, 2);
  ForwardResult fwd = forward(m, tokens, 2);
  AnchorModel grads = backward(m, fwd.trace, Matrix(2, m.spec.num_classes));
  for_each_param(grads, [](const std::string& n, Matrix& g) {
    EXPECT_EQ(max_abs(g), 0.0) << n;
  });
}

TEST(Anchor, BackwardWithoutCacheThrows) {
  Rng rng(14);
  AnchorModel m = AnchorModel::init(tiny_spec(), rng);
  AnchorTrace empty;
  EXPECT_THROW(backward(m, empty, Matrix(2, 3)), StateError);
}

TEST(Anchor, ForwardShapeErrors) {
  Rng rng(15);
  AnchorModel m = AnchorModel::init(tiny_spec(), rng);
  EXPECT_THROW(forward(m, Matrix(5, m.spec.patch_dim), 2), ShapeError);
  EXPECT_THROW(forward(m, Matrix(2 * m.spec.seq_len, m.spec.patch_dim + 1), 2),
               ShapeError);
}
