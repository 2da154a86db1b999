#include <gtest/gtest.h>

#include <fstream>

#include "snstitch/evalbench.hpp"
#include "snstitch/training.hpp"
#include "test_helpers.hpp"

using namespace snstitch;
using testutil::TempDir;

namespace {

struct BenchSetup {
  SynthTask task;
  AnchorModel small, large;
  StitchSpace space;
  CostModel cost;

  BenchSetup() {
    SynthTaskSpec ts;
    ts.num_classes = 3;
    ts.train_per_class = 30;
    ts.val_per_class = 15;
    ts.seq_len = 4;
    ts.patch_dim = 4;
    ts.prototype_seed = 5;
    Rng task_rng(401);
    task = make_synthetic(ts, task_rng);
    AnchorSpec ss{4, 8, 2, 4.0, 4, 3, 4}, ls{8, 16, 2, 4.0, 4, 3, 4};
    Rng rs(402), rl(403), ri(404);
    small = AnchorModel::init(ss, rs);
    large = AnchorModel::init(ls, rl);
    space = enumerate_space(ss, ls, SpaceMode::TwoWay, 2);
    cost = cost_model_for(space);
    Rng rc(405);
    Matrix calib = gaussian(rc, 16 * ss.seq_len, ss.patch_dim, 1.0);
    init_stitch_layers(space, small, large, calib, 16, ri, 0.02);
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST(Pareto, SingleRowSelected) {
  std::vector<SweepRow> rows{{0, StitchKind::FS, 1.0, 10, 0.5}};
  auto mask = pareto_front(rows);
  EXPECT_TRUE(mask[0]);
}

TEST(Pareto, EqualFlopsKeepsHigherAccuracy) {
  std::vector<SweepRow> rows{{0, StitchKind::FS, 1.0, 10, 0.5},
                             {1, StitchKind::SF, 1.0, 10, 0.6}};
  auto mask = pareto_front(rows);
  EXPECT_FALSE(mask[0]);
  EXPECT_TRUE(mask[1]);
}

TEST(Pareto, FullTiesKeepAll) {
  std::vector<SweepRow> rows{{0, StitchKind::FS, 1.0, 10, 0.6},
                             {1, StitchKind::SF, 1.0, 10, 0.6},
                             {2, StitchKind::FSF, 2.0, 10, 0.4}};
  auto mask = pareto_front(rows);
  EXPECT_TRUE(mask[0]);
  EXPECT_TRUE(mask[1]);
  EXPECT_FALSE(mask[2]);
}

TEST(Pareto, MatchesBruteForceOracleOnRandomRows) {
  Rng rng(81);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < 100; ++i) {
      // quantized values generate plenty of exact ties
      const double flops = static_cast<double>(rng.below(12));
      const double acc = static_cast<double>(rng.below(8)) / 8.0;
      rows.push_back({i, StitchKind::FS, flops, 1, acc});
    }
    const auto mask = pareto_front(rows);
    const auto oracle = testutil::pareto_oracle(rows);
    for (std::size_t i = 0; i < rows.size(); ++i)
      ASSERT_EQ(mask[i], oracle[i]) << "trial " << trial << " row " << i;
  }
}

TEST(Sweep, ProducesOneRowPerConfig) {
  BenchSetup b;
  SweepResult r = sweep(b.space, b.small, b.large, b.task.val, b.cost);
  EXPECT_EQ(r.rows.size(), b.space.size());
  EXPECT_EQ(r.pareto_mask.size(), b.space.size());
  for (std::size_t i = 1; i < r.rows.size(); ++i)
    EXPECT_LE(r.rows[i - 1].flops, r.rows[i].flops);
}

TEST(Sweep, AnchorRowsReproduceSoloAccuracy) {
  BenchSetup b;
  SweepResult r = sweep(b.space, b.small, b.large, b.task.val, b.cost);
  const double solo_small = model_accuracy(b.small, b.task.val);
  const double solo_large = model_accuracy(b.large, b.task.val);
  for (const SweepRow& row : r.rows) {
    if (row.config_id == b.space.anchor_small_id) {
      EXPECT_DOUBLE_EQ(row.accuracy, solo_small);
    }
    if (row.config_id == b.space.anchor_large_id) {
      EXPECT_DOUBLE_EQ(row.accuracy, solo_large);
    }
  }
}

TEST(Sweep, EvaluationMutatesNothing) {
  BenchSetup b;
  std::vector<Matrix> before;
  for_each_param(b.small, [&](const std::string&, Matrix& m) { before.push_back(m); });
  for_each_param(b.large, [&](const std::string&, Matrix& m) { before.push_back(m); });
  for (auto& [cid, layer] : b.space.layers) {
    before.push_back(layer.m);
    before.push_back(layer.b);
    before.push_back(layer.a);
  }
  sweep(b.space, b.small, b.large, b.task.val, b.cost);
  std::size_t i = 0;
  for_each_param(b.small, [&](const std::string&, Matrix& m) {
    EXPECT_TRUE(m.bit_equal(before[i++]));
  });
  for_each_param(b.large, [&](const std::string&, Matrix& m) {
    EXPECT_TRUE(m.bit_equal(before[i++]));
  });
  for (auto& [cid, layer] : b.space.layers) {
    EXPECT_TRUE(layer.m.bit_equal(before[i++]));
    EXPECT_TRUE(layer.b.bit_equal(before[i++]));
    EXPECT_TRUE(layer.a.bit_equal(before[i++]));
  }
}

TEST(Sweep, WorkerPoolMatchesSequential) {
  BenchSetup b;
  SweepResult one = sweep(b.space, b.small, b.large, b.task.val, b.cost, 1);
  SweepResult four = sweep(b.space, b.small, b.large, b.task.val, b.cost, 4);
  ASSERT_EQ(one.rows.size(), four.rows.size());
  for (std::size_t i = 0; i < one.rows.size(); ++i) {
    EXPECT_EQ(one.rows[i].config_id, four.rows[i].config_id);
    EXPECT_EQ(one.rows[i].accuracy, four.rows[i].accuracy);
  }
}

TEST(Sweep, ParetoMaskMatchesOracle) {
  BenchSetup b;
  SweepResult r = sweep(b.space, b.small, b.large, b.task.val, b.cost);
  const auto oracle = testutil::pareto_oracle(r.rows);
  for (std::size_t i = 0; i < r.rows.size(); ++i)
    EXPECT_EQ(r.pareto_mask[i], oracle[i]) << i;
}

TEST(EmitCurve, CsvRowCountAndDeterminism) {
  BenchSetup b;
  TempDir tmp;
  SweepResult r = sweep(b.space, b.small, b.large, b.task.val, b.cost);
  emit_curve(r, tmp.file("sweep.csv"), tmp.file("sweep.svg"));
  const std::string csv = slurp(tmp.file("sweep.csv"));
  std::size_t lines = 0;
  for (char c : csv) lines += c == '\n';
  EXPECT_EQ(lines, b.space.size() + 1);  // header + one row per config
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "config_id,kind,flops,params,accuracy,on_pareto");

  emit_curve(r, tmp.file("sweep2.csv"), tmp.file("sweep2.svg"));
  EXPECT_EQ(csv, slurp(tmp.file("sweep2.csv")));
  EXPECT_EQ(slurp(tmp.file("sweep.svg")), slurp(tmp.file("sweep2.svg")));
}

TEST(EmitCurve, SvgIsWellFormedXml) {
  BenchSetup b;
  TempDir tmp;
  SweepResult r = sweep(b.space, b.small, b.large, b.task.val, b.cost);
  emit_curve(r, tmp.file("sweep.csv"), tmp.file("sweep.svg"));
  const std::string svg = slurp(tmp.file("sweep.svg"));
  EXPECT_TRUE(testutil::xml_well_formed(svg));
  EXPECT_NE(svg.find("GFLOPs"), std::string::npos);
  EXPECT_NE(svg.find("accuracy"), std::string::npos);
}

TEST(EmitCurve, FrontierAccuracyNonDecreasingInFlops) {
  BenchSetup b;
  SweepResult r = sweep(b.space, b.small, b.large, b.task.val, b.cost);
  double prev = -1.0;
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    if (!r.pareto_mask[i]) continue;
    EXPECT_GE(r.rows[i].accuracy, prev);
    prev = r.rows[i].accuracy;
  }
}

TEST(Distribution, CsvAndSvgArtifacts) {
  BenchSetup b;
  TempDir tmp;
  BudgetDistribution dist = build_distribution(b.space, b.cost, 1e4);
  write_distribution_csv(dist, tmp.file("dist.csv"));
  write_distribution_svg(dist, tmp.file("dist.svg"));
  const std::string csv = slurp(tmp.file("dist.csv"));
  std::size_t lines = 0;
  for (char c : csv) lines += c == '\n';
  EXPECT_EQ(lines, dist.bins.size() + 1);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "bin_flops,count,probability");
  EXPECT_TRUE(testutil::xml_well_formed(slurp(tmp.file("dist.svg"))));
}
