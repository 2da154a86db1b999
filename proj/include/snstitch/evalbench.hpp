#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "snstitch/budget.hpp"
#include "snstitch/dataio.hpp"
#include "snstitch/errors.hpp"
#include "snstitch/stitching.hpp"
#include "snstitch/svg.hpp"

namespace snstitch {

struct SweepRow {
  std::size_t config_id = 0;
  StitchKind kind = StitchKind::AnchorSmall;
  double flops = 0.0;
  std::size_t params = 0;
  double accuracy = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;      // sorted by flops (config_id tie-break)
  std::vector<bool> pareto_mask;   // aligned with rows
};

inline std::size_t argmax_row(const Matrix& logits, std::size_t row) {
  const double* r = logits.row(row);
  std::size_t best = 0;
  for (std::size_t j = 1; j < logits.cols(); ++j)
    if (r[j] > r[best]) best = j;
  return best;
}

// Top-1 accuracy of a standalone anchor on the dataset.
inline double model_accuracy(const AnchorModel& model, const Dataset& ds,
                             std::size_t eval_batch = 64) {
  std::size_t hits = 0;
  for (std::size_t start = 0; start < ds.size(); start += eval_batch) {
    const std::size_t count = std::min(eval_batch, ds.size() - start);
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), start);
    const Batch batch = make_batch(ds, idx);
    Matrix x = embed_forward(model, batch.tokens);
    x = forward_range(model, std::move(x), 0, model.spec.depth, count, nullptr);
    Matrix logits = head_forward(model, x, count, nullptr);
    for (std::size_t i = 0; i < count; ++i)
      if (argmax_row(logits, i) == batch.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

// Top-1 accuracy of one stitch route on the dataset.
inline double stitch_accuracy(const StitchSpace& space, std::size_t config_id,
                              const AnchorModel& small, const AnchorModel& large,
                              const Dataset& ds, std::size_t eval_batch = 64) {
  std::size_t hits = 0;
  for (std::size_t start = 0; start < ds.size(); start += eval_batch) {
    const std::size_t count = std::min(eval_batch, ds.size() - start);
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), start);
    const Batch batch = make_batch(ds, idx);
    Matrix logits = stitched_logits(space, config_id, small, large, batch.tokens, count);
    for (std::size_t i = 0; i < count; ++i)
      if (argmax_row(logits, i) == batch.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

// Non-dominated rows in (flops down, accuracy up). Equal-FLOPs ties keep only
// the top accuracy; full ties keep every copy.
inline std::vector<bool> pareto_front(const std::vector<SweepRow>& rows) {
  if (rows.empty()) throw ShapeError("pareto_front: no rows");
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (rows[a].flops != rows[b].flops) return rows[a].flops < rows[b].flops;
    return rows[a].accuracy > rows[b].accuracy;
  });
  std::vector<bool> mask(rows.size(), false);
  double best_acc = -1.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && rows[order[j]].flops == rows[order[i]].flops) ++j;
    const double group_best = rows[order[i]].accuracy;  // sorted desc within group
    if (group_best > best_acc) {
      for (std::size_t k = i; k < j && rows[order[k]].accuracy == group_best; ++k)
        mask[order[k]] = true;
      best_acc = group_best;
    }
    i = j;
  }
  return mask;
}

// Evaluates every config on the dataset. Parameters are read-only; the result
// row order is deterministic regardless of the worker count.
inline SweepResult sweep(const StitchSpace& space, const AnchorModel& small,
                         const AnchorModel& large, const Dataset& val,
                         const CostModel& cost, std::size_t workers = 1,
                         std::size_t eval_batch = 64) {
  const std::size_t e = space.size();
  std::vector<double> accuracy(e, 0.0);
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t id = begin; id < end; ++id)
      accuracy[id] = stitch_accuracy(space, id, small, large, val, eval_batch);
  };
  if (workers <= 1) {
    run(0, e);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (e + workers - 1) / workers;
    for (std::size_t w = 0; w < workers && w * chunk < e; ++w)
      pool.emplace_back(run, w * chunk, std::min(e, (w + 1) * chunk));
    for (auto& t : pool) t.join();
  }

  SweepResult result;
  result.rows.reserve(e);
  for (std::size_t id = 0; id < e; ++id) {
    const StitchConfig& cfg = space.configs[id];
    result.rows.push_back({id, cfg.kind, flops_of(cfg, cost), params_of(cfg, space),
                           accuracy[id]});
  }
  std::sort(result.rows.begin(), result.rows.end(), [](const SweepRow& a, const SweepRow& b) {
    if (a.flops != b.flops) return a.flops < b.flops;
    return a.config_id < b.config_id;
  });
  result.pareto_mask = pareto_front(result.rows);
  return result;
}

inline std::string format_flops(double f) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", f);
  return buf;
}

inline std::string format_accuracy(double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", a);
  return buf;
}

inline void write_sweep_csv(const SweepResult& result, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError("sweep csv: cannot open for writing: " + path);
  f << "config_id,kind,flops,params,accuracy,on_pareto\n";
  for (std::size_t i = 0; i < result.rows.size(); ++i) {
    const SweepRow& r = result.rows[i];
    f << r.config_id << ',' << kind_name(r.kind) << ',' << format_flops(r.flops) << ','
      << r.params << ',' << format_accuracy(r.accuracy) << ','
      << (result.pareto_mask[i] ? 1 : 0) << '\n';
  }
  if (!f) throw FormatError("sweep csv: write failed: " + path);
}

// 960x540 scatter of accuracy against GFLOPs with the frontier polyline.
inline void write_sweep_svg(const SweepResult& result, const std::string& path) {
  const double w = 960, h = 540, ml = 70, mr = 20, mt = 20, mb = 50;
  double fmin = result.rows.front().flops, fmax = fmin, amin = 0.0, amax = 1.0;
  for (const auto& r : result.rows) {
    fmin = std::min(fmin, r.flops);
    fmax = std::max(fmax, r.flops);
  }
  if (fmax == fmin) fmax = fmin + 1.0;
  auto sx = [&](double f) { return ml + (f - fmin) / (fmax - fmin) * (w - ml - mr); };
  auto sy = [&](double a) { return h - mb - (a - amin) / (amax - amin) * (h - mt - mb); };

  SvgCanvas svg(w, h);
  svg.rect(0, 0, w, h, "#ffffff");
  svg.line(ml, h - mb, w - mr, h - mb, "#000000");
  svg.line(ml, mt, ml, h - mb, "#000000");
  for (int i = 0; i <= 5; ++i) {
    const double f = fmin + (fmax - fmin) * i / 5.0;
    const double a = amin + (amax - amin) * i / 5.0;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", f / 1e9);
    svg.line(sx(f), h - mb, sx(f), h - mb + 4, "#000000");
    svg.text(sx(f), h - mb + 18, buf, 11, "middle");
    std::snprintf(buf, sizeof(buf), "%.2f", a);
    svg.line(ml - 4, sy(a), ml, sy(a), "#000000");
    svg.text(ml - 8, sy(a) + 4, buf, 11, "end");
  }
  svg.text((ml + w - mr) / 2, h - 10, "GFLOPs", 13, "middle");
  svg.text(16, (mt + h - mb) / 2, "accuracy", 13, "middle");

  std::vector<std::pair<double, double>> frontier;
  for (std::size_t i = 0; i < result.rows.size(); ++i) {
    const SweepRow& r = result.rows[i];
    svg.circle(sx(r.flops), sy(r.accuracy), 3.5,
               result.pareto_mask[i] ? "#d62728" : "#7f7f7f");
    if (result.pareto_mask[i]) frontier.emplace_back(sx(r.flops), sy(r.accuracy));
  }
  svg.polyline(frontier, "#d62728", 1.5);
  svg.write(path);
}

inline void emit_curve(const SweepResult& result, const std::string& csv_path,
                       const std::string& svg_path) {
  write_sweep_csv(result, csv_path);
  write_sweep_svg(result, svg_path);
}

// Distribution artifacts: bin CSV plus a histogram figure.
inline void write_distribution_csv(const BudgetDistribution& dist,
                                   const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError("distribution csv: cannot open for writing: " + path);
  f << "bin_flops,count,probability\n";
  for (const auto& bin : dist.bins) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", bin.flops);
    f << buf << ',' << bin.members.size() << ',';
    std::snprintf(buf, sizeof(buf), "%.10g",
                  static_cast<double>(bin.members.size()) /
                      static_cast<double>(dist.total));
    f << buf << '\n';
  }
  if (!f) throw FormatError("distribution csv: write failed: " + path);
}

inline void write_distribution_svg(const BudgetDistribution& dist,
                                   const std::string& path) {
  const double w = 960, h = 540, ml = 70, mr = 20, mt = 20, mb = 50;
  double fmin = dist.bins.front().flops, fmax = fmin;
  std::size_t cmax = 1;
  for (const auto& b : dist.bins) {
    fmin = std::min(fmin, b.flops);
    fmax = std::max(fmax, b.flops);
    cmax = std::max(cmax, b.members.size());
  }
  if (fmax == fmin) fmax = fmin + 1.0;
  const double bar_w = std::max(2.0, (w - ml - mr) / (2.0 * dist.bins.size()));
  auto sx = [&](double f) { return ml + (f - fmin) / (fmax - fmin) * (w - ml - mr - bar_w); };
  auto sy = [&](double c) { return h - mb - c / static_cast<double>(cmax) * (h - mt - mb); };

  SvgCanvas svg(w, h);
  svg.rect(0, 0, w, h, "#ffffff");
  svg.line(ml, h - mb, w - mr, h - mb, "#000000");
  svg.line(ml, mt, ml, h - mb, "#000000");
  for (const auto& b : dist.bins) {
    const double x = sx(b.flops);
    const double y = sy(static_cast<double>(b.members.size()));
    svg.rect(x, y, bar_w, h - mb - y, "#1f77b4");
  }
  for (int i = 0; i <= 5; ++i) {
    const double f = fmin + (fmax - fmin) * i / 5.0;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", f / 1e9);
    svg.text(sx(f) + bar_w / 2, h - mb + 18, buf, 11, "middle");
    const double c = static_cast<double>(cmax) * i / 5.0;
    std::snprintf(buf, sizeof(buf), "%.0f", c);
    svg.text(ml - 8, sy(c) + 4, buf, 11, "end");
  }
  svg.text((ml + w - mr) / 2, h - 10, "GFLOPs", 13, "middle");
  svg.text(16, (mt + h - mb) / 2, "stitches", 13, "middle");
  svg.write(path);
}

}  // namespace snstitch
