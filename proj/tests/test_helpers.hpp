#pragma once

// Shared test utilities: independent oracles (finite differences, brute-force
// enumeration, O(E^2) dominance) and small checkers. Everything here stays
// independent of the library code paths it is used to verify.

#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "snstitch/matrix.hpp"

namespace testutil {

// Unique scratch directory, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static int counter = 0;
    const auto stamp =
        std::chrono::steady_clock::now().time_since_epoch().count();
    path = std::filesystem::temp_directory_path() /
           ("snstitch_test_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

// Central finite difference of a scalar function with respect to every entry
// of the tensor, compared against the analytic gradient. Returns the worst
// relative error.
inline double max_grad_rel_error(snstitch::Matrix& param, const snstitch::Matrix& analytic,
                                 const std::function<double()>& loss, double eps = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double saved = param.data()[i];
    param.data()[i] = saved + eps;
    const double up = loss();
    param.data()[i] = saved - eps;
    const double down = loss();
    param.data()[i] = saved;
    const double fd = (up - down) / (2.0 * eps);
    const double an = analytic.data()[i];
    const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-6});
    worst = std::max(worst, std::fabs(fd - an) / denom);
  }
  return worst;
}

// Brute-force stitch-route count: label each small-depth slot with one of the
// two anchors and count labelings whose run structure a route can realize
// (at most three runs for two-way stitching; pure anchors plus
// small-then-large for the one-direction baseline).
inline std::size_t brute_force_route_count(std::size_t small_depth, bool two_way) {
  std::size_t count = 0;
  for (std::uint32_t mask = 0; mask < (1u << small_depth); ++mask) {
    int runs = 1;
    for (std::size_t i = 1; i < small_depth; ++i)
      runs += ((mask >> i) & 1u) != ((mask >> (i - 1)) & 1u);
    const bool starts_small = (mask & 1u) == 0;
    if (two_way) {
      if (runs <= 3) ++count;
    } else {
      if (runs == 1 || (runs == 2 && starts_small)) ++count;
    }
  }
  return count;
}

// O(E^2) dominance recount: row i survives iff no row has <= FLOPs and
// >= accuracy with at least one strict.
template <class Row>
std::vector<bool> pareto_oracle(const std::vector<Row>& rows) {
  std::vector<bool> mask(rows.size(), true);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows.size(); ++j) {
      if (i == j) continue;
      const bool no_worse =
          rows[j].flops <= rows[i].flops && rows[j].accuracy >= rows[i].accuracy;
      const bool strictly_better =
          rows[j].flops < rows[i].flops || rows[j].accuracy > rows[i].accuracy;
      if (no_worse && strictly_better) {
        mask[i] = false;
        break;
      }
    }
  return mask;
}

// Minimal XML well-formedness check: balanced tags, quoted attribute values,
// sane entities. Enough to validate the emitted SVG documents.
inline bool xml_well_formed(const std::string& s) {
  std::vector<std::string> stack;
  std::size_t i = 0;
  bool seen_root = false;
  auto name_char = [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == ':' || c == '-' ||
           c == '_' || c == '.';
  };
  while (i < s.size()) {
    if (s[i] != '<') {
      if (s[i] == '&') {
        const std::size_t semi = s.find(';', i);
        if (semi == std::string::npos || semi - i > 8) return false;
        i = semi + 1;
        continue;
      }
      if (s[i] == '>') return false;
      ++i;
      continue;
    }
    if (s.compare(i, 4, "<!--") == 0) {
      const std::size_t end = s.find("-->", i + 4);
      if (end == std::string::npos) return false;
      i = end + 3;
      continue;
    }
    if (s.compare(i, 2, "<?") == 0) {
      const std::size_t end = s.find("?>", i + 2);
      if (end == std::string::npos) return false;
      i = end + 2;
      continue;
    }
    const bool closing = s.compare(i, 2, "</") == 0;
    std::size_t j = i + (closing ? 2 : 1);
    std::string name;
    while (j < s.size() && name_char(s[j])) name += s[j++];
    if (name.empty()) return false;
    // attributes / whitespace until '>'
    bool self_closing = false;
    while (j < s.size() && s[j] != '>') {
      if (s[j] == '"') {
        const std::size_t close = s.find('"', j + 1);
        if (close == std::string::npos) return false;
        j = close + 1;
        continue;
      }
      if (s[j] == '/' && j + 1 < s.size() && s[j + 1] == '>') {
        self_closing = true;
        ++j;
        break;
      }
      if (s[j] == '<') return false;
      ++j;
    }
    if (j >= s.size()) return false;
    i = j + 1;
    if (closing) {
      if (self_closing || stack.empty() || stack.back() != name) return false;
      stack.pop_back();
    } else if (!self_closing) {
      if (stack.empty() && seen_root) return false;
      stack.push_back(name);
      seen_root = true;
    } else if (stack.empty()) {
      if (seen_root) return false;
      seen_root = true;
    }
  }
  return stack.empty() && seen_root;
}

// Pearson chi-square statistic for observed counts against expected
// probabilities.
inline double chi_square_stat(const std::vector<std::size_t>& observed,
                              const std::vector<double>& expected_prob) {
  std::size_t total = 0;
  for (auto c : observed) total += c;
  double stat = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double expect = expected_prob[i] * static_cast<double>(total);
    const double diff = static_cast<double>(observed[i]) - expect;
    stat += diff * diff / expect;
  }
  return stat;
}

}  // namespace testutil
