#pragma once

// Reference implementations written independently of src/, kept deliberately
// naive: quadratic ranking, long double accumulation, explicit enumeration.

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "creward/core.hpp"

namespace creward::testing {

// Average rank of every value, 1 = largest: (#greater) + (#equal + 1) / 2.
inline std::vector<long double> brute_ranks(const std::vector<double>& values) {
  std::vector<long double> ranks(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    long double greater = 0, equal = 0;
    for (double v : values) {
      if (v > values[i]) ++greater;
      if (v == values[i]) ++equal;
    }
    ranks[i] = greater + (equal + 1) / 2;
  }
  return ranks;
}

inline std::optional<double> brute_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  const auto rx = brute_ranks(x);
  const auto ry = brute_ranks(y);
  const auto n = static_cast<long double>(x.size());
  auto constant = [](const std::vector<double>& v) {
    for (double e : v) {
      if (e != v.front()) return false;
    }
    return true;
  };
  if (constant(x) || constant(y)) return std::nullopt;
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

// Triangle over images A, B, C with edges (A,B), (B,C), (A,C); each edge
// outcome is 'F' (first endpoint wins), 'S' (second wins) or 'T'. Rates
// worked out by hand.
struct TriangleCase {
  char ab, bc, ac;
  std::array<double, 3> rates;  // A, B, C
};

inline const std::array<TriangleCase, 27>& triangle_table() {
  static const std::array<TriangleCase, 27> table = {{
      {'F', 'F', 'F', {1.0, 0.5, 0.0}},   {'F', 'F', 'S', {0.5, 0.5, 0.5}},
      {'F', 'F', 'T', {1.0, 0.5, 0.0}},   {'F', 'S', 'F', {1.0, 0.0, 0.5}},
      {'F', 'S', 'S', {0.5, 0.0, 1.0}},   {'F', 'S', 'T', {0.75, 0.0, 0.75}},
      {'F', 'T', 'F', {1.0, 0.25, 0.25}}, {'F', 'T', 'S', {0.5, 0.0, 1.0}},
      {'F', 'T', 'T', {1.0, 0.0, 0.5}},   {'S', 'F', 'F', {0.5, 1.0, 0.0}},
      {'S', 'F', 'S', {0.0, 1.0, 0.5}},   {'S', 'F', 'T', {0.25, 1.0, 0.25}},
      {'S', 'S', 'F', {0.5, 0.5, 0.5}},   {'S', 'S', 'S', {0.0, 0.5, 1.0}},
      {'S', 'S', 'T', {0.0, 0.5, 1.0}},   {'S', 'T', 'F', {0.5, 1.0, 0.0}},
      {'S', 'T', 'S', {0.0, 0.75, 0.75}}, {'S', 'T', 'T', {0.0, 1.0, 0.5}},
      {'T', 'F', 'F', {0.75, 0.75, 0.0}}, {'T', 'F', 'S', {0.0, 1.0, 0.5}},
      {'T', 'F', 'T', {0.5, 1.0, 0.0}},   {'T', 'S', 'F', {1.0, 0.0, 0.5}},
      {'T', 'S', 'S', {0.25, 0.25, 1.0}}, {'T', 'S', 'T', {0.5, 0.0, 1.0}},
      {'T', 'T', 'F', {1.0, 0.5, 0.0}},   {'T', 'T', 'S', {0.0, 0.5, 1.0}},
      {'T', 'T', 'T', {0.5, 0.5, 0.5}},
  }};
  return table;
}

// Verdict for an edge outcome when the pair is stored as (first, second), or
// reversed when `swapped`.
inline Verdict edge_verdict(char outcome, bool swapped) {
  Verdict v = outcome == 'F' ? Verdict::a : outcome == 'S' ? Verdict::b : Verdict::tie;
  return swapped ? flip(v) : v;
}

}  // namespace creward::testing
