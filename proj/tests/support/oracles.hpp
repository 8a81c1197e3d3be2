#pragma once

// Reference implementations used only by tests. Each one follows the textbook
// definition directly, with no shared code paths with the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

namespace biomorph::oracle {

/// Fraction of (positive, negative) pairs ordered correctly, ties counting 1/2.
inline double pairwise_auroc(const std::vector<bool>& positive, const std::vector<double>& score) {
  double good = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < score.size(); ++i) {
    if (!positive[i]) continue;
    for (std::size_t j = 0; j < score.size(); ++j) {
      if (positive[j]) continue;
      pairs += 1.0;
      if (score[i] > score[j]) good += 1.0;
      else if (score[i] == score[j]) good += 0.5;
    }
  }
  return good / pairs;
}

/// Average ranks of the pooled values computed by counting: rank = #less + (#equal + 1) / 2.
inline std::vector<double> counting_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0.0;
    double equal = 0.0;
    for (double w : v) {
      if (w < v[i]) less += 1.0;
      else if (w == v[i]) equal += 1.0;
    }
    r[i] = less + (equal + 1.0) / 2.0;
  }
  return r;
}

struct RankSum {
  double u;
  double p;
};

/// Two-sided permutation p of the rank-sum statistic by visiting every
/// assignment of n_A of the pooled values to group A (bitmask enumeration).
inline RankSum enumerate_rank_sum(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto ranks = counting_ranks(pooled);
  const std::size_t n = pooled.size();
  const std::size_t na = a.size();
  const double na_d = static_cast<double>(na);
  const double mu = na_d * static_cast<double>(b.size()) / 2.0;
  double obs = 0.0;
  for (std::size_t i = 0; i < na; ++i) obs += ranks[i];
  const double u_obs = obs - na_d * (na_d + 1.0) / 2.0;
  double hit = 0.0;
  double total = 0.0;
  for (std::uint32_t mask = 0; mask < (1U << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != na) continue;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (1U << i)) s += ranks[i];
    }
    const double u = s - na_d * (na_d + 1.0) / 2.0;
    total += 1.0;
    if (std::fabs(u - mu) >= std::fabs(u_obs - mu) - 1e-9) hit += 1.0;
  }
  return {u_obs, hit / total};
}

/// log(sum(exp(x))) - x[label], summed naively in long double.
inline double cross_entropy(const std::vector<double>& logits, std::size_t label) {
  long double z = 0.0L;
  for (double v : logits) z += std::exp(static_cast<long double>(v));
  return static_cast<double>(std::log(z) - static_cast<long double>(logits[label]));
}

}  // namespace biomorph::oracle
