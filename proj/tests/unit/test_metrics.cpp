#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include <json.hpp>

#include "biomorph/metrics.hpp"
#include "oracles.hpp"

namespace biomorph {
namespace {

std::vector<std::vector<double>> random_probs(std::mt19937_64& rng, std::size_t n, std::size_t C) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::vector<std::vector<double>> p(n, std::vector<double>(C));
  for (auto& row : p) {
    double s = 0.0;
    for (auto& v : row) s += (v = u(rng));
    for (auto& v : row) v /= s;
  }
  return p;
}

TEST(Confusion, HandCountsAndEdges) {
  EXPECT_EQ(confusion_matrix({0, 0, 1}, {0, 1, 1}, 2), (Confusion{{1, 1}, {0, 1}}));
  EXPECT_EQ(confusion_matrix({0, 1, 2}, {0, 1, 2}, 3), (Confusion{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}));
  EXPECT_EQ(confusion_matrix({}, {}, 2), (Confusion{{0, 0}, {0, 0}}));
  EXPECT_THROW(confusion_matrix({0, 2}, {0, 1}, 2), std::invalid_argument);
}

TEST(BalancedAccuracy, HandValues) {
  EXPECT_EQ(balanced_accuracy(Confusion{{3, 0}, {0, 2}}), 1.0);
  EXPECT_EQ(balanced_accuracy(Confusion{{2, 0}, {1, 1}}), 0.75);
  EXPECT_EQ(balanced_accuracy(Confusion{{4, 0}, {6, 0}}), 0.5);
  EXPECT_THROW(balanced_accuracy(Confusion{{1, 0}, {0, 0}}), std::invalid_argument);
  EXPECT_EQ(balanced_accuracy(Confusion{{1, 0}, {0, 0}}, true), 1.0);
}

TEST(WeightedF1, HandValues) {
  EXPECT_EQ(weighted_f1(Confusion{{2, 0}, {0, 3}}), 1.0);
  EXPECT_NEAR(weighted_f1(confusion_matrix({0, 0, 1}, {0, 1, 1}, 2)), 2.0 / 3.0, 1e-15);
  // class 1 is never predicted and never recalled: F1 = 0 weighted by its support
  EXPECT_NEAR(weighted_f1(Confusion{{2, 0}, {2, 0}}), 0.5 * (2.0 * 0.5 * 1.0 / 1.5), 1e-15);
}

TEST(Auroc, HandValues) {
  EXPECT_EQ(binary_auroc({true, true, false, false}, {0.9, 0.4, 0.5, 0.1}), 0.75);
  EXPECT_EQ(binary_auroc({true, false, false}, {0.7, 0.7, 0.7}), 0.5);
  EXPECT_EQ(binary_auroc({true, false}, {0.9, 0.1}), 1.0);
  EXPECT_THROW(binary_auroc({true, true}, {0.1, 0.2}), std::invalid_argument);
}

TEST(Auprc, HandValues) {
  EXPECT_EQ(binary_average_precision({true, false, false}, {0.9, 0.8, 0.1}), 1.0);
  EXPECT_EQ(binary_average_precision({true, false}, {0.4, 0.9}), 0.5);
  EXPECT_EQ(binary_average_precision({true, true, false}, {0.9, 0.8, 0.1}), 1.0);
}

TEST(Macro, AbsentClassWarnsAndSingleClassThrows) {
  std::vector<std::string> warnings;
  const double a = auroc_macro({0, 1, 0, 1}, {{0.8, 0.1, 0.1}, {0.2, 0.7, 0.1}, {0.6, 0.3, 0.1}, {0.1, 0.8, 0.1}}, &warnings);
  EXPECT_EQ(a, 1.0);
  ASSERT_EQ(warnings.size(), 1U);
  EXPECT_THROW(auroc_macro({1, 1}, {{0.5, 0.5}, {0.4, 0.6}}), std::invalid_argument);
}

TEST(Mean, TableRowArithmetic) {
  EXPECT_NEAR(mean_of_four(0.801, 0.829, 0.931, 0.970), 0.883, 5e-4);
}

TEST(MetricsJson, HasExactlyTheFiveKeys) {
  const auto m = compute_metrics({0, 1, 1, 0}, {{0.9, 0.1}, {0.3, 0.7}, {0.6, 0.4}, {0.2, 0.8}}, 2);
  const auto j = nlohmann::json::parse(metrics_json(m));
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  EXPECT_EQ(keys, (std::vector<std::string>{"auprc", "auroc", "bal_acc", "mean", "w_f1"}));
  EXPECT_DOUBLE_EQ(j.at("mean").get<double>(), (m.bal_acc + m.w_f1 + m.auprc + m.auroc) / 4.0);
}

TEST(AurocProperty, EqualsPairwiseOracleExactly) {
  std::mt19937_64 rng(100);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng() % 199;
    std::vector<bool> pos(n);
    std::vector<double> score(n);
    // coarse scores force plenty of ties
    for (std::size_t i = 0; i < n; ++i) {
      pos[i] = rng() % 2 == 0;
      score[i] = static_cast<double>(rng() % 20) / 20.0;
    }
    pos[0] = true;
    pos[1] = false;
    ASSERT_EQ(binary_auroc(pos, score), oracle::pairwise_auroc(pos, score));
  }
}

TEST(MetricsProperty, ClassPermutationInvariance) {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t C = 2 + rng() % 4;
    const std::size_t n = 3 * C + rng() % 40;
    auto prob = random_probs(rng, n, C);
    std::vector<std::size_t> truth(n);
    for (std::size_t i = 0; i < n; ++i) truth[i] = i < C ? i : rng() % C;
    std::vector<std::size_t> perm(C);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::size_t> truth2(n);
    auto prob2 = prob;
    for (std::size_t i = 0; i < n; ++i) {
      truth2[i] = perm[truth[i]];
      for (std::size_t c = 0; c < C; ++c) prob2[i][perm[c]] = prob[i][c];
    }
    const auto a = compute_metrics(truth, prob, C), b = compute_metrics(truth2, prob2, C);
    ASSERT_NEAR(a.bal_acc, b.bal_acc, 1e-12);
    ASSERT_NEAR(a.w_f1, b.w_f1, 1e-12);
    ASSERT_NEAR(a.auroc, b.auroc, 1e-12);
    ASSERT_NEAR(a.auprc, b.auprc, 1e-12);
  }
}

TEST(MetricsProperty, AllMetricsWithinUnitInterval) {
  std::mt19937_64 rng(102);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t C = 2 + rng() % 4;
    const std::size_t n = 2 + rng() % 60;
    const auto prob = random_probs(rng, n, C);
    std::vector<std::size_t> truth(n);
    for (auto& t : truth) t = rng() % C;
    truth[0] = 0;
    truth[1] = 1;
    const auto m = compute_metrics(truth, prob, C);
    for (double v : {m.bal_acc, m.w_f1, m.auroc, m.auprc, m.mean}) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
    std::size_t total = 0;
    for (const auto& row : m.confusion) total += std::accumulate(row.begin(), row.end(), std::size_t{0});
    ASSERT_EQ(total, n);
  }
}

TEST(MetricsProperty, RandomPredictorHasChanceBalancedAccuracy) {
  std::mt19937_64 rng(103);
  std::vector<std::size_t> truth(10000), pred(10000);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    truth[i] = i % 2;
    pred[i] = rng() % 2;
  }
  EXPECT_NEAR(balanced_accuracy(confusion_matrix(truth, pred, 2)), 0.5, 0.05);
}

TEST(Argmax, TiesGoToLowerIndex) {
  EXPECT_EQ(argmax_rows({{0.4, 0.4, 0.2}, {0.1, 0.2, 0.7}}), (std::vector<std::size_t>{0, 2}));
}

}  // namespace
}  // namespace biomorph
