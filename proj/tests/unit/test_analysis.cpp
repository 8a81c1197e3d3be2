#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "biomorph/analysis.hpp"
#include "biomorph/synth.hpp"
#include "oracles.hpp"
#include "tempdir.hpp"

namespace biomorph {
namespace {

using testing::slurp;
using testing::TempDir;

Prediction pred(std::size_t spot, std::size_t cls, double conf) {
  Prediction p;
  p.spot = spot;
  p.predicted = cls;
  p.confidence = conf;
  return p;
}

TEST(Confidence, ThresholdIsInclusive) {
  const auto kept = select_high_confidence({pred(0, 0, 0.96), pred(1, 1, 0.95), pred(2, 0, 0.94)});
  ASSERT_EQ(kept.size(), 2U);
  EXPECT_EQ(kept[0].spot, 0U);
  EXPECT_EQ(kept[1].spot, 1U);
  EXPECT_THROW(select_high_confidence({}, 0.0), std::invalid_argument);
}

TEST(Wilcoxon, HandExamples) {
  const auto r = wilcoxon_rank_sum({1, 2}, {3, 4});
  EXPECT_EQ(r.u, 0.0);
  EXPECT_NEAR(r.p, 2.0 / 6.0, 1e-15);
  EXPECT_EQ(wilcoxon_rank_sum({1, 2, 3}, {1, 2, 3}).p, 1.0);
  EXPECT_THROW(wilcoxon_rank_sum({}, {1.0}), std::invalid_argument);
}

TEST(Wilcoxon, MidranksByHand) {
  EXPECT_EQ(midranks({10, 20, 20, 5}), (std::vector<double>{2, 3.5, 3.5, 1}));
}

// Every split n_A + n_B <= 8 on random tie-heavy values.
TEST(WilcoxonProperty, ExactPathMatchesEnumerationOracle) {
  std::mt19937_64 rng(50);
  int cases = 0;
  for (std::size_t n = 2; n <= 8; ++n) {
    for (std::size_t na = 1; na < n; ++na) {
      for (int rep = 0; rep < 40; ++rep) {
        std::vector<double> a(na), b(n - na);
        for (auto& v : a) v = static_cast<double>(rng() % 5);
        for (auto& v : b) v = static_cast<double>(rng() % 5);
        const auto want = oracle::enumerate_rank_sum(a, b);
        const auto got = wilcoxon_rank_sum(a, b, WilcoxonMethod::exact);
        ASSERT_EQ(got.u, want.u);
        ASSERT_EQ(got.p, want.p);
        ++cases;
      }
    }
  }
  EXPECT_GE(cases, 1000);
}

TEST(WilcoxonProperty, SymmetricBoundedAndShiftInvariant) {
  std::mt19937_64 rng(51);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> shift(-1000.0, 1000.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t na = 1 + rng() % 15, nb = 1 + rng() % 15;
    std::vector<double> a(na), b(nb);
    for (auto& v : a) v = std::round(4.0 * n01(rng)) / 4.0;
    for (auto& v : b) v = std::round(4.0 * n01(rng)) / 4.0 + 0.5;
    const auto r = wilcoxon_rank_sum(a, b);
    ASSERT_EQ(wilcoxon_rank_sum(b, a).p, r.p);
    ASSERT_GE(r.u, 0.0);
    ASSERT_LE(r.u, static_cast<double>(na * nb));
    ASSERT_GE(r.p, 0.0);
    ASSERT_LE(r.p, 1.0);
    // dyadic shifts keep every value exact
    const double c = std::round(shift(rng));
    auto as = a, bs = b;
    for (auto& v : as) v += c;
    for (auto& v : bs) v += c;
    const auto s = wilcoxon_rank_sum(as, bs);
    ASSERT_EQ(s.u, r.u);
    ASSERT_EQ(s.p, r.p);
  }
}

TEST(Wilcoxon, ExactAndNormalAgreeAtTheBoundary) {
  std::mt19937_64 rng(52);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(10), b(10);
    for (auto& v : a) v = n01(rng);
    for (auto& v : b) v = n01(rng) + 0.5;
    const double pe = wilcoxon_rank_sum(a, b, WilcoxonMethod::exact).p;
    const double pn = wilcoxon_rank_sum(a, b, WilcoxonMethod::normal).p;
    EXPECT_NEAR(pe, pn, 0.02);
  }
}

TEST(BenjaminiHochberg, HandValues) {
  const auto adj = benjamini_hochberg({0.01, 0.04, 0.03, 0.5});
  EXPECT_NEAR(adj[0], 0.04, 1e-15);
  EXPECT_NEAR(adj[1], 0.04 * 4.0 / 3.0 / 1.0 * 1.0, 1e-15);
  EXPECT_NEAR(adj[2], 0.04 * 4.0 / 3.0 / 1.0 * 1.0, 1e-15);
  EXPECT_NEAR(adj[3], 0.5, 1e-15);
}

struct DgeFixture {
  Dataset ds;
  std::vector<std::size_t> spots, groups;
  PlantedTruth truth;
  DgeFixture() {
    const auto sd = synth_generate(SynthConfig{});
    ds = preprocess_expression(sd.dataset);
    truth = sd.truth;
    for (std::size_t i = 0; i < ds.spots.size(); ++i) {
      spots.push_back(i);
      groups.push_back(*ds.spots[i].label);
    }
  }
};

TEST(Dge, PlantedMarkersLeadTheirClass) {
  const DgeFixture fx;
  const auto res = rank_genes_groups(fx.ds, fx.spots, fx.groups, 3);
  ASSERT_EQ(res.classes.size(), 3U);
  for (const auto& cls : res.classes) {
    std::size_t hits = 0;
    for (std::size_t r = 0; r < 10; ++r) {
      const auto& m = fx.truth.markers[cls.cls];
      if (std::find(m.begin(), m.end(), cls.ranked[r].gene) != m.end()) {
        ++hits;
        EXPECT_LT(cls.ranked[r].p, 1e-3);
      }
    }
    EXPECT_GE(hits, 8U) << "class " << cls.cls;
    for (std::size_t r = 1; r < cls.ranked.size(); ++r) EXPECT_LE(cls.ranked[r - 1].p, cls.ranked[r].p);
  }
}

TEST(Dge, NullDataRejectsAtNominalRate) {
  DgeFixture fx;
  std::mt19937_64 rng(53);
  // random groups carry no signal
  for (auto& g : fx.groups) g = rng() % 2;
  const auto res = rank_genes_groups(fx.ds, fx.spots, fx.groups, 2);
  std::size_t tests = 0, rejections = 0;
  for (const auto& cls : res.classes) {
    for (const auto& s : cls.ranked) {
      ++tests;
      rejections += s.p < 0.05 ? 1 : 0;
    }
  }
  EXPECT_LT(static_cast<double>(rejections) / static_cast<double>(tests), 0.1);
}

TEST(Dge, AllZeroGeneHasZeroFraction) {
  SynthConfig cfg;
  cfg.spots = 90;
  cfg.genes = 60;
  cfg.pathways = 3;
  cfg.samples = 3;
  cfg.train_samples = 1;
  cfg.val_samples = 1;
  Dataset ds = synth_generate(cfg).dataset;
  ds.log_normalized = true;  // keep the zero column; values are only read here
  for (auto& s : ds.spots) s.expr[0] = 0.0;
  std::vector<std::size_t> spots, groups;
  for (std::size_t i = 0; i < ds.spots.size(); ++i) {
    spots.push_back(i);
    groups.push_back(*ds.spots[i].label);
  }
  const auto res = rank_genes_groups(ds, spots, groups, 3);
  for (const auto& cls : res.classes) {
    for (const auto& s : cls.ranked) {
      if (s.gene == 0) {
        EXPECT_EQ(s.fraction_expressing, 0.0);
        EXPECT_EQ(s.mean_expression, 0.0);
      }
    }
  }
}

TEST(Dge, SingleGroupRaisesAndMissingClassWarns) {
  const DgeFixture fx;
  std::vector<std::size_t> g(fx.groups.size(), 1);
  EXPECT_ANY_THROW(rank_genes_groups(fx.ds, fx.spots, g, 3));
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = i % 2;
  const auto res = rank_genes_groups(fx.ds, fx.spots, g, 3);
  EXPECT_EQ(res.classes.size(), 2U);
  EXPECT_EQ(res.warnings.size(), 1U);
}

TEST(Reports, RowCountsTopNAndDeterminism) {
  const DgeFixture fx;
  std::vector<Prediction> preds;
  for (std::size_t i = 0; i < 50; ++i) preds.push_back(pred(i, i % 3, 0.97));
  const auto dge = dge_from_predictions(fx.ds, preds, 3);
  TempDir a("rep_a"), b("rep_b");
  emit_reports(a.path(), fx.ds, preds, dge, 4);
  emit_reports(b.path(), fx.ds, preds, dge, 4);
  EXPECT_EQ(slurp(a / "prediction_map.tsv"), slurp(b / "prediction_map.tsv"));
  EXPECT_EQ(slurp(a / "dge_dotplot.tsv"), slurp(b / "dge_dotplot.tsv"));
  const auto lines = [](const std::string& s) { return std::count(s.begin(), s.end(), '\n'); };
  EXPECT_EQ(lines(slurp(a / "prediction_map.tsv")), 51);
  EXPECT_EQ(lines(slurp(a / "dge_dotplot.tsv")), 1 + 3 * 4);
  std::istringstream header(slurp(a / "prediction_map.tsv"));
  std::string first;
  std::getline(header, first);
  EXPECT_EQ(first, "spot_id\tx\ty\ttruth\tpredicted\tconfidence");
}

TEST(Reports, UnwritableDirectoryRaises) {
  const DgeFixture fx;
  EXPECT_ANY_THROW(write_prediction_map("/nonexistent/dir/map.tsv", fx.ds, {}));
}

}  // namespace
}  // namespace biomorph
