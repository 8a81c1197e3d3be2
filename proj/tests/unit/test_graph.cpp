#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "biomorph/gradcheck.hpp"
#include "biomorph/graph.hpp"

namespace biomorph {
namespace {

Dataset grid(std::size_t side, std::size_t dim = 3) {
  Dataset ds;
  ds.panel = GenePanel({"A", "B"});
  ds.class_names = {"c"};
  ds.sample_splits = {{"S", Split::train}};
  for (std::size_t i = 0; i < side * side; ++i) {
    SpotRecord s;
    s.spot_id = std::to_string(i);
    s.sample_id = "S";
    s.x = static_cast<double>(i % side);
    s.y = static_cast<double>(i / side);
    s.morph.assign(dim, static_cast<double>(i));
    s.expr = {static_cast<double>(i % 3), 1.0};
    ds.spots.push_back(s);
  }
  return ds;
}

std::vector<std::size_t> sorted(std::vector<std::size_t> v) {
  std::sort(v.begin(), v.end());
  return v;
}

TEST(Neighbors, InteriorOfThreeByThree) {
  const Dataset ds = grid(3);
  EXPECT_EQ(sorted(find_neighbors(ds, 4)), (std::vector<std::size_t>{0, 1, 2, 3, 5, 6, 7, 8}));
}

TEST(Neighbors, CornerOfThreeByThreeTakesAllOthers) {
  const Dataset ds = grid(3);
  EXPECT_EQ(sorted(find_neighbors(ds, 0)), (std::vector<std::size_t>{1, 2, 3, 4, 5, 6, 7, 8}));
}

TEST(Neighbors, TwoSpotsGiveOneNeighbor) {
  Dataset ds = grid(3);
  ds.spots.resize(2);
  EXPECT_EQ(find_neighbors(ds, 0), (std::vector<std::size_t>{1}));
}

TEST(Neighbors, SingleSpotSampleRaises) {
  Dataset ds = grid(3);
  ds.spots.resize(1);
  EXPECT_THROW(find_neighbors(ds, 0), DataError);
}

TEST(Neighbors, OtherSamplesAreIgnoredAndTiesGoToLowerIndex) {
  Dataset ds = grid(4);
  ds.sample_splits["T"] = Split::val;
  ds.spots[1].sample_id = "T";
  // Center 5 at (1,1): the four axis neighbors tie at distance 1.
  const auto nb = find_neighbors(ds, 5, 3);
  EXPECT_EQ(nb, (std::vector<std::size_t>{4, 6, 9}));
}

TEST(NeighborsProperty, CountDistinctAndExcludesCenter) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int trial = 0; trial < 1000; ++trial) {
    Dataset ds = grid(1);
    const std::size_t n = 2 + static_cast<std::size_t>(trial % 15);
    ds.spots.clear();
    for (std::size_t i = 0; i < n; ++i) {
      SpotRecord s;
      s.spot_id = std::to_string(i);
      s.sample_id = "S";
      s.x = u(rng);
      s.y = u(rng);
      ds.spots.push_back(s);
    }
    const std::size_t c = static_cast<std::size_t>(trial) % n;
    auto nb = find_neighbors(ds, c);
    ASSERT_EQ(nb.size(), std::min<std::size_t>(8, n - 1));
    ASSERT_EQ(std::count(nb.begin(), nb.end(), c), 0);
    nb = sorted(nb);
    ASSERT_EQ(std::adjacent_find(nb.begin(), nb.end()), nb.end());
  }
}

TEST(EdgeWeights, HandMseFixture) {
  const std::vector<double> xc{0, 0}, xi{2, 0}, gc{1}, gi{3};
  const auto e = compute_edge_weights(xc, {xi}, gc, {gi}, 1e-15);
  EXPECT_NEAR(e[0], 0.375, 1e-12);
}

TEST(EdgeWeights, IdenticalPatchesAreCappedByEps) {
  const std::vector<double> x{1, 2}, g{3};
  const auto e = compute_edge_weights(x, {x}, g, {g}, 1e-6);
  EXPECT_NEAR(e[0], 1e6, 1e-6);
}

TEST(EdgeWeights, LengthMismatchAndBadEpsRaise) {
  const std::vector<double> a{1, 2}, b{1}, g{0};
  EXPECT_THROW(compute_edge_weights(a, {b}, g, {g}), ShapeError);
  EXPECT_THROW(compute_edge_weights(a, {a}, g, {g}, 0.0), std::invalid_argument);
}

TEST(EdgeWeightsProperty, SymmetricUnderRoleSwapAndNonNegative) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> xc(5), xi(5), gc(3), gi(3);
    for (auto* v : {&xc, &xi}) for (auto& x : *v) x = n(rng);
    for (auto* v : {&gc, &gi}) for (auto& x : *v) x = n(rng);
    const double forward = compute_edge_weights(xc, {xi}, gc, {gi})[0];
    const double swapped = compute_edge_weights(xi, {xc}, gi, {gc})[0];
    ASSERT_EQ(forward, swapped);
    ASSERT_GE(forward, 0.0);
    ASSERT_TRUE(std::isfinite(forward));
    // independent oracle
    double mx = 0.0, mg = 0.0;
    for (int k = 0; k < 5; ++k) mx += (xc[k] - xi[k]) * (xc[k] - xi[k]) / 5.0;
    for (int k = 0; k < 3; ++k) mg += (gc[k] - gi[k]) * (gc[k] - gi[k]) / 3.0;
    ASSERT_NEAR(forward, 0.5 * (1.0 / (mx + 1e-6) + 1.0 / (mg + 1e-6)), 1e-9 * forward);
  }
}

TEST(NormalizedWeightsProperty, SumToOne) {
  std::mt19937_64 rng(10);
  std::exponential_distribution<double> ex(0.01);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> e(1 + trial % 8);
    for (auto& v : e) v = ex(rng);
    const auto w = normalized_weights(e);
    ASSERT_EQ(w.size(), e.size() + 1);
    ASSERT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-12);
  }
}

TEST(NormalizedWeights, IdentityLimitRecoversNeighbor) {
  const std::vector<double> xc{3.0, -1.0, 2.0}, xn{0.5, 4.0, -2.0};
  const auto w = normalized_weights(std::vector<double>{1e9});
  const auto agg = aggregate(w, {xc, xn});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(agg[i], xn[i], 1e-6);
}

TEST(NormalizedWeights, RejectsNegativeOrNonFinite) {
  EXPECT_THROW(normalized_weights(std::vector<double>{-1.0}), std::invalid_argument);
  EXPECT_THROW(normalized_weights(std::vector<double>{INFINITY}), std::invalid_argument);
}

struct GcnFixture {
  ParamStore store{17};
  GcnParams params{store, "gcn", 6, 5, 4};
  std::vector<std::vector<double>> feats;
  MicroenvGraph graph;

  explicit GcnFixture(std::mt19937_64& rng, std::size_t k = 4) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::exponential_distribution<double> ex(1.0);
    for (auto* p : store.all()) for (auto& v : p->value.storage()) v = 0.5 * n(rng);
    feats.assign(k + 1, std::vector<double>(6));
    for (auto& f : feats) for (auto& v : f) v = n(rng);
    graph.center = 100;
    for (std::size_t j = 0; j < k; ++j) {
      graph.neighbors.push_back(10 * (j + 1));
      graph.edge_weights.push_back(ex(rng));
    }
  }
  std::vector<std::span<const double>> spans() const {
    std::vector<std::span<const double>> s;
    for (const auto& f : feats) s.emplace_back(f);
    return s;
  }
};

TEST(Gcn, OutputWidthMatchesLayerTwo) {
  std::mt19937_64 rng(1);
  GcnFixture fx(rng);
  EXPECT_EQ(gcn_forward(fx.graph, fx.spans(), fx.params).size(), 4U);
  ParamStore store(1);
  GcnParams full(store, "gcn");
  std::vector<std::vector<double>> f(2, std::vector<double>(kMorphDim, 0.1));
  MicroenvGraph g{0, {1}, {2.0}};
  EXPECT_EQ(gcn_forward(g, {f[0], f[1]}, full).size(), 512U);
}

TEST(Gcn, EmptyNeighborListRaises) {
  std::mt19937_64 rng(1);
  GcnFixture fx(rng);
  MicroenvGraph g{0, {}, {}};
  EXPECT_THROW(gcn_forward(g, {fx.feats[0]}, fx.params), std::invalid_argument);
}

TEST(GcnProperty, NeighborPermutationIsBitIdentical) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    GcnFixture fx(rng, 1 + trial % 8);
    const Tensor h = gcn_forward(fx.graph, fx.spans(), fx.params);
    std::vector<std::size_t> perm(fx.graph.neighbors.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    MicroenvGraph g = fx.graph;
    std::vector<std::span<const double>> f{fx.feats[0]};
    for (std::size_t j = 0; j < perm.size(); ++j) {
      g.neighbors[j] = fx.graph.neighbors[perm[j]];
      g.edge_weights[j] = fx.graph.edge_weights[perm[j]];
      f.emplace_back(fx.feats[perm[j] + 1]);
    }
    const Tensor h2 = gcn_forward(g, f, fx.params);
    for (std::size_t i = 0; i < h.size(); ++i) ASSERT_EQ(h[i], h2[i]);
  }
}

// The self-loop weight scales along with the edges, so the normalized
// weights are unchanged.
TEST(GcnProperty, CommonEdgeScaleLeavesOutputUnchanged) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int trial = 0; trial < 1000; ++trial) {
    GcnFixture fx(rng, 1 + trial % 8);
    const Tensor h = gcn_forward(fx.graph, fx.spans(), fx.params);
    const double c = scale(rng);
    MicroenvGraph g = fx.graph;
    for (auto& e : g.edge_weights) e *= c;
    const Tensor h2 = gcn_forward(g, fx.spans(), fx.params, kSelfLoopWeight * c);
    for (std::size_t i = 0; i < h.size(); ++i) ASSERT_NEAR(h[i], h2[i], 1e-10);
  }
}

TEST(Gcn, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    GcnFixture fx(rng, 3);
    GcnBatch batch;
    batch.nodes_per_graph = 4;
    batch.features = Tensor({4, 6}, 0.0);
    for (std::size_t j = 0; j < 4; ++j) {
      for (std::size_t c = 0; c < 6; ++c) batch.features.at(j, c) = fx.feats[j][c];
    }
    batch.weights = Tensor({1, 4}, normalized_weights(fx.graph.edge_weights));
    const auto loss = [&](Tape& t) {
      const Var h = gcn_forward(t, batch, fx.params);
      return ad::sum(ad::mul(h, h));
    };
    const auto r = finite_diff_check(loss, fx.params.params());
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param;
  }
}

TEST(Graph, BuildGraphsSortsNeighborsAndWeights) {
  const Dataset ds = grid(4);
  const auto graphs = build_graphs(ds);
  ASSERT_EQ(graphs.size(), 16U);
  for (const auto& g : graphs) {
    EXPECT_TRUE(std::is_sorted(g.neighbors.begin(), g.neighbors.end()));
    EXPECT_EQ(g.neighbors.size(), 8U);
    for (double e : g.edge_weights) EXPECT_GT(e, 0.0);
  }
}

}  // namespace
}  // namespace biomorph
