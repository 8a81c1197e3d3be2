#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "biomorph/synth.hpp"
#include "biomorph/training.hpp"
#include "oracles.hpp"
#include "tempdir.hpp"

namespace biomorph {
namespace {

using testing::slurp;
using testing::TempDir;

ModelDims small_dims() {
  ModelDims d;
  d.width = 32;
  d.heads = 4;
  d.mlp_hidden = 64;
  d.gate_hidden = 16;
  d.learnable_pathways = 8;
  return d;
}

SynthConfig toy_synth(std::uint64_t seed = 1) {
  SynthConfig s;
  s.spots = 200;
  s.genes = 80;
  s.pathways = 6;
  s.samples = 3;
  s.train_samples = 1;
  s.val_samples = 1;
  s.seed = seed;
  return s;
}

TrainConfig toy_config(std::size_t epochs) {
  TrainConfig c;
  c.dims = small_dims();
  c.lr = 1e-3;
  c.epochs = epochs;
  return c;
}

const PreparedData& toy_data() {
  static const PreparedData data = [] {
    const auto sd = synth_generate(toy_synth());
    return prepare_data(sd.dataset, sd.pathways, toy_config(1));
  }();
  return data;
}

TEST(ClassWeights, HandFixtures) {
  const auto w = class_weights({0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2}, 3);
  EXPECT_NEAR(w.W[0], 0.6667, 5e-5);
  EXPECT_DOUBLE_EQ(w.W[1], 1.0);
  EXPECT_DOUBLE_EQ(w.W[2], 2.0);
  std::vector<std::size_t> balanced(100);
  for (std::size_t i = 0; i < 100; ++i) balanced[i] = i % 2;
  EXPECT_EQ(class_weights(balanced, 2).W, (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(class_weights({0, 0, 0}, 1).W, (std::vector<double>{1.0}));
}

TEST(ClassWeights, EmptyClassNamesTheClass) {
  try {
    class_weights({0, 0}, 2, {"tumor", "stroma"});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("stroma"), std::string::npos);
  }
}

TEST(ClassWeightsProperty, CountWeightedSumEqualsN) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t C = 1 + static_cast<std::size_t>(trial % 6);
    std::vector<std::size_t> labels;
    for (std::size_t c = 0; c < C; ++c) labels.push_back(c);
    std::uniform_int_distribution<std::size_t> pick(0, C - 1);
    const std::size_t extra = rng() % 200;
    for (std::size_t i = 0; i < extra; ++i) labels.push_back(pick(rng));
    const auto w = class_weights(labels, C);
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += static_cast<double>(w.counts[c]) * w.W[c];
    ASSERT_NEAR(s, static_cast<double>(labels.size()), 1e-9 * static_cast<double>(labels.size()));
  }
}

TEST(WeightedCe, UniformBinaryIsLnTwo) {
  const auto w1 = class_weights({0, 1}, 2);
  const std::vector<double> logits{0.3, 0.3};
  EXPECT_NEAR(weighted_ce(logits, 0, w1), std::log(2.0), 1e-15);
  ClassWeights w2 = w1;
  w2.W = {2.0, 1.0};
  EXPECT_NEAR(weighted_ce(logits, 0, w2), 2.0 * std::log(2.0), 1e-15);
}

TEST(WeightedCeProperty, UnitWeightsMatchPlainCrossEntropyOracle) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 10.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t C = 2 + static_cast<std::size_t>(trial % 5);
    std::vector<double> logits(C);
    for (auto& v : logits) v = n(rng);
    std::vector<std::size_t> labels(C);
    std::iota(labels.begin(), labels.end(), std::size_t{0});
    const auto w = class_weights(labels, C);
    const std::size_t y = static_cast<std::size_t>(trial) % C;
    ASSERT_NEAR(weighted_ce(logits, y, w), static_cast<double>(oracle::cross_entropy(logits, y)), 1e-12);
    // the tape version agrees
    Tape tape(false);
    const auto t = ad::weighted_cross_entropy(tape.constant(Tensor::matrix(1, C, logits)), {y}, w.W).value()[0];
    ASSERT_NEAR(t, weighted_ce(logits, y, w), 1e-12);
  }
}

TEST(AdamW, ZeroGradDecaysExactly) {
  Param p("p", Tensor::vector({0.5, -2.0}));
  AdamW opt({&p}, AdamWConfig{1e-3, 0.1});
  opt.step();
  EXPECT_EQ(p.value[0], 0.5 * (1.0 - 1e-3 * 0.1));
  EXPECT_EQ(p.value[1], -2.0 * (1.0 - 1e-3 * 0.1));
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  Param p("p", Tensor::vector({0.0}));
  p.grad[0] = 1.0;
  AdamW opt({&p}, AdamWConfig{});
  opt.step();
  EXPECT_NEAR(p.value[0], -1e-4, 1e-11);
  EXPECT_EQ(p.grad[0], 0.0);
}

TEST(AdamW, FrozenParamsAreUntouched) {
  Param p("p", Tensor::vector({1.0}));
  p.frozen = true;
  p.grad[0] = 3.0;
  AdamW opt({&p}, AdamWConfig{});
  opt.step();
  EXPECT_EQ(p.value[0], 1.0);
}

TEST(AdamWProperty, OneStepDescendsConvexQuadratic) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    Param p("p", Tensor::vector({n(rng), n(rng), n(rng)}));
    const Tensor target = Tensor::vector({n(rng), n(rng), n(rng)});
    const auto loss = [&] {
      double s = 0.0;
      for (std::size_t i = 0; i < 3; ++i) s += (p.value[i] - target[i]) * (p.value[i] - target[i]);
      return s;
    };
    const double before = loss();
    Tape tape;
    const Var d = ad::add(tape.param(p), tape.constant(Tensor::vector({-target[0], -target[1], -target[2]})));
    tape.backward(ad::sum(ad::mul(d, d)));
    AdamW opt({&p}, AdamWConfig{1e-3, 0.0});
    opt.step();
    ASSERT_LT(loss(), before);
  }
}

TEST(Seeds, StreamsAreDistinctAndStable) {
  const auto a = SeedStreams::from(1), b = SeedStreams::from(1), c = SeedStreams::from(2);
  EXPECT_EQ(a.init, b.init);
  EXPECT_NE(a.init, a.dropout);
  EXPECT_NE(a.dropout, a.shuffle);
  EXPECT_NE(a.init, c.init);
}

TEST(Config, JsonRoundTripAndRejection) {
  TrainConfig cfg;
  cfg.lr = 3e-4;
  cfg.epochs = 7;
  cfg.ablation = ablation_from_string("seq+clinic+nost");
  cfg.dims.learnable_pathways = 17;
  cfg.layout = AttentionLayout::tokens;
  const TrainConfig back = train_config_from_json(train_config_to_json(cfg));
  EXPECT_EQ(train_config_to_json(back), train_config_to_json(cfg));
  EXPECT_EQ(back.ablation, cfg.ablation);
  EXPECT_EQ(back.dims.learnable_pathways, 17U);
  EXPECT_THROW(train_config_from_json(R"({"lr_typo": 1})"), std::invalid_argument);
  EXPECT_THROW(train_config_from_json(R"({"lr": "fast"})"), std::invalid_argument);
  EXPECT_THROW(train_config_from_json(R"({"lr": -1})"), std::invalid_argument);
  EXPECT_THROW(train_config_from_json(R"({"epochs": 0})"), std::invalid_argument);
  EXPECT_THROW(train_config_from_json("{"), std::invalid_argument);
}

TEST(Config, EveryKeyIsDocumentedInTheObject) {
  const auto j = nlohmann::json::parse(train_config_to_json(TrainConfig{}));
  for (const auto& k : train_config_keys()) EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j.at("lr").get<double>(), 1e-4);
  EXPECT_EQ(j.at("epochs").get<int>(), 60);
  EXPECT_EQ(j.at("batch").get<int>(), 32);
}

TEST(Train, OverfitsToyDataset) {
  const auto r = train(toy_data(), toy_config(60));
  ASSERT_EQ(r.history.size(), 60U);
  double best = INFINITY;
  for (const auto& h : r.history) best = std::min(best, h.train_loss);
  EXPECT_LT(best, 0.05);
  EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
}

TEST(Train, BestValidationEpochIsKept) {
  const auto r = train(toy_data(), toy_config(6));
  ASSERT_GE(r.best_epoch, 1U);
  const double best = r.history[r.best_epoch - 1].val_bal_acc;
  for (std::size_t e = 0; e < r.history.size(); ++e) {
    EXPECT_LE(r.history[e].val_bal_acc, best);
    if (e + 1 < r.best_epoch) EXPECT_LT(r.history[e].val_bal_acc, best);
  }
  // the returned parameters reproduce the recorded best score
  const auto val = toy_data().ds.indices(Split::val);
  const auto ev = evaluate(*r.model, toy_data(), val);
  EXPECT_NEAR(ev.metrics.bal_acc, best, 1e-12);
}

TEST(Train, SameSeedIsDeterministic) {
  const auto a = train(toy_data(), toy_config(2));
  const auto b = train(toy_data(), toy_config(2));
  EXPECT_EQ(history_json(a.history), history_json(b.history));
  const auto pa = a.model->store().snapshot(), pb = b.model->store().snapshot();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].storage(), pb[i].storage());
}

TEST(Train, DisabledBranchesKeepInitialValuesAndZeroGrads) {
  TrainConfig cfg = toy_config(2);
  cfg.ablation = ablation_from_string("graph+none+nost");
  const auto r = train(toy_data(), cfg);
  Model fresh(model_config(toy_data(), cfg), SeedStreams::from(cfg.seed).init);
  auto active = r.model->active_params();
  std::size_t frozen = 0;
  for (auto* p : r.model->store().all()) {
    const bool is_active = std::find(active.begin(), active.end(), p) != active.end();
    if (is_active) continue;
    ++frozen;
    EXPECT_TRUE(p->frozen) << p->name;
    EXPECT_EQ(p->value.storage(), fresh.store().find(p->name)->value.storage()) << p->name;
    for (double g : p->grad.data()) EXPECT_EQ(g, 0.0) << p->name;
  }
  EXPECT_GT(frozen, 0U);
}

TEST(Train, EmptyValidationSplitRaises) {
  PreparedData data = toy_data();
  for (auto& [sample, split] : data.ds.sample_splits) {
    if (split == Split::val) split = Split::test;
  }
  EXPECT_THROW(train(data, toy_config(1)), DataError);
}

TEST(Checkpoint, SaveLoadReproducesPredictions) {
  TempDir dir;
  const auto r = train(toy_data(), toy_config(1));
  CheckpointInfo info{toy_config(1), toy_data().ds.class_names, toy_data().ds.panel.genes(), toy_data().clinical,
                      r.best_epoch};
  save_checkpoint(dir.path(), *r.model, info);
  const auto loaded = load_checkpoint(dir.path());
  const auto test = toy_data().ds.indices(Split::test);
  const auto a = r.model->predict_proba(toy_data().ds, toy_data().graphs, test);
  const auto b = loaded.model->predict_proba(toy_data().ds, toy_data().graphs, test);
  EXPECT_EQ(a, b);
  EXPECT_EQ(loaded.info.class_names, info.class_names);
  EXPECT_EQ(loaded.info.clinical.gene_indices, info.clinical.gene_indices);
  EXPECT_EQ(train_config_to_json(loaded.info.config), train_config_to_json(info.config));
  // saving again gives the same bytes
  TempDir again;
  save_checkpoint(again.path(), *loaded.model, loaded.info);
  EXPECT_EQ(slurp(dir / "params.bin"), slurp(again / "params.bin"));
  EXPECT_EQ(slurp(dir / "params.json"), slurp(again / "params.json"));
}

TEST(Checkpoint, MissingDirectoryRaises) {
  EXPECT_ANY_THROW(load_checkpoint("/nonexistent/checkpoint"));
}

TEST(Evaluate, PerfectPredictorScoresOne) {
  const MetricsBundle m = compute_metrics({0, 1, 2, 1}, {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, 1, 0}}, 3);
  EXPECT_EQ(m.bal_acc, 1.0);
  EXPECT_EQ(m.w_f1, 1.0);
  EXPECT_EQ(m.auroc, 1.0);
  EXPECT_EQ(m.auprc, 1.0);
  EXPECT_EQ(m.mean, 1.0);
}

TEST(Evaluate, DeterministicAndRejectsEmptySplit) {
  const auto r = train(toy_data(), toy_config(1));
  const auto test = toy_data().ds.indices(Split::test);
  const auto a = evaluate(*r.model, toy_data(), test);
  const auto b = evaluate(*r.model, toy_data(), test);
  EXPECT_EQ(metrics_json(a.metrics), metrics_json(b.metrics));
  EXPECT_ANY_THROW(evaluate(*r.model, toy_data(), std::vector<std::size_t>{}));
}

}  // namespace
}  // namespace biomorph
