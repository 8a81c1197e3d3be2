#include <gtest/gtest.h>

#include <json.hpp>
#include <sstream>

#include "biomorph/cli.hpp"
#include "tempdir.hpp"

namespace biomorph {
namespace {

using testing::slurp;
using testing::spit;
using testing::TempDir;

struct Outcome {
  int code;
  std::string out, err;
};

Outcome invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

const char* kSmallConfig = R"({
  "width": 16, "heads": 2, "mlp_hidden": 32, "gate_hidden": 8,
  "learnable_pathway_count": 4, "epochs": 3, "lr": 0.001
})";

std::vector<std::string> tiny_synth(const std::string& out) {
  return {"synth",   "--out",           out, "--spots",        "120", "--genes", "60", "--pathways", "4",
          "--samples", "3",            "--train-samples", "1", "--val-samples", "1", "--seed", "9"};
}

TEST(Cli, SynthIsDeterministic) {
  TempDir a("cli_a"), b("cli_b");
  ASSERT_EQ(invoke(tiny_synth(a.path().string())).code, 0);
  ASSERT_EQ(invoke(tiny_synth(b.path().string())).code, 0);
  for (const char* f : {"expression.tsv", "spots.tsv", "manifest.json", "pathways.gmt", "truth.json"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
}

TEST(Cli, HelpListsDefaults) {
  const auto r = invoke({"train", "--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("--epochs"), std::string::npos);
  EXPECT_NE(r.out.find("graph+both+st"), std::string::npos);
}

TEST(Cli, BadArgumentsFail) {
  EXPECT_NE(invoke({}).code, 0);
  EXPECT_NE(invoke({"nonsense"}).code, 0);
  EXPECT_NE(invoke({"train", "--epochs", "many"}).code, 0);
  EXPECT_EQ(invoke({"train"}).code, 1);  // no --data
  EXPECT_EQ(invoke({"eval", "--checkpoint", "/nonexistent"}).code, 1);
  EXPECT_NE(invoke({"dge", "--split", "bogus"}).code, 0);
}

TEST(Cli, UnknownConfigKeyIsNamed) {
  TempDir d("cli_cfg");
  spit(d / "cfg.json", R"({"learning_rate": 0.1})");
  const auto r = invoke({"train", "--config", (d / "cfg.json").string(), "--data", d.path().string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("learning_rate"), std::string::npos);
}

TEST(Cli, TrainEvalPredictDgeRoundTrip) {
  TempDir d("cli_e2e");
  const std::string data = (d / "data").string(), run = (d / "run").string(), cfg = (d / "cfg.json").string();
  ASSERT_EQ(invoke(tiny_synth(data)).code, 0);
  spit(cfg, kSmallConfig);

  const auto tr = invoke({"train", "--config", cfg, "--data", data, "--out", run, "--seed", "4"});
  ASSERT_EQ(tr.code, 0) << tr.err;
  EXPECT_NE(tr.out.find("epoch 3/3"), std::string::npos);
  const auto metrics = nlohmann::json::parse(slurp(d / "run" / "metrics.json"));
  EXPECT_EQ(metrics.size(), 5U);
  EXPECT_EQ(nlohmann::json::parse(slurp(d / "run" / "history.json")).size(), 3U);

  const auto ev = invoke({"eval", "--checkpoint", run, "--data", data, "--out", (d / "ev").string()});
  ASSERT_EQ(ev.code, 0) << ev.err;
  // eval on the test split reproduces the metrics written by train
  EXPECT_EQ(slurp(d / "ev" / "metrics.json"), slurp(d / "run" / "metrics.json"));

  const auto pr = invoke({"predict", "--checkpoint", run, "--data", data, "--out", (d / "pr").string()});
  ASSERT_EQ(pr.code, 0) << pr.err;
  const std::string map = slurp(d / "pr" / "prediction_map.tsv");
  EXPECT_EQ(std::count(map.begin(), map.end(), '\n'), 121);

  const auto dg = invoke({"dge", "--checkpoint", run, "--data", data, "--split", "all", "--tau", "0.34", "--top-n",
                          "3", "--out", (d / "dge").string()});
  ASSERT_EQ(dg.code, 0) << dg.err;
  const std::string dot = slurp(d / "dge" / "dge_dotplot.tsv");
  EXPECT_EQ(dot.substr(0, dot.find('\n')), "class\tgene\tp\tfraction_expressing\tmean_expression");
}

TEST(Cli, FlagsOverrideConfigFile) {
  TempDir d("cli_over");
  const std::string data = (d / "data").string(), cfg = (d / "cfg.json").string();
  ASSERT_EQ(invoke(tiny_synth(data)).code, 0);
  spit(cfg, kSmallConfig);
  const auto r = invoke({"train", "--config", cfg, "--data", data, "--out", (d / "run").string(), "--epochs", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("epoch 1/1"), std::string::npos);
  const auto saved = nlohmann::json::parse(slurp(d / "run" / "config.json"));
  EXPECT_EQ(saved.at("epochs"), 1);
  EXPECT_EQ(saved.at("width"), 16);
}

TEST(Cli, GradcheckPrimitivesOnly) {
  const auto r = invoke({"gradcheck", "--primitives-only"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
  EXPECT_NE(r.out.find("max relative error"), std::string::npos);
}

}  // namespace
}  // namespace biomorph
