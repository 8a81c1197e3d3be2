#include "biomorph/diagnostics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "biomorph/fusion.hpp"
#include "biomorph/graph.hpp"
#include "biomorph/pathway.hpp"
#include "biomorph/synth.hpp"

namespace biomorph {
namespace {

class Inputs {
 public:
  explicit Inputs(std::uint64_t seed) : store_(seed), rng_(seed) {}

  Param& gaussian(const std::string& name, Shape shape, double stddev = 1.0) {
    return store_.gaussian(name, std::move(shape), stddev);
  }

  /// Entries of magnitude in [0.1, 1.1] with random sign.
  Param& off_kink(const std::string& name, Shape shape) {
    Param& p = store_.constant(name, std::move(shape), 0.0);
    std::uniform_real_distribution<double> u(0.1, 1.1);
    for (auto& v : p.value.storage()) v = (rng_() & 1U ? 1.0 : -1.0) * u(rng_);
    return p;
  }

  Tensor probe(Shape shape) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& v : t.storage()) v = n(rng_);
    return t;
  }

  ParamStore& store() { return store_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  ParamStore store_;
  std::mt19937_64 rng_;
};

/// sum(out * R) with a fixed random R, which exercises every output entry.
Var project(Tape& tape, const Var& out, const Tensor& r) { return ad::sum(ad::mul(out, tape.constant(r))); }

struct Check {
  std::string name;
  std::vector<Param*> params;
  LossBuilder fn;
};

std::vector<Param*> collect(std::initializer_list<std::vector<Param*>> groups) {
  std::vector<Param*> out;
  for (const auto& g : groups) out.insert(out.end(), g.begin(), g.end());
  return out;
}

std::vector<std::size_t> labels_of(const Dataset& ds, const std::vector<std::size_t>& spots) {
  std::vector<std::size_t> out;
  out.reserve(spots.size());
  for (auto s : spots) out.push_back(ds.spots.at(s).label.value());
  return out;
}

}  // namespace

std::vector<GradCheckReport> primitive_gradchecks(std::uint64_t seed) {
  Inputs in(seed);
  std::vector<Check> checks;

  {
    Param& a = in.gaussian("matmul.a", {3, 4});
    Param& b = in.gaussian("matmul.b", {4, 5});
    const Tensor r = in.probe({3, 5});
    checks.push_back({"matmul", {&a, &b}, [&a, &b, r](Tape& t) { return project(t, ad::matmul(t.param(a), t.param(b)), r); }});
  }
  {
    Param& a = in.gaussian("transpose.a", {3, 4});
    const Tensor r = in.probe({4, 3});
    checks.push_back({"transpose", {&a}, [&a, r](Tape& t) { return project(t, ad::transpose(t.param(a)), r); }});
  }
  {
    Param& a = in.gaussian("add.a", {3, 4});
    Param& b = in.gaussian("add.row", {4});
    const Tensor r = in.probe({3, 4});
    checks.push_back({"add (row broadcast)", {&a, &b}, [&a, &b, r](Tape& t) {
                        return project(t, ad::add(t.param(a), t.param(b)), r);
                      }});
  }
  {
    Param& a = in.gaussian("mul.a", {3, 4});
    Param& b = in.gaussian("mul.b", {3, 4});
    const Tensor r = in.probe({3, 4});
    checks.push_back({"mul", {&a, &b}, [&a, &b, r](Tape& t) { return project(t, ad::mul(t.param(a), t.param(b)), r); }});
  }
  {
    Param& a = in.gaussian("scale.a", {2, 3});
    const Tensor r = in.probe({2, 3});
    checks.push_back({"scale", {&a}, [&a, r](Tape& t) { return project(t, ad::scale(t.param(a), -1.7), r); }});
  }
  {
    Param& a = in.off_kink("relu.a", {4, 5});
    const Tensor r = in.probe({4, 5});
    checks.push_back({"relu", {&a}, [&a, r](Tape& t) { return project(t, ad::relu(t.param(a)), r); }});
  }
  {
    Param& a = in.gaussian("layer_norm.a", {3, 6});
    const Tensor r = in.probe({3, 6});
    checks.push_back({"layer_norm", {&a}, [&a, r](Tape& t) { return project(t, ad::layer_norm(t.param(a)), r); }});
  }
  {
    Param& a = in.gaussian("softmax.a", {3, 5}, 2.0);
    const Tensor r = in.probe({3, 5});
    checks.push_back({"softmax", {&a}, [&a, r](Tape& t) { return project(t, ad::softmax(t.param(a)), r); }});
  }
  {
    Param& a = in.gaussian("dropout.a", {4, 6});
    const Tensor r = in.probe({4, 6});
    checks.push_back({"dropout (train, fixed seed)", {&a}, [&a, r](Tape& t) {
                        return project(t, ad::dropout(t.param(a), 0.3, Mode::train, 99), r);
                      }});
  }
  {
    Param& a = in.gaussian("mse.a", {3, 4});
    Param& b = in.gaussian("mse.b", {3, 4});
    checks.push_back({"mse", {&a, &b}, [&a, &b](Tape& t) { return ad::mse(t.param(a), t.param(b)); }});
  }
  {
    Param& a = in.gaussian("concat.a", {2, 3});
    Param& b = in.gaussian("concat.b", {2, 2});
    const Tensor r = in.probe({2, 5});
    checks.push_back({"concat", {&a, &b}, [&a, &b, r](Tape& t) {
                        return project(t, ad::concat({t.param(a), t.param(b)}), r);
                      }});
  }
  {
    Param& w = in.gaussian("weighted_sum.w", {2, 3});
    Param& x = in.gaussian("weighted_sum.x", {2, 4});
    Param& y = in.gaussian("weighted_sum.y", {2, 4});
    Param& z = in.gaussian("weighted_sum.z", {2, 4});
    const Tensor r = in.probe({2, 4});
    checks.push_back({"stack_rows + weighted_sum", {&w, &x, &y, &z}, [&w, &x, &y, &z, r](Tape& t) {
                        const Var stacked = ad::stack_rows({t.param(x), t.param(y), t.param(z)});
                        return project(t, ad::weighted_sum(t.param(w), stacked), r);
                      }});
  }
  {
    Param& a = in.gaussian("mean.a", {3, 4});
    checks.push_back({"mean of squares", {&a}, [&a](Tape& t) {
                        const Var v = t.param(a);
                        return ad::mean(ad::mul(v, v));
                      }});
  }
  {
    Param& a = in.gaussian("reshape.a", {2, 6});
    const Tensor r = in.probe({3, 4});
    checks.push_back({"reshape", {&a}, [&a, r](Tape& t) { return project(t, ad::reshape(t.param(a), {3, 4}), r); }});
  }
  {
    Param& a = in.gaussian("index_sum.a", {3, 6});
    const std::vector<std::vector<std::size_t>> sets{{0, 2, 5}, {1}, {3, 4, 0}};
    const Tensor r = in.probe({3, 3});
    checks.push_back({"index_sum", {&a}, [&a, sets, r](Tape& t) { return project(t, ad::index_sum(t.param(a), sets), r); }});
  }
  {
    Param& table = in.gaussian("gather_rows.table", {3, 6});
    const std::vector<std::vector<std::size_t>> idx{{0, 4}, {5, 1}, {2, 3}};
    const Tensor r = in.probe({3, 2});
    checks.push_back({"gather_rows", {&table}, [&table, idx, r](Tape& t) {
                        return project(t, ad::gather_rows(t.param(table), idx), r);
                      }});
  }
  {
    Param& values = in.gaussian("sparse_mix.values", {2, 6});
    Param& weights = in.gaussian("sparse_mix.weights", {3, 2});
    const std::vector<std::vector<std::size_t>> idx{{0, 4}, {5, 1}, {2, 3}};
    const Tensor r = in.probe({2, 3});
    checks.push_back({"sparse_mix", {&values, &weights}, [&values, &weights, idx, r](Tape& t) {
                        return project(t, ad::sparse_mix(t.param(values), t.param(weights), idx), r);
                      }});
  }
  {
    Param& q = in.gaussian("attention.q", {2, 6});
    Param& k = in.gaussian("attention.k", {2, 6});
    Param& v = in.gaussian("attention.v", {2, 6});
    const Tensor r = in.probe({2, 6});
    checks.push_back({"attention (3 tokens)", {&q, &k, &v}, [&q, &k, &v, r](Tape& t) {
                        return project(t, ad::attention(t.param(q), t.param(k), t.param(v), 3), r);
                      }});
  }
  {
    Param& logits = in.gaussian("wce.logits", {4, 3});
    const std::vector<std::size_t> labels{0, 2, 1, 2};
    const std::vector<double> w{0.5, 1.5, 1.0};
    checks.push_back({"weighted_cross_entropy", {&logits}, [&logits, labels, w](Tape& t) {
                        return ad::weighted_cross_entropy(t.param(logits), labels, w);
                      }});
  }

  // Composite blocks, at reduced widths.
  auto& store = in.store();
  {
    auto gcn = std::make_shared<GcnParams>(store, "gcn", 5, 4, 3);
    for (auto* p : gcn->params()) {
      for (auto& v : p->value.storage()) v *= 25.0;
    }
    GcnBatch batch;
    batch.nodes_per_graph = 3;
    batch.features = in.probe({6, 5});
    batch.weights = Tensor::matrix(2, 3, {0.5, 0.3, 0.2, 0.6, 0.4, 0.0});
    const Tensor r = in.probe({2, 3});
    checks.push_back({"gcn_forward", gcn->params(), [gcn, batch, r](Tape& t) {
                        return project(t, gcn_forward(t, batch, *gcn), r);
                      }});
  }
  {
    Param& g = in.gaussian("clinical.g", {2, 6});
    ClinicalPathwayMask mask{{"A", "B"}, {{0, 1, 2}, {3, 5}}};
    const Tensor r = in.probe({2, 2});
    checks.push_back({"clinical_encode", {&g}, [&g, mask, r](Tape& t) {
                        return project(t, clinical_encode(t.param(g), mask), r);
                      }});
  }
  for (const auto mode : {PathwaySoftmax::support, PathwaySoftmax::literal}) {
    const std::string tag = mode == PathwaySoftmax::support ? "support" : "literal";
    auto layer = std::make_shared<LearnablePathwayLayer>(store, "learnable." + tag, 3, 10, 0.3, mode);
    // Distinct values 0.05 apart keep every top-k selection stable under the step.
    for (std::size_t i = 0; i < 3; ++i) {
      std::vector<double> row(10);
      std::iota(row.begin(), row.end(), 0.0);
      std::shuffle(row.begin(), row.end(), in.rng());
      for (std::size_t j = 0; j < 10; ++j) layer->weights->value.at(i, j) = 0.05 * row[j] - 0.2;
    }
    Param& g = in.gaussian("learnable.g." + tag, {2, 10});
    const Tensor r = in.probe({2, 3});
    checks.push_back({"learnable_encode (" + tag + ")", {layer->weights, &g}, [layer, &g, r](Tape& t) {
                        return project(t, learnable_encode(t, t.param(g), *layer), r);
                      }});
  }
  {
    auto enc = std::make_shared<MlpEncoderParams>(store, "mlp", 5, 4, 0.5);
    Param& x = in.gaussian("mlp.x", {3, 5});
    const Tensor r = in.probe({3, 4});
    checks.push_back({"mlp_encode (eval)", collect({enc->params(), {&x}}), [enc, &x, r](Tape& t) {
                        return project(t, mlp_encode(t, t.param(x), *enc, Mode::eval, {}), r);
                      }});
  }
  for (const auto layout : {AttentionLayout::literal, AttentionLayout::tokens}) {
    const std::string tag = layout == AttentionLayout::literal ? "literal" : "tokens";
    auto attn = std::make_shared<CrossAttentionParams>(store, "xattn." + tag, 4, 2, 6, 2, layout);
    for (auto* p : attn->params()) {
      for (auto& v : p->value.storage()) v *= 20.0;  // move off the tiny init scale
    }
    Param& x = in.gaussian("xattn.x." + tag, {2, 4});
    Param& p = in.gaussian("xattn.p." + tag, {2, 4});
    std::vector<Param*> ps = {&x, &p};
    for (auto* q : attn->params()) {
      // Literal layout never reads the query and key projections.
      if (layout == AttentionLayout::literal &&
          (q->name.find(".query.") != std::string::npos || q->name.find(".key.") != std::string::npos)) {
        continue;
      }
      ps.push_back(q);
    }
    const Tensor r = in.probe({2, 4});
    checks.push_back({"cross_attention_fuse (" + tag + ", eval)", ps, [attn, &x, &p, r](Tape& t) {
                        return project(t, cross_attention_fuse(t, t.param(x), t.param(p), *attn, Mode::eval, {}), r);
                      }});
  }
  {
    auto gp = std::make_shared<GateParams>(store, "late_gate", 4, 3, 5);
    auto cls = std::make_shared<Linear>(store, "classifier", 4, 3);
    for (auto* p : gp->params()) {
      for (auto& v : p->value.storage()) v *= 25.0;
    }
    Param& h = in.gaussian("gate.h", {2, 4});
    Param& f = in.gaussian("gate.f", {2, 4});
    Param& s = in.gaussian("gate.s", {2, 4});
    const std::vector<std::size_t> labels{1, 2};
    checks.push_back({"late_gate_classify + loss", collect({gp->params(), cls->params(), {&h, &f, &s}}),
                      [gp, cls, &h, &f, &s, labels](Tape& t) {
                        const auto out = late_gate_classify(t, t.param(h), t.param(f), t.param(s), *gp, *cls);
                        return ad::weighted_cross_entropy(out.logits, labels, {1.0, 1.0, 1.0});
                      }});
  }

  std::vector<GradCheckReport> reports;
  for (const auto& c : checks) {
    GradCheckOptions opts;
    opts.seed = seed;
    reports.push_back(GradCheckReport{c.name, finite_diff_check(c.fn, c.params, opts), kPrimitiveTolerance});
  }
  return reports;
}

GradCheckReport model_gradcheck(const ModelGradCheckOptions& options) {
  if (options.spots == 0) throw std::invalid_argument("model_gradcheck: spots must be positive");
  SynthConfig sc;
  sc.spots = 120;
  sc.genes = 80;
  sc.pathways = 6;
  sc.markers_per_class = 4;
  sc.morph_dim = options.dims.morph_dim;
  sc.seed = options.seed;
  const auto synth = synth_generate(sc);

  TrainConfig tc;
  tc.dims = options.dims;
  tc.ablation = options.ablation;
  tc.layout = options.layout;
  tc.seed = options.seed;
  const auto data = prepare_data(synth.dataset, synth.pathways, tc);
  Model model(model_config(data, tc), SeedStreams::from(tc.seed).init);

  auto train_idx = data.ds.indices(Split::train);
  if (train_idx.size() < options.spots) throw std::invalid_argument("model_gradcheck: too few training spots");
  train_idx.resize(options.spots);
  const auto labels = labels_of(data.ds, train_idx);
  const auto weights = class_weights(labels_of(data.ds, data.ds.indices(Split::train)), data.ds.num_classes());
  const ModelInput input = make_input(data.ds, data.graphs, train_idx, model.config());

  const LossBuilder fn = [&](Tape& tape) {
    const auto fwd = model.forward(tape, input, Mode::eval, DropoutContext{});
    return ad::weighted_cross_entropy(fwd.logits, labels, weights.W);
  };
  GradCheckOptions gco;
  gco.max_entries_per_param = options.entries_per_param;
  gco.seed = options.seed;
  return GradCheckReport{"full model (" + to_string(options.ablation) + ", " + std::to_string(options.spots) + " spots)",
                         finite_diff_check(fn, model.active_params(), gco), kModelTolerance};
}

AblationOutcome run_ablation(const PreparedData& data, const AblationPlan& plan) {
  if (plan.rows.empty()) throw std::invalid_argument("ablation: no rows");
  if (plan.seeds.empty()) throw std::invalid_argument("ablation: no seeds");
  const std::vector<std::size_t> counts =
      plan.pathway_counts.empty() ? std::vector<std::size_t>{plan.base.dims.learnable_pathways} : plan.pathway_counts;

  AblationOutcome out;
  for (const auto& row : plan.rows) {
    for (auto count : counts) {
      for (auto seed : plan.seeds) out.runs.push_back(AblationRun{row, count, seed, {}});
    }
  }
  for (const auto& run : out.runs) {
    TrainConfig cfg = plan.base;
    cfg.ablation = run.ablation;
    cfg.dims.learnable_pathways = run.pathway_count;
    cfg.seed = run.seed;
    cfg.validate();
  }

  const auto test_idx = data.ds.indices(Split::test);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  const auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= out.runs.size()) return;
      {
        std::lock_guard lock(failure_mu);
        if (failure) return;
      }
      try {
        auto& run = out.runs[i];
        TrainConfig cfg = plan.base;
        cfg.ablation = run.ablation;
        cfg.dims.learnable_pathways = run.pathway_count;
        cfg.seed = run.seed;
        const auto trained = train(data, cfg);
        run.metrics = evaluate(*trained.model, data, test_idx).metrics;
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::clamp<std::size_t>(plan.jobs, 1, out.runs.size());
  {
    std::vector<std::jthread> pool;
    for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
  }
  if (failure) std::rethrow_exception(failure);

  const std::size_t per_group = plan.seeds.size();
  for (std::size_t g = 0; g * per_group < out.runs.size(); ++g) {
    AblationSummaryRow row;
    row.ablation = out.runs[g * per_group].ablation;
    row.pathway_count = out.runs[g * per_group].pathway_count;
    row.runs = per_group;
    for (std::size_t s = 0; s < per_group; ++s) {
      const auto& m = out.runs[g * per_group + s].metrics;
      row.bal_acc += m.bal_acc;
      row.w_f1 += m.w_f1;
      row.auroc += m.auroc;
      row.auprc += m.auprc;
      row.mean += m.mean;
    }
    const double n = static_cast<double>(per_group);
    row.bal_acc /= n;
    row.w_f1 /= n;
    row.auroc /= n;
    row.auprc /= n;
    row.mean /= n;
    out.summary.push_back(row);
  }
  return out;
}

std::string ablation_summary_tsv(const std::vector<AblationSummaryRow>& rows) {
  std::ostringstream os;
  os << "ablation\tpathway_count\truns\tbal_acc\tw_f1\tauroc\tauprc\tmean\n";
  for (const auto& r : rows) {
    os << to_string(r.ablation) << '\t' << r.pathway_count << '\t' << r.runs << '\t' << format_double6(r.bal_acc)
       << '\t' << format_double6(r.w_f1) << '\t' << format_double6(r.auroc) << '\t' << format_double6(r.auprc) << '\t'
       << format_double6(r.mean) << '\n';
  }
  return os.str();
}

}  // namespace biomorph
