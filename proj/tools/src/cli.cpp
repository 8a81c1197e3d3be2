#include "biomorph/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "biomorph/analysis.hpp"
#include "biomorph/diagnostics.hpp"
#include "biomorph/synth.hpp"
#include "biomorph/training.hpp"

namespace biomorph::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Settings that are not part of TrainConfig. Config files may carry them
/// under the same names; command-line flags take precedence.
struct RunSettings {
  std::string data;
  std::string gmt;
  std::string out = "out";
  std::string checkpoint;
  std::string split = "test";
  double tau = kDefaultConfidence;
  std::size_t top_n = kDefaultTopGenes;
  bool bh = false;
  std::size_t jobs = 1;
  std::size_t seeds = 5;
  std::string rows = "standard";
  std::string pathway_counts;
  std::size_t entries = 6;
  std::size_t spots = 4;
  bool primitives_only = false;
  SynthConfig synth;
  TrainConfig train;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw UsageError("cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw std::runtime_error("write to '" + p.string() + "' failed");
}

template <typename T>
T take(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("config key '" + key + "' has the wrong type");
  }
}

void apply_synth_json(SynthConfig& s, const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config key 'synth' must be an object");
  for (const auto& [k, v] : j.items()) {
    const std::string key = "synth." + k;
    if (k == "classes") s.classes = take<std::size_t>(v, key);
    else if (k == "spots") s.spots = take<std::size_t>(v, key);
    else if (k == "genes") s.genes = take<std::size_t>(v, key);
    else if (k == "pathways") s.pathways = take<std::size_t>(v, key);
    else if (k == "samples") s.samples = take<std::size_t>(v, key);
    else if (k == "train_samples") s.train_samples = take<std::size_t>(v, key);
    else if (k == "val_samples") s.val_samples = take<std::size_t>(v, key);
    else if (k == "markers_per_class") s.markers_per_class = take<std::size_t>(v, key);
    else if (k == "morph_signal") s.morph_signal = take<double>(v, key);
    else if (k == "morph_noise") s.morph_noise = take<double>(v, key);
    else if (k == "base_mean") s.base_mean = take<double>(v, key);
    else if (k == "marker_fold") s.marker_fold = take<double>(v, key);
    else if (k == "dispersion") s.dispersion = take<double>(v, key);
    else if (k == "zero_genes") s.zero_genes = take<std::size_t>(v, key);
    else throw std::invalid_argument("unknown config key '" + key + "'");
  }
}

/// Splits run-level keys out of the config file and hands the rest to the
/// TrainConfig parser, which rejects anything it does not know.
void apply_config_file(RunSettings& rs, const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw std::invalid_argument("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config '" + path.string() + "' must be a JSON object");
  json rest = json::object();
  for (const auto& [k, v] : j.items()) {
    if (k == "data") rs.data = take<std::string>(v, k);
    else if (k == "gmt") rs.gmt = take<std::string>(v, k);
    else if (k == "out") rs.out = take<std::string>(v, k);
    else if (k == "checkpoint") rs.checkpoint = take<std::string>(v, k);
    else if (k == "split") rs.split = take<std::string>(v, k);
    else if (k == "tau") rs.tau = take<double>(v, k);
    else if (k == "top_n") rs.top_n = take<std::size_t>(v, k);
    else if (k == "bh") rs.bh = take<bool>(v, k);
    else if (k == "jobs") rs.jobs = take<std::size_t>(v, k);
    else if (k == "seeds") rs.seeds = take<std::size_t>(v, k);
    else if (k == "rows") rs.rows = take<std::string>(v, k);
    else if (k == "pathway_counts") rs.pathway_counts = take<std::string>(v, k);
    else if (k == "synth") apply_synth_json(rs.synth, v);
    else rest[k] = v;
  }
  rs.train = train_config_from_json(rest.dump(), rs.train);
  if (j.contains("seed")) rs.synth.seed = rs.train.seed;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::size_t> parse_counts(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(s)) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || v == 0 || item.front() == '-') {
      throw std::invalid_argument("pathway count '" + item + "' is not a positive integer");
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::vector<AblationConfig> parse_rows(const std::string& s) {
  if (s == "standard") return standard_ablation_rows();
  std::vector<AblationConfig> rows;
  for (const auto& item : split_list(s)) rows.push_back(ablation_from_string(item));
  if (rows.empty()) throw std::invalid_argument("--rows lists no configurations");
  return rows;
}

fs::path manifest_path(const std::string& data) {
  if (data.empty()) throw UsageError("--data is required");
  fs::path p(data);
  if (fs::is_directory(p)) p /= "manifest.json";
  if (!fs::exists(p)) throw UsageError("dataset manifest '" + p.string() + "' does not exist");
  return p;
}

PathwayDb load_pathways(const std::string& gmt, const fs::path& manifest) {
  if (!gmt.empty()) {
    if (!fs::exists(gmt)) throw UsageError("pathway file '" + gmt + "' does not exist");
    return parse_gmt(fs::path(gmt));
  }
  const fs::path beside = manifest.parent_path() / "pathways.gmt";
  if (fs::exists(beside)) return parse_gmt(beside);
  return PathwayDb{};
}

fs::path checkpoint_dir(const std::string& ck) {
  if (ck.empty()) throw UsageError("--checkpoint is required");
  fs::path p(ck);
  if (!fs::exists(p / "params.json") && fs::exists(p / "checkpoint" / "params.json")) p /= "checkpoint";
  if (!fs::exists(p / "params.json")) throw UsageError("no checkpoint found at '" + ck + "'");
  return p;
}

std::vector<std::size_t> select_spots(const Dataset& ds, const std::string& split) {
  if (split == "all") {
    std::vector<std::size_t> all(ds.spots.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  return ds.indices(split_from_string(split));
}

bool all_labeled(const Dataset& ds, const std::vector<std::size_t>& spots) {
  return std::all_of(spots.begin(), spots.end(), [&](std::size_t s) { return ds.spots[s].label.has_value(); });
}

void print_metrics(std::ostream& out, const std::string& what, const MetricsBundle& m) {
  out << what << ": bal_acc " << format_double6(m.bal_acc) << "  w_f1 " << format_double6(m.w_f1) << "  auprc "
      << format_double6(m.auprc) << "  auroc " << format_double6(m.auroc) << "  mean " << format_double6(m.mean) << '\n';
}

std::string predictions_tsv(const Dataset& ds, const std::vector<Prediction>& preds,
                            const std::vector<std::string>& classes) {
  std::ostringstream os;
  os << "spot_id\tpredicted\tconfidence";
  for (const auto& c : classes) os << "\tp_" << c;
  os << '\n';
  for (const auto& p : preds) {
    os << ds.spots.at(p.spot).spot_id << '\t' << classes.at(p.predicted) << '\t' << format_double6(p.confidence);
    for (double v : p.probs) os << '\t' << format_double6(v);
    os << '\n';
  }
  return os.str();
}

// ---- subcommands -----------------------------------------------------------

int cmd_synth(const RunSettings& rs, std::ostream& out) {
  const auto data = synth_generate(rs.synth);
  const fs::path dir(rs.out);
  write_dataset(dir, data.dataset);
  write_gmt(dir / "pathways.gmt", data.pathways);
  write_truth(dir / "truth.json", data.truth, data.dataset.panel);
  out << "wrote " << data.dataset.spots.size() << " spots, " << data.dataset.panel.d() << " genes, "
      << data.pathways.entries().size() << " pathways to " << dir.string() << '\n';
  return 0;
}

int cmd_train(const RunSettings& rs, std::ostream& out, std::ostream& err) {
  const auto manifest = manifest_path(rs.data);
  const auto ds = load_dataset(manifest);
  const auto db = load_pathways(rs.gmt, manifest);
  const auto prepared = prepare_data(ds, db, rs.train);
  if (prepared.report.genes_removed + prepared.report.spots_removed > 0) {
    err << "warning: preprocessing removed " << prepared.report.genes_removed << " genes and "
        << prepared.report.spots_removed << " spots\n";
  }
  const fs::path dir(rs.out);
  const std::size_t total = rs.train.epochs;
  auto result = train(prepared, rs.train, [&](std::size_t epoch, const EpochRecord& r) {
    out << "epoch " << epoch << '/' << total << "  train_loss " << format_double6(r.train_loss) << "  val_bal_acc "
        << format_double6(r.val_bal_acc) << '\n';
  });
  CheckpointInfo info{rs.train, prepared.ds.class_names, prepared.ds.panel.genes(), prepared.clinical,
                      result.best_epoch};
  save_checkpoint(dir / "checkpoint", *result.model, info);
  write_file(dir / "history.json", history_json(result.history));
  write_file(dir / "config.json", train_config_to_json(rs.train));
  out << "best epoch " << result.best_epoch << '\n';

  const auto test = prepared.ds.indices(Split::test);
  if (!test.empty() && all_labeled(prepared.ds, test)) {
    const auto ev = evaluate(*result.model, prepared, test);
    for (const auto& w : ev.metrics.warnings) err << "warning: " << w << '\n';
    write_file(dir / "metrics.json", metrics_json(ev.metrics));
    print_metrics(out, "test", ev.metrics);
  }
  out << "wrote " << dir.string() << '\n';
  return 0;
}

int cmd_eval(const RunSettings& rs, std::ostream& out, std::ostream& err) {
  const auto ck = load_checkpoint(checkpoint_dir(rs.checkpoint));
  const auto ds = load_dataset(manifest_path(rs.data));
  const auto prepared = prepare_for_checkpoint(ds, ck.info);
  const auto spots = select_spots(prepared.ds, rs.split);
  if (spots.empty()) throw UsageError("split '" + rs.split + "' has no spots");
  if (!all_labeled(prepared.ds, spots)) throw UsageError("eval needs labels for every spot in split '" + rs.split + "'");
  const auto ev = evaluate(*ck.model, prepared, spots);
  for (const auto& w : ev.metrics.warnings) err << "warning: " << w << '\n';
  const fs::path dir(rs.out);
  write_file(dir / "metrics.json", metrics_json(ev.metrics));
  fs::create_directories(dir);
  write_prediction_map(dir / "prediction_map.tsv", prepared.ds, ev.predictions);
  print_metrics(out, rs.split, ev.metrics);
  return 0;
}

int cmd_predict(const RunSettings& rs, std::ostream& out) {
  const auto ck = load_checkpoint(checkpoint_dir(rs.checkpoint));
  const auto ds = load_dataset(manifest_path(rs.data));
  const auto prepared = prepare_for_checkpoint(ds, ck.info);
  const auto spots = select_spots(prepared.ds, "all");
  const auto preds = predict(*ck.model, prepared, spots);
  const fs::path dir(rs.out);
  write_file(dir / "predictions.tsv", predictions_tsv(prepared.ds, preds, ck.info.class_names));
  write_prediction_map(dir / "prediction_map.tsv", prepared.ds, preds);
  out << "predicted " << preds.size() << " spots into " << dir.string() << '\n';
  return 0;
}

int cmd_dge(const RunSettings& rs, std::ostream& out, std::ostream& err) {
  const auto ck = load_checkpoint(checkpoint_dir(rs.checkpoint));
  const auto ds = load_dataset(manifest_path(rs.data));
  const auto prepared = prepare_for_checkpoint(ds, ck.info);
  const auto spots = select_spots(prepared.ds, rs.split);
  const auto preds = predict(*ck.model, prepared, spots);
  const auto kept = select_high_confidence(preds, rs.tau);
  out << kept.size() << " of " << preds.size() << " spots have confidence >= " << format_double6(rs.tau) << '\n';
  const auto dge = dge_from_predictions(prepared.ds, kept, ck.info.class_names.size(), DgeOptions{rs.bh});
  for (const auto& w : dge.warnings) err << "warning: " << w << '\n';
  emit_reports(fs::path(rs.out), prepared.ds, preds, dge, rs.top_n);
  for (const auto& cls : dge.classes) {
    out << ck.info.class_names[cls.cls] << " (" << cls.group_size << " spots):";
    for (std::size_t i = 0; i < std::min(rs.top_n, cls.ranked.size()); ++i) {
      out << ' ' << prepared.ds.panel[cls.ranked[i].gene];
    }
    out << '\n';
  }
  return 0;
}

int cmd_ablate(const RunSettings& rs, std::ostream& out) {
  const auto manifest = manifest_path(rs.data);
  const auto ds = load_dataset(manifest);
  const auto db = load_pathways(rs.gmt, manifest);
  if (rs.seeds == 0) throw UsageError("--seeds must be positive");
  AblationPlan plan;
  plan.rows = parse_rows(rs.rows);
  plan.pathway_counts = parse_counts(rs.pathway_counts);
  for (std::size_t s = 0; s < rs.seeds; ++s) plan.seeds.push_back(rs.train.seed + s);
  plan.base = rs.train;
  plan.jobs = rs.jobs;
  const auto prepared = prepare_data(ds, db, rs.train);
  const auto outcome = run_ablation(prepared, plan);

  std::ostringstream runs;
  runs << "ablation\tpathway_count\tseed\tbal_acc\tw_f1\tauroc\tauprc\tmean\n";
  for (const auto& r : outcome.runs) {
    runs << to_string(r.ablation) << '\t' << r.pathway_count << '\t' << r.seed << '\t'
         << format_double6(r.metrics.bal_acc) << '\t' << format_double6(r.metrics.w_f1) << '\t'
         << format_double6(r.metrics.auroc) << '\t' << format_double6(r.metrics.auprc) << '\t'
         << format_double6(r.metrics.mean) << '\n';
  }
  const std::string summary = ablation_summary_tsv(outcome.summary);
  const fs::path dir(rs.out);
  write_file(dir / "ablation_runs.tsv", runs.str());
  write_file(dir / "ablation_summary.tsv", summary);
  out << summary;
  return 0;
}

int cmd_gradcheck(const RunSettings& rs, std::ostream& out) {
  bool ok = true;
  double worst = 0.0;
  const auto show = [&](const GradCheckReport& r) {
    ok = ok && r.passed();
    worst = std::max(worst, r.result.max_rel_error);
    out << (r.passed() ? "ok    " : "FAIL  ") << r.name << "  max_rel_error " << format_double6(r.result.max_rel_error)
        << " (tolerance " << format_double6(r.tolerance) << ", " << r.result.entries_checked << " entries)\n";
  };
  for (const auto& r : primitive_gradchecks(rs.train.seed)) show(r);
  if (!rs.primitives_only) {
    ModelGradCheckOptions mo;
    mo.dims = rs.train.dims;
    mo.ablation = rs.train.ablation;
    mo.layout = rs.train.layout;
    mo.spots = rs.spots;
    mo.entries_per_param = rs.entries;
    mo.seed = rs.train.seed;
    show(model_gradcheck(mo));
  }
  out << "max relative error " << format_double6(worst) << '\n';
  return ok ? 0 : 1;
}

// ---- argument wiring -------------------------------------------------------

enum class Command { synth, train, eval, predict, dge, ablate, gradcheck };

struct Flags {
  std::string config;
  std::uint64_t seed = TrainConfig{}.seed;
  std::string ablation = to_string(TrainConfig{}.ablation);
  std::size_t pathway_count = TrainConfig{}.dims.learnable_pathways;
  double threshold = TrainConfig{}.overlap_threshold;
  std::size_t epochs = TrainConfig{}.epochs;
  RunSettings rs;
};

void add_config_seed(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON config file; flags override its values")->check(CLI::ExistingFile);
  app->add_option("--seed", f.seed, "Run seed; every random stream derives from it");
}

void add_train_flags(CLI::App* app, Flags& f) {
  app->add_option("--gmt", f.rs.gmt, "Pathway GMT file (default: pathways.gmt beside the manifest)");
  app->add_option("--ablation", f.ablation, "Entities as image+pathways+st, e.g. graph+both+st or seq+none+nost");
  app->add_option("--pathway-count", f.pathway_count, "Number of learnable pathways");
  app->add_option("--threshold", f.threshold, "Minimum pathway overlap for clinical pathways");
  app->add_option("--epochs", f.epochs, "Training epochs");
}

int dispatch(Command cmd, const RunSettings& rs, std::ostream& out, std::ostream& err) {
  switch (cmd) {
    case Command::synth: return cmd_synth(rs, out);
    case Command::train: return cmd_train(rs, out, err);
    case Command::eval: return cmd_eval(rs, out, err);
    case Command::predict: return cmd_predict(rs, out);
    case Command::dge: return cmd_dge(rs, out, err);
    case Command::ablate: return cmd_ablate(rs, out);
    case Command::gradcheck: return cmd_gradcheck(rs, out);
  }
  return 2;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Morphology, pathway and expression fusion for spatial tissue classification", "biomorph"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Flags f;
  RunSettings& rs = f.rs;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset with planted markers and pathways");
  add_config_seed(synth, f);
  synth->add_option("--out", rs.out, "Output dataset directory");
  synth->add_option("--classes", rs.synth.classes, "Tissue classes");
  synth->add_option("--spots", rs.synth.spots, "Total spots");
  synth->add_option("--genes", rs.synth.genes, "Genes in the panel");
  synth->add_option("--pathways", rs.synth.pathways, "Planted pathways");
  synth->add_option("--samples", rs.synth.samples, "Samples (slides)");
  synth->add_option("--train-samples", rs.synth.train_samples, "Samples in the training split");
  synth->add_option("--val-samples", rs.synth.val_samples, "Samples in the validation split");
  synth->add_option("--markers", rs.synth.markers_per_class, "Marker genes per class");
  synth->add_option("--marker-fold", rs.synth.marker_fold, "Marker up-regulation inside its class");
  synth->add_option("--morph-signal", rs.synth.morph_signal, "Per-dimension prototype deviation");

  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoint, history and test metrics");
  add_config_seed(train_cmd, f);
  train_cmd->add_option("--data", rs.data, "Dataset manifest or directory");
  train_cmd->add_option("--out", rs.out, "Output directory");
  add_train_flags(train_cmd, f);

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a labeled split");
  add_config_seed(eval, f);
  eval->add_option("--checkpoint", rs.checkpoint, "Checkpoint directory");
  eval->add_option("--data", rs.data, "Dataset manifest or directory");
  eval->add_option("--split", rs.split, "Spots to score")->check(CLI::IsMember({"train", "val", "test", "all"}));
  eval->add_option("--out", rs.out, "Output directory");

  auto* pred = app.add_subcommand("predict", "Predict every spot of a (possibly unlabeled) dataset");
  add_config_seed(pred, f);
  pred->add_option("--checkpoint", rs.checkpoint, "Checkpoint directory");
  pred->add_option("--data", rs.data, "Dataset manifest or directory");
  pred->add_option("--out", rs.out, "Output directory");

  auto* dge = app.add_subcommand("dge", "Differential expression between confidently predicted classes");
  add_config_seed(dge, f);
  dge->add_option("--checkpoint", rs.checkpoint, "Checkpoint directory");
  dge->add_option("--data", rs.data, "Dataset manifest or directory");
  dge->add_option("--split", rs.split, "Spots to analyze")->check(CLI::IsMember({"train", "val", "test", "all"}));
  dge->add_option("--tau", rs.tau, "Minimum softmax confidence");
  dge->add_option("--top-n", rs.top_n, "Genes per class in the dot-plot table");
  dge->add_flag("--bh", rs.bh, "Apply Benjamini-Hochberg adjustment within each class");
  dge->add_option("--out", rs.out, "Output directory");

  auto* ablate = app.add_subcommand("ablate", "Train every listed configuration over several seeds");
  add_config_seed(ablate, f);
  ablate->add_option("--data", rs.data, "Dataset manifest or directory");
  ablate->add_option("--out", rs.out, "Output directory");
  add_train_flags(ablate, f);
  ablate->add_option("--rows", rs.rows, "'standard' or a comma list of ablation labels");
  ablate->add_option("--seeds", rs.seeds, "Seeds per configuration, counting up from --seed");
  ablate->add_option("--pathway-counts", rs.pathway_counts, "Comma list of learnable pathway counts to sweep");
  ablate->add_option("--jobs", rs.jobs, "Concurrent training runs");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every primitive and the full model");
  add_config_seed(gc, f);
  gc->add_option("--ablation", f.ablation, "Entities as image+pathways+st");
  gc->add_option("--spots", rs.spots, "Micro-batch size for the full-model check");
  gc->add_option("--entries", rs.entries, "Sampled entries per parameter tensor (0 = all)");
  gc->add_flag("--primitives-only", rs.primitives_only, "Skip the full-model check");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  const std::vector<std::pair<CLI::App*, Command>> table{
      {synth, Command::synth}, {train_cmd, Command::train}, {eval, Command::eval},    {pred, Command::predict},
      {dge, Command::dge},     {ablate, Command::ablate},   {gc, Command::gradcheck}};
  CLI::App* sub = app.get_subcommands().front();
  const Command cmd = std::find_if(table.begin(), table.end(), [&](const auto& p) { return p.first == sub; })->second;

  try {
    // Precedence: built-in defaults, then the config file, then explicit flags.
    RunSettings merged;
    if (!f.config.empty()) apply_config_file(merged, f.config);
    const auto given = [&](const char* name) { return sub->get_option_no_throw(name) && sub->count(name) > 0; };
    const auto over = [&](const char* name, auto& dst, const auto& src) {
      if (given(name)) dst = src;
    };
    over("--data", merged.data, rs.data);
    over("--gmt", merged.gmt, rs.gmt);
    over("--out", merged.out, rs.out);
    over("--checkpoint", merged.checkpoint, rs.checkpoint);
    over("--split", merged.split, rs.split);
    over("--tau", merged.tau, rs.tau);
    over("--top-n", merged.top_n, rs.top_n);
    over("--bh", merged.bh, rs.bh);
    over("--jobs", merged.jobs, rs.jobs);
    over("--seeds", merged.seeds, rs.seeds);
    over("--rows", merged.rows, rs.rows);
    over("--pathway-counts", merged.pathway_counts, rs.pathway_counts);
    over("--spots", merged.spots, rs.spots);
    over("--entries", merged.entries, rs.entries);
    over("--primitives-only", merged.primitives_only, rs.primitives_only);
    if (cmd == Command::synth) {
      over("--classes", merged.synth.classes, rs.synth.classes);
      over("--spots", merged.synth.spots, rs.synth.spots);
      over("--genes", merged.synth.genes, rs.synth.genes);
      over("--pathways", merged.synth.pathways, rs.synth.pathways);
      over("--samples", merged.synth.samples, rs.synth.samples);
      over("--train-samples", merged.synth.train_samples, rs.synth.train_samples);
      over("--val-samples", merged.synth.val_samples, rs.synth.val_samples);
      over("--markers", merged.synth.markers_per_class, rs.synth.markers_per_class);
      over("--marker-fold", merged.synth.marker_fold, rs.synth.marker_fold);
      over("--morph-signal", merged.synth.morph_signal, rs.synth.morph_signal);
    }
    if (given("--seed")) {
      merged.train.seed = f.seed;
      merged.synth.seed = f.seed;
    }
    if (given("--ablation")) merged.train.ablation = ablation_from_string(f.ablation);
    over("--pathway-count", merged.train.dims.learnable_pathways, f.pathway_count);
    over("--threshold", merged.train.overlap_threshold, f.threshold);
    over("--epochs", merged.train.epochs, f.epochs);
    merged.train.validate();
    if (!(merged.tau > 0.0 && merged.tau <= 1.0)) throw UsageError("--tau must lie in (0, 1]");
    if (merged.jobs == 0) throw UsageError("--jobs must be positive");
    return dispatch(cmd, merged, out, err);
  } catch (const DivergenceError& e) {
    err << "error: training diverged: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace biomorph::cli
