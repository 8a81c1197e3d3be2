#include "biomorph/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <sstream>

namespace biomorph {

using json = nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be non-negative");
  if (epochs == 0) throw std::invalid_argument("epochs must be at least 1");
  if (batch == 0) throw std::invalid_argument("batch must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("beta1 and beta2 must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw std::invalid_argument("adam_eps must be positive");
  if (!(overlap_threshold > 0.0 && overlap_threshold <= 1.0)) {
    throw std::invalid_argument("overlap_threshold must lie in (0, 1]");
  }
  if (neighbors == 0) throw std::invalid_argument("neighbors must be at least 1");
  if (!(edge_eps > 0.0)) throw std::invalid_argument("edge_eps must be positive");
  dims.validate();
}

namespace {

json config_to_json_object(const TrainConfig& c) {
  json j;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["epochs"] = c.epochs;
  j["batch"] = c.batch;
  j["seed"] = c.seed;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["image_mode"] = to_string(c.ablation.image);
  j["pathways"] = to_string(c.ablation.pathways);
  j["st_branch"] = c.ablation.st_branch;
  j["attention_layout"] = to_string(c.layout);
  j["pathway_softmax"] = to_string(c.pathway_softmax);
  j["learnable_pathway_count"] = c.dims.learnable_pathways;
  j["selection_fraction"] = c.dims.selection_fraction;
  j["overlap_threshold"] = c.overlap_threshold;
  j["neighbors"] = c.neighbors;
  j["edge_eps"] = c.edge_eps;
  j["morph_dim"] = c.dims.morph_dim;
  j["width"] = c.dims.width;
  j["heads"] = c.dims.heads;
  j["mlp_hidden"] = c.dims.mlp_hidden;
  j["gate_hidden"] = c.dims.gate_hidden;
  j["depth"] = c.dims.depth;
  j["encoder_dropout"] = c.dims.encoder_dropout;
  j["block_dropout"] = c.dims.block_dropout;
  return j;
}

template <typename T>
T get_as(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) throw std::invalid_argument("expected a non-negative integer");
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw std::invalid_argument("expected a number");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw std::invalid_argument("expected true or false");
    } else {
      if (!v.is_string()) throw std::invalid_argument("expected a string");
    }
    return v.get<T>();
  } catch (const std::exception& e) {
    throw std::invalid_argument("config key '" + key + "': " + e.what());
  }
}

void apply_config(TrainConfig& c, const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "lr") c.lr = get_as<double>(v, key);
    else if (key == "weight_decay") c.weight_decay = get_as<double>(v, key);
    else if (key == "epochs") c.epochs = get_as<std::size_t>(v, key);
    else if (key == "batch") c.batch = get_as<std::size_t>(v, key);
    else if (key == "seed") c.seed = get_as<std::uint64_t>(v, key);
    else if (key == "beta1") c.beta1 = get_as<double>(v, key);
    else if (key == "beta2") c.beta2 = get_as<double>(v, key);
    else if (key == "adam_eps") c.adam_eps = get_as<double>(v, key);
    else if (key == "image_mode") c.ablation.image = image_mode_from_string(get_as<std::string>(v, key));
    else if (key == "pathways") c.ablation.pathways = pathway_mode_from_string(get_as<std::string>(v, key));
    else if (key == "st_branch") c.ablation.st_branch = get_as<bool>(v, key);
    else if (key == "attention_layout") c.layout = attention_layout_from_string(get_as<std::string>(v, key));
    else if (key == "pathway_softmax") c.pathway_softmax = pathway_softmax_from_string(get_as<std::string>(v, key));
    else if (key == "learnable_pathway_count") c.dims.learnable_pathways = get_as<std::size_t>(v, key);
    else if (key == "selection_fraction") c.dims.selection_fraction = get_as<double>(v, key);
    else if (key == "overlap_threshold") c.overlap_threshold = get_as<double>(v, key);
    else if (key == "neighbors") c.neighbors = get_as<std::size_t>(v, key);
    else if (key == "edge_eps") c.edge_eps = get_as<double>(v, key);
    else if (key == "morph_dim") c.dims.morph_dim = get_as<std::size_t>(v, key);
    else if (key == "width") c.dims.width = get_as<std::size_t>(v, key);
    else if (key == "heads") c.dims.heads = get_as<std::size_t>(v, key);
    else if (key == "mlp_hidden") c.dims.mlp_hidden = get_as<std::size_t>(v, key);
    else if (key == "gate_hidden") c.dims.gate_hidden = get_as<std::size_t>(v, key);
    else if (key == "depth") c.dims.depth = get_as<std::size_t>(v, key);
    else if (key == "encoder_dropout") c.dims.encoder_dropout = get_as<double>(v, key);
    else if (key == "block_dropout") c.dims.block_dropout = get_as<double>(v, key);
    else throw std::invalid_argument("unknown config key '" + key + "'");
  }
}

json mask_to_json(const ClinicalPathwayMask& m) {
  json j;
  j["names"] = m.names;
  j["gene_indices"] = m.gene_indices;
  return j;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

std::uint64_t rng_below(std::uint64_t seed, std::uint64_t counter, std::uint64_t n) {
  return static_cast<std::uint64_t>(uniform_from_hash(mix_seed(seed, counter)) * static_cast<double>(n));
}

/// Fisher-Yates driven by the counter hash, so the permutation does not
/// depend on the standard library's distribution implementations.
std::vector<std::size_t> shuffled(std::vector<std::size_t> v, std::uint64_t seed) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng_below(seed, i, i));
    std::swap(v[i - 1], v[j]);
  }
  return v;
}

std::vector<std::size_t> labels_of(const Dataset& ds, std::span<const std::size_t> spots) {
  std::vector<std::size_t> out;
  out.reserve(spots.size());
  for (auto s : spots) {
    const auto& rec = ds.spots.at(s);
    if (!rec.label) throw DataError("spot '" + rec.spot_id + "' has no label");
    out.push_back(*rec.label);
  }
  return out;
}

}  // namespace

std::string train_config_to_json(const TrainConfig& cfg) { return config_to_json_object(cfg).dump(2) + "\n"; }

TrainConfig train_config_from_json(const std::string& text, TrainConfig base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  apply_config(base, j);
  base.validate();
  return base;
}

std::vector<std::string> train_config_keys() {
  std::vector<std::string> keys;
  const json defaults = config_to_json_object(TrainConfig{});
  for (const auto& [k, v] : defaults.items()) keys.push_back(k);
  return keys;
}

SeedStreams SeedStreams::from(std::uint64_t seed) {
  return SeedStreams{mix_seed(seed, hash_name("init")), mix_seed(seed, hash_name("dropout")),
                     mix_seed(seed, hash_name("shuffle"))};
}

ClassWeights class_weights(const std::vector<std::size_t>& labels, std::size_t C, const std::vector<std::string>& names) {
  if (C == 0) throw std::invalid_argument("class_weights: no classes");
  ClassWeights w;
  w.C = C;
  w.N = labels.size();
  w.counts.assign(C, 0);
  for (auto l : labels) {
    if (l >= C) throw std::invalid_argument("class_weights: label " + std::to_string(l) + " >= " + std::to_string(C));
    ++w.counts[l];
  }
  for (std::size_t i = 0; i < C; ++i) {
    if (w.counts[i] == 0) {
      const std::string name = i < names.size() ? "'" + names[i] + "'" : std::to_string(i);
      throw DataError("class " + name + " has no training samples");
    }
    w.W.push_back(static_cast<double>(w.N) / (static_cast<double>(C) * static_cast<double>(w.counts[i])));
  }
  return w;
}

double weighted_ce(std::span<const double> logits, std::size_t label, const ClassWeights& w) {
  if (label >= logits.size() || logits.size() != w.W.size()) throw std::invalid_argument("weighted_ce: label or width mismatch");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double l : logits) s += std::exp(l - mx);
  return -w.W[label] * (logits[label] - mx - std::log(s));
}

AdamW::AdamW(std::vector<Param*> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.lr > 0.0)) throw std::invalid_argument("AdamW: lr must be positive");
  for (auto* p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  const double b1 = cfg_.beta1;
  const double b2 = cfg_.beta2;
  const double step_size = cfg_.lr / (1.0 - std::pow(b1, static_cast<double>(t_)));
  const double inv_c2 = 1.0 / (1.0 - std::pow(b2, static_cast<double>(t_)));
  const double decay = 1.0 - cfg_.lr * cfg_.weight_decay;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Param& p = *params_[k];
    if (p.frozen) continue;
    double* __restrict theta = p.value.ptr();
    double* __restrict g = p.grad.ptr();
    double* __restrict m = m_[k].data();
    double* __restrict v = v_[k].data();
    const std::size_t n = p.value.size();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g[i];
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      theta[i] = theta[i] * decay - step_size * m[i] / (std::sqrt(v[i] * inv_c2) + cfg_.eps);
      g[i] = 0.0;
    }
  }
}

DivergenceError::DivergenceError(std::size_t e, std::size_t s, const std::string& detail)
    : std::runtime_error("training diverged at epoch " + std::to_string(e) + ", step " + std::to_string(s) + ": " +
                         detail),
      epoch(e),
      step(s) {}

PreparedData prepare_data(const Dataset& ds, const PathwayDb& db, const TrainConfig& cfg) {
  cfg.validate();
  PreparedData out;
  out.ds = preprocess_expression(ds, &out.report);
  out.ds.validate();
  const std::size_t morph = out.ds.spots.front().morph.size();
  if (morph != cfg.dims.morph_dim) {
    throw DataError("morphology features have " + std::to_string(morph) + " columns, config expects " +
                    std::to_string(cfg.dims.morph_dim));
  }
  out.graphs = build_graphs(out.ds, cfg.neighbors, cfg.edge_eps);
  try {
    out.clinical = select_pathways(db, out.ds.panel, cfg.overlap_threshold);
  } catch (const DataError&) {
    if (cfg.ablation.uses_clinical()) throw;
  }
  return out;
}

ModelConfig model_config(const PreparedData& data, const TrainConfig& cfg) {
  ModelConfig mc;
  mc.dims = cfg.dims;
  mc.ablation = cfg.ablation;
  mc.layout = cfg.layout;
  mc.pathway_softmax = cfg.pathway_softmax;
  mc.classes = data.ds.num_classes();
  mc.genes = data.ds.panel.d();
  mc.clinical = data.clinical;
  return mc;
}

TrainResult train(const PreparedData& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  const auto train_idx = data.ds.indices(Split::train);
  const auto val_idx = data.ds.indices(Split::val);
  if (train_idx.empty()) throw DataError("training split is empty");
  if (val_idx.empty()) throw DataError("validation split is empty");
  const auto streams = SeedStreams::from(cfg.seed);

  TrainResult result;
  result.weights = class_weights(labels_of(data.ds, train_idx), data.ds.num_classes(), data.ds.class_names);
  result.model = std::make_unique<Model>(model_config(data, cfg), streams.init);
  Model& model = *result.model;
  const auto val_labels = labels_of(data.ds, val_idx);

  auto active = model.active_params();
  for (auto* p : active) p->zero_grad();
  AdamW opt(active, AdamWConfig{cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps});

  double best = -1.0;
  std::vector<Tensor> best_params;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = shuffled(train_idx, mix_seed(streams.shuffle, epoch));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::span<const std::size_t> part(order.data() + start, std::min(cfg.batch, order.size() - start));
      ++step;
      try {
        const ModelInput in = make_input(data.ds, data.graphs, part, model.config());
        Tape tape;
        const auto fwd = model.forward(tape, in, Mode::train, DropoutContext{streams.dropout, step});
        const Var loss = ad::weighted_cross_entropy(fwd.logits, labels_of(data.ds, part), result.weights.W);
        const double l = loss.value()[0];
        if (!std::isfinite(l)) throw DivergenceError(epoch, step, "loss is " + std::to_string(l));
        tape.backward(loss);
        opt.step();
        loss_sum += l * static_cast<double>(part.size());
      } catch (const NonFiniteError& e) {
        throw DivergenceError(epoch, step, e.what());
      }
    }
    EpochRecord rec;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    const auto probs = model.predict_proba(data.ds, data.graphs, val_idx);
    rec.val_bal_acc =
        balanced_accuracy(confusion_matrix(val_labels, argmax_rows(probs), data.ds.num_classes()), true);
    result.history.push_back(rec);
    if (rec.val_bal_acc > best) {
      best = rec.val_bal_acc;
      result.best_epoch = epoch;
      best_params = model.store().snapshot();
    }
    if (on_epoch) on_epoch(epoch, rec);
  }
  model.store().restore(best_params);
  return result;
}

std::string history_json(const std::vector<EpochRecord>& history) {
  json arr = json::array();
  for (std::size_t i = 0; i < history.size(); ++i) {
    json e;
    e["epoch"] = i + 1;
    e["train_loss"] = history[i].train_loss;
    e["val_bal_acc"] = history[i].val_bal_acc;
    arr.push_back(e);
  }
  return arr.dump(2) + "\n";
}

std::vector<Prediction> predict(const Model& model, const PreparedData& data, std::span<const std::size_t> spots) {
  if (spots.empty()) throw DataError("no spots to predict");
  const auto probs = model.predict_proba(data.ds, data.graphs, spots);
  const auto pred = argmax_rows(probs);
  std::vector<Prediction> out;
  out.reserve(spots.size());
  for (std::size_t i = 0; i < spots.size(); ++i) {
    Prediction p;
    p.spot = spots[i];
    p.truth = data.ds.spots[spots[i]].label;
    p.predicted = pred[i];
    p.confidence = probs[i][pred[i]];
    p.probs = probs[i];
    out.push_back(std::move(p));
  }
  return out;
}

Evaluation evaluate(const Model& model, const PreparedData& data, std::span<const std::size_t> spots) {
  if (spots.empty()) throw DataError("evaluation split is empty");
  if (model.config().classes != data.ds.num_classes()) throw DataError("checkpoint and dataset class counts differ");
  Evaluation ev;
  ev.predictions = predict(model, data, spots);
  const auto truth = labels_of(data.ds, spots);
  std::vector<std::vector<double>> probs;
  probs.reserve(spots.size());
  for (const auto& p : ev.predictions) probs.push_back(p.probs);
  ev.metrics = compute_metrics(truth, probs, data.ds.num_classes());
  return ev;
}

void save_checkpoint(const std::filesystem::path& dir, const Model& model, const CheckpointInfo& info) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format"] = "biomorph-checkpoint-1";
  json params = json::array();
  for (const auto* p : model.store().all()) {
    json e;
    e["name"] = p->name;
    e["shape"] = p->value.shape();
    params.push_back(e);
  }
  manifest["params"] = params;
  manifest["config"] = config_to_json_object(info.config);
  manifest["classes"] = info.class_names;
  manifest["genes"] = info.genes;
  manifest["clinical_pathways"] = mask_to_json(info.clinical);
  manifest["best_epoch"] = info.best_epoch;
  write_text(dir / "params.json", manifest.dump(2) + "\n");

  std::ofstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open '" + (dir / "params.bin").string() + "' for writing");
  std::vector<unsigned char> buf;
  for (const auto* p : model.store().all()) {
    buf.resize(p->value.size() * 8);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const auto bits = std::bit_cast<std::uint64_t>(p->value[i]);
      for (int b = 0; b < 8; ++b) buf[i * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
    }
    bin.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!bin) throw std::runtime_error("write to '" + (dir / "params.bin").string() + "' failed");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto json_path = dir / "params.json";
  std::ifstream in(json_path);
  if (!in) throw std::runtime_error("cannot read checkpoint manifest '" + json_path.string() + "'");
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("'" + json_path.string() + "' is not valid JSON: " + e.what());
  }
  LoadedCheckpoint out;
  try {
    apply_config(out.info.config, manifest.at("config"));
    out.info.class_names = manifest.at("classes").get<std::vector<std::string>>();
    out.info.genes = manifest.at("genes").get<std::vector<std::string>>();
    out.info.clinical.names = manifest.at("clinical_pathways").at("names").get<std::vector<std::string>>();
    out.info.clinical.gene_indices =
        manifest.at("clinical_pathways").at("gene_indices").get<std::vector<std::vector<std::size_t>>>();
    out.info.best_epoch = manifest.at("best_epoch").get<std::size_t>();
  } catch (const json::exception& e) {
    throw std::runtime_error("'" + json_path.string() + "': " + e.what());
  }
  ModelConfig mc;
  mc.dims = out.info.config.dims;
  mc.ablation = out.info.config.ablation;
  mc.layout = out.info.config.layout;
  mc.pathway_softmax = out.info.config.pathway_softmax;
  mc.classes = out.info.class_names.size();
  mc.genes = out.info.genes.size();
  mc.clinical = out.info.clinical;
  out.model = std::make_unique<Model>(std::move(mc), SeedStreams::from(out.info.config.seed).init);

  const auto params = out.model->store().all();
  const auto& listed = manifest.at("params");
  if (listed.size() != params.size()) throw std::runtime_error("checkpoint parameter list does not match the model");
  std::ifstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot read '" + (dir / "params.bin").string() + "'");
  std::vector<unsigned char> buf;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    if (listed[k].at("name").get<std::string>() != p.name || listed[k].at("shape").get<Shape>() != p.value.shape()) {
      throw std::runtime_error("checkpoint entry " + std::to_string(k) + " does not match parameter '" + p.name + "'");
    }
    buf.resize(p.value.size() * 8);
    bin.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!bin) throw std::runtime_error("params.bin is truncated at parameter '" + p.name + "'");
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[i * 8 + b]) << (8 * b);
      p.value[i] = std::bit_cast<double>(bits);
    }
    p.value.check_finite(p.name.c_str());
  }
  if (bin.peek() != std::char_traits<char>::eof()) throw std::runtime_error("params.bin has trailing bytes");
  return out;
}

PreparedData prepare_for_checkpoint(const Dataset& ds, const CheckpointInfo& info) {
  PreparedData out;
  Dataset norm = preprocess_expression(ds, &out.report);
  bool labeled = false;
  for (const auto& s : norm.spots) labeled = labeled || s.label.has_value();
  if (labeled && norm.class_names != info.class_names) {
    throw DataError("dataset classes do not match the checkpoint classes");
  }
  norm.class_names = info.class_names;
  const GenePanel target(info.genes);
  std::vector<std::optional<std::size_t>> source(target.d());
  std::size_t found = 0;
  for (std::size_t g = 0; g < target.d(); ++g) {
    source[g] = norm.panel.index_of(target[g]);
    if (source[g]) ++found;
  }
  if (found == 0) throw DataError("dataset shares no genes with the checkpoint panel");
  for (auto& s : norm.spots) {
    std::vector<double> expr(target.d(), 0.0);
    for (std::size_t g = 0; g < target.d(); ++g) {
      if (source[g]) expr[g] = s.expr[*source[g]];
    }
    s.expr = std::move(expr);
  }
  norm.panel = target;
  if (norm.spots.front().morph.size() != info.config.dims.morph_dim) {
    throw DataError("morphology width does not match the checkpoint");
  }
  out.ds = std::move(norm);
  out.graphs = build_graphs(out.ds, info.config.neighbors, info.config.edge_eps);
  out.clinical = info.clinical;
  return out;
}

}  // namespace biomorph
