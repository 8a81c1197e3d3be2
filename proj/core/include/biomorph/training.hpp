#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "biomorph/data.hpp"
#include "biomorph/graph.hpp"
#include "biomorph/metrics.hpp"
#include "biomorph/model.hpp"

namespace biomorph {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  std::size_t epochs = 60;
  std::size_t batch = 32;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  ModelDims dims;
  AblationConfig ablation;
  AttentionLayout layout = AttentionLayout::literal;
  PathwaySoftmax pathway_softmax = PathwaySoftmax::support;

  double overlap_threshold = kDefaultOverlapThreshold;
  std::size_t neighbors = kDefaultNeighbors;
  double edge_eps = kDefaultEdgeEps;

  void validate() const;
};

/// JSON object with every TrainConfig field; keys are stable and documented in the README.
std::string train_config_to_json(const TrainConfig& cfg);
/// Overlays the keys of a JSON object onto `base`. Unknown keys and type
/// mismatches throw std::invalid_argument naming the key, as do values that
/// fail validate().
TrainConfig train_config_from_json(const std::string& text, TrainConfig base = {});
std::vector<std::string> train_config_keys();

/// Independent random streams derived from the single run seed.
struct SeedStreams {
  std::uint64_t init;
  std::uint64_t dropout;
  std::uint64_t shuffle;

  static SeedStreams from(std::uint64_t seed);
};

struct ClassWeights {
  std::vector<double> W;
  std::vector<std::size_t> counts;
  std::size_t N = 0;
  std::size_t C = 0;
};

/// W_i = N / (C * N_i). `names`, when given, labels the class in errors.
ClassWeights class_weights(const std::vector<std::size_t>& labels, std::size_t C,
                           const std::vector<std::string>& names = {});

/// -W[label] * log softmax(logits)[label], evaluated with log-sum-exp.
double weighted_ce(std::span<const double> logits, std::size_t label, const ClassWeights& w);

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam with decoupled weight decay. Each step consumes the
/// accumulated gradients and resets them to zero. Frozen parameters are left
/// untouched.
class AdamW {
 public:
  AdamW(std::vector<Param*> params, AdamWConfig cfg);
  void step();
  std::size_t steps() const noexcept { return t_; }
  const AdamWConfig& config() const noexcept { return cfg_; }

 private:
  std::vector<Param*> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamWConfig cfg_;
  std::size_t t_ = 0;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t epoch, std::size_t step, const std::string& detail);
  std::size_t epoch;
  std::size_t step;
};

/// Normalized data plus everything derived from it that training needs.
struct PreparedData {
  Dataset ds;
  std::vector<MicroenvGraph> graphs;
  ClinicalPathwayMask clinical;
  PreprocessReport report;
};

/// Normalizes expression (unless already normalized), builds every spot's
/// graph and selects clinical pathways against the surviving gene panel.
/// A pathway selection failure is fatal only when clinical pathways are used.
PreparedData prepare_data(const Dataset& ds, const PathwayDb& db, const TrainConfig& cfg);

ModelConfig model_config(const PreparedData& data, const TrainConfig& cfg);

struct EpochRecord {
  double train_loss = 0.0;
  double val_bal_acc = 0.0;
};

struct TrainResult {
  std::unique_ptr<Model> model;  // holds the best-validation parameters
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;    // 1-based
  ClassWeights weights;
};

using EpochCallback = std::function<void(std::size_t epoch, const EpochRecord&)>;

TrainResult train(const PreparedData& data, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

std::string history_json(const std::vector<EpochRecord>& history);

struct Prediction {
  std::size_t spot = 0;
  std::optional<std::size_t> truth;
  std::size_t predicted = 0;
  double confidence = 0.0;
  std::vector<double> probs;
};

struct Evaluation {
  MetricsBundle metrics;
  std::vector<Prediction> predictions;
};

std::vector<Prediction> predict(const Model& model, const PreparedData& data, std::span<const std::size_t> spots);

/// Every spot in `spots` must be labeled.
Evaluation evaluate(const Model& model, const PreparedData& data, std::span<const std::size_t> spots);

/// Metadata stored next to the parameters so a checkpoint is self-contained.
struct CheckpointInfo {
  TrainConfig config;
  std::vector<std::string> class_names;
  std::vector<std::string> genes;
  ClinicalPathwayMask clinical;
  std::size_t best_epoch = 0;
};

/// params.json (ordered names, shapes, config echo, classes, genes, clinical
/// mask) and params.bin (little-endian float64 in manifest order).
void save_checkpoint(const std::filesystem::path& dir, const Model& model, const CheckpointInfo& info);

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  CheckpointInfo info;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

/// Prepares a dataset for a trained model: normalizes it, reorders its genes
/// to the checkpoint panel (absent genes read as zero expression) and reuses
/// the stored clinical mask. Labeled data must use the checkpoint's classes.
PreparedData prepare_for_checkpoint(const Dataset& ds, const CheckpointInfo& info);

}  // namespace biomorph
