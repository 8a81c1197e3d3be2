#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "biomorph/data.hpp"
#include "biomorph/fusion.hpp"
#include "biomorph/graph.hpp"
#include "biomorph/nn.hpp"
#include "biomorph/pathway.hpp"

namespace biomorph {

enum class ImageMode { none, seq, graph };
enum class PathwayMode { none, clinic, learnable, both };

/// Which entities feed the late gate. A disabled entity is replaced by zeros
/// and its parameters are frozen.
struct AblationConfig {
  ImageMode image = ImageMode::graph;
  PathwayMode pathways = PathwayMode::both;
  bool st_branch = true;

  bool uses_clinical() const { return pathways == PathwayMode::clinic || pathways == PathwayMode::both; }
  bool uses_learnable() const { return pathways == PathwayMode::learnable || pathways == PathwayMode::both; }
  bool uses_morph_encoder() const { return image == ImageMode::seq || pathways != PathwayMode::none; }
  bool operator==(const AblationConfig&) const = default;
};

std::string to_string(ImageMode m);
std::string to_string(PathwayMode m);
std::string to_string(AttentionLayout l);
std::string to_string(PathwaySoftmax s);
ImageMode image_mode_from_string(const std::string& s);
PathwayMode pathway_mode_from_string(const std::string& s);
AttentionLayout attention_layout_from_string(const std::string& s);
PathwaySoftmax pathway_softmax_from_string(const std::string& s);

/// Compact label such as "graph+both+st"; parsed back by ablation_from_string.
std::string to_string(const AblationConfig& a);
AblationConfig ablation_from_string(const std::string& s);

/// Seven entity combinations, from single entities up to the full model.
std::vector<AblationConfig> standard_ablation_rows();

struct ModelDims {
  std::size_t morph_dim = kMorphDim;
  std::size_t width = 512;
  std::size_t heads = 8;
  std::size_t mlp_hidden = 2048;
  std::size_t gate_hidden = 256;
  std::size_t depth = 2;
  std::size_t learnable_pathways = kDefaultLearnablePathways;
  double selection_fraction = kDefaultSelectionFraction;
  double encoder_dropout = kEncoderDropout;
  double block_dropout = kBlockDropout;

  void validate() const;
};

struct ModelConfig {
  ModelDims dims;
  AblationConfig ablation;
  AttentionLayout layout = AttentionLayout::literal;
  PathwaySoftmax pathway_softmax = PathwaySoftmax::support;
  std::size_t classes = 0;
  std::size_t genes = 0;
  ClinicalPathwayMask clinical;
};

/// Per-batch inputs. `graph` is only filled when the image entity is a graph.
struct ModelInput {
  std::size_t batch = 0;
  Tensor morph;  // [B, morph_dim]
  Tensor expr;   // [B, d]
  GcnBatch graph;
};

ModelInput make_input(const Dataset& ds, const std::vector<MicroenvGraph>& graphs,
                      std::span<const std::size_t> spots, const ModelConfig& cfg);

struct ForwardResult {
  Var logits;         // [B, C]
  Var late_weights;   // [B, 3]
};

/// The full network. Every parameter exists regardless of the ablation, so
/// names and initial values are identical across configurations.
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t init_seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

  ForwardResult forward(Tape& tape, const ModelInput& in, Mode mode, const DropoutContext& drop) const;

  /// Parameters reachable under the current ablation; the rest are frozen.
  std::vector<Param*> active_params();

  /// Row-wise softmax probabilities for `spots`, evaluated in chunks with dropout off.
  std::vector<std::vector<double>> predict_proba(const Dataset& ds, const std::vector<MicroenvGraph>& graphs,
                                                 std::span<const std::size_t> spots,
                                                 std::size_t chunk = 128) const;

 private:
  ModelConfig cfg_;
  ParamStore store_;
  GcnParams gcn_;
  MlpEncoderParams morph_enc_;
  MlpEncoderParams clinical_enc_;
  MlpEncoderParams learnable_enc_;
  MlpEncoderParams st_enc_;
  LearnablePathwayLayer learnable_;
  CrossAttentionParams clinical_attn_;
  CrossAttentionParams learnable_attn_;
  GateParams branch_gate_;
  GateParams late_gate_;
  Linear classifier_;
};

}  // namespace biomorph
