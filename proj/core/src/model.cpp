#include "biomorph/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <optional>
#include <unordered_set>

namespace biomorph {

namespace {

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> options, const char* what) {
  for (const auto& [name, value] : options) {
    if (s == name) return value;
  }
  std::string allowed;
  for (const auto& [name, value] : options) allowed += std::string(allowed.empty() ? "" : ", ") + name;
  throw std::invalid_argument(std::string("unknown ") + what + " '" + s + "' (expected one of: " + allowed + ")");
}

Tensor row_block(const Dataset& ds, std::span<const std::size_t> spots, bool morph) {
  const std::size_t width = morph ? ds.spots.front().morph.size() : ds.spots.front().expr.size();
  Tensor out({spots.size(), width}, 0.0);
  for (std::size_t b = 0; b < spots.size(); ++b) {
    const auto& src = morph ? ds.spots.at(spots[b]).morph : ds.spots.at(spots[b]).expr;
    if (src.size() != width) throw ShapeError("make_input: ragged spot vectors");
    std::copy(src.begin(), src.end(), out.ptr() + b * width);
  }
  return out;
}

}  // namespace

std::string to_string(ImageMode m) {
  switch (m) {
    case ImageMode::none: return "none";
    case ImageMode::seq: return "seq";
    case ImageMode::graph: return "graph";
  }
  return "?";
}

std::string to_string(PathwayMode m) {
  switch (m) {
    case PathwayMode::none: return "none";
    case PathwayMode::clinic: return "clinic";
    case PathwayMode::learnable: return "learnable";
    case PathwayMode::both: return "both";
  }
  return "?";
}

std::string to_string(AttentionLayout l) { return l == AttentionLayout::literal ? "literal" : "tokens"; }
std::string to_string(PathwaySoftmax s) { return s == PathwaySoftmax::support ? "support" : "literal"; }

ImageMode image_mode_from_string(const std::string& s) {
  return parse_enum<ImageMode>(s, {{"none", ImageMode::none}, {"seq", ImageMode::seq}, {"graph", ImageMode::graph}},
                               "image mode");
}

PathwayMode pathway_mode_from_string(const std::string& s) {
  return parse_enum<PathwayMode>(s,
                                 {{"none", PathwayMode::none},
                                  {"clinic", PathwayMode::clinic},
                                  {"learnable", PathwayMode::learnable},
                                  {"both", PathwayMode::both}},
                                 "pathway mode");
}

AttentionLayout attention_layout_from_string(const std::string& s) {
  return parse_enum<AttentionLayout>(s, {{"literal", AttentionLayout::literal}, {"tokens", AttentionLayout::tokens}},
                                     "attention layout");
}

PathwaySoftmax pathway_softmax_from_string(const std::string& s) {
  return parse_enum<PathwaySoftmax>(s, {{"support", PathwaySoftmax::support}, {"literal", PathwaySoftmax::literal}},
                                    "pathway softmax");
}

std::string to_string(const AblationConfig& a) {
  return to_string(a.image) + "+" + to_string(a.pathways) + "+" + (a.st_branch ? "st" : "nost");
}

AblationConfig ablation_from_string(const std::string& s) {
  const auto p1 = s.find('+');
  const auto p2 = p1 == std::string::npos ? std::string::npos : s.find('+', p1 + 1);
  if (p2 == std::string::npos || s.find('+', p2 + 1) != std::string::npos) {
    throw std::invalid_argument("ablation '" + s + "' must look like <image>+<pathways>+<st|nost>");
  }
  AblationConfig a;
  a.image = image_mode_from_string(s.substr(0, p1));
  a.pathways = pathway_mode_from_string(s.substr(p1 + 1, p2 - p1 - 1));
  const std::string st = s.substr(p2 + 1);
  if (st != "st" && st != "nost") throw std::invalid_argument("ablation ST flag must be 'st' or 'nost', got '" + st + "'");
  a.st_branch = st == "st";
  if (a.image == ImageMode::none && a.pathways == PathwayMode::none && !a.st_branch) {
    throw std::invalid_argument("ablation disables every entity");
  }
  return a;
}

std::vector<AblationConfig> standard_ablation_rows() {
  return {
      {ImageMode::seq, PathwayMode::none, false},     {ImageMode::none, PathwayMode::none, true},
      {ImageMode::seq, PathwayMode::none, true},      {ImageMode::graph, PathwayMode::none, true},
      {ImageMode::graph, PathwayMode::clinic, true},  {ImageMode::graph, PathwayMode::learnable, true},
      {ImageMode::graph, PathwayMode::both, true},
  };
}

void ModelDims::validate() const {
  if (morph_dim == 0 || width == 0 || mlp_hidden == 0 || gate_hidden == 0 || depth == 0 || learnable_pathways == 0) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  if (heads == 0 || width % heads != 0) throw std::invalid_argument("width must be divisible by heads");
  if (!(selection_fraction > 0.0 && selection_fraction <= 1.0)) {
    throw std::invalid_argument("selection_fraction must lie in (0, 1]");
  }
  for (double r : {encoder_dropout, block_dropout}) {
    if (!(r >= 0.0 && r < 1.0)) throw std::invalid_argument("dropout rates must lie in [0, 1)");
  }
}

ModelInput make_input(const Dataset& ds, const std::vector<MicroenvGraph>& graphs, std::span<const std::size_t> spots,
                      const ModelConfig& cfg) {
  if (spots.empty()) throw std::invalid_argument("make_input: empty batch");
  ModelInput in;
  in.batch = spots.size();
  in.morph = row_block(ds, spots, true);
  in.expr = row_block(ds, spots, false);
  if (in.morph.cols() != cfg.dims.morph_dim) {
    throw ShapeError("morphology width " + std::to_string(in.morph.cols()) + " but model expects " +
                     std::to_string(cfg.dims.morph_dim));
  }
  if (in.expr.cols() != cfg.genes) {
    throw ShapeError("expression width " + std::to_string(in.expr.cols()) + " but model expects " +
                     std::to_string(cfg.genes));
  }
  if (cfg.ablation.image == ImageMode::graph) in.graph = pack_graphs(ds, graphs, spots);
  return in;
}

Model::Model(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)), store_(init_seed) {
  const auto& d = cfg_.dims;
  d.validate();
  if (cfg_.classes == 0) throw std::invalid_argument("model needs at least one class");
  if (cfg_.genes == 0) throw std::invalid_argument("model needs at least one gene");
  if (cfg_.ablation.uses_clinical() && cfg_.clinical.k() == 0) {
    throw std::invalid_argument("clinical pathways enabled but the mask is empty");
  }
  for (const auto& set : cfg_.clinical.gene_indices) {
    for (auto g : set) {
      if (g >= cfg_.genes) throw std::invalid_argument("clinical mask references a gene outside the panel");
    }
  }
  const std::size_t k = std::max<std::size_t>(cfg_.clinical.k(), 1);

  gcn_ = GcnParams(store_, "gcn", d.morph_dim, d.width, d.width);
  morph_enc_ = MlpEncoderParams(store_, "morph_encoder", d.morph_dim, d.width, d.encoder_dropout);
  clinical_enc_ = MlpEncoderParams(store_, "clinical_encoder", k, d.width, d.encoder_dropout);
  learnable_ = LearnablePathwayLayer(store_, "learnable_pathways", d.learnable_pathways, cfg_.genes,
                                     d.selection_fraction, cfg_.pathway_softmax);
  learnable_enc_ = MlpEncoderParams(store_, "learnable_encoder", d.learnable_pathways, d.width, d.encoder_dropout);
  st_enc_ = MlpEncoderParams(store_, "st_encoder", cfg_.genes, d.width, d.encoder_dropout);
  clinical_attn_ = CrossAttentionParams(store_, "clinical_fusion", d.width, d.heads, d.mlp_hidden, d.depth, cfg_.layout);
  learnable_attn_ =
      CrossAttentionParams(store_, "learnable_fusion", d.width, d.heads, d.mlp_hidden, d.depth, cfg_.layout);
  for (auto* blocks : {&clinical_attn_.blocks, &learnable_attn_.blocks}) {
    for (auto& b : *blocks) b.dropout = d.block_dropout;
  }
  branch_gate_ = GateParams(store_, "branch_gate", d.width, 2, d.gate_hidden);
  late_gate_ = GateParams(store_, "late_gate", d.width, 3, d.gate_hidden);
  classifier_ = Linear(store_, "classifier", d.width, cfg_.classes);

  std::unordered_set<const Param*> active;
  for (auto* p : active_params()) active.insert(p);
  for (auto* p : store_.all()) p->frozen = active.count(p) == 0;
}

std::vector<Param*> Model::active_params() {
  const auto& a = cfg_.ablation;
  std::vector<Param*> out;
  const auto take = [&out](const std::vector<Param*>& ps) { out.insert(out.end(), ps.begin(), ps.end()); };
  if (a.image == ImageMode::graph) take(gcn_.params());
  if (a.uses_morph_encoder()) take(morph_enc_.params());
  if (a.uses_clinical()) {
    take(clinical_enc_.params());
    take(clinical_attn_.params());
  }
  if (a.uses_learnable()) {
    take(learnable_.params());
    take(learnable_enc_.params());
    take(learnable_attn_.params());
  }
  if (a.pathways == PathwayMode::both) take(branch_gate_.params());
  if (a.st_branch) take(st_enc_.params());
  take(late_gate_.params());
  take(classifier_.params());
  if (cfg_.layout == AttentionLayout::literal) {
    std::unordered_set<const Param*> unused;
    for (const auto* attn : {&clinical_attn_, &learnable_attn_}) {
      for (const auto& b : attn->blocks) {
        for (auto* p : b.query.params()) unused.insert(p);
        for (auto* p : b.key.params()) unused.insert(p);
      }
    }
    std::erase_if(out, [&](Param* p) { return unused.count(p) > 0; });
  }
  return out;
}

ForwardResult Model::forward(Tape& tape, const ModelInput& in, Mode mode, const DropoutContext& drop) const {
  const auto& a = cfg_.ablation;
  const std::size_t B = in.batch;
  const Var zeros = tape.constant(Tensor({B, cfg_.dims.width}, 0.0));

  std::optional<Var> morph;
  if (a.uses_morph_encoder()) morph = mlp_encode(tape, tape.constant(in.morph), morph_enc_, mode, drop);

  Var h = zeros;
  if (a.image == ImageMode::graph) {
    h = gcn_forward(tape, in.graph, gcn_);
  } else if (a.image == ImageMode::seq) {
    h = *morph;
  }

  std::optional<Var> expr;
  if (a.uses_clinical() || a.uses_learnable() || a.st_branch) expr = tape.constant(in.expr);

  Var fused = zeros;
  std::optional<Var> f1;
  std::optional<Var> f2;
  if (a.uses_clinical()) {
    const Var p = mlp_encode(tape, clinical_encode(*expr, cfg_.clinical), clinical_enc_, mode, drop);
    f1 = cross_attention_fuse(tape, *morph, p, clinical_attn_, mode, drop);
  }
  if (a.uses_learnable()) {
    const Var p = mlp_encode(tape, learnable_encode(tape, *expr, learnable_), learnable_enc_, mode, drop);
    f2 = cross_attention_fuse(tape, *morph, p, learnable_attn_, mode, drop);
  }
  if (f1 && f2) {
    fused = branch_gate(tape, *f1, *f2, branch_gate_).pooled;
  } else if (f1) {
    fused = *f1;
  } else if (f2) {
    fused = *f2;
  }

  const Var st = a.st_branch ? mlp_encode(tape, *expr, st_enc_, mode, drop) : zeros;
  const auto out = late_gate_classify(tape, h, fused, st, late_gate_, classifier_);
  return ForwardResult{out.logits, out.weights};
}

std::vector<std::vector<double>> Model::predict_proba(const Dataset& ds, const std::vector<MicroenvGraph>& graphs,
                                                      std::span<const std::size_t> spots, std::size_t chunk) const {
  if (chunk == 0) throw std::invalid_argument("predict_proba: chunk must be positive");
  std::vector<std::vector<double>> out;
  out.reserve(spots.size());
  for (std::size_t start = 0; start < spots.size(); start += chunk) {
    const auto part = spots.subspan(start, std::min(chunk, spots.size() - start));
    const ModelInput in = make_input(ds, graphs, part, cfg_);
    Tape tape(false);
    const Var probs = ad::softmax(forward(tape, in, Mode::eval, DropoutContext{}).logits);
    const Tensor& p = probs.value();
    const std::size_t C = p.cols();
    for (std::size_t r = 0; r < part.size(); ++r) out.emplace_back(p.ptr() + r * C, p.ptr() + (r + 1) * C);
  }
  return out;
}

}  // namespace biomorph
