#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "biomorph/autodiff.hpp"
#include "biomorph/nn.hpp"

namespace biomorph {

inline constexpr double kEncoderDropout = 0.5;
inline constexpr double kBlockDropout = 0.25;

/// Seeds one dropout call: (run seed, call site, optimizer step).
struct DropoutContext {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;

  std::uint64_t at(const std::string& site) const { return mix_seed(mix_seed(seed, hash_name(site)), step); }
};

/// linear -> layer norm (affine) -> relu -> dropout
struct MlpEncoderParams {
  std::string name;
  Linear linear;
  LayerNormAffine norm;
  double dropout = kEncoderDropout;

  MlpEncoderParams() = default;
  MlpEncoderParams(ParamStore& store, const std::string& name, std::size_t in, std::size_t width,
                   double dropout = kEncoderDropout);
  std::size_t in_dim() const { return linear.in_dim(); }
  std::vector<Param*> params() const;
};

Var mlp_encode(Tape& tape, const Var& v, const MlpEncoderParams& p, Mode mode, const DropoutContext& drop);

enum class AttentionLayout {
  /// One token per input vector; every head attends to a single key.
  literal,
  /// The width is split into `heads` tokens that attend to each other.
  tokens,
};

/// Post-norm transformer block. Q and K are projected from the morphology
/// stream, V from the pathway vector.
struct CrossAttnBlockParams {
  std::string name;
  Linear query;
  Linear key;
  Linear value;
  Linear out;
  LayerNormAffine norm1;
  Linear mlp_in;
  Linear mlp_out;
  LayerNormAffine norm2;
  std::size_t heads = 8;
  double dropout = kBlockDropout;

  CrossAttnBlockParams() = default;
  CrossAttnBlockParams(ParamStore& store, const std::string& name, std::size_t width, std::size_t heads,
                       std::size_t mlp_hidden, double dropout = kBlockDropout);
  std::vector<Param*> params() const;
};

struct CrossAttentionParams {
  std::vector<CrossAttnBlockParams> blocks;
  AttentionLayout layout = AttentionLayout::literal;

  CrossAttentionParams() = default;
  CrossAttentionParams(ParamStore& store, const std::string& name, std::size_t width, std::size_t heads = 8,
                       std::size_t mlp_hidden = 2048, std::size_t depth = 2,
                       AttentionLayout layout = AttentionLayout::literal);
  std::vector<Param*> params() const;
};

Var cross_attention_block(Tape& tape, const Var& x, const Var& p, const CrossAttnBlockParams& b,
                          AttentionLayout layout, Mode mode, const DropoutContext& drop);

/// Runs every block; each block reads the previous block's stream and the same pathway vector.
Var cross_attention_fuse(Tape& tape, const Var& x, const Var& p, const CrossAttentionParams& params, Mode mode,
                         const DropoutContext& drop);

/// concat -> linear -> relu -> linear -> softmax over branches.
struct GateParams {
  Linear hidden;
  Linear logits;

  GateParams() = default;
  GateParams(ParamStore& store, const std::string& name, std::size_t width, std::size_t branches,
             std::size_t hidden_width);
  std::size_t branches() const { return logits.out_dim(); }
  std::vector<Param*> params() const;
};

struct GateResult {
  Var pooled;
  Var weights;  // [B, branches]
};

GateResult gate(Tape& tape, const std::vector<Var>& entities, const GateParams& gp);

GateResult branch_gate(Tape& tape, const Var& f1, const Var& f2, const GateParams& gp);

struct LateGateResult {
  Var logits;
  Var weights;
};

LateGateResult late_gate_classify(Tape& tape, const Var& h, const Var& fused, const Var& st, const GateParams& gp,
                                  const Linear& classifier);

}  // namespace biomorph
