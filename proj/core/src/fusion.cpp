#include "biomorph/fusion.hpp"

#include <stdexcept>

namespace biomorph {

MlpEncoderParams::MlpEncoderParams(ParamStore& store, const std::string& n, std::size_t in, std::size_t width,
                                   double rate)
    : name(n), linear(store, n + ".linear", in, width), norm(store, n + ".norm", width), dropout(rate) {}

std::vector<Param*> MlpEncoderParams::params() const {
  return {linear.weight, linear.bias, norm.gain, norm.shift};
}

Var mlp_encode(Tape& tape, const Var& v, const MlpEncoderParams& p, Mode mode, const DropoutContext& drop) {
  if (v.value().cols() != p.in_dim()) {
    throw ShapeError(p.name + ": input width " + std::to_string(v.value().cols()) + ", expected " +
                     std::to_string(p.in_dim()));
  }
  const Var y = ad::relu(p.norm(tape, p.linear(tape, v)));
  return ad::dropout(y, p.dropout, mode, drop.at(p.name));
}

CrossAttnBlockParams::CrossAttnBlockParams(ParamStore& store, const std::string& n, std::size_t width,
                                           std::size_t h, std::size_t mlp_hidden, double rate)
    : name(n),
      query(store, n + ".query", width, width),
      key(store, n + ".key", width, width),
      value(store, n + ".value", width, width),
      out(store, n + ".out", width, width),
      norm1(store, n + ".norm1", width),
      mlp_in(store, n + ".mlp_in", width, mlp_hidden),
      mlp_out(store, n + ".mlp_out", mlp_hidden, width),
      norm2(store, n + ".norm2", width),
      heads(h),
      dropout(rate) {
  if (h == 0 || width % h != 0) throw std::invalid_argument(n + ": width must be divisible by the head count");
}

std::vector<Param*> CrossAttnBlockParams::params() const {
  std::vector<Param*> out_params;
  for (const auto* l : {&query, &key, &value, &out, &mlp_in, &mlp_out}) {
    for (auto* p : l->params()) out_params.push_back(p);
  }
  for (const auto* n : {&norm1, &norm2}) {
    for (auto* p : n->params()) out_params.push_back(p);
  }
  return out_params;
}

CrossAttentionParams::CrossAttentionParams(ParamStore& store, const std::string& name, std::size_t width,
                                           std::size_t heads, std::size_t mlp_hidden, std::size_t depth,
                                           AttentionLayout l)
    : layout(l) {
  for (std::size_t i = 0; i < depth; ++i) {
    blocks.emplace_back(store, name + ".block" + std::to_string(i), width, heads, mlp_hidden);
  }
}

std::vector<Param*> CrossAttentionParams::params() const {
  std::vector<Param*> out;
  for (const auto& b : blocks) {
    for (auto* p : b.params()) out.push_back(p);
  }
  return out;
}

Var cross_attention_block(Tape& tape, const Var& x, const Var& p, const CrossAttnBlockParams& b,
                          AttentionLayout layout, Mode mode, const DropoutContext& drop) {
  const std::size_t width = b.query.in_dim();
  if (x.value().cols() != width || p.value().cols() != width || x.value().rows() != p.value().rows()) {
    throw ShapeError(b.name + ": inputs must both be [B, " + std::to_string(width) + "], got " +
                     shape_to_string(x.value().shape()) + " and " + shape_to_string(p.value().shape()));
  }
  const Var v = b.value(tape, p);
  // With one token per head the softmax runs over a single key and equals 1
  // exactly, so each head returns its slice of V and Q, K cannot affect the
  // output. Their projections are skipped.
  Var attended = v;
  if (layout == AttentionLayout::tokens) {
    attended = ad::attention(b.query(tape, x), b.key(tape, x), v, b.heads);
  }
  const Var attn_out = ad::dropout(b.out(tape, attended), b.dropout, mode, drop.at(b.name + ".attn"));
  const Var x1 = b.norm1(tape, ad::add(x, attn_out));
  const Var m = b.mlp_out(tape, ad::relu(b.mlp_in(tape, x1)));
  const Var m_drop = ad::dropout(m, b.dropout, mode, drop.at(b.name + ".mlp"));
  return b.norm2(tape, ad::add(x1, m_drop));
}

Var cross_attention_fuse(Tape& tape, const Var& x, const Var& p, const CrossAttentionParams& params, Mode mode,
                         const DropoutContext& drop) {
  Var stream = x;
  for (const auto& block : params.blocks) stream = cross_attention_block(tape, stream, p, block, params.layout, mode, drop);
  return stream;
}

GateParams::GateParams(ParamStore& store, const std::string& name, std::size_t width, std::size_t branches,
                       std::size_t hidden_width)
    : hidden(store, name + ".hidden", width * branches, hidden_width),
      logits(store, name + ".logits", hidden_width, branches) {}

std::vector<Param*> GateParams::params() const { return {hidden.weight, hidden.bias, logits.weight, logits.bias}; }

GateResult gate(Tape& tape, const std::vector<Var>& entities, const GateParams& gp) {
  if (entities.size() != gp.branches()) {
    throw ShapeError("gate: " + std::to_string(entities.size()) + " entities for " + std::to_string(gp.branches()) +
                     " branches");
  }
  const Var weights = ad::softmax(gp.logits(tape, ad::relu(gp.hidden(tape, ad::concat(entities)))));
  return GateResult{ad::weighted_sum(weights, ad::stack_rows(entities)), weights};
}

GateResult branch_gate(Tape& tape, const Var& f1, const Var& f2, const GateParams& gp) {
  return gate(tape, {f1, f2}, gp);
}

LateGateResult late_gate_classify(Tape& tape, const Var& h, const Var& fused, const Var& st, const GateParams& gp,
                                  const Linear& classifier) {
  const auto g = gate(tape, {h, fused, st}, gp);
  return LateGateResult{classifier(tape, g.pooled), g.weights};
}

}  // namespace biomorph
