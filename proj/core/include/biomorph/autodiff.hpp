#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "biomorph/tensor.hpp"

namespace biomorph {

/// A trainable array. `grad` accumulates across backward calls until reset.
struct Param {
  Param(std::string name, Tensor value);

  std::string name;
  Tensor value;
  Tensor grad;
  bool frozen = false;

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so a reverse
/// sweep over ids visits every node after all of its consumers.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool record = true) : recording_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }

  Var constant(Tensor value);
  /// Registers `p` as a leaf; a Param used several times maps to one node.
  Var param(Param& p);

  /// Accumulates d(loss)/d(param) into every reachable Param::grad.
  void backward(const Var& loss);

  /// Param leaves alias the Param's storage rather than copying it.
  const Tensor& value(std::size_t id) const {
    const auto& node = nodes_.at(id);
    return node.param != nullptr ? node.param->value : node.value;
  }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  /// Zero-initialized on first access during a backward sweep. For a Param
  /// leaf this is Param::grad itself, so contributions accumulate there.
  Tensor& grad(std::size_t id);
  const Tensor* grad_if_any(std::size_t id) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Used by op implementations. `fn` may be empty when no input needs a gradient.
  Var push(Tensor value, bool requires_grad, BackwardFn fn);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
    Param* param = nullptr;
  };

  std::deque<Node> nodes_;
  std::unordered_map<const Param*, std::size_t> param_ids_;
  bool recording_;
};

enum class Mode { train, eval };

namespace ad {

inline constexpr double kLayerNormEps = 1e-5;

/// [m,k] x [k,n] -> [m,n]; rank-1 operands act as a single row.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
/// Elementwise; `b` may also be a single row broadcast over the rows of `a`.
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var relu(const Var& a);
/// Normalizes each row to zero mean and unit variance (no affine).
Var layer_norm(const Var& a, double eps = kLayerNormEps);
/// Row-wise softmax over the last axis with max subtraction.
Var softmax(const Var& a);
/// Inverted dropout. The keep mask is a pure function of (seed, flat index).
Var dropout(const Var& a, double rate, Mode mode, std::uint64_t seed);
/// Mean squared difference, returned as a [1] tensor.
Var mse(const Var& a, const Var& b);
Var concat(const std::vector<Var>& parts);
/// K tensors of shape [B,n] -> [B*K,n], row b*K+k taken from parts[k].
Var stack_rows(const std::vector<Var>& parts);
/// weights [B,K], stacked [B*K,n] -> [B,n]; out[b] = sum_k weights[b,k] * stacked[b*K+k].
Var weighted_sum(const Var& weights, const Var& stacked);
Var sum(const Var& a);
Var mean(const Var& a);
Var reshape(const Var& a, Shape shape);

/// [B,d] -> [B,k]; out[b,j] = sum of a[b,i] over i in sets[j].
Var index_sum(const Var& a, const std::vector<std::vector<std::size_t>>& sets);
/// table [a,d] -> [a,k]; row i gathers table[i, index[i][s]].
Var gather_rows(const Var& table, const std::vector<std::vector<std::size_t>>& index);
/// values [B,d], weights [a,k] -> [B,a]; out[b,i] = sum_s weights[i,s] * values[b, index[i][s]].
Var sparse_mix(const Var& values, const Var& weights, const std::vector<std::vector<std::size_t>>& index);
/// Scaled dot-product attention. Each row of q/k/v holds `tokens` tokens of
/// width cols/tokens; attention runs independently within a row.
Var attention(const Var& q, const Var& k, const Var& v, std::size_t tokens);
/// Mean over rows of -w[label] * log softmax(logits)[label], as a [1] tensor.
Var weighted_cross_entropy(const Var& logits, const std::vector<std::size_t>& labels,
                           const std::vector<double>& class_weights);

}  // namespace ad

/// Counter-based hash used for dropout masks and derived seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) noexcept;
double uniform_from_hash(std::uint64_t h) noexcept;

}  // namespace biomorph
