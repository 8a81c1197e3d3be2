#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "biomorph/autodiff.hpp"

namespace biomorph {

inline constexpr double kInitStd = 0.02;

/// Owns every trainable array of a model in creation order. Addresses are
/// stable, so modules keep raw Param pointers into the store.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t init_seed = 0) : init_seed_(init_seed) {}
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  /// Zero-mean Gaussian with kInitStd, seeded by (init seed, name) so a
  /// parameter's initial value does not depend on which others exist.
  Param& gaussian(const std::string& name, Shape shape, double stddev = kInitStd);
  Param& constant(const std::string& name, Shape shape, double value);

  std::vector<Param*> all();
  std::vector<const Param*> all() const;
  Param* find(const std::string& name);
  std::size_t count() const noexcept { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

 private:
  Param& emplace(const std::string& name, Tensor value);

  std::deque<Param> params_;
  std::uint64_t init_seed_;
};

struct Linear {
  Param* weight = nullptr;  // [in, out]
  Param* bias = nullptr;    // [out]

  Linear() = default;
  Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out);
  std::size_t in_dim() const { return weight->value.shape()[0]; }
  std::size_t out_dim() const { return weight->value.shape()[1]; }
  Var operator()(Tape& tape, const Var& x) const;
  std::vector<Param*> params() const { return {weight, bias}; }
};

struct LayerNormAffine {
  Param* gain = nullptr;
  Param* shift = nullptr;

  LayerNormAffine() = default;
  LayerNormAffine(ParamStore& store, const std::string& name, std::size_t width);
  Var operator()(Tape& tape, const Var& x) const;
  std::vector<Param*> params() const { return {gain, shift}; }
};

std::uint64_t hash_name(const std::string& s) noexcept;

}  // namespace biomorph
