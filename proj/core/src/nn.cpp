#include "biomorph/nn.hpp"

#include <random>
#include <stdexcept>

namespace biomorph {

std::uint64_t hash_name(const std::string& s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Param& ParamStore::emplace(const std::string& name, Tensor value) {
  if (find(name) != nullptr) throw std::logic_error("duplicate parameter name '" + name + "'");
  params_.emplace_back(name, std::move(value));
  return params_.back();
}

Param& ParamStore::gaussian(const std::string& name, Shape shape, double stddev) {
  Tensor t(std::move(shape), 0.0);
  std::mt19937_64 rng(mix_seed(init_seed_, hash_name(name)));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data()) v = dist(rng);
  return emplace(name, std::move(t));
}

Param& ParamStore::constant(const std::string& name, Shape shape, double value) {
  return emplace(name, Tensor(std::move(shape), value));
}

std::vector<Param*> ParamStore::all() {
  std::vector<Param*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Param*> ParamStore::all() const {
  std::vector<const Param*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

Param* ParamStore::find(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::vector<Tensor> ParamStore::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

void ParamStore::restore(const std::vector<Tensor>& values) {
  if (values.size() != params_.size()) throw std::invalid_argument("restore: parameter count mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!values[i].same_shape(params_[i].value)) {
      throw ShapeError("restore: shape mismatch for '" + params_[i].name + "'");
    }
    params_[i].value = values[i];
  }
}

Linear::Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out)
    : weight(&store.gaussian(name + ".weight", {in, out})), bias(&store.constant(name + ".bias", {out}, 0.0)) {}

Var Linear::operator()(Tape& tape, const Var& x) const {
  return ad::add(ad::matmul(x, tape.param(*weight)), tape.param(*bias));
}

LayerNormAffine::LayerNormAffine(ParamStore& store, const std::string& name, std::size_t width)
    : gain(&store.constant(name + ".gain", {width}, 1.0)), shift(&store.constant(name + ".shift", {width}, 0.0)) {}

Var LayerNormAffine::operator()(Tape& tape, const Var& x) const {
  return ad::add(ad::mul(ad::layer_norm(x), tape.param(*gain)), tape.param(*shift));
}

}  // namespace biomorph
