#include "biomorph/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>

namespace biomorph {
namespace {
std::atomic<bool> g_checked{true};
}

void set_checked_mode(bool enabled) noexcept { g_checked.store(enabled, std::memory_order_relaxed); }
bool checked_mode() noexcept { return g_checked.load(std::memory_order_relaxed); }

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  if (shape_.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape_));
  }
  data_.assign(shape_numel(shape_), fill);
  if (checked_mode() && !std::isfinite(fill)) throw NonFiniteError("non-finite fill value");
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape_));
  }
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_to_string(shape_));
  }
  if (checked_mode()) check_finite("tensor construction");
}

Tensor Tensor::vector(std::vector<double> data) {
  const auto n = data.size();
  return Tensor({n}, std::move(data));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

std::size_t Tensor::rows() const noexcept {
  if (shape_.empty()) return 0;
  return data_.size() / shape_.back();
}

std::size_t Tensor::cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::check_finite(const char* context) const {
  // Branch-free scan over exponent bits so the loop vectorizes; parameters
  // are checked on every tape registration.
  constexpr std::uint64_t kExp = 0x7ff0000000000000ULL;
  std::uint64_t bad = 0;
  for (const double v : data_) bad |= static_cast<std::uint64_t>((std::bit_cast<std::uint64_t>(v) & kExp) == kExp);
  if (bad == 0) return;
  const auto it = std::find_if(data_.begin(), data_.end(), [](double v) { return !std::isfinite(v); });
  throw NonFiniteError(std::string(context) + ": non-finite value at flat index " +
                       std::to_string(static_cast<std::size_t>(it - data_.begin())));
}

}  // namespace biomorph
