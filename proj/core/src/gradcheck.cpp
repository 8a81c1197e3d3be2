#include "biomorph/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace biomorph {
namespace {

double evaluate(const LossBuilder& fn) {
  Tape tape(false);
  const Var loss = fn(tape);
  if (loss.value().size() != 1) throw ShapeError("finite_diff_check: loss must be scalar");
  return loss.value()[0];
}

std::vector<std::size_t> pick_entries(std::size_t n, std::size_t limit, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (limit == 0 || limit >= n) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckResult finite_diff_check(const LossBuilder& fn, const std::vector<Param*>& params,
                                  const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");

  const double base = evaluate(fn);
  if (evaluate(fn) != base) throw std::runtime_error("finite_diff_check: loss function is not deterministic");

  for (auto* p : params) p->zero_grad();
  {
    Tape tape(true);
    tape.backward(fn(tape));
  }

  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  const double h = options.step;
  for (auto* p : params) {
    for (auto i : pick_entries(p->value.size(), options.max_entries_per_param, rng)) {
      const double saved = p->value[i];
      p->value[i] = saved + h;
      const double up = evaluate(fn);
      p->value[i] = saved - h;
      const double down = evaluate(fn);
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad[i];
      const double err =
          std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
      ++result.entries_checked;
      if (err > result.max_rel_error || result.worst_param.empty()) {
        if (err >= result.max_rel_error) {
          result.max_rel_error = err;
          result.worst_param = p->name;
          result.worst_index = i;
        }
      }
    }
  }
  return result;
}

}  // namespace biomorph
