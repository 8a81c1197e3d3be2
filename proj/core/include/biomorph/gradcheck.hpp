#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "biomorph/autodiff.hpp"

namespace biomorph {

/// Builds a scalar loss on the given tape from the current Param values.
using LossBuilder = std::function<Var(Tape&)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// 0 checks every entry; otherwise a seeded sample of at most this many
  /// entries per parameter.
  std::size_t max_entries_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t entries_checked = 0;
};

/// Compares backward() against central differences. The relative error of an
/// entry is |analytic - numeric| / max(1, |analytic|, |numeric|).
GradCheckResult finite_diff_check(const LossBuilder& fn, const std::vector<Param*>& params,
                                  const GradCheckOptions& options = {});

}  // namespace biomorph
