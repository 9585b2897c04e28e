#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "picnet/tensor.hpp"

namespace picnet {

struct GradCheckFailure {
  std::string tensor;
  int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  int64_t checked = 0;
  std::vector<GradCheckFailure> failures;
  bool ok() const { return failures.empty(); }
  std::string summary() const;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // 0 checks every entry; otherwise a deterministic subsample per tensor.
  int64_t max_entries_per_tensor = 0;
  uint64_t sample_seed = 0;
};

// Central-difference check: `loss` must recompute the scalar objective from
// the current contents of the referenced tensors; `analytic` holds the
// reverse-mode gradient for each tensor, in the same order. Relative error is
// |analytic - numeric| / max(1, |numeric|).
GradCheckReport grad_check(const std::vector<std::pair<std::string, Tensor*>>& tensors,
                           const std::function<double()>& loss,
                           const std::vector<Tensor>& analytic,
                           const GradCheckOptions& opts = {});

}  // namespace picnet
