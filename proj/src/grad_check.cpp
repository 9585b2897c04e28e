#include "picnet/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "picnet/common.hpp"
#include "picnet/rng.hpp"

namespace picnet {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << "grad_check: " << checked << " entries, " << failures.size() << " failures";
  const size_t shown = std::min<size_t>(failures.size(), 5);
  for (size_t i = 0; i < shown; ++i) {
    const auto& f = failures[i];
    os << "\n  " << f.tensor << "[" << f.index << "] analytic=" << f.analytic
       << " numeric=" << f.numeric << " rel_err=" << f.rel_err;
  }
  if (failures.size() > shown) os << "\n  ... " << failures.size() - shown << " more";
  return os.str();
}

GradCheckReport grad_check(const std::vector<std::pair<std::string, Tensor*>>& tensors,
                           const std::function<double()>& loss,
                           const std::vector<Tensor>& analytic,
                           const GradCheckOptions& opts) {
  if (tensors.size() != analytic.size())
    throw ValidationError("grad_check: analytic gradient count mismatch");
  GradCheckReport report;
  for (size_t k = 0; k < tensors.size(); ++k) {
    Tensor& t = *tensors[k].second;
    if (!t.same_shape(analytic[k]))
      throw DimensionError("grad_check: gradient shape mismatch for " + tensors[k].first);
    std::vector<int64_t> idx(static_cast<size_t>(t.numel()));
    for (int64_t i = 0; i < t.numel(); ++i) idx[static_cast<size_t>(i)] = i;
    if (opts.max_entries_per_tensor > 0 &&
        t.numel() > opts.max_entries_per_tensor) {
      Rng rng = make_rng(derive_seed(opts.sample_seed, 0x6c, static_cast<uint64_t>(k)));
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<size_t>(opts.max_entries_per_tensor));
      std::sort(idx.begin(), idx.end());
    }
    for (int64_t i : idx) {
      const double saved = t[i];
      t[i] = saved + opts.step;
      const double up = loss();
      t[i] = saved - opts.step;
      const double down = loss();
      t[i] = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double a = analytic[k][i];
      const double rel = std::fabs(a - numeric) / std::max(1.0, std::fabs(numeric));
      ++report.checked;
      if (!(rel <= opts.tolerance))
        report.failures.push_back({tensors[k].first, i, a, numeric, rel});
    }
  }
  return report;
}

}  // namespace picnet
