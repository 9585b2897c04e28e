#pragma once

#include <string>
#include <vector>

#include "picnet/network.hpp"

namespace picnet {

struct OptConfig {
  std::string kind = "sgd";  // sgd | adam
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-4;
  double clip_norm = 0.0;  // 0 disables global-norm clipping

  static OptConfig from_run(const RunConfig& cfg);
};

struct OptState {
  std::string kind = "sgd";
  int64_t step = 0;            // completed update count (adam bias correction)
  std::vector<Tensor> m1;      // sgd velocity / adam first moment
  std::vector<Tensor> m2;      // adam second moment; empty for sgd
};

OptState make_opt_state(const OptConfig& cfg, const CascadeModel& m);

// One in-place update; grads[i] pairs with the model's i-th registered
// parameter. Decay applies to weight matrices only, never to biases or
// norm scales/shifts. Throws NumericError naming the first parameter whose
// gradient is not finite.
void apply_step(const OptConfig& cfg, OptState& st, CascadeModel& m,
                const std::vector<Tensor>& grads);

void save_opt_state(const std::string& path, const OptState& st);
OptState load_opt_state(const std::string& path);

}  // namespace picnet
