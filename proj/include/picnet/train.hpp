#pragma once

#include <string>
#include <vector>

#include "picnet/evalbench.hpp"
#include "picnet/optim.hpp"
#include "picnet/synthdata.hpp"

namespace picnet {

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double eval_metric = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = -1;  // -1 when no epoch completed
  double best_metric = 0.0;
  bool diverged = false;
  std::string note;
};

// Full training run driven by m.cfg (epochs, batch size, optimizer fields).
// Epoch order is a seeded shuffle; the train loss is the sample-weighted mean
// over the epoch's batches, and the eval metric is computed on data.test
// after each epoch. On return the model holds the best-metric parameters
// (earliest epoch wins ties). A non-finite loss or gradient rolls the model
// back to that snapshot and sets `diverged`.
TrainResult train_model(CascadeModel& m, const Dataset& data, int threads = 1,
                        OptState* resume = nullptr);

}  // namespace picnet
