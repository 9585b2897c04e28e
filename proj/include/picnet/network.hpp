#pragma once

#include <string>
#include <vector>

#include "picnet/config.hpp"
#include "picnet/layers.hpp"
#include "picnet/tape.hpp"

namespace picnet {

struct HeadParams {
  int hidden_w = -1, hidden_b = -1;
  int bn_scale = -1, bn_shift = -1;
  int out_w = -1, out_b = -1;
  int hidden = 0;
  int classes = 0;
};

struct CascadeModel {
  RunConfig cfg;
  std::vector<Param> params;
  std::vector<BlockParams> blocks;
  std::vector<BatchNormState> block_norms;
  BatchNormState head_norm;
  HeadParams head;
};

// Deterministic construction from the config seed. Head hidden width = C.
CascadeModel build_cascade(const RunConfig& cfg);

std::vector<Var> bind_params(Tape& t, const CascadeModel& m);

struct ForwardTrace {
  std::vector<Tensor> block_in;   // [B x n x C] per block
  std::vector<Tensor> branch;     // residual branch per block, [B x n x C]
  std::vector<Tensor> layer_out;  // layer output (pre-norm) per block
  std::vector<Tensor> sprime;     // [B x n x M] for blocks with stored keys, else empty
};

// x is [B x N x C]; returns raw logits [B x classes]. Train mode updates
// batch-norm running statistics; eval mode requires them to be initialized.
// The Var overload lets callers keep a handle on the input leaf, e.g. to read
// its gradient.
Var forward(Tape& t, CascadeModel& m, const std::vector<Var>& pv, Var x, Mode mode,
            ForwardTrace* trace = nullptr);
Var forward(Tape& t, CascadeModel& m, const std::vector<Var>& pv, const Tensor& x,
            Mode mode, ForwardTrace* trace = nullptr);

Tensor eval_logits(CascadeModel& m, const Tensor& x);

struct LossValue {
  double value = 0.0;
  std::vector<double> per_sample;
};

Var single_label_loss(Tape& t, Var logits, const std::vector<int>& labels,
                      LossValue* out = nullptr);
Var multi_label_loss(Tape& t, Var logits, const Tensor& targets,
                     LossValue* out = nullptr);

// Gives every parameter (including the zero-initialized recover maps) a
// non-trivial value so gradient paths are exercised; batch-norm scales stay
// around one.
void randomize_all_parameters(CascadeModel& m, Rng& rng, double scale = 0.5);

int64_t model_param_count(const CascadeModel& m);

void save_model(const std::string& path, const CascadeModel& m);
CascadeModel load_model(const std::string& path);

}  // namespace picnet
