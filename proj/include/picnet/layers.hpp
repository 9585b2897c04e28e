#pragma once

#include <string>
#include <vector>

#include "picnet/config.hpp"
#include "picnet/rng.hpp"
#include "picnet/tape.hpp"
#include "picnet/tensor.hpp"

namespace picnet {

enum class Variant { pic, pic_ordered, pic_global, pic_inferred, temporal_conv };

Variant variant_from_string(const std::string& name);
std::string to_string(Variant v);

enum class ParamKind { weight, bias, bn_scale, bn_shift };

struct Param {
  std::string name;
  Tensor value;
  ParamKind kind;
};

// Handles into the model's parameter vector for one cascade block. Index -1
// means the slot does not exist for the block's variant.
struct BlockParams {
  Variant variant = Variant::pic;
  int window = 1;      // temporal receptive field T (ignored by pic_global)
  int m_keys = 1;      // M
  int m_values = 1;    // M'
  int channels = 4;    // C
  int reduced = 1;     // C'

  int reduce_w = -1, reduce_b = -1;
  int keys = -1, values = -1;
  int remap_w = -1, remap_b = -1;
  int infer_keys_w = -1, infer_keys_b = -1;
  int infer_values_w = -1, infer_values_b = -1;
  int conv_w = -1, conv_b = -1;
  int recover_w = -1, recover_b = -1;
  int bn_scale = -1, bn_shift = -1;
};

int add_param(std::vector<Param>& params, std::string name, Tensor value, ParamKind kind);

// Registers one block's parameters (fixed order, names "block<i>.<role>...")
// and returns the handle set. Weights use uniform fan-in scaled init; the
// recover map starts at zero so a fresh block is an exact identity.
BlockParams make_block(const RunConfig& cfg, int index, std::vector<Param>& params,
                       Rng& rng);

// Window positions for output index i: input rows [i - pad_left, i - pad_left
// + window), -1 marking zero padding.
std::vector<int> window_indices(int i, int n, int window, int pad_left);

// --- window-level operations (one window -> one output vector) ---

// keys [M x C'], window [T x C'] -> [C']: similarity, per-key max over the
// window, dense remap with relu, then a weighted sum of value rows.
Var pic_window(Tape& t, Var window, Var keys, Var values, Var remap_w, Var remap_b);

// keys_flat [M x T*C'] (a per-position kernel flattened over time), window
// [T x C'], values [M x C'] -> [C'].
Var pic_ordered_window(Tape& t, Var window, Var keys_flat, Var values);

// Keys and values inferred from the window itself; remap is [T x T].
Var pic_inferred_window(Tape& t, Var window, Var infer_keys_w, Var infer_keys_b,
                        Var infer_values_w, Var infer_values_b, Var remap_w,
                        Var remap_b);

// conv_flat [C_out x T*C], window [T x C] -> [C_out].
Var temporal_conv_window(Tape& t, Var window, Var conv_flat, Var bias);

// --- layer-level per-sample forwards (x is [n x C]) ---

struct SampleTrace {
  Tensor sprime;  // per-position max similarities ([n x M]; variants without
                  // stored keys leave it empty)
  Tensor branch;  // what the residual addition adds to x ([n x C])
  Tensor out;     // layer output
};

Var layer_forward_sample(Tape& t, Var x, const BlockParams& b,
                         const std::vector<Var>& pv, SampleTrace* trace = nullptr);

// Per-window reference implementation of the sliding pic layer, built from
// pic_window; used as the equivalence oracle for the batched path.
Var pic_layer_reference_sample(Tape& t, Var x, const BlockParams& b,
                               const std::vector<Var>& pv);

// Parameter-count closed forms (batch-norm learnables included).
int64_t block_param_count(Variant v, int channels, int window, int m_keys, int m_values);
int64_t head_param_count(int channels, int classes);

}  // namespace picnet
