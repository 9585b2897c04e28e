#pragma once

#include <functional>
#include <vector>

#include "picnet/tensor.hpp"

namespace picnet {

namespace testing {
// Fault-injection hook for the verify command's negative control: flips the
// row-max tie-break from lowest to highest index.
extern bool rowmax_tiebreak_highest;
}  // namespace testing

enum class Mode { train, eval };

/// Running statistics for one batch-norm site. Variance is stored biased
/// (divide by count), matching the normalizer.
struct BatchNormState {
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C]
  bool initialized = false;
  double momentum = 0.9;
  double epsilon = 1e-5;
};

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Define-by-run reverse-mode tape. Records every primitive with the saved
/// state its backward needs; backward() replays the record in reverse with
/// index-ordered accumulation, so identical inputs give bitwise-identical
/// gradients. Single-threaded: one tape must never be shared across threads.
class Tape {
 public:
  Var leaf(const Tensor& value);
  const Tensor& val(Var v) const { return values_[static_cast<size_t>(v.id)]; }
  int size() const { return static_cast<int>(values_.size()); }

  Var matmul(Var a, Var b);
  Var affine(Var x, Var w, Var b);
  Var similarity(Var keys, Var window);  // [M x C'] x [T x C'] -> [M x T]
  Var row_max(Var s);                    // [M x T] -> [M]

  // Max over a window of columns [lo, lo + width) of s. Columns outside the
  // matrix count as exactly 0.0 (a zero-padded window row dotted with any key),
  // and gradient for a padding argmax is discarded, matching the padded
  // per-window formulation bitwise. Tie-break: lowest window-local index.
  Var window_max(Var s, int lo, int width);

  // All sliding windows at once: out[i][m] = max over columns
  // [i - pad_left, i - pad_left + width) of s[m], with the same padding and
  // tie-break semantics as window_max. One tape node for all N positions.
  Var slide_max(Var s, int width, int pad_left);

  Var relu(Var x);
  Var leaky_relu(Var x);
  Var sigmoid(Var x);
  Var softmax(Var x);  // trailing dimension
  Var add(Var a, Var b);
  Var vec_mat(Var alpha, Var m);  // [p] x [p x q] -> [q]
  Var mat_vec(Var m, Var x);      // [p x q] x [q] -> [p]
  Var reshape(Var x, std::vector<int> shape);
  Var gather_rows(Var x, std::vector<int> rows);  // row index -1 -> zero row
  Var stack_rows(const std::vector<Var>& rows);   // k rank-1 [c] -> [k x c]
  Var select_batch(Var x, int b);                 // [B,N,C] -> [N,C]
  Var stack_batch(const std::vector<Var>& xs);    // B of [N,C] -> [B,N,C]
  Var max_pool_time(Var x, int stride);           // rank-2 or rank-3
  Var mean_over_time(Var x);                      // [B,N,C] -> [B,C]

  // Normalizes per channel (trailing dim) over all leading positions. Train
  // mode normalizes with batch statistics and updates `state` running stats in
  // place; eval mode requires initialized running stats.
  Var batch_norm(Var x, Var gamma, Var beta, BatchNormState& state, Mode mode);

  // Mean softmax cross-entropy over the batch; labels are class indices.
  Var softmax_cross_entropy(Var logits, const std::vector<int>& labels,
                            std::vector<double>* per_sample = nullptr);
  // Mean elementwise sigmoid binary cross-entropy; targets in {0,1}, [B x K].
  Var sigmoid_bce(Var logits, const Tensor& targets,
                  std::vector<double>* per_sample = nullptr);

  /// Reverse pass from a scalar (shape [1]) output. May be called once per tape.
  void backward(Var scalar);

  /// Gradient of the backward() output w.r.t. v; zeros if no path.
  const Tensor& grad(Var v);

 private:
  using BackFn = std::function<void(Tape&)>;

  Var push(Tensor value, BackFn back);
  Tensor& grad_ref(int id);
  bool has_grad(int id) const { return !grads_[static_cast<size_t>(id)].empty(); }

  std::vector<Tensor> values_;
  std::vector<BackFn> backs_;
  std::vector<Tensor> grads_;
  bool ran_backward_ = false;
};

}  // namespace picnet
