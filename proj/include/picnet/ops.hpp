#pragma once

#include <utility>
#include <vector>

#include "picnet/tensor.hpp"

namespace picnet::ops {

// Dense kernels with a determinism contract: accumulation is strictly
// left-to-right in index order, so repeated runs are bitwise identical and
// integer-valued inputs match the naive-loop oracles to 0 ulp.

Tensor matmul(const Tensor& a, const Tensor& b);  // [m x k] * [k x n]

// similarity(keys, window): s[m][t] = dot(keys[m], window[t]).
// Equals matmul(keys, transpose(window)).
Tensor similarity(const Tensor& keys, const Tensor& window);

// Per-row max with lowest-index tie-break; second member is the argmax column
// per row. Backward (on the tape) routes gradient only to the argmax column.
std::pair<Tensor, std::vector<int>> row_max(const Tensor& s);

// y = x*W + b for rank-1 x ([p] -> [q]) or rank-2 x ([r x p] -> [r x q]).
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

enum class Activation { relu, leaky_relu, sigmoid, softmax };
constexpr double kLeakySlope = 0.01;

// softmax acts over the trailing dimension; the rest are elementwise.
Tensor activation(const Tensor& x, Activation kind);

// Channelwise max over consecutive non-overlapping windows of length `stride`
// along the row axis of [n x c]; the last window may be shorter. Also returns
// the source row index per output element for backward routing.
Tensor max_pool_time(const Tensor& x, int stride);
std::pair<Tensor, std::vector<int>> max_pool_time_indexed(const Tensor& x, int stride);

Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);

}  // namespace picnet::ops
