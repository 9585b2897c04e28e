#include "picnet/ops.hpp"

#include <algorithm>
#include <cmath>

#include "picnet/flops.hpp"

namespace picnet::ops {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul requires rank-2 operands, got " + a.shape_str() +
                         " and " + b.shape_str());
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul inner dimensions disagree: " + a.shape_str() +
                         " vs " + b.shape_str());
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += a.at(i, p) * b.at(p, j);
      c.at(i, j) = acc;
    }
  }
  flops::add(2LL * m * n * k);
  c.check_finite("matmul");
  return c;
}

Tensor similarity(const Tensor& keys, const Tensor& window) {
  if (keys.rank() != 2 || window.rank() != 2)
    throw DimensionError("similarity requires rank-2 operands");
  if (keys.dim(1) != window.dim(1))
    throw DimensionError("similarity channel mismatch: keys " + keys.shape_str() +
                         " vs window " + window.shape_str());
  const int m = keys.dim(0), c = keys.dim(1), t = window.dim(0);
  Tensor s({m, t});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < t; ++j) {
      double acc = 0.0;
      for (int p = 0; p < c; ++p) acc += keys.at(i, p) * window.at(j, p);
      s.at(i, j) = acc;
    }
  }
  flops::add(2LL * m * t * c);
  s.check_finite("similarity");
  return s;
}

std::pair<Tensor, std::vector<int>> row_max(const Tensor& s) {
  if (s.rank() != 2) throw DimensionError("row_max requires rank-2 input");
  const int m = s.dim(0), t = s.dim(1);
  if (t < 1) throw DimensionError("row_max on empty rows");
  Tensor out({m});
  std::vector<int> arg(static_cast<size_t>(m), 0);
  for (int i = 0; i < m; ++i) {
    double best = s.at(i, 0);
    int best_t = 0;
    for (int j = 1; j < t; ++j) {
      if (s.at(i, j) > best) {  // strict: ties keep the lowest index
        best = s.at(i, j);
        best_t = j;
      }
    }
    out.at(i) = best;
    arg[static_cast<size_t>(i)] = best_t;
  }
  return {std::move(out), std::move(arg)};
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2 || b.rank() != 1)
    throw DimensionError("affine expects rank-2 weight and rank-1 bias");
  const int p = w.dim(0), q = w.dim(1);
  if (b.dim(0) != q)
    throw DimensionError("affine bias width " + b.shape_str() + " != " +
                         std::to_string(q));
  if (x.rank() == 1) {
    if (x.dim(0) != p)
      throw DimensionError("affine input width " + x.shape_str() + " != weight rows " +
                           std::to_string(p));
    Tensor y({q});
    for (int j = 0; j < q; ++j) {
      double acc = b.at(j);
      for (int i = 0; i < p; ++i) acc += x.at(i) * w.at(i, j);
      y.at(j) = acc;
    }
    flops::add(2LL * p * q + q);
    y.check_finite("affine");
    return y;
  }
  if (x.rank() != 2)
    throw DimensionError("affine input must be rank-1 or rank-2, got " + x.shape_str());
  if (x.dim(1) != p)
    throw DimensionError("affine input width " + x.shape_str() + " != weight rows " +
                         std::to_string(p));
  const int r = x.dim(0);
  Tensor y({r, q});
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < q; ++j) {
      double acc = b.at(j);
      for (int k = 0; k < p; ++k) acc += x.at(i, k) * w.at(k, j);
      y.at(i, j) = acc;
    }
  }
  flops::add(2LL * r * p * q + static_cast<int64_t>(r) * q);
  y.check_finite("affine");
  return y;
}

Tensor activation(const Tensor& x, Activation kind) {
  Tensor y = x;
  switch (kind) {
    case Activation::relu:
      for (int64_t i = 0; i < y.numel(); ++i) y[i] = y[i] > 0.0 ? y[i] : 0.0;
      return y;
    case Activation::leaky_relu:
      for (int64_t i = 0; i < y.numel(); ++i)
        y[i] = y[i] > 0.0 ? y[i] : kLeakySlope * y[i];
      return y;
    case Activation::sigmoid:
      for (int64_t i = 0; i < y.numel(); ++i) y[i] = 1.0 / (1.0 + std::exp(-y[i]));
      return y;
    case Activation::softmax: {
      if (x.rank() < 1) throw DimensionError("softmax needs rank >= 1");
      const int width = x.dim(x.rank() - 1);
      const int64_t rows = x.numel() / width;
      for (int64_t r = 0; r < rows; ++r) {
        double* row = y.data() + r * width;
        double mx = row[0];
        for (int j = 1; j < width; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < width; ++j) {
          row[j] = std::exp(row[j] - mx);
          sum += row[j];
        }
        for (int j = 0; j < width; ++j) row[j] /= sum;
      }
      return y;
    }
  }
  throw ValidationError("unknown activation kind");
}

std::pair<Tensor, std::vector<int>> max_pool_time_indexed(const Tensor& x, int stride) {
  if (x.rank() != 2) throw DimensionError("max_pool_time requires rank-2 [n x c]");
  if (stride < 1) throw ConfigError("max_pool_time stride must be >= 1");
  const int n = x.dim(0), c = x.dim(1);
  if (n == 0) throw DimensionError("max_pool_time on empty sequence");
  const int out_n = (n + stride - 1) / stride;
  Tensor y({out_n, c});
  std::vector<int> src(static_cast<size_t>(out_n) * c, 0);
  for (int o = 0; o < out_n; ++o) {
    const int lo = o * stride;
    const int hi = std::min(n, lo + stride);
    for (int j = 0; j < c; ++j) {
      double best = x.at(lo, j);
      int best_i = lo;
      for (int i = lo + 1; i < hi; ++i) {
        if (x.at(i, j) > best) {
          best = x.at(i, j);
          best_i = i;
        }
      }
      y.at(o, j) = best;
      src[static_cast<size_t>(o) * c + j] = best_i;
    }
  }
  return {std::move(y), std::move(src)};
}

Tensor max_pool_time(const Tensor& x, int stride) {
  return max_pool_time_indexed(x, stride).first;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose requires rank-2 input");
  Tensor t({a.dim(1), a.dim(0)});
  for (int i = 0; i < a.dim(0); ++i)
    for (int j = 0; j < a.dim(1); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw DimensionError("add shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
  Tensor c = a;
  for (int64_t i = 0; i < c.numel(); ++i) c[i] += b[i];
  flops::add(c.numel());
  c.check_finite("add");
  return c;
}

}  // namespace picnet::ops
