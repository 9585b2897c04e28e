#include "picnet/tape.hpp"

#include <cmath>

#include "picnet/flops.hpp"
#include "picnet/ops.hpp"

namespace picnet {

namespace testing {
bool rowmax_tiebreak_highest = false;
}

namespace {

inline bool beats(double candidate, double best) {
  if (testing::rowmax_tiebreak_highest) return candidate >= best;
  return candidate > best;
}

}  // namespace

Var Tape::push(Tensor value, BackFn back) {
  values_.push_back(std::move(value));
  backs_.push_back(std::move(back));
  grads_.emplace_back();
  return Var{static_cast<int>(values_.size()) - 1};
}

Tensor& Tape::grad_ref(int id) {
  Tensor& g = grads_[static_cast<size_t>(id)];
  if (g.empty()) g = Tensor(values_[static_cast<size_t>(id)].shape());
  return g;
}

Var Tape::leaf(const Tensor& value) { return push(value, BackFn()); }

Var Tape::matmul(Var a, Var b) {
  Tensor c = ops::matmul(val(a), val(b));
  const int out = size();
  return push(std::move(c), [a, b, out](Tape& t) {
    const Tensor& g = t.grads_[static_cast<size_t>(out)];
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor& ga = t.grad_ref(a.id);
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += g.at(i, j) * bv.at(p, j);
        ga.at(i, p) += acc;
      }
    Tensor& gb = t.grad_ref(b.id);
    for (int p = 0; p < k; ++p)
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int i = 0; i < m; ++i) acc += av.at(i, p) * g.at(i, j);
        gb.at(p, j) += acc;
      }
  });
}

Var Tape::affine(Var x, Var w, Var b) {
  Tensor y = ops::affine(val(x), val(w), val(b));
  const int out = size();
  return push(std::move(y), [x, w, b, out](Tape& t) {
    const Tensor& g = t.grads_[static_cast<size_t>(out)];
    const Tensor& xv = t.val(x);
    const Tensor& wv = t.val(w);
    const int p = wv.dim(0), q = wv.dim(1);
    const int rows = xv.rank() == 1 ? 1 : xv.dim(0);
    const double* xd = xv.data();
    const double* gd = g.data();
    Tensor& gx = t.grad_ref(x.id);
    Tensor& gw = t.grad_ref(w.id);
    Tensor& gb = t.grad_ref(b.id);
    double* gxd = gx.data();
    for (int r = 0; r < rows; ++r) {
      const double* xr = xd + static_cast<int64_t>(r) * p;
      const double* gr = gd + static_cast<int64_t>(r) * q;
      double* gxr = gxd + static_cast<int64_t>(r) * p;
      for (int i = 0; i < p; ++i) {
        double acc = 0.0;
        for (int j = 0; j < q; ++j) acc += gr[j] * wv.at(i, j);
        gxr[i] += acc;
      }
      for (int i = 0; i < p; ++i)
        for (int j = 0; j < q; ++j) gw.at(i, j) += xr[i] * gr[j];
      for (int j = 0; j < q; ++j) gb.at(j) += gr[j];
    }
  });
}

Var Tape::similarity(Var keys, Var window) {
  Tensor s = ops::similarity(val(keys), val(window));
  const int out = size();
  return push(std::move(s), [keys, window, out](Tape& t) {
    const Tensor& g = t.grads_[static_cast<size_t>(out)];
    const Tensor& kv = t.val(keys);
    const Tensor& xv = t.val(window);
    const int m = kv.dim(0), c = kv.dim(1), n = xv.dim(0);
    Tensor& gk = t.grad_ref(keys.id);
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < c; ++p) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += g.at(i, j) * xv.at(j, p);
        gk.at(i, p) += acc;
      }
    Tensor& gx = t.grad_ref(window.id);
    for (int j = 0; j < n; ++j)
      for (int p = 0; p < c; ++p) {
        double acc = 0.0;
        for (int i = 0; i < m; ++i) acc += g.at(i, j) * kv.at(i, p);
        gx.at(j, p) += acc;
      }
  });
}

Var Tape::row_max(Var s) {
  const Tensor& sv = val(s);
  if (sv.rank() != 2) throw DimensionError("row_max requires rank-2 input");
  return window_max(s, 0, sv.dim(1));
}

Var Tape::window_max(Var s, int lo, int width) {
  const Tensor& sv = val(s);
  if (sv.rank() != 2) throw DimensionError("window_max requires rank-2 input");
  if (width < 1) throw DimensionError("window_max on empty window");
  const int m = sv.dim(0), n = sv.dim(1);
  Tensor out({m});
  std::vector<int> arg(static_cast<size_t>(m), -1);  // -1: padding column won
  for (int i = 0; i < m; ++i) {
    bool first = true;
    double best = 0.0;
    int best_col = -1;
    for (int l = 0; l < width; ++l) {
      const int col = lo + l;
      const double v = (col >= 0 && col < n) ? sv.at(i, col) : 0.0;
      if (first || beats(v, best)) {
        best = v;
        best_col = (col >= 0 && col < n) ? col : -1;
        first = false;
      }
    }
    out.at(i) = best;
    arg[static_cast<size_t>(i)] = best_col;
  }
  const int id = size();
  return push(std::move(out), [s, arg, id](Tape& t) {
    const Tensor& g = t.grads_[static_cast<size_t>(id)];
    Tensor& gs = t.grad_ref(s.id);
    for (size_t i = 0; i < arg.size(); ++i)
      if (arg[i] >= 0) gs.at(static_cast<int>(i), arg[i]) += g.at(static_cast<int>(i));
  });
}

Var Tape::slide_max(Var s, int width, int pad_left) {
  const Tensor& sv = val(s);
  if (sv.rank() != 2) throw DimensionError("slide_max requires rank-2 input");
  if (width < 1) throw ConfigError("slide_max window must be >= 1");
  const int m = sv.dim(0), n = sv.dim(1);
  Tensor out({n, m});
  std::vector<int> arg(static_cast<size_t>(n) * m, -1);
  for (int i = 0; i < n; ++i) {
    const int lo = i - pad_left;
    for (int r = 0; r < m; ++r) {
      bool first = true;
      double best = 0.0;
      int best_col = -1;
      for (int l = 0; l < width; ++l) {
        const int col = lo + l;
        const double v = (col >= 0 && col < n) ? sv.at(r, col) : 0.0;
        if (first || beats(v, best)) {
          best = v;
          best_col = (col >= 0 && col < n) ? col : -1;
          first = false;
        }
      }
      out.at(i, r) = best;
      arg[static_cast<size_t>(i) * m + r] = best_col;
    }
  }
  const int id = size();
  return push(std::move(out), [s, arg, m, n, id](Tape& t) {
    const Tensor& g = t.grads_[static_cast<size_t>(id)];
    Tensor& gs = t.grad_ref(s.id);
    // Descending position order mirrors the reverse tape replay of the
    // per-window formulation, keeping gradients bitwise identical to it.
    for (int i = n - 1; i >= 0; --i)
      for (int r = 0; r < m; ++r) {
        const int col = arg[static_cast<size_t>(i) * m + r];
        if (col >= 0) gs.at(r, col) += g.at(i, r);
      }
  });
}

Var Tape::relu(Var x) {
  Tensor y = ops::activation(val(x), ops::Activation::relu);
  const int out = size();
  return push(std::move(y), [x, out](Tape& t) {
    const Tensor& g = t.grads_[static_cast<size_t>(out)];
    const Tensor& xv = t.val(x);
    Tensor& gx = t.grad_ref(x.id);
    for (int64_t i = 0; i < xv.numel(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  });
}

Var Tape::leaky_relu(Var x) {
  Tensor y = ops::activation(val(x), ops::Activation::leaky_relu);
  const int out = size();
  return push(std::move(y), [x, out](Tape& t) {
    const Tensor& g = t.grads_[static_cast<size_t>(out)];
    const Tensor& xv = t.val(x);
    Tensor& gx = t.grad_ref(x.id);
    for (int64_t i = 0; i < xv.numel(); ++i)
      gx[i] += xv[i] > 0.0 ? g[i] : ops::kLeakySlope * g[i];
  });
}

Var Tape::sigmoid(Var x) {
  Tensor y = ops::activation(val(x), ops::Activation::sigmoid);
  const int out = size();
  return push(std::move(y), [x, out](Tape& t) {
    const Tensor& g = t.grads_[static_cast<size_t>(out)];
    const Tensor& yv = t.val(Var{out});
    Tensor& gx = t.grad_ref(x.id);
    for (int64_t i = 0; i < yv.numel(); ++i) gx[i] += g[i] * yv[i] * (1.0 - yv[i]);
  });
}

Var Tape::softmax(Var x) {
  Tensor y = ops::activation(val(x), ops::Activation::softmax);
  const int out = size();
  return push(std::move(y), [x, out](Tape& t) {
    const Tensor& g = t.grads_[static_cast<size_t>(out)];
    const Tensor& yv = t.val(Var{out});
    const int width = yv.dim(yv.rank() - 1);
    const int64_t rows = yv.numel() / width;
    Tensor& gx = t.grad_ref(x.id);
    for (int64_t r = 0; r < rows; ++r) {
      const double* yr = yv.data() + r * width;
      const double* gr = g.data() + r * width;
      double* gxr = gx.data() + r * width;
      double dot = 0.0;
      for (int j = 0; j < width; ++j) dot += gr[j] * yr[j];
      for (int j = 0; j < width; ++j) gxr[j] += yr[j] * (gr[j] - dot);
    }
  });
}

Var Tape::add(Var a, Var b) {
  Tensor c = ops::add(val(a), val(b));
  const int out = size();
  return push(std::move(c), [a, b, out](Tape& t) {
    const Tensor& g = t.grads_[static_cast<size_t>(out)];
    Tensor& ga = t.grad_ref(a.id);
    Tensor& gb = t.grad_ref(b.id);
    for (int64_t i = 0; i < g.numel(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  });
}

Var Tape::vec_mat(Var alpha, Var m) {
  const Tensor& av = val(alpha);
  const Tensor& mv = val(m);
  if (av.rank() != 1 || mv.rank() != 2 || av.dim(0) != mv.dim(0))
    throw DimensionError("vec_mat shape mismatch: " + av.shape_str() + " x " +
                         mv.shape_str());
  const int p = mv.dim(0), q = mv.dim(1);
  Tensor y({q});
  for (int j = 0; j < q; ++j) {
    double acc = 0.0;
    for (int i = 0; i < p; ++i) acc += av.at(i) * mv.at(i, j);
    y.at(j) = acc;
  }
  flops::add(2LL * p * q);
  y.check_finite("vec_mat");
  const int out = size();
  return push(std::move(y), [alpha, m, out](Tape& t) {
    const Tensor& g = t.grads_[static_cast<size_t>(out)];
    const Tensor& av = t.val(alpha);
    const Tensor& mv = t.val(m);
    const int p = mv.dim(0), q = mv.dim(1);
    Tensor& ga = t.grad_ref(alpha.id);
    Tensor& gm = t.grad_ref(m.id);
    for (int i = 0; i < p; ++i) {
      double acc = 0.0;
      for (int j = 0; j < q; ++j) {
        acc += g.at(j) * mv.at(i, j);
        gm.at(i, j) += av.at(i) * g.at(j);
      }
      ga.at(i) += acc;
    }
  });
}

Var Tape::mat_vec(Var m, Var x) {
  const Tensor& mv = val(m);
  const Tensor& xv = val(x);
  if (mv.rank() != 2 || xv.rank() != 1 || mv.dim(1) != xv.dim(0))
    throw DimensionError("mat_vec shape mismatch: " + mv.shape_str() + " x " +
                         xv.shape_str());
  const int p = mv.dim(0), q = mv.dim(1);
  Tensor y({p});
  for (int i = 0; i < p; ++i) {
    double acc = 0.0;
    for (int j = 0; j < q; ++j) acc += mv.at(i, j) * xv.at(j);
    y.at(i) = acc;
  }
  flops::add(2LL * p * q);
  y.check_finite("mat_vec");
  const int out = size();
  return push(std::move(y), [m, x, out](Tape& t) {
    const Tensor& g = t.grads_[static_cast<size_t>(out)];
    const Tensor& mv = t.val(m);
    const Tensor& xv = t.val(x);
    const int p = mv.dim(0), q = mv.dim(1);
    Tensor& gm = t.grad_ref(m.id);
    Tensor& gx = t.grad_ref(x.id);
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < q; ++j) {
        gm.at(i, j) += g.at(i) * xv.at(j);
        gx.at(j) += mv.at(i, j) * g.at(i);
      }
  });
}

Var Tape::reshape(Var x, std::vector<int> shape) {
  const Tensor& xv = val(x);
  if (shape_numel(shape) != xv.numel())
    throw DimensionError("reshape element count mismatch");
  Tensor y(std::move(shape), std::vector<double>(xv.data(), xv.data() + xv.numel()));
  const int out = size();
  return push(std::move(y), [x, out](Tape& t) {
    const Tensor& g = t.grads_[static_cast<size_t>(out)];
    Tensor& gx = t.grad_ref(x.id);
    for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
  });
}

Var Tape::gather_rows(Var x, std::vector<int> rows) {
  const Tensor& xv = val(x);
  if (xv.rank() != 2) throw DimensionError("gather_rows requires rank-2 input");
  const int n = xv.dim(0), c = xv.dim(1);
  Tensor y({static_cast<int>(rows.size()), c});
  for (size_t r = 0; r < rows.size(); ++r) {
    const int src = rows[r];
    if (src >= n) throw DimensionError("gather_rows index out of range");
    if (src < 0) continue;  // zero row
    for (int j = 0; j < c; ++j) y.at(static_cast<int>(r), j) = xv.at(src, j);
  }
  const int out = size();
  return push(std::move(y), [x, rows, out](Tape& t) {
    const Tensor& g = t.grads_[static_cast<size_t>(out)];
    Tensor& gx = t.grad_ref(x.id);
    const int c = g.dim(1);
    for (size_t r = 0; r < rows.size(); ++r) {
      if (rows[r] < 0) continue;
      for (int j = 0; j < c; ++j) gx.at(rows[r], j) += g.at(static_cast<int>(r), j);
    }
  });
}

Var Tape::stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw DimensionError("stack_rows on empty list");
  const int c = val(rows[0]).dim(0);
  Tensor y({static_cast<int>(rows.size()), c});
  for (size_t r = 0; r < rows.size(); ++r) {
    const Tensor& rv = val(rows[r]);
    if (rv.rank() != 1 || rv.dim(0) != c)
      throw DimensionError("stack_rows rows must share shape");
    for (int j = 0; j < c; ++j) y.at(static_cast<int>(r), j) = rv.at(j);
  }
  const int out = size();
  return push(std::move(y), [rows, out](Tape& t) {
    const Tensor& g = t.grads_[static_cast<size_t>(out)];
    const int c = g.dim(1);
    for (size_t r = 0; r < rows.size(); ++r) {
      Tensor& gr = t.grad_ref(rows[r].id);
      for (int j = 0; j < c; ++j) gr.at(j) += g.at(static_cast<int>(r), j);
    }
  });
}

Var Tape::select_batch(Var x, int b) {
  const Tensor& xv = val(x);
  if (xv.rank() != 3) throw DimensionError("select_batch requires rank-3 input");
  const int n = xv.dim(1), c = xv.dim(2);
  const int64_t stride = static_cast<int64_t>(n) * c;
  Tensor y({n, c},
           std::vector<double>(xv.data() + b * stride, xv.data() + (b + 1) * stride));
  const int out = size();
  return push(std::move(y), [x, b, stride, out](Tape& t) {
    const Tensor& g = t.grads_[static_cast<size_t>(out)];
    Tensor& gx = t.grad_ref(x.id);
    double* dst = gx.data() + b * stride;
    for (int64_t i = 0; i < stride; ++i) dst[i] += g[i];
  });
}

Var Tape::stack_batch(const std::vector<Var>& xs) {
  if (xs.empty()) throw DimensionError("stack_batch on empty list");
  const Tensor& first = val(xs[0]);
  if (first.rank() != 2) throw DimensionError("stack_batch expects rank-2 parts");
  const int n = first.dim(0), c = first.dim(1);
  Tensor y({static_cast<int>(xs.size()), n, c});
  const int64_t stride = static_cast<int64_t>(n) * c;
  for (size_t b = 0; b < xs.size(); ++b) {
    const Tensor& xv = val(xs[b]);
    if (!xv.same_shape(first)) throw DimensionError("stack_batch parts must share shape");
    double* dst = y.data() + static_cast<int64_t>(b) * stride;
    for (int64_t i = 0; i < stride; ++i) dst[i] = xv[i];
  }
  const int out = size();
  return push(std::move(y), [xs, stride, out](Tape& t) {
    const Tensor& g = t.grads_[static_cast<size_t>(out)];
    for (size_t b = 0; b < xs.size(); ++b) {
      Tensor& gx = t.grad_ref(xs[b].id);
      const double* src = g.data() + static_cast<int64_t>(b) * stride;
      for (int64_t i = 0; i < stride; ++i) gx[i] += src[i];
    }
  });
}

Var Tape::max_pool_time(Var x, int stride) {
  const Tensor& xv = val(x);
  if (xv.rank() == 2) {
    auto [y, src] = ops::max_pool_time_indexed(xv, stride);
    const int out = size();
    const int c = xv.dim(1);
    return push(std::move(y), [x, src, c, out](Tape& t) {
      const Tensor& g = t.grads_[static_cast<size_t>(out)];
      Tensor& gx = t.grad_ref(x.id);
      const int out_n = g.dim(0);
      for (int o = 0; o < out_n; ++o)
        for (int j = 0; j < c; ++j)
          gx.at(src[static_cast<size_t>(o) * c + j], j) += g.at(o, j);
    });
  }
  if (xv.rank() != 3) throw DimensionError("max_pool_time requires rank-2 or rank-3");
  if (stride < 1) throw ConfigError("max_pool_time stride must be >= 1");
  const int bsz = xv.dim(0), n = xv.dim(1), c = xv.dim(2);
  if (n == 0) throw DimensionError("max_pool_time on empty sequence");
  const int out_n = (n + stride - 1) / stride;
  Tensor y({bsz, out_n, c});
  std::vector<int> src(static_cast<size_t>(bsz) * out_n * c, 0);
  for (int b = 0; b < bsz; ++b)
    for (int o = 0; o < out_n; ++o) {
      const int lo = o * stride;
      const int hi = std::min(n, lo + stride);
      for (int j = 0; j < c; ++j) {
        double best = xv.at(b, lo, j);
        int best_i = lo;
        for (int i = lo + 1; i < hi; ++i)
          if (xv.at(b, i, j) > best) {
            best = xv.at(b, i, j);
            best_i = i;
          }
        y.at(b, o, j) = best;
        src[(static_cast<size_t>(b) * out_n + o) * c + j] = best_i;
      }
    }
  const int out = size();
  return push(std::move(y), [x, src, out_n, c, out](Tape& t) {
    const Tensor& g = t.grads_[static_cast<size_t>(out)];
    Tensor& gx = t.grad_ref(x.id);
    const int bsz = g.dim(0);
    for (int b = 0; b < bsz; ++b)
      for (int o = 0; o < out_n; ++o)
        for (int j = 0; j < c; ++j)
          gx.at(b, src[(static_cast<size_t>(b) * out_n + o) * c + j], j) += g.at(b, o, j);
  });
}

Var Tape::mean_over_time(Var x) {
  const Tensor& xv = val(x);
  if (xv.rank() != 3) throw DimensionError("mean_over_time requires rank-3 input");
  const int bsz = xv.dim(0), n = xv.dim(1), c = xv.dim(2);
  Tensor y({bsz, c});
  for (int b = 0; b < bsz; ++b)
    for (int j = 0; j < c; ++j) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += xv.at(b, i, j);
      y.at(b, j) = acc / n;
    }
  const int out = size();
  return push(std::move(y), [x, n, out](Tape& t) {
    const Tensor& g = t.grads_[static_cast<size_t>(out)];
    Tensor& gx = t.grad_ref(x.id);
    const int bsz = g.dim(0), c = g.dim(1);
    for (int b = 0; b < bsz; ++b)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) gx.at(b, i, j) += g.at(b, j) / n;
  });
}

Var Tape::batch_norm(Var x, Var gamma, Var beta, BatchNormState& state, Mode mode) {
  const Tensor& xv = val(x);
  if (xv.rank() < 2) throw DimensionError("batch_norm requires rank >= 2");
  const int c = xv.dim(xv.rank() - 1);
  const int64_t rows = xv.numel() / c;
  const Tensor& gv = val(gamma);
  const Tensor& bv = val(beta);
  if (gv.numel() != c || bv.numel() != c)
    throw DimensionError("batch_norm scale/shift width mismatch");

  Tensor y(xv.shape());
  if (mode == Mode::eval) {
    if (!state.initialized)
      throw ValidationError("batch_norm eval before any training step: running statistics uninitialized");
    std::vector<double> scale(static_cast<size_t>(c)), shift(static_cast<size_t>(c));
    std::vector<double> inv(static_cast<size_t>(c));
    for (int j = 0; j < c; ++j) {
      inv[static_cast<size_t>(j)] = 1.0 / std::sqrt(state.running_var[j] + state.epsilon);
      scale[static_cast<size_t>(j)] = gv[j] * inv[static_cast<size_t>(j)];
      shift[static_cast<size_t>(j)] =
          bv[j] - scale[static_cast<size_t>(j)] * state.running_mean[j];
    }
    for (int64_t r = 0; r < rows; ++r)
      for (int j = 0; j < c; ++j)
        y[r * c + j] = scale[static_cast<size_t>(j)] * xv[r * c + j] +
                       shift[static_cast<size_t>(j)];
    flops::add(2 * rows * c);
    y.check_finite("batch_norm");
    const Tensor rmean = state.running_mean;
    const int out = size();
    return push(std::move(y), [x, gamma, beta, inv, rmean, rows, c, out](Tape& t) {
      const Tensor& g = t.grads_[static_cast<size_t>(out)];
      const Tensor& xv = t.val(x);
      const Tensor& gv = t.val(gamma);
      Tensor& gx = t.grad_ref(x.id);
      Tensor& gg = t.grad_ref(gamma.id);
      Tensor& gb = t.grad_ref(beta.id);
      for (int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < c; ++j) {
          const double xhat = (xv[r * c + j] - rmean[j]) * inv[static_cast<size_t>(j)];
          gx[r * c + j] += g[r * c + j] * gv[j] * inv[static_cast<size_t>(j)];
          gg[j] += g[r * c + j] * xhat;
          gb[j] += g[r * c + j];
        }
    });
  }

  // Train mode: normalize with batch statistics (biased variance), then update
  // the running statistics in place. The update is write-only with respect to
  // this forward's output, so repeated evaluations stay numerically pure.
  std::vector<double> mean(static_cast<size_t>(c), 0.0), var(static_cast<size_t>(c), 0.0);
  std::vector<double> inv(static_cast<size_t>(c));
  for (int64_t r = 0; r < rows; ++r)
    for (int j = 0; j < c; ++j) mean[static_cast<size_t>(j)] += xv[r * c + j];
  for (int j = 0; j < c; ++j) mean[static_cast<size_t>(j)] /= static_cast<double>(rows);
  for (int64_t r = 0; r < rows; ++r)
    for (int j = 0; j < c; ++j) {
      const double d = xv[r * c + j] - mean[static_cast<size_t>(j)];
      var[static_cast<size_t>(j)] += d * d;
    }
  for (int j = 0; j < c; ++j) var[static_cast<size_t>(j)] /= static_cast<double>(rows);
  for (int j = 0; j < c; ++j)
    inv[static_cast<size_t>(j)] = 1.0 / std::sqrt(var[static_cast<size_t>(j)] + state.epsilon);

  Tensor xhat(xv.shape());
  for (int64_t r = 0; r < rows; ++r)
    for (int j = 0; j < c; ++j) {
      const double h = (xv[r * c + j] - mean[static_cast<size_t>(j)]) * inv[static_cast<size_t>(j)];
      xhat[r * c + j] = h;
      y[r * c + j] = gv[j] * h + bv[j];
    }
  flops::add(2 * rows * c);
  y.check_finite("batch_norm");

  if (!state.initialized) {
    state.running_mean = Tensor({c});
    state.running_var = Tensor({c});
    for (int j = 0; j < c; ++j) {
      state.running_mean[j] = mean[static_cast<size_t>(j)];
      state.running_var[j] = var[static_cast<size_t>(j)];
    }
    state.initialized = true;
  } else {
    for (int j = 0; j < c; ++j) {
      state.running_mean[j] = state.momentum * state.running_mean[j] +
                              (1.0 - state.momentum) * mean[static_cast<size_t>(j)];
      state.running_var[j] = state.momentum * state.running_var[j] +
                             (1.0 - state.momentum) * var[static_cast<size_t>(j)];
    }
  }

  const int out = size();
  return push(std::move(y), [x, gamma, beta, xhat, inv, rows, c, out](Tape& t) {
    const Tensor& g = t.grads_[static_cast<size_t>(out)];
    const Tensor& gv = t.val(gamma);
    Tensor& gx = t.grad_ref(x.id);
    Tensor& gg = t.grad_ref(gamma.id);
    Tensor& gb = t.grad_ref(beta.id);
    // dx = gamma*inv * (g - mean(g) - xhat * mean(g*xhat)), means over the
    // normalization set.
    std::vector<double> gsum(static_cast<size_t>(c), 0.0), ghsum(static_cast<size_t>(c), 0.0);
    for (int64_t r = 0; r < rows; ++r)
      for (int j = 0; j < c; ++j) {
        gsum[static_cast<size_t>(j)] += g[r * c + j];
        ghsum[static_cast<size_t>(j)] += g[r * c + j] * xhat[r * c + j];
      }
    for (int j = 0; j < c; ++j) {
      gg[j] += ghsum[static_cast<size_t>(j)];
      gb[j] += gsum[static_cast<size_t>(j)];
    }
    for (int64_t r = 0; r < rows; ++r)
      for (int j = 0; j < c; ++j) {
        const double gmean = gsum[static_cast<size_t>(j)] / static_cast<double>(rows);
        const double ghmean = ghsum[static_cast<size_t>(j)] / static_cast<double>(rows);
        gx[r * c + j] += gv[j] * inv[static_cast<size_t>(j)] *
                         (g[r * c + j] - gmean - xhat[r * c + j] * ghmean);
      }
  });
}

Var Tape::softmax_cross_entropy(Var logits, const std::vector<int>& labels,
                                std::vector<double>* per_sample) {
  const Tensor& z = val(logits);
  if (z.rank() != 2) throw DimensionError("softmax_cross_entropy requires [B x K] logits");
  const int bsz = z.dim(0), k = z.dim(1);
  if (static_cast<int>(labels.size()) != bsz)
    throw ValidationError("label count does not match batch size");
  for (int label : labels)
    if (label < 0 || label >= k)
      throw ValidationError("class label " + std::to_string(label) + " out of range [0," +
                            std::to_string(k) + ")");
  Tensor probs({bsz, k});
  double total = 0.0;
  if (per_sample) per_sample->assign(static_cast<size_t>(bsz), 0.0);
  for (int b = 0; b < bsz; ++b) {
    double mx = z.at(b, 0);
    for (int j = 1; j < k; ++j) mx = std::max(mx, z.at(b, j));
    double sum = 0.0;
    for (int j = 0; j < k; ++j) {
      probs.at(b, j) = std::exp(z.at(b, j) - mx);
      sum += probs.at(b, j);
    }
    for (int j = 0; j < k; ++j) probs.at(b, j) /= sum;
    const double lse = mx + std::log(sum);
    const double loss_b = lse - z.at(b, labels[static_cast<size_t>(b)]);
    if (per_sample) (*per_sample)[static_cast<size_t>(b)] = loss_b;
    total += loss_b;
  }
  Tensor loss = Tensor::scalar(total / bsz);
  loss.check_finite("softmax_cross_entropy");
  const int out = size();
  return push(std::move(loss), [logits, labels, probs, out](Tape& t) {
    const double g = t.grads_[static_cast<size_t>(out)][0];
    Tensor& gz = t.grad_ref(logits.id);
    const int bsz = probs.dim(0), k = probs.dim(1);
    for (int b = 0; b < bsz; ++b)
      for (int j = 0; j < k; ++j) {
        const double onehot = (j == labels[static_cast<size_t>(b)]) ? 1.0 : 0.0;
        gz.at(b, j) += g * (probs.at(b, j) - onehot) / bsz;
      }
  });
}

Var Tape::sigmoid_bce(Var logits, const Tensor& targets, std::vector<double>* per_sample) {
  const Tensor& z = val(logits);
  if (z.rank() != 2) throw DimensionError("sigmoid_bce requires [B x K] logits");
  if (!z.same_shape(targets))
    throw ValidationError("target shape " + targets.shape_str() +
                          " does not match logits " + z.shape_str());
  const int bsz = z.dim(0), k = z.dim(1);
  for (int64_t i = 0; i < targets.numel(); ++i)
    if (targets[i] != 0.0 && targets[i] != 1.0)
      throw ValidationError("multi-label targets must be 0 or 1");
  if (per_sample) per_sample->assign(static_cast<size_t>(bsz), 0.0);
  double total = 0.0;
  for (int b = 0; b < bsz; ++b) {
    double row = 0.0;
    for (int j = 0; j < k; ++j) {
      const double zv = z.at(b, j);
      const double y = targets.at(b, j);
      // log(1 + exp(-|z|)) + max(z,0) - z*y, the stable split of -log p.
      row += std::log1p(std::exp(-std::fabs(zv))) + std::max(zv, 0.0) - zv * y;
    }
    if (per_sample) (*per_sample)[static_cast<size_t>(b)] = row / k;
    total += row;
  }
  Tensor loss = Tensor::scalar(total / (static_cast<double>(bsz) * k));
  loss.check_finite("sigmoid_bce");
  const int out = size();
  return push(std::move(loss), [logits, targets, out](Tape& t) {
    const double g = t.grads_[static_cast<size_t>(out)][0];
    const Tensor& z = t.val(logits);
    Tensor& gz = t.grad_ref(logits.id);
    const int bsz = z.dim(0), k = z.dim(1);
    const double scale = g / (static_cast<double>(bsz) * k);
    for (int b = 0; b < bsz; ++b)
      for (int j = 0; j < k; ++j) {
        const double s = 1.0 / (1.0 + std::exp(-z.at(b, j)));
        gz.at(b, j) += scale * (s - targets.at(b, j));
      }
  });
}

void Tape::backward(Var scalar) {
  if (ran_backward_) throw Error("tape backward may run only once");
  ran_backward_ = true;
  if (val(scalar).numel() != 1)
    throw DimensionError("backward requires a scalar output, got " +
                         val(scalar).shape_str());
  grad_ref(scalar.id)[0] = 1.0;
  for (int id = static_cast<int>(backs_.size()) - 1; id >= 0; --id) {
    if (backs_[static_cast<size_t>(id)] && has_grad(id))
      backs_[static_cast<size_t>(id)](*this);
  }
}

const Tensor& Tape::grad(Var v) { return grad_ref(v.id); }

}  // namespace picnet
