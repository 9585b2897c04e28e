#include "picnet/layers.hpp"

#include <cmath>

#include "picnet/common.hpp"

namespace picnet {

Variant variant_from_string(const std::string& name) {
  if (name == "pic") return Variant::pic;
  if (name == "pic_ordered") return Variant::pic_ordered;
  if (name == "pic_global") return Variant::pic_global;
  if (name == "pic_inferred") return Variant::pic_inferred;
  if (name == "temporal_conv") return Variant::temporal_conv;
  throw ConfigError("unknown variant '" + name + "'");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::pic: return "pic";
    case Variant::pic_ordered: return "pic_ordered";
    case Variant::pic_global: return "pic_global";
    case Variant::pic_inferred: return "pic_inferred";
    case Variant::temporal_conv: return "temporal_conv";
  }
  throw ConfigError("unknown variant tag");
}

int add_param(std::vector<Param>& params, std::string name, Tensor value, ParamKind kind) {
  params.push_back({std::move(name), std::move(value), kind});
  return static_cast<int>(params.size()) - 1;
}

namespace {

Tensor fan_in_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / fan_in);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(rng, -bound, bound);
  return t;
}

Tensor ones(std::vector<int> shape) {
  Tensor t(std::move(shape));
  t.fill(1.0);
  return t;
}

}  // namespace

BlockParams make_block(const RunConfig& cfg, int index, std::vector<Param>& params,
                       Rng& rng) {
  BlockParams b;
  b.variant = variant_from_string(cfg.variant);
  b.window = cfg.window;
  b.m_keys = cfg.keys;
  b.m_values = cfg.values;
  b.channels = cfg.channels;
  b.reduced = cfg.reduced_channels();
  const std::string p = "block" + std::to_string(index) + ".";
  const int c = b.channels, cr = b.reduced, m = b.m_keys, mv = b.m_values, t = b.window;

  if (b.variant == Variant::temporal_conv) {
    b.conv_w = add_param(params, p + "conv.weight",
                         fan_in_uniform({c, t, c}, t * c, rng), ParamKind::weight);
    b.conv_b = add_param(params, p + "conv.bias", Tensor({c}), ParamKind::bias);
  } else {
    b.reduce_w = add_param(params, p + "reduce.weight",
                           fan_in_uniform({c, cr}, c, rng), ParamKind::weight);
    b.reduce_b = add_param(params, p + "reduce.bias", Tensor({cr}), ParamKind::bias);
    switch (b.variant) {
      case Variant::pic:
      case Variant::pic_global:
        b.keys = add_param(params, p + "keys", fan_in_uniform({m, cr}, cr, rng),
                           ParamKind::weight);
        b.values = add_param(params, p + "values", fan_in_uniform({mv, cr}, mv, rng),
                             ParamKind::weight);
        b.remap_w = add_param(params, p + "remap.weight",
                              fan_in_uniform({m, mv}, m, rng), ParamKind::weight);
        b.remap_b = add_param(params, p + "remap.bias", Tensor({mv}), ParamKind::bias);
        break;
      case Variant::pic_ordered:
        b.keys = add_param(params, p + "keys", fan_in_uniform({m, t, cr}, t * cr, rng),
                           ParamKind::weight);
        b.values = add_param(params, p + "values", fan_in_uniform({m, cr}, m, rng),
                             ParamKind::weight);
        break;
      case Variant::pic_inferred:
        b.infer_keys_w = add_param(params, p + "infer_keys.weight",
                                   fan_in_uniform({cr, cr}, cr, rng), ParamKind::weight);
        b.infer_keys_b = add_param(params, p + "infer_keys.bias", Tensor({cr}),
                                   ParamKind::bias);
        b.infer_values_w = add_param(params, p + "infer_values.weight",
                                     fan_in_uniform({cr, cr}, cr, rng), ParamKind::weight);
        b.infer_values_b = add_param(params, p + "infer_values.bias", Tensor({cr}),
                                     ParamKind::bias);
        b.remap_w = add_param(params, p + "remap.weight",
                              fan_in_uniform({t, t}, t, rng), ParamKind::weight);
        b.remap_b = add_param(params, p + "remap.bias", Tensor({t}), ParamKind::bias);
        break;
      default:
        break;
    }
    b.recover_w = add_param(params, p + "recover.weight", Tensor({cr, c}),
                            ParamKind::weight);
    b.recover_b = add_param(params, p + "recover.bias", Tensor({c}), ParamKind::bias);
  }
  b.bn_scale = add_param(params, p + "norm.scale", ones({c}), ParamKind::bn_scale);
  b.bn_shift = add_param(params, p + "norm.shift", Tensor({c}), ParamKind::bn_shift);
  return b;
}

std::vector<int> window_indices(int i, int n, int window, int pad_left) {
  std::vector<int> idx(static_cast<size_t>(window));
  for (int l = 0; l < window; ++l) {
    const int src = i - pad_left + l;
    idx[static_cast<size_t>(l)] = (src >= 0 && src < n) ? src : -1;
  }
  return idx;
}

Var pic_window(Tape& t, Var window, Var keys, Var values, Var remap_w, Var remap_b) {
  Var s = t.similarity(keys, window);
  Var sprime = t.row_max(s);
  Var alpha = t.relu(t.affine(sprime, remap_w, remap_b));
  return t.vec_mat(alpha, values);
}

Var pic_ordered_window(Tape& t, Var window, Var keys_flat, Var values) {
  const Tensor& w = t.val(window);
  Var flat = t.reshape(window, {w.dim(0) * w.dim(1)});
  Var alpha = t.mat_vec(keys_flat, flat);
  return t.vec_mat(t.relu(alpha), values);
}

Var pic_inferred_window(Tape& t, Var window, Var infer_keys_w, Var infer_keys_b,
                        Var infer_values_w, Var infer_values_b, Var remap_w,
                        Var remap_b) {
  Var keys = t.affine(window, infer_keys_w, infer_keys_b);
  Var values = t.affine(window, infer_values_w, infer_values_b);
  Var s = t.similarity(keys, window);
  Var sprime = t.row_max(s);
  Var alpha = t.relu(t.affine(sprime, remap_w, remap_b));
  return t.vec_mat(alpha, values);
}

Var temporal_conv_window(Tape& t, Var window, Var conv_flat, Var bias) {
  const Tensor& w = t.val(window);
  Var flat = t.reshape(window, {w.dim(0) * w.dim(1)});
  return t.add(t.mat_vec(conv_flat, flat), bias);
}

namespace {

Var pic_forward(Tape& t, Var x, const BlockParams& b, const std::vector<Var>& pv,
                SampleTrace* trace) {
  const int n = t.val(x).dim(0);
  Var reduced = t.affine(x, pv[b.reduce_w], pv[b.reduce_b]);
  Var s_all = t.similarity(pv[b.keys], reduced);  // [M x n]
  Var sprime = t.slide_max(s_all, b.window, pad_left_for(b.window));  // [n x M]
  Var alpha = t.relu(t.affine(sprime, pv[b.remap_w], pv[b.remap_b]));
  Var y = t.matmul(alpha, pv[b.values]);  // [n x C']
  Var branch = t.affine(y, pv[b.recover_w], pv[b.recover_b]);
  Var out = t.add(x, branch);
  if (trace) {
    trace->sprime = t.val(sprime);
    trace->branch = t.val(branch);
    trace->out = t.val(out);
  }
  (void)n;
  return out;
}

Var pic_global_forward(Tape& t, Var x, const BlockParams& b, const std::vector<Var>& pv,
                       SampleTrace* trace) {
  const int n = t.val(x).dim(0), c = t.val(x).dim(1);
  Var reduced = t.affine(x, pv[b.reduce_w], pv[b.reduce_b]);
  Var s = t.similarity(pv[b.keys], reduced);  // [M x n]
  Var sprime = t.row_max(s);                  // [M]
  Var alpha = t.relu(t.affine(sprime, pv[b.remap_w], pv[b.remap_b]));
  Var y = t.vec_mat(alpha, pv[b.values]);  // [C']
  Var branch = t.reshape(t.affine(y, pv[b.recover_w], pv[b.recover_b]), {1, c});
  Var mean_x = t.mean_over_time(t.reshape(x, {1, n, c}));  // [1 x C]
  Var out = t.add(mean_x, branch);
  if (trace) {
    trace->sprime = Tensor({1, b.m_keys},
                           std::vector<double>(t.val(sprime).data(),
                                               t.val(sprime).data() + b.m_keys));
    trace->branch = t.val(branch);
    trace->out = t.val(out);
  }
  return out;
}

Var ordered_forward(Tape& t, Var x, const BlockParams& b, const std::vector<Var>& pv,
                    SampleTrace* trace) {
  const int n = t.val(x).dim(0);
  Var reduced = t.affine(x, pv[b.reduce_w], pv[b.reduce_b]);
  Var keys_flat = t.reshape(pv[b.keys], {b.m_keys, b.window * b.reduced});
  const int pad = pad_left_for(b.window);
  std::vector<Var> rows;
  rows.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Var win = t.gather_rows(reduced, window_indices(i, n, b.window, pad));
    rows.push_back(pic_ordered_window(t, win, keys_flat, pv[b.values]));
  }
  Var y = t.stack_rows(rows);
  Var branch = t.affine(y, pv[b.recover_w], pv[b.recover_b]);
  Var out = t.add(x, branch);
  if (trace) {
    trace->branch = t.val(branch);
    trace->out = t.val(out);
  }
  return out;
}

Var inferred_forward(Tape& t, Var x, const BlockParams& b, const std::vector<Var>& pv,
                     SampleTrace* trace) {
  const int n = t.val(x).dim(0);
  Var reduced = t.affine(x, pv[b.reduce_w], pv[b.reduce_b]);
  const int pad = pad_left_for(b.window);
  std::vector<Var> rows;
  rows.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Var win = t.gather_rows(reduced, window_indices(i, n, b.window, pad));
    rows.push_back(pic_inferred_window(t, win, pv[b.infer_keys_w], pv[b.infer_keys_b],
                                       pv[b.infer_values_w], pv[b.infer_values_b],
                                       pv[b.remap_w], pv[b.remap_b]));
  }
  Var y = t.stack_rows(rows);
  Var branch = t.affine(y, pv[b.recover_w], pv[b.recover_b]);
  Var out = t.add(x, branch);
  if (trace) {
    trace->branch = t.val(branch);
    trace->out = t.val(out);
  }
  return out;
}

Var conv_forward(Tape& t, Var x, const BlockParams& b, const std::vector<Var>& pv,
                 SampleTrace* trace) {
  const int n = t.val(x).dim(0);
  Var conv_flat = t.reshape(pv[b.conv_w], {b.channels, b.window * b.channels});
  const int pad = pad_left_for(b.window);
  std::vector<Var> rows;
  rows.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Var win = t.gather_rows(x, window_indices(i, n, b.window, pad));
    rows.push_back(temporal_conv_window(t, win, conv_flat, pv[b.conv_b]));
  }
  Var out = t.stack_rows(rows);
  if (trace) {
    trace->branch = t.val(out);
    trace->out = t.val(out);
  }
  return out;
}

}  // namespace

Var layer_forward_sample(Tape& t, Var x, const BlockParams& b,
                         const std::vector<Var>& pv, SampleTrace* trace) {
  switch (b.variant) {
    case Variant::pic: return pic_forward(t, x, b, pv, trace);
    case Variant::pic_global: return pic_global_forward(t, x, b, pv, trace);
    case Variant::pic_ordered: return ordered_forward(t, x, b, pv, trace);
    case Variant::pic_inferred: return inferred_forward(t, x, b, pv, trace);
    case Variant::temporal_conv: return conv_forward(t, x, b, pv, trace);
  }
  throw ConfigError("unknown variant tag");
}

Var pic_layer_reference_sample(Tape& t, Var x, const BlockParams& b,
                               const std::vector<Var>& pv) {
  const int n = t.val(x).dim(0);
  Var reduced = t.affine(x, pv[b.reduce_w], pv[b.reduce_b]);
  const int pad = pad_left_for(b.window);
  std::vector<Var> rows;
  rows.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Var win = t.gather_rows(reduced, window_indices(i, n, b.window, pad));
    rows.push_back(
        pic_window(t, win, pv[b.keys], pv[b.values], pv[b.remap_w], pv[b.remap_b]));
  }
  Var y = t.stack_rows(rows);
  Var branch = t.affine(y, pv[b.recover_w], pv[b.recover_b]);
  return t.add(x, branch);
}

int64_t block_param_count(Variant v, int c, int t, int m, int mv) {
  const int64_t cr = c / 4;
  const int64_t bottleneck = static_cast<int64_t>(c) * cr + cr + cr * c + c;
  const int64_t bn = 2 * static_cast<int64_t>(c);
  switch (v) {
    case Variant::pic:
    case Variant::pic_global:
      return bottleneck + static_cast<int64_t>(m) * cr + static_cast<int64_t>(mv) * cr +
             static_cast<int64_t>(m) * mv + mv + bn;
    case Variant::pic_ordered:
      return bottleneck + static_cast<int64_t>(m) * t * cr +
             static_cast<int64_t>(m) * cr + bn;
    case Variant::pic_inferred:
      return bottleneck + 2 * (cr * cr + cr) + static_cast<int64_t>(t) * t + t + bn;
    case Variant::temporal_conv:
      return static_cast<int64_t>(t) * c * c + c + bn;
  }
  throw ConfigError("unknown variant tag");
}

int64_t head_param_count(int c, int classes) {
  return static_cast<int64_t>(c) * c + c + 2LL * c +
         static_cast<int64_t>(c) * classes + classes;
}

}  // namespace picnet
