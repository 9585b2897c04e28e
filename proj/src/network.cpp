#include "picnet/network.hpp"

#include <cmath>

#include "json.hpp"
#include "picnet/common.hpp"
#include "picnet/serialize.hpp"

namespace picnet {

namespace {

Tensor ones(std::vector<int> shape) {
  Tensor t(std::move(shape));
  t.fill(1.0);
  return t;
}

Tensor fan_in_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / fan_in);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(rng, -bound, bound);
  return t;
}

}  // namespace

CascadeModel build_cascade(const RunConfig& cfg) {
  cfg.validate();
  CascadeModel m;
  m.cfg = cfg;
  Rng rng = make_rng(derive_seed(cfg.seed, 0x1217, 0));
  for (int l = 0; l < cfg.depth; ++l) {
    m.blocks.push_back(make_block(cfg, l, m.params, rng));
    m.block_norms.emplace_back();
  }
  const int c = cfg.channels;
  const int classes = cfg.class_count();
  m.head.hidden = c;
  m.head.classes = classes;
  m.head.hidden_w = add_param(m.params, "head.hidden.weight",
                              fan_in_uniform({c, c}, c, rng), ParamKind::weight);
  m.head.hidden_b = add_param(m.params, "head.hidden.bias", Tensor({c}), ParamKind::bias);
  m.head.bn_scale = add_param(m.params, "head.norm.scale", ones({c}), ParamKind::bn_scale);
  m.head.bn_shift = add_param(m.params, "head.norm.shift", Tensor({c}), ParamKind::bn_shift);
  m.head.out_w = add_param(m.params, "head.out.weight",
                           fan_in_uniform({c, classes}, c, rng), ParamKind::weight);
  m.head.out_b = add_param(m.params, "head.out.bias", Tensor({classes}), ParamKind::bias);
  return m;
}

std::vector<Var> bind_params(Tape& t, const CascadeModel& m) {
  std::vector<Var> pv;
  pv.reserve(m.params.size());
  for (const auto& p : m.params) pv.push_back(t.leaf(p.value));
  return pv;
}

Var forward(Tape& t, CascadeModel& m, const std::vector<Var>& pv, Var input, Mode mode,
            ForwardTrace* trace) {
  const Tensor& x = t.val(input);
  if (x.rank() != 3)
    throw DimensionError("forward expects [batch x time x channels], got " + x.shape_str());
  if (x.dim(2) != m.cfg.channels)
    throw DimensionError("input has " + std::to_string(x.dim(2)) +
                         " channels, model expects " + std::to_string(m.cfg.channels));
  const int bsz = x.dim(0);
  Var cur = input;
  for (size_t l = 0; l < m.blocks.size(); ++l) {
    const BlockParams& b = m.blocks[l];
    if (trace) trace->block_in.push_back(t.val(cur));
    std::vector<Var> outs;
    outs.reserve(static_cast<size_t>(bsz));
    std::vector<SampleTrace> straces(trace ? static_cast<size_t>(bsz) : 0);
    for (int s = 0; s < bsz; ++s) {
      Var xs = t.select_batch(cur, s);
      outs.push_back(
          layer_forward_sample(t, xs, b, pv, trace ? &straces[static_cast<size_t>(s)] : nullptr));
    }
    cur = t.stack_batch(outs);
    if (trace) {
      const Tensor& out_val = t.val(cur);
      const int n = out_val.dim(1), c = out_val.dim(2);
      Tensor branch({bsz, n, c});
      for (int s = 0; s < bsz; ++s)
        for (int64_t i = 0; i < static_cast<int64_t>(n) * c; ++i)
          branch[static_cast<int64_t>(s) * n * c + i] = straces[static_cast<size_t>(s)].branch[i];
      trace->branch.push_back(std::move(branch));
      trace->layer_out.push_back(out_val);
      if (!straces.empty() && !straces[0].sprime.empty()) {
        const int sn = straces[0].sprime.dim(0), sm = straces[0].sprime.dim(1);
        Tensor sp({bsz, sn, sm});
        for (int s = 0; s < bsz; ++s)
          for (int64_t i = 0; i < static_cast<int64_t>(sn) * sm; ++i)
            sp[static_cast<int64_t>(s) * sn * sm + i] = straces[static_cast<size_t>(s)].sprime[i];
        trace->sprime.push_back(std::move(sp));
      } else {
        trace->sprime.emplace_back();
      }
    }
    cur = t.batch_norm(cur, pv[b.bn_scale], pv[b.bn_shift], m.block_norms[l], mode);
    cur = t.leaky_relu(cur);
    cur = t.max_pool_time(cur, m.cfg.stride);
  }
  Var pooled = t.mean_over_time(cur);  // [B x C]
  Var hidden = t.affine(pooled, pv[m.head.hidden_w], pv[m.head.hidden_b]);
  hidden = t.batch_norm(hidden, pv[m.head.bn_scale], pv[m.head.bn_shift], m.head_norm, mode);
  hidden = t.relu(hidden);
  return t.affine(hidden, pv[m.head.out_w], pv[m.head.out_b]);
}

Var forward(Tape& t, CascadeModel& m, const std::vector<Var>& pv, const Tensor& x,
            Mode mode, ForwardTrace* trace) {
  return forward(t, m, pv, t.leaf(x), mode, trace);
}

Tensor eval_logits(CascadeModel& m, const Tensor& x) {
  Tape t;
  std::vector<Var> pv = bind_params(t, m);
  Var logits = forward(t, m, pv, x, Mode::eval);
  return t.val(logits);
}

Var single_label_loss(Tape& t, Var logits, const std::vector<int>& labels,
                      LossValue* out) {
  std::vector<double> per_sample;
  Var loss = t.softmax_cross_entropy(logits, labels, &per_sample);
  if (out) {
    out->value = t.val(loss)[0];
    out->per_sample = std::move(per_sample);
  }
  return loss;
}

Var multi_label_loss(Tape& t, Var logits, const Tensor& targets, LossValue* out) {
  std::vector<double> per_sample;
  Var loss = t.sigmoid_bce(logits, targets, &per_sample);
  if (out) {
    out->value = t.val(loss)[0];
    out->per_sample = std::move(per_sample);
  }
  return loss;
}

void randomize_all_parameters(CascadeModel& m, Rng& rng, double scale) {
  for (auto& p : m.params) {
    const bool is_scale = p.kind == ParamKind::bn_scale;
    for (int64_t i = 0; i < p.value.numel(); ++i)
      p.value[i] = is_scale ? uniform(rng, 0.5, 1.5) : uniform(rng, -scale, scale);
  }
}

int64_t model_param_count(const CascadeModel& m) {
  int64_t total = 0;
  for (const auto& p : m.params) total += p.value.numel();
  return total;
}

void save_model(const std::string& path, const CascadeModel& m) {
  nlohmann::json header;
  header["format"] = "model";
  RunConfig stored = m.cfg;
  stored.out_dir = "out";  // where a model was written is not part of its identity
  header["config"] = nlohmann::json::parse(to_canonical_json(stored));
  std::vector<bool> bn_init;
  for (const auto& s : m.block_norms) bn_init.push_back(s.initialized);
  header["bn_initialized"] = bn_init;
  header["head_bn_initialized"] = m.head_norm.initialized;

  std::vector<io::NamedArray> arrays;
  for (const auto& p : m.params) arrays.push_back({p.name, p.value});
  const int c = m.cfg.channels;
  for (size_t l = 0; l < m.block_norms.size(); ++l) {
    const auto& s = m.block_norms[l];
    const std::string base = "block" + std::to_string(l) + ".norm.running_";
    arrays.push_back({base + "mean", s.initialized ? s.running_mean : Tensor({c})});
    arrays.push_back({base + "var", s.initialized ? s.running_var : Tensor({c})});
  }
  arrays.push_back({"head.norm.running_mean",
                    m.head_norm.initialized ? m.head_norm.running_mean : Tensor({c})});
  arrays.push_back({"head.norm.running_var",
                    m.head_norm.initialized ? m.head_norm.running_var : Tensor({c})});
  io::write_container(path, io::kModelMagic, 1, header.dump(2), arrays);
}

CascadeModel load_model(const std::string& path) {
  io::Container c = io::read_container(path, io::kModelMagic, 1);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(c.header);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("model '" + path + "' has a corrupt header: " + e.what());
  }
  if (!header.contains("config")) throw IoError("model '" + path + "' lacks a config");
  RunConfig cfg = run_config_from_json(header.at("config").dump());
  CascadeModel m = build_cascade(cfg);
  size_t expected = m.params.size() + 2 * m.block_norms.size() + 2;
  if (c.arrays.size() != expected)
    throw IoError("model '" + path + "' holds " + std::to_string(c.arrays.size()) +
                  " arrays, config implies " + std::to_string(expected));
  for (auto& p : m.params) {
    const Tensor& stored = c.find(p.name);
    if (!stored.same_shape(p.value))
      throw IoError("model '" + path + "': parameter '" + p.name + "' has shape " +
                    stored.shape_str() + ", config implies " + p.value.shape_str());
    p.value = stored;
  }
  std::vector<bool> bn_init(m.block_norms.size(), false);
  if (header.contains("bn_initialized"))
    bn_init = header.at("bn_initialized").get<std::vector<bool>>();
  if (bn_init.size() != m.block_norms.size())
    throw IoError("model '" + path + "': running-stat flags do not match depth");
  const Tensor expected_stat({cfg.channels});
  for (size_t l = 0; l < m.block_norms.size(); ++l) {
    const std::string base = "block" + std::to_string(l) + ".norm.running_";
    const Tensor& mean = c.find(base + "mean");
    const Tensor& var = c.find(base + "var");
    if (!mean.same_shape(expected_stat) || !var.same_shape(expected_stat))
      throw IoError("model '" + path + "': running statistics for block " +
                    std::to_string(l) + " have the wrong shape");
    if (bn_init[l]) {
      m.block_norms[l].running_mean = mean;
      m.block_norms[l].running_var = var;
      m.block_norms[l].initialized = true;
    }
  }
  if (header.value("head_bn_initialized", false)) {
    m.head_norm.running_mean = c.find("head.norm.running_mean");
    m.head_norm.running_var = c.find("head.norm.running_var");
    if (!m.head_norm.running_mean.same_shape(expected_stat) ||
        !m.head_norm.running_var.same_shape(expected_stat))
      throw IoError("model '" + path + "': head running statistics have the wrong shape");
    m.head_norm.initialized = true;
  }
  return m;
}

}  // namespace picnet
