#include "picnet/optim.hpp"

#include <cmath>

#include "json.hpp"
#include "picnet/common.hpp"
#include "picnet/serialize.hpp"

namespace picnet {

OptConfig OptConfig::from_run(const RunConfig& cfg) {
  OptConfig oc;
  oc.kind = cfg.optimizer;
  oc.lr = cfg.lr;
  oc.momentum = cfg.momentum;
  oc.weight_decay = cfg.weight_decay;
  oc.beta1 = cfg.adam_beta1;
  oc.beta2 = cfg.adam_beta2;
  oc.epsilon = cfg.adam_epsilon;
  oc.clip_norm = cfg.clip_norm;
  return oc;
}

OptState make_opt_state(const OptConfig& cfg, const CascadeModel& m) {
  if (cfg.kind != "sgd" && cfg.kind != "adam")
    throw ConfigError("unknown optimizer '" + cfg.kind + "'");
  OptState st;
  st.kind = cfg.kind;
  for (const Param& p : m.params) {
    st.m1.push_back(Tensor(p.value.shape()));
    if (cfg.kind == "adam") st.m2.push_back(Tensor(p.value.shape()));
  }
  return st;
}

void apply_step(const OptConfig& cfg, OptState& st, CascadeModel& m,
                const std::vector<Tensor>& grads) {
  if (st.kind != cfg.kind) throw ConfigError("optimizer state kind mismatch");
  if (grads.size() != m.params.size())
    throw DimensionError("gradient count does not match parameter count");

  for (size_t i = 0; i < grads.size(); ++i) {
    const Tensor& g = grads[i];
    if (!g.same_shape(m.params[i].value))
      throw DimensionError("gradient shape mismatch for '" + m.params[i].name + "'");
    for (int64_t j = 0; j < g.numel(); ++j)
      if (!std::isfinite(g[j]))
        throw NumericError("non-finite gradient in '" + m.params[i].name + "'");
  }

  double scale = 1.0;
  if (cfg.clip_norm > 0.0) {
    double sq = 0.0;
    for (const Tensor& g : grads)
      for (int64_t j = 0; j < g.numel(); ++j) sq += g[j] * g[j];
    const double norm = std::sqrt(sq);
    if (norm > cfg.clip_norm) scale = cfg.clip_norm / norm;
  }

  if (cfg.kind == "sgd") {
    for (size_t i = 0; i < grads.size(); ++i) {
      Param& p = m.params[i];
      const double wd = p.kind == ParamKind::weight ? cfg.weight_decay : 0.0;
      Tensor& v = st.m1[i];
      for (int64_t j = 0; j < p.value.numel(); ++j) {
        const double g = grads[i][j] * scale + wd * p.value[j];
        v[j] = cfg.momentum * v[j] + g;
        p.value[j] -= cfg.lr * v[j];
      }
    }
  } else {
    const int64_t t = st.step + 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (size_t i = 0; i < grads.size(); ++i) {
      Param& p = m.params[i];
      const double wd = p.kind == ParamKind::weight ? cfg.weight_decay : 0.0;
      Tensor& m1 = st.m1[i];
      Tensor& m2 = st.m2[i];
      for (int64_t j = 0; j < p.value.numel(); ++j) {
        const double g = grads[i][j] * scale + wd * p.value[j];
        m1[j] = cfg.beta1 * m1[j] + (1.0 - cfg.beta1) * g;
        m2[j] = cfg.beta2 * m2[j] + (1.0 - cfg.beta2) * g * g;
        const double mhat = m1[j] / bc1;
        const double vhat = m2[j] / bc2;
        p.value[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
      }
    }
  }
  ++st.step;
}

namespace {
constexpr uint32_t kOptVersion = 1;
}

void save_opt_state(const std::string& path, const OptState& st) {
  nlohmann::ordered_json header;
  header["format"] = "picnet-opt-state";
  header["kind"] = st.kind;
  header["step"] = st.step;
  header["slots"] = st.m1.size();
  std::vector<io::NamedArray> arrays;
  for (size_t i = 0; i < st.m1.size(); ++i)
    arrays.push_back({"m1." + std::to_string(i), st.m1[i]});
  for (size_t i = 0; i < st.m2.size(); ++i)
    arrays.push_back({"m2." + std::to_string(i), st.m2[i]});
  io::write_container(path, io::kOptMagic, kOptVersion, header.dump(2) + "\n", arrays);
}

OptState load_opt_state(const std::string& path) {
  io::Container c = io::read_container(path, io::kOptMagic, kOptVersion);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(c.header);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad optimizer-state header in '" + path + "': " + e.what());
  }
  OptState st;
  st.kind = header.at("kind").get<std::string>();
  st.step = header.at("step").get<int64_t>();
  const auto slots = header.at("slots").get<size_t>();
  for (size_t i = 0; i < slots; ++i) st.m1.push_back(c.find("m1." + std::to_string(i)));
  if (st.kind == "adam")
    for (size_t i = 0; i < slots; ++i) st.m2.push_back(c.find("m2." + std::to_string(i)));
  return st;
}

}  // namespace picnet
