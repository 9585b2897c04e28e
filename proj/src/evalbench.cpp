#include "picnet/evalbench.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <thread>

#include "picnet/common.hpp"
#include "picnet/flops.hpp"

namespace picnet {

double accuracy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw DimensionError("accuracy expects [B x K] logits");
  const int bsz = logits.dim(0), k = logits.dim(1);
  if (bsz == 0 || labels.empty()) throw ValidationError("accuracy over an empty batch");
  if (static_cast<int>(labels.size()) != bsz)
    throw ValidationError("label count does not match logits");
  int hits = 0;
  for (int b = 0; b < bsz; ++b) {
    int best = 0;
    for (int j = 1; j < k; ++j)
      if (logits.at(b, j) > logits.at(b, best)) best = j;
    if (best == labels[static_cast<size_t>(b)]) ++hits;
  }
  return static_cast<double>(hits) / bsz;
}

ApReport mean_average_precision(const Tensor& scores, const Tensor& targets) {
  if (scores.rank() != 2 || !scores.same_shape(targets))
    throw DimensionError("mean_average_precision expects matching [B x K] scores/targets");
  const int bsz = scores.dim(0), k = scores.dim(1);
  if (bsz == 0) throw ValidationError("mean_average_precision over an empty batch");
  ApReport report;
  report.per_class.assign(static_cast<size_t>(k),
                          std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  int included = 0;
  std::vector<int> order(static_cast<size_t>(bsz));
  for (int cls = 0; cls < k; ++cls) {
    int positives = 0;
    for (int b = 0; b < bsz; ++b)
      if (targets.at(b, cls) != 0.0) ++positives;
    if (positives == 0) {
      report.excluded.push_back(cls);
      continue;
    }
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return scores.at(a, cls) > scores.at(b, cls);
    });
    int hits = 0;
    double ap = 0.0;
    for (int rank = 1; rank <= bsz; ++rank) {
      const int sample = order[static_cast<size_t>(rank - 1)];
      if (targets.at(sample, cls) != 0.0) {
        ++hits;
        ap += static_cast<double>(hits) / rank;
      }
    }
    ap /= positives;
    report.per_class[static_cast<size_t>(cls)] = ap;
    sum += ap;
    ++included;
  }
  if (included == 0)
    throw ValidationError("no class has a positive sample; mAP is undefined");
  report.map = sum / included;
  return report;
}

namespace {

constexpr int kEvalChunk = 32;

Tensor stack_features(const std::vector<Sample>& samples, size_t lo, size_t hi) {
  const int n = samples[lo].features.dim(0), c = samples[lo].features.dim(1);
  Tensor x({static_cast<int>(hi - lo), n, c});
  for (size_t i = lo; i < hi; ++i) {
    const Tensor& f = samples[i].features;
    if (f.dim(0) != n || f.dim(1) != c)
      throw DimensionError("samples in one batch must share shape");
    for (int64_t j = 0; j < static_cast<int64_t>(n) * c; ++j)
      x[static_cast<int64_t>(i - lo) * n * c + j] = f[j];
  }
  return x;
}

}  // namespace

Tensor model_logits(CascadeModel& m, const std::vector<Sample>& samples, Mode mode,
                    int threads) {
  if (samples.empty()) throw ValidationError("no samples to evaluate");
  if (mode == Mode::train) threads = 1;  // running statistics are a shared write
  const int classes = m.head.classes;
  Tensor logits({static_cast<int>(samples.size()), classes});
  std::vector<std::pair<size_t, size_t>> chunks;
  for (size_t lo = 0; lo < samples.size(); lo += kEvalChunk)
    chunks.emplace_back(lo, std::min(samples.size(), lo + kEvalChunk));

  auto run_chunk = [&](size_t ci) {
    const auto [lo, hi] = chunks[ci];
    Tape t;
    std::vector<Var> pv = bind_params(t, m);
    Var out = forward(t, m, pv, stack_features(samples, lo, hi), mode);
    const Tensor& v = t.val(out);
    for (size_t i = lo; i < hi; ++i)
      for (int j = 0; j < classes; ++j)
        logits.at(static_cast<int>(i), j) = v.at(static_cast<int>(i - lo), j);
  };

  if (threads <= 1 || chunks.size() == 1) {
    for (size_t ci = 0; ci < chunks.size(); ++ci) run_chunk(ci);
  } else {
    const int workers = std::min<int>(threads, static_cast<int>(chunks.size()));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (size_t ci = static_cast<size_t>(w); ci < chunks.size();
             ci += static_cast<size_t>(workers))
          run_chunk(ci);
      });
    for (auto& th : pool) th.join();
  }
  return logits;
}

double model_metric(CascadeModel& m, const std::vector<Sample>& samples, int threads) {
  Tensor logits = model_logits(m, samples, Mode::eval, threads);
  if (m.cfg.task == "multi_label")
    return mean_average_precision(logits, multi_hot_targets(samples, m.cfg.dataset.vocab)).map;
  std::vector<int> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.label);
  return accuracy(logits, labels);
}

RobustnessReport permutation_robustness(CascadeModel& m, const Dataset& data,
                                        const std::vector<Protocol>& protocols,
                                        int perm_seeds, int threads) {
  if (perm_seeds < 1) throw ConfigError("need at least one permutation seed");
  RobustnessReport report;
  report.uniform_metric = model_metric(m, data.test, threads);
  for (Protocol p : protocols) {
    ProtocolResult r;
    r.protocol = p;
    if (p == Protocol::uniform) {
      r.per_seed.assign(static_cast<size_t>(perm_seeds), report.uniform_metric);
    } else {
      const uint64_t stream = p == Protocol::coarse ? 0xC0A5 : 0xF14E;
      for (int s = 0; s < perm_seeds; ++s) {
        std::vector<Sample> permuted;
        permuted.reserve(data.test.size());
        for (size_t i = 0; i < data.test.size(); ++i) {
          Rng rng = make_rng(derive_seed(data.cfg.seed, stream,
                                         static_cast<uint64_t>(s) * 1000003ull + i));
          permuted.push_back(apply_protocol(data.test[i], p, rng));
        }
        r.per_seed.push_back(model_metric(m, permuted, threads));
      }
    }
    r.mean_metric = std::accumulate(r.per_seed.begin(), r.per_seed.end(), 0.0) /
                    static_cast<double>(r.per_seed.size());
    r.drop = report.uniform_metric - r.mean_metric;
    report.protocols.push_back(std::move(r));
  }
  return report;
}

namespace {

// Per-timestep block costs under the multiply-add = 2 convention; n is the
// block's input length.
int64_t block_flops(Variant v, int64_t n, int64_t c, int64_t cr, int64_t t, int64_t m,
                    int64_t mv) {
  const int64_t bottleneck = 4 * c * cr + cr + 4 * c;  // reduce+recover+residual+norm
  switch (v) {
    case Variant::pic:
      return n * (bottleneck + 2 * m * cr + 2 * m * mv + mv + 2 * mv * cr);
    case Variant::pic_ordered:
      return n * (bottleneck + 2 * m * t * cr + 2 * m * cr);
    case Variant::pic_inferred:
      return n * (bottleneck + 4 * t * cr * cr + 4 * t * cr + 2 * t * t * cr +
                  2 * t * t + t);
    case Variant::temporal_conv:
      return n * (2 * t * c * c + 3 * c);
    case Variant::pic_global:
      return n * (2 * c * cr + cr + 2 * m * cr) + 2 * m * mv + mv + 2 * mv * cr +
             2 * cr * c + 4 * c;
  }
  throw ConfigError("unknown variant tag");
}

}  // namespace

int64_t analytic_param_count(const RunConfig& cfg, int depth) {
  const Variant v = variant_from_string(cfg.variant);
  return static_cast<int64_t>(depth) *
             block_param_count(v, cfg.channels, cfg.window, cfg.keys, cfg.values) +
         head_param_count(cfg.channels, cfg.class_count());
}

int64_t analytic_head_flops(const RunConfig& cfg) {
  const int64_t c = cfg.channels, k = cfg.class_count();
  return 2 * c * c + c + 2 * c + 2 * c * k + k;
}

int64_t analytic_flop_count(const RunConfig& cfg, int depth) {
  const Variant v = variant_from_string(cfg.variant);
  const int64_t c = cfg.channels, cr = cfg.reduced_channels();
  int64_t n = cfg.dataset.length;
  int64_t total = 0;
  for (int l = 0; l < depth; ++l) {
    total += block_flops(v, n, c, cr, cfg.window, cfg.keys, cfg.values);
    n = v == Variant::pic_global ? 1 : ceil_div(static_cast<int>(n), cfg.stride);
  }
  return total + analytic_head_flops(cfg);
}

int64_t instrumented_flop_count(const RunConfig& cfg, int depth) {
  RunConfig c = cfg;
  c.depth = depth;
  CascadeModel m = build_cascade(c);
  Rng rng = make_rng(derive_seed(c.seed, 0x9F0F, static_cast<uint64_t>(depth)));
  Tensor x({1, c.dataset.length, c.channels});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = gaussian(rng, 0.0, 1.0);
  {
    Tape warm;  // initialize running statistics, uncounted
    std::vector<Var> pv = bind_params(warm, m);
    forward(warm, m, pv, x, Mode::train);
  }
  flops::reset();
  flops::enabled = true;
  {
    Tape t;
    std::vector<Var> pv = bind_params(t, m);
    forward(t, m, pv, x, Mode::eval);
  }
  flops::enabled = false;
  return flops::count;
}

DepthProfile profile_depth(const RunConfig& cfg, int depth, int timing_runs) {
  if (depth < 0) throw ConfigError("profile depth must be >= 0");
  if (timing_runs < 1) throw ConfigError("profile needs at least one timing run");
  RunConfig c = cfg;
  c.depth = depth;
  DepthProfile row;
  row.variant = cfg.variant;
  row.depth = depth;
  row.params = analytic_param_count(c, depth);
  row.flops = analytic_flop_count(c, depth);

  CascadeModel m = build_cascade(c);
  Rng rng = make_rng(derive_seed(c.seed, 0x9F0F, static_cast<uint64_t>(depth)));
  Tensor x({1, c.dataset.length, c.channels});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = gaussian(rng, 0.0, 1.0);
  {
    Tape warm;
    std::vector<Var> pv = bind_params(warm, m);
    forward(warm, m, pv, x, Mode::train);
  }
  for (int i = 0; i < 3; ++i) eval_logits(m, x);
  std::vector<double> ms;
  ms.reserve(static_cast<size_t>(timing_runs));
  for (int i = 0; i < timing_runs; ++i) {
    const auto start = std::chrono::steady_clock::now();
    eval_logits(m, x);
    const auto stop = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
  }
  std::sort(ms.begin(), ms.end());
  const size_t mid = ms.size() / 2;
  row.median_ms = ms.size() % 2 ? ms[mid] : 0.5 * (ms[mid - 1] + ms[mid]);
  return row;
}

std::vector<DepthProfile> profile(const RunConfig& cfg, const std::vector<int>& depths,
                                  const std::vector<std::string>& variants,
                                  int timing_runs) {
  if (depths.empty()) throw ConfigError("profile needs at least one depth");
  std::vector<DepthProfile> rows;
  for (const std::string& v : variants) {
    RunConfig c = cfg;
    c.variant = v;
    c.validate();
    for (int d : depths) rows.push_back(profile_depth(c, d, timing_runs));
  }
  return rows;
}

RetrievalReport concept_retrieval(CascadeModel& m, const std::vector<Sample>& samples,
                                  int layer, int k) {
  if (layer < 0 || layer >= static_cast<int>(m.blocks.size()))
    throw ValidationError("layer index out of range");
  const Variant v = m.blocks[static_cast<size_t>(layer)].variant;
  if (v != Variant::pic && v != Variant::pic_global)
    throw ValidationError("layer '" + to_string(v) + "' has no stored keys to retrieve against");
  if (k < 1) throw ValidationError("retrieval needs k >= 1");
  if (samples.empty()) throw ValidationError("no samples to retrieve from");

  const int keys = m.blocks[static_cast<size_t>(layer)].m_keys;
  std::vector<std::vector<RetrievalHit>> hits(static_cast<size_t>(keys));
  int64_t windows = 0;
  for (size_t lo = 0; lo < samples.size(); lo += kEvalChunk) {
    const size_t hi = std::min(samples.size(), lo + kEvalChunk);
    Tape t;
    std::vector<Var> pv = bind_params(t, m);
    ForwardTrace trace;
    forward(t, m, pv, stack_features(samples, lo, hi), Mode::eval, &trace);
    const Tensor& sp = trace.sprime[static_cast<size_t>(layer)];
    if (sp.empty()) throw ValidationError("layer produced no similarity trace");
    const int b = sp.dim(0), n = sp.dim(1);
    windows += static_cast<int64_t>(b) * n;
    for (int s = 0; s < b; ++s)
      for (int ts = 0; ts < n; ++ts)
        for (int key = 0; key < keys; ++key)
          hits[static_cast<size_t>(key)].push_back(
              {static_cast<int>(lo) + s, ts, sp.at(s, ts, key)});
  }

  RetrievalReport report;
  report.layer = layer;
  if (k > windows) {
    report.truncated = true;
    report.note = "requested k=" + std::to_string(k) + " but only " +
                  std::to_string(windows) + " windows exist; truncated";
  }
  const auto keep = static_cast<size_t>(std::min<int64_t>(k, windows));
  for (auto& list : hits) {
    std::stable_sort(list.begin(), list.end(),
                     [](const RetrievalHit& a, const RetrievalHit& b) {
                       return a.score > b.score;
                     });
    list.resize(keep);
    report.per_key.push_back(std::move(list));
  }
  return report;
}

namespace {

std::ofstream open_csv(const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << std::setprecision(17);
  return os;
}

}  // namespace

void write_history_csv(const std::string& path,
                       const std::vector<std::array<double, 3>>& rows) {
  auto os = open_csv(path);
  os << "epoch,train_loss,eval_metric\n";
  for (const auto& r : rows)
    os << static_cast<int>(r[0]) << "," << r[1] << "," << r[2] << "\n";
  if (!os) throw IoError("write failed for '" + path + "'");
}

void write_profile_csv(const std::string& path, const std::vector<DepthProfile>& rows) {
  auto os = open_csv(path);
  os << "variant,depth,params,flops,median_ms\n";
  for (const auto& r : rows)
    os << r.variant << "," << r.depth << "," << r.params << "," << r.flops << ","
       << r.median_ms << "\n";
  if (!os) throw IoError("write failed for '" + path + "'");
}

void write_robustness_csv(const std::string& path, const RobustnessReport& report) {
  auto os = open_csv(path);
  os << "protocol,seed,metric,drop_vs_uniform\n";
  for (const auto& p : report.protocols)
    for (size_t s = 0; s < p.per_seed.size(); ++s)
      os << to_string(p.protocol) << "," << s << "," << p.per_seed[s] << ","
         << report.uniform_metric - p.per_seed[s] << "\n";
  if (!os) throw IoError("write failed for '" + path + "'");
}

void write_retrieval_csv(const std::string& path, const RetrievalReport& report) {
  auto os = open_csv(path);
  os << "key,rank,sample,timestep,score\n";
  for (size_t key = 0; key < report.per_key.size(); ++key)
    for (size_t rank = 0; rank < report.per_key[key].size(); ++rank) {
      const RetrievalHit& h = report.per_key[key][rank];
      os << key << "," << rank + 1 << "," << h.sample << "," << h.timestep << ","
         << h.score << "\n";
    }
  if (!os) throw IoError("write failed for '" + path + "'");
}

}  // namespace picnet
