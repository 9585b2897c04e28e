#include "picnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "picnet/common.hpp"
#include "picnet/rng.hpp"

namespace picnet {

namespace {

struct Snapshot {
  std::vector<Tensor> params;
  std::vector<BatchNormState> block_norms;
  BatchNormState head_norm;
};

Snapshot take_snapshot(const CascadeModel& m) {
  Snapshot s;
  s.params.reserve(m.params.size());
  for (const Param& p : m.params) s.params.push_back(p.value);
  s.block_norms = m.block_norms;
  s.head_norm = m.head_norm;
  return s;
}

void restore_snapshot(CascadeModel& m, const Snapshot& s) {
  for (size_t i = 0; i < m.params.size(); ++i) m.params[i].value = s.params[i];
  m.block_norms = s.block_norms;
  m.head_norm = s.head_norm;
}

Tensor batch_targets(const std::vector<Sample>& train, const std::vector<int>& idx,
                     size_t lo, size_t hi, int vocab) {
  std::vector<Sample> view;
  view.reserve(hi - lo);
  for (size_t i = lo; i < hi; ++i) view.push_back(train[static_cast<size_t>(idx[i])]);
  return multi_hot_targets(view, vocab);
}

}  // namespace

TrainResult train_model(CascadeModel& m, const Dataset& data, int threads,
                        OptState* resume) {
  const RunConfig& cfg = m.cfg;
  if (data.train.empty()) throw ValidationError("training split is empty");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be >= 1");

  const OptConfig oc = OptConfig::from_run(cfg);
  OptState local = make_opt_state(oc, m);
  OptState& st = resume ? *resume : local;
  if (resume && st.m1.size() != m.params.size())
    throw ValidationError("resumed optimizer state does not match the model");

  TrainResult result;
  if (cfg.epochs == 0) {
    result.note = "no training epochs requested";
    return result;
  }

  const bool multi = cfg.task == "multi_label";
  const size_t train_n = data.train.size();
  std::vector<int> order(train_n);
  Snapshot best = take_snapshot(m);  // fallback: the initial parameters
  bool have_best = false;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng =
        make_rng(derive_seed(cfg.seed, 0x5483, static_cast<uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    bool bad = false;
    for (size_t lo = 0; lo < train_n && !bad; lo += static_cast<size_t>(cfg.batch_size)) {
      const size_t hi = std::min(train_n, lo + static_cast<size_t>(cfg.batch_size));
      const int bsz = static_cast<int>(hi - lo);
      Tensor x({bsz, cfg.dataset.length, cfg.channels});
      std::vector<int> labels;
      labels.reserve(static_cast<size_t>(bsz));
      for (size_t i = lo; i < hi; ++i) {
        const Sample& s = data.train[static_cast<size_t>(order[i])];
        for (int64_t j = 0; j < s.features.numel(); ++j)
          x[static_cast<int64_t>(i - lo) * s.features.numel() + j] = s.features[j];
        labels.push_back(s.label);
      }

      try {
        Tape t;
        std::vector<Var> pv = bind_params(t, m);
        Var logits = forward(t, m, pv, x, Mode::train);
        Var loss = multi ? t.sigmoid_bce(logits,
                                         batch_targets(data.train, order, lo, hi,
                                                       cfg.dataset.vocab))
                         : t.softmax_cross_entropy(logits, labels);
        const double batch_loss = t.val(loss)[0];
        if (!std::isfinite(batch_loss)) {
          bad = true;
          break;
        }
        loss_sum += batch_loss * bsz;
        t.backward(loss);
        std::vector<Tensor> grads;
        grads.reserve(pv.size());
        for (Var v : pv) grads.push_back(t.grad(v));
        apply_step(oc, st, m, grads);
      } catch (const NumericError&) {
        bad = true;  // overflow in a forward pass or a non-finite gradient
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    if (!bad) {
      rec.train_loss = loss_sum / static_cast<double>(train_n);
      try {
        rec.eval_metric = model_metric(m, data.test, threads);
      } catch (const NumericError&) {
        bad = true;
      }
    }
    if (bad) {
      result.diverged = true;
      result.note = "divergence at epoch " + std::to_string(epoch) +
                    "; restored best parameters";
      break;
    }
    result.history.push_back(rec);

    if (!have_best || rec.eval_metric > result.best_metric) {
      result.best_metric = rec.eval_metric;
      result.best_epoch = epoch;
      best = take_snapshot(m);
      have_best = true;
    }
  }

  restore_snapshot(m, best);
  return result;
}

}  // namespace picnet
