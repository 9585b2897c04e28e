// Command-line front end: gen-data, train, eval, profile, verify.
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "picnet/evalbench.hpp"
#include "picnet/grad_check.hpp"
#include "picnet/optim.hpp"
#include "picnet/serialize.hpp"
#include "picnet/train.hpp"

namespace fs = std::filesystem;
using namespace picnet;

namespace {

int g_exit = 0;  // set by callbacks for non-exception failures

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(s);
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  for (const std::string& item : split_csv(s)) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError("not an integer: '" + item + "'");
    }
  }
  return out;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << text;
  if (!os) throw IoError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------- gen-data

void setup_gen_data(CLI::App& app) {
  auto* cmd = app.add_subcommand("gen-data", "Generate a synthetic activity dataset");
  auto cfg = std::make_shared<DatasetConfig>();
  auto out = std::make_shared<std::string>("dataset.picnet");
  cmd->add_option("--seed", cfg->seed, "dataset seed");
  cmd->add_option("--taxonomy", cfg->taxonomy, "disjoint | hierarchical");
  cmd->add_option("--classes", cfg->num_classes, "number of activity classes");
  cmd->add_option("--segments-per-class", cfg->segments_per_class, "segments per class");
  cmd->add_option("--actions-per-segment", cfg->actions_per_segment,
                  "unit-actions per segment");
  cmd->add_option("--vocab", cfg->vocab, "unit-action vocabulary size");
  cmd->add_option("--length", cfg->length, "timesteps per sample");
  cmd->add_option("--channels", cfg->channels, "feature channels");
  cmd->add_option("--noise-sigma", cfg->noise_sigma, "additive feature noise");
  cmd->add_option("--repeat-max", cfg->repeat_max, "per-segment action repeat cap");
  cmd->add_option("--micro-order", cfg->micro_order, "random | canonical");
  cmd->add_option("--train-samples", cfg->train_samples, "training sample count");
  cmd->add_option("--test-samples", cfg->test_samples, "test sample count");
  cmd->add_option("--out", *out, "output dataset path");
  cmd->callback([cfg, out] {
    Dataset ds = generate_dataset(*cfg);
    const fs::path parent = fs::path(*out).parent_path();
    if (!parent.empty()) ensure_dir(parent.string());
    save_dataset(*out, ds);
    std::cout << taxonomy_summary(ds.taxonomy);
    std::cout << "train " << ds.train.size() << " test " << ds.test.size() << "\n";
    std::cout << "wrote " << *out << " (checksum " << io::checksum_hex(io::file_checksum(*out))
              << ")\n";
  });
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  std::string config_path;
  std::string data_path;
  std::string out_dir;
  int threads = 1;
  // optional overrides; sentinel = untouched
  std::string variant, optimizer;
  int depth = -1, epochs = -1, batch_size = -1;
  double lr = -1.0;
  int64_t seed = -1;
};

void setup_train(CLI::App& app) {
  auto* cmd = app.add_subcommand("train", "Train a cascade and save the best model");
  auto a = std::make_shared<TrainArgs>();
  cmd->add_option("--config", a->config_path, "run config JSON path");
  cmd->add_option("--data", a->data_path,
                  "dataset file; generated from the config when omitted");
  cmd->add_option("--out-dir", a->out_dir, "artifact directory (overrides config)");
  cmd->add_option("--threads", a->threads, "evaluation worker threads")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--variant", a->variant, "layer variant override");
  cmd->add_option("--optimizer", a->optimizer, "optimizer override (sgd | adam)");
  cmd->add_option("--depth", a->depth, "cascade depth override")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--epochs", a->epochs, "epoch count override")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--batch-size", a->batch_size, "batch size override")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--lr", a->lr, "learning rate override")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--seed", a->seed, "run seed override")
      ->check(CLI::NonNegativeNumber);
  cmd->callback([a] {
    RunConfig cfg = a->config_path.empty() ? RunConfig{} : load_run_config(a->config_path);
    if (!a->variant.empty()) cfg.variant = a->variant;
    if (!a->optimizer.empty()) {
      const bool lr_was_default =
          cfg.lr == (cfg.optimizer == "adam" ? 0.01 : 0.1) && a->lr < 0;
      cfg.optimizer = a->optimizer;
      if (lr_was_default) cfg.lr = cfg.optimizer == "adam" ? 0.01 : 0.1;
    }
    if (a->depth >= 0) cfg.depth = a->depth;
    if (a->epochs >= 0) cfg.epochs = a->epochs;
    if (a->batch_size >= 0) cfg.batch_size = a->batch_size;
    if (a->lr >= 0) cfg.lr = a->lr;
    if (a->seed >= 0) cfg.seed = static_cast<uint64_t>(a->seed);
    if (!a->out_dir.empty()) cfg.out_dir = a->out_dir;
    cfg.validate();

    Dataset data = a->data_path.empty() ? generate_dataset(cfg.dataset)
                                        : load_dataset(a->data_path);
    if (!a->data_path.empty()) {
      cfg.dataset = data.cfg;  // the file is authoritative for data geometry
      cfg.channels = data.cfg.channels;
      cfg.validate();
    }

    const std::string dir = resolve_out_dir(cfg);
    ensure_dir(dir);
    write_text(dir + "/config.json", to_canonical_json(cfg));

    CascadeModel model = build_cascade(cfg);
    std::cout << "variant " << cfg.variant << " depth " << cfg.depth << " params "
              << model_param_count(model) << "\n";
    OptState opt = make_opt_state(OptConfig::from_run(cfg), model);
    TrainResult res = train_model(model, data, a->threads, &opt);

    std::vector<std::array<double, 3>> rows;
    for (const EpochRecord& r : res.history) {
      rows.push_back({static_cast<double>(r.epoch), r.train_loss, r.eval_metric});
      std::cout << "epoch " << r.epoch << " train_loss " << r.train_loss
                << " eval_metric " << r.eval_metric << "\n";
    }
    write_history_csv(dir + "/history.csv", rows);
    save_model(dir + "/model.picnet", model);
    save_opt_state(dir + "/optimizer.picnet", opt);

    if (res.diverged) {
      std::cerr << "training diverged: " << res.note << "\n";
      g_exit = 1;
      return;
    }
    std::cout << "best_epoch " << res.best_epoch << " best_metric " << res.best_metric
              << "\n";
    std::cout << "wrote " << dir << "/model.picnet\n";
  });
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  std::string model_path, data_path, out_dir;
  int threads = 1;
  bool robustness = false;
  std::string protocols = "uniform,coarse,fine";
  int perm_seeds = 5;
  int retrieval_layer = -1;
  int retrieval_k = 10;
};

void setup_eval(CLI::App& app) {
  auto* cmd = app.add_subcommand("eval", "Evaluate a saved model on a dataset");
  auto a = std::make_shared<EvalArgs>();
  cmd->add_option("--model", a->model_path, "model file")->required();
  cmd->add_option("--data", a->data_path, "dataset file")->required();
  cmd->add_option("--out-dir", a->out_dir, "directory for CSV reports");
  cmd->add_option("--threads", a->threads, "evaluation worker threads");
  cmd->add_flag("--robustness", a->robustness, "run the permutation protocols");
  cmd->add_option("--protocols", a->protocols, "comma list: uniform,coarse,fine");
  cmd->add_option("--perm-seeds", a->perm_seeds, "permutation seeds per protocol");
  cmd->add_option("--retrieval-layer", a->retrieval_layer,
                  "emit concept retrieval for this layer (-1 disables)");
  cmd->add_option("--retrieval-k", a->retrieval_k, "top-k windows per key");
  cmd->callback([a] {
    CascadeModel model = load_model(a->model_path);
    Dataset data = load_dataset(a->data_path);

    const int want = model.cfg.task == "multi_label" ? data.cfg.vocab
                                                     : data.cfg.num_classes;
    if (model.cfg.channels != data.cfg.channels || model.head.classes != want) {
      std::ostringstream msg;
      msg << "model/dataset mismatch: model expects channels=" << model.cfg.channels
          << " classes=" << model.head.classes << ", dataset provides channels="
          << data.cfg.channels << " classes=" << want << "\nmodel config:\n"
          << to_canonical_json(model.cfg) << "dataset config:\n"
          << dataset_config_json(data.cfg);
      throw CompatibilityError(msg.str());
    }

    RunConfig out_cfg = model.cfg;
    if (!a->out_dir.empty()) out_cfg.out_dir = a->out_dir;
    const std::string dir = resolve_out_dir(out_cfg);

    const char* metric_name =
        model.cfg.task == "multi_label" ? "mAP" : "accuracy";
    std::cout << metric_name << " "
              << model_metric(model, data.test, a->threads) << "\n";

    if (a->robustness) {
      std::vector<Protocol> protocols;
      for (const std::string& p : split_csv(a->protocols))
        protocols.push_back(protocol_from_string(p));
      RobustnessReport rep =
          permutation_robustness(model, data, protocols, a->perm_seeds, a->threads);
      for (const ProtocolResult& r : rep.protocols)
        std::cout << to_string(r.protocol) << " mean " << r.mean_metric << " drop "
                  << r.drop << "\n";
      ensure_dir(dir);
      write_robustness_csv(dir + "/robustness.csv", rep);
      std::cout << "wrote " << dir << "/robustness.csv\n";
    }

    if (a->retrieval_layer >= 0) {
      RetrievalReport rep =
          concept_retrieval(model, data.test, a->retrieval_layer, a->retrieval_k);
      if (rep.truncated) std::cout << rep.note << "\n";
      ensure_dir(dir);
      write_retrieval_csv(dir + "/retrieval.csv", rep);
      std::cout << "wrote " << dir << "/retrieval.csv\n";
    }
  });
}

// ----------------------------------------------------------------- profile

struct ProfileArgs {
  std::string config_path, out_dir;
  std::string depths = "1,2,3,4";
  std::string variants = "pic,pic_ordered,pic_global,pic_inferred,temporal_conv";
  int timing_runs = 21;
};

void setup_profile(CLI::App& app) {
  auto* cmd =
      app.add_subcommand("profile", "Parameter/FLOP/latency table across depths");
  auto a = std::make_shared<ProfileArgs>();
  cmd->add_option("--config", a->config_path, "run config JSON path");
  cmd->add_option("--depths", a->depths, "comma list of cascade depths");
  cmd->add_option("--variants", a->variants, "comma list of layer variants");
  cmd->add_option("--timing-runs", a->timing_runs, "timed forward passes per row");
  cmd->add_option("--out-dir", a->out_dir, "directory for profile.csv");
  cmd->callback([a] {
    RunConfig cfg = a->config_path.empty() ? RunConfig{} : load_run_config(a->config_path);
    if (!a->out_dir.empty()) cfg.out_dir = a->out_dir;
    const std::vector<DepthProfile> rows =
        profile(cfg, split_ints(a->depths), split_csv(a->variants), a->timing_runs);
    std::cout << std::left << std::setw(16) << "variant" << std::right << std::setw(7)
              << "depth" << std::setw(12) << "params" << std::setw(14) << "flops"
              << std::setw(12) << "median_ms" << "\n";
    for (const DepthProfile& r : rows)
      std::cout << std::left << std::setw(16) << r.variant << std::right << std::setw(7)
                << r.depth << std::setw(12) << r.params << std::setw(14) << r.flops
                << std::setw(12) << std::fixed << std::setprecision(3) << r.median_ms
                << std::defaultfloat << "\n";
    const std::string dir = resolve_out_dir(cfg);
    ensure_dir(dir);
    write_profile_csv(dir + "/profile.csv", rows);
    std::cout << "wrote " << dir << "/profile.csv\n";
  });
}

// ------------------------------------------------------------------ verify

bool report(const std::string& name, bool ok, const std::string& detail = "") {
  if (ok)
    std::cout << "PASS " << name << "\n";
  else
    std::cout << "FAIL " << name << (detail.empty() ? "" : ": " + detail) << "\n";
  return ok;
}

RunConfig tiny_config(const std::string& variant) {
  RunConfig cfg;
  cfg.variant = variant;
  cfg.depth = 1;
  cfg.channels = 8;
  cfg.window = 3;
  cfg.keys = 2;
  cfg.values = 2;
  cfg.dataset.channels = 8;
  cfg.dataset.length = 6;
  cfg.dataset.num_classes = 3;
  cfg.dataset.vocab = 24;
  cfg.dataset.segments_per_class = 2;
  cfg.dataset.actions_per_segment = 2;
  return cfg;
}

bool check_window_invariance() {
  RunConfig cfg = tiny_config("pic");
  cfg.window = 4;
  CascadeModel m = build_cascade(cfg);
  Rng rng = make_rng(41);
  randomize_all_parameters(m, rng);
  const BlockParams& b = m.blocks[0];

  Tensor w({4, cfg.reduced_channels()});
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = gaussian(rng);
  Tensor base;
  std::vector<int> perm = {0, 1, 2, 3};
  double worst = 0.0;
  do {
    Tensor shuffled({4, cfg.reduced_channels()});
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < cfg.reduced_channels(); ++c)
        shuffled.at(r, c) = w.at(perm[static_cast<size_t>(r)], c);
    Tape t;
    std::vector<Var> pv = bind_params(t, m);
    Var y = pic_window(t, t.leaf(shuffled), pv[static_cast<size_t>(b.keys)],
                       pv[static_cast<size_t>(b.values)],
                       pv[static_cast<size_t>(b.remap_w)],
                       pv[static_cast<size_t>(b.remap_b)]);
    if (base.empty()) {
      base = t.val(y);
    } else {
      for (int64_t i = 0; i < base.numel(); ++i)
        worst = std::max(worst, std::abs(t.val(y)[i] - base[i]));
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return report("window-permutation-invariance", worst <= 1e-12,
                "max deviation " + std::to_string(worst));
}

bool check_rowmax_tiebreak() {
  Tape t;
  Var x = t.leaf(Tensor({1, 3}, {5.0, 5.0, 5.0}));
  t.backward(t.row_max(x));
  const Tensor& g = t.grad(x);
  const bool ok = g.at(0, 0) == 1.0 && g.at(0, 1) == 0.0 && g.at(0, 2) == 0.0;
  return report("row-max-tiebreak", ok, "gradient not one-hot at the lowest index");
}

bool check_grads(const std::string& variant) {
  RunConfig cfg = tiny_config(variant);
  CascadeModel m = build_cascade(cfg);
  Rng rng = make_rng(17);
  randomize_all_parameters(m, rng);
  Tensor x({2, cfg.dataset.length, cfg.channels});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = gaussian(rng, 0.0, 0.5);
  const std::vector<int> labels = {0, 2};

  auto loss = [&]() {
    Tape t;
    std::vector<Var> pv = bind_params(t, m);
    return t.val(t.softmax_cross_entropy(forward(t, m, pv, x, Mode::train), labels))[0];
  };

  std::vector<std::pair<std::string, Tensor*>> tensors;
  std::vector<Tensor> analytic;
  {
    Tape t;
    std::vector<Var> pv = bind_params(t, m);
    t.backward(t.softmax_cross_entropy(forward(t, m, pv, x, Mode::train), labels));
    for (size_t i = 0; i < m.params.size(); ++i) {
      tensors.emplace_back(m.params[i].name, &m.params[i].value);
      analytic.push_back(t.grad(pv[i]));
    }
  }
  GradCheckOptions opts;
  opts.max_entries_per_tensor = 3;
  opts.sample_seed = 5;
  GradCheckReport rep = grad_check(tensors, loss, analytic, opts);
  return report("grad-check-" + variant, rep.ok(), rep.summary());
}

bool check_map_oracle() {
  Tensor scores({4, 2}, {0.9, 0.1, 0.8, 0.4, 0.7, 0.3, 0.6, 0.2});
  Tensor targets({4, 2}, {1, 0, 0, 0, 0, 0, 1, 0});
  ApReport rep = mean_average_precision(scores, targets);
  const bool ok = std::abs(rep.map - 0.75) <= 1e-12 && rep.excluded ==
                      std::vector<int>{1};
  return report("map-oracle", ok, "expected mAP 0.75 with class 1 excluded");
}

bool check_flops() {
  RunConfig cfg = tiny_config("pic");
  cfg.channels = 16;
  cfg.dataset.channels = 16;
  cfg.keys = 4;
  cfg.values = 4;
  cfg.dataset.length = 8;
  const int64_t analytic = analytic_flop_count(cfg, 1);
  const int64_t measured = instrumented_flop_count(cfg, 1);
  return report("flop-count", analytic == measured,
                "analytic " + std::to_string(analytic) + " vs instrumented " +
                    std::to_string(measured));
}

bool check_sgd() {
  RunConfig cfg = tiny_config("pic");
  cfg.optimizer = "sgd";
  cfg.lr = 0.05;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0;
  CascadeModel m = build_cascade(cfg);
  OptConfig oc = OptConfig::from_run(cfg);
  OptState st = make_opt_state(oc, m);
  const Tensor before = m.params[0].value;
  std::vector<Tensor> grads;
  for (const Param& p : m.params) {
    Tensor g(p.value.shape());
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = 1.0;
    grads.push_back(g);
  }
  apply_step(oc, st, m, grads);
  apply_step(oc, st, m, grads);
  // v1 = 1, v2 = 0.9 + 1; replay the recurrence with the same operation order
  double v = 0.0, shift = 0.0;
  for (int i = 0; i < 2; ++i) {
    v = oc.momentum * v + 1.0;
    shift += oc.lr * v;
  }
  double worst = 0.0;
  for (int64_t i = 0; i < before.numel(); ++i)
    worst = std::max(worst,
                     std::abs(m.params[0].value[i] - (before[i] - shift)));
  return report("sgd-recurrence", worst <= 1e-15,
                "max deviation " + std::to_string(worst));
}

bool check_adam() {
  RunConfig cfg = tiny_config("pic");
  cfg.optimizer = "adam";
  cfg.lr = 0.01;
  cfg.weight_decay = 0.0;
  CascadeModel m = build_cascade(cfg);
  OptConfig oc = OptConfig::from_run(cfg);
  OptState st = make_opt_state(oc, m);
  const double p0 = m.params[0].value[0];
  std::vector<Tensor> grads;
  for (const Param& p : m.params) {
    Tensor g(p.value.shape());
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = 0.5;
    grads.push_back(g);
  }
  double m1 = 0.0, m2 = 0.0, p = p0;
  for (int step = 1; step <= 3; ++step) {
    apply_step(oc, st, m, grads);
    m1 = oc.beta1 * m1 + (1 - oc.beta1) * 0.5;
    m2 = oc.beta2 * m2 + (1 - oc.beta2) * 0.25;
    const double mh = m1 / (1 - std::pow(oc.beta1, step));
    const double vh = m2 / (1 - std::pow(oc.beta2, step));
    p -= oc.lr * mh / (std::sqrt(vh) + oc.epsilon);
  }
  const double err = std::abs(m.params[0].value[0] - p);
  return report("adam-recurrence", err <= 1e-12, "deviation " + std::to_string(err));
}

bool check_bn_moments() {
  Tape t;
  Tensor x({4, 2}, {1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0});
  BatchNormState state;
  Var gamma = t.leaf(Tensor({2}, {1.0, 1.0}));
  Var beta = t.leaf(Tensor({2}, {0.0, 0.0}));
  Var y = t.batch_norm(t.leaf(x), gamma, beta, state, Mode::train);
  const double mean0 = 2.5, var0 = 1.25;  // biased
  double worst = 0.0;
  for (int r = 0; r < 4; ++r) {
    const double want = (x.at(r, 0) - mean0) / std::sqrt(var0 + state.epsilon);
    worst = std::max(worst, std::abs(t.val(y).at(r, 0) - want));
  }
  worst = std::max(worst, std::abs(state.running_mean[0] - mean0));
  worst = std::max(worst, std::abs(state.running_var[0] - var0));
  return report("batch-norm-moments", worst <= 1e-12,
                "max deviation " + std::to_string(worst));
}

bool check_identity_residual() {
  RunConfig cfg = tiny_config("pic");
  cfg.depth = 2;
  CascadeModel m = build_cascade(cfg);  // fresh: recover maps are zero
  Rng rng = make_rng(99);
  Tensor x({2, cfg.dataset.length, cfg.channels});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = gaussian(rng);
  Tape t;
  std::vector<Var> pv = bind_params(t, m);
  ForwardTrace trace;
  forward(t, m, pv, x, Mode::train, &trace);
  for (const Tensor& branch : trace.branch)
    for (int64_t i = 0; i < branch.numel(); ++i)
      if (branch[i] != 0.0)
        return report("identity-residual", false, "fresh residual branch is non-zero");
  return report("identity-residual", true);
}

void setup_verify(CLI::App& app) {
  auto* cmd = app.add_subcommand("verify", "Fast numerical self-checks");
  auto fault = std::make_shared<std::string>();
  cmd->add_option("--inject-fault", *fault, "test hook: rowmax-tiebreak")
      ->group("");  // hidden
  cmd->callback([fault] {
    if (!fault->empty()) {
      if (*fault == "rowmax-tiebreak")
        testing::rowmax_tiebreak_highest = true;
      else
        throw ConfigError("unknown fault '" + *fault + "'");
    }
    bool ok = true;
    ok &= check_window_invariance();
    ok &= check_rowmax_tiebreak();
    for (const char* v :
         {"pic", "pic_ordered", "pic_global", "pic_inferred", "temporal_conv"})
      ok &= check_grads(v);
    ok &= check_map_oracle();
    ok &= check_flops();
    ok &= check_sgd();
    ok &= check_adam();
    ok &= check_bn_moments();
    ok &= check_identity_residual();
    std::cout << (ok ? "verify: all checks passed" : "verify: FAILURES above") << "\n";
    if (!ok) g_exit = 1;
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Permutation-invariant temporal cascade toolkit"};
  app.require_subcommand(1);
  setup_gen_data(app);
  setup_train(app);
  setup_eval(app);
  setup_profile(app);
  setup_verify(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == static_cast<int>(CLI::ExitCodes::Success) ? 0 : 2;
  } catch (const CompatibilityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return g_exit;
}
