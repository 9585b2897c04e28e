#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "picnet/evalbench.hpp"
#include "picnet/optim.hpp"
#include "picnet/train.hpp"

using namespace picnet;

namespace {

Tensor randn(Rng& rng, std::vector<int> shape, double sigma = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = gaussian(rng, 0.0, sigma);
  return t;
}

RunConfig net_config(const std::string& variant, int depth) {
  RunConfig cfg;
  cfg.variant = variant;
  cfg.depth = depth;
  cfg.channels = 8;
  cfg.window = 3;
  cfg.keys = 4;
  cfg.values = 4;
  cfg.dataset.channels = 8;
  cfg.dataset.length = 32;
  cfg.dataset.num_classes = 5;
  cfg.dataset.vocab = 60;
  return cfg;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

DatasetConfig toy_data_config() {
  DatasetConfig d;
  d.seed = 21;
  d.num_classes = 3;
  d.segments_per_class = 2;
  d.actions_per_segment = 2;
  d.vocab = 12;
  d.length = 16;
  d.channels = 8;
  d.noise_sigma = 0.3;
  d.train_samples = 36;
  d.test_samples = 18;
  return d;
}

RunConfig toy_run_config() {
  RunConfig cfg;
  cfg.seed = 5;
  cfg.variant = "pic";
  cfg.depth = 1;
  cfg.window = 3;
  cfg.keys = 4;
  cfg.values = 4;
  cfg.channels = 8;
  cfg.dataset = toy_data_config();
  cfg.optimizer = "adam";
  cfg.lr = 0.01;
  cfg.epochs = 10;
  cfg.batch_size = 12;
  return cfg;
}

}  // namespace

TEST_CASE("cascade halves the sequence per block; the global variant collapses it") {
  Rng rng = make_rng(211);
  RunConfig cfg = net_config("pic", 4);
  CascadeModel m = build_cascade(cfg);
  Tensor x = randn(rng, {2, 32, 8});
  Tape t;
  std::vector<Var> pv = bind_params(t, m);
  ForwardTrace trace;
  Var logits = forward(t, m, pv, x, Mode::train, &trace);
  REQUIRE(trace.block_in.size() == 4);
  CHECK(trace.block_in[0].dim(1) == 32);
  CHECK(trace.block_in[1].dim(1) == 16);
  CHECK(trace.block_in[2].dim(1) == 8);
  CHECK(trace.block_in[3].dim(1) == 4);
  CHECK(t.val(logits).shape() == std::vector<int>{2, 5});

  RunConfig gcfg = net_config("pic_global", 3);
  CascadeModel g = build_cascade(gcfg);
  Tape tg;
  std::vector<Var> pvg = bind_params(tg, g);
  ForwardTrace gtrace;
  forward(tg, g, pvg, x, Mode::train, &gtrace);
  CHECK(gtrace.block_in[0].dim(1) == 32);
  CHECK(gtrace.block_in[1].dim(1) == 1);
  CHECK(gtrace.block_in[2].dim(1) == 1);
}

TEST_CASE("a depth-0 cascade is just the classifier head") {
  Rng rng = make_rng(223);
  RunConfig cfg = net_config("pic", 0);
  CascadeModel m = build_cascade(cfg);
  CHECK(m.blocks.empty());
  CHECK(model_param_count(m) == head_param_count(8, 5));
  Tape t;
  std::vector<Var> pv = bind_params(t, m);
  Var logits = forward(t, m, pv, randn(rng, {3, 32, 8}), Mode::train);
  CHECK(t.val(logits).shape() == std::vector<int>{3, 5});
}

TEST_CASE("eval-mode forward is per-sample: batched equals singleton bitwise") {
  Rng rng = make_rng(227);
  RunConfig cfg = net_config("pic", 2);
  CascadeModel m = build_cascade(cfg);
  randomize_all_parameters(m, rng);
  Tensor batch = randn(rng, {3, 32, 8});
  {
    Tape warm;
    std::vector<Var> pv = bind_params(warm, m);
    forward(warm, m, pv, batch, Mode::train);
  }
  Tensor all = eval_logits(m, batch);
  for (int b = 0; b < 3; ++b) {
    Tensor one({1, 32, 8});
    for (int64_t i = 0; i < one.numel(); ++i) one[i] = batch[b * one.numel() + i];
    Tensor lone = eval_logits(m, one);
    for (int j = 0; j < 5; ++j) CHECK(lone.at(0, j) == all.at(b, j));
  }
}

TEST_CASE("eval mode leaves running statistics untouched") {
  Rng rng = make_rng(229);
  RunConfig cfg = net_config("pic", 2);
  CascadeModel m = build_cascade(cfg);
  Tensor x = randn(rng, {2, 32, 8});
  {
    Tape warm;
    std::vector<Var> pv = bind_params(warm, m);
    forward(warm, m, pv, x, Mode::train);
  }
  const Tensor mean_before = m.block_norms[0].running_mean;
  Tensor a = eval_logits(m, x);
  Tensor b = eval_logits(m, x);
  CHECK(a == b);
  CHECK(m.block_norms[0].running_mean == mean_before);
}

TEST_CASE("eval before any training forward fails cleanly") {
  Rng rng = make_rng(231);
  RunConfig cfg = net_config("pic", 1);
  CascadeModel m = build_cascade(cfg);
  Tensor x = randn(rng, {1, 32, 8});
  CHECK_THROWS_AS(eval_logits(m, x), ValidationError);
}

TEST_CASE("weight decay touches weights only; lr 0 and zero grads are no-ops") {
  RunConfig cfg = net_config("pic", 1);
  cfg.weight_decay = 0.1;
  CascadeModel m = build_cascade(cfg);
  Rng rng = make_rng(233);
  randomize_all_parameters(m, rng);
  OptConfig oc = OptConfig::from_run(cfg);

  std::vector<Tensor> zero_grads;
  for (const Param& p : m.params) zero_grads.push_back(Tensor::zeros_like(p.value));

  SUBCASE("sgd with decay shrinks weights, leaves bias and norm params alone") {
    OptState st = make_opt_state(oc, m);
    std::vector<Tensor> before;
    for (const Param& p : m.params) before.push_back(p.value);
    apply_step(oc, st, m, zero_grads);
    for (size_t i = 0; i < m.params.size(); ++i) {
      if (m.params[i].kind == ParamKind::weight) {
        for (int64_t j = 0; j < before[i].numel(); ++j)
          if (before[i][j] != 0.0) CHECK(std::abs(m.params[i].value[j]) < std::abs(before[i][j]));
      } else {
        CHECK(m.params[i].value == before[i]);
      }
    }
  }
  SUBCASE("lr 0 never moves parameters") {
    OptConfig zero_lr = oc;
    zero_lr.lr = 0.0;
    OptState st = make_opt_state(zero_lr, m);
    std::vector<Tensor> grads;
    for (const Param& p : m.params) grads.push_back(randn(rng, p.value.shape()));
    std::vector<Tensor> before;
    for (const Param& p : m.params) before.push_back(p.value);
    apply_step(zero_lr, st, m, grads);
    for (size_t i = 0; i < m.params.size(); ++i) CHECK(m.params[i].value == before[i]);
  }
  SUBCASE("adam with zero gradients and no decay is a no-op") {
    OptConfig adam = oc;
    adam.kind = "adam";
    adam.weight_decay = 0.0;
    OptState st = make_opt_state(adam, m);
    std::vector<Tensor> before;
    for (const Param& p : m.params) before.push_back(p.value);
    apply_step(adam, st, m, zero_grads);
    for (size_t i = 0; i < m.params.size(); ++i) CHECK(m.params[i].value == before[i]);
  }
}

TEST_CASE("non-finite gradients abort the step and name the parameter") {
  RunConfig cfg = net_config("pic", 1);
  CascadeModel m = build_cascade(cfg);
  OptConfig oc = OptConfig::from_run(cfg);
  OptState st = make_opt_state(oc, m);
  std::vector<Tensor> grads;
  for (const Param& p : m.params) grads.push_back(Tensor::zeros_like(p.value));
  grads[3][0] = std::nan("");
  const Tensor before = m.params[0].value;
  try {
    apply_step(oc, st, m, grads);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find(m.params[3].name) != std::string::npos);
  }
  CHECK(m.params[0].value == before);  // nothing was mutated
}

TEST_CASE("global-norm clipping rescales exactly when over the threshold") {
  RunConfig cfg = net_config("pic", 0);
  cfg.weight_decay = 0.0;
  cfg.clip_norm = 1.0;
  cfg.lr = 1.0;
  cfg.momentum = 0.0;
  CascadeModel m = build_cascade(cfg);
  OptConfig oc = OptConfig::from_run(cfg);
  OptState st = make_opt_state(oc, m);
  std::vector<Tensor> grads;
  double sq = 0.0;
  Rng rng = make_rng(239);
  for (const Param& p : m.params) {
    Tensor g = randn(rng, p.value.shape());
    for (int64_t j = 0; j < g.numel(); ++j) sq += g[j] * g[j];
    grads.push_back(g);
  }
  const double norm = std::sqrt(sq);
  REQUIRE(norm > 1.0);
  std::vector<Tensor> before;
  for (const Param& p : m.params) before.push_back(p.value);
  apply_step(oc, st, m, grads);
  for (size_t i = 0; i < m.params.size(); ++i)
    for (int64_t j = 0; j < grads[i].numel(); ++j)
      CHECK(m.params[i].value[j] ==
            doctest::Approx(before[i][j] - grads[i][j] / norm).epsilon(1e-12));
}

TEST_CASE("optimizer state round-trips bitwise") {
  RunConfig cfg = net_config("pic", 1);
  cfg.optimizer = "adam";
  CascadeModel m = build_cascade(cfg);
  OptConfig oc = OptConfig::from_run(cfg);
  OptState st = make_opt_state(oc, m);
  Rng rng = make_rng(241);
  std::vector<Tensor> grads;
  for (const Param& p : m.params) grads.push_back(randn(rng, p.value.shape()));
  apply_step(oc, st, m, grads);
  apply_step(oc, st, m, grads);

  const std::string path = temp_path("picnet_opt_state_test.bin");
  save_opt_state(path, st);
  OptState back = load_opt_state(path);
  CHECK(back.kind == st.kind);
  CHECK(back.step == st.step);
  REQUIRE(back.m1.size() == st.m1.size());
  REQUIRE(back.m2.size() == st.m2.size());
  for (size_t i = 0; i < st.m1.size(); ++i) CHECK(back.m1[i] == st.m1[i]);
  for (size_t i = 0; i < st.m2.size(); ++i) CHECK(back.m2[i] == st.m2[i]);
  std::remove(path.c_str());
}

TEST_CASE("model save/load round-trips bitwise and rejects foreign files") {
  Rng rng = make_rng(251);
  RunConfig cfg = net_config("pic", 2);
  CascadeModel m = build_cascade(cfg);
  randomize_all_parameters(m, rng);
  Tensor x = randn(rng, {2, 32, 8});
  {
    Tape warm;
    std::vector<Var> pv = bind_params(warm, m);
    forward(warm, m, pv, x, Mode::train);
  }
  const std::string path = temp_path("picnet_model_test.bin");
  save_model(path, m);
  CascadeModel back = load_model(path);
  CHECK(back.cfg.variant == "pic");
  REQUIRE(back.params.size() == m.params.size());
  for (size_t i = 0; i < m.params.size(); ++i) {
    CHECK(back.params[i].name == m.params[i].name);
    CHECK(back.params[i].value == m.params[i].value);
  }
  CHECK(back.block_norms[0].running_mean == m.block_norms[0].running_mean);
  CHECK(eval_logits(back, x) == eval_logits(m, x));

  SUBCASE("an unknown format version is a compatibility error") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);  // version field sits right after the magic
    const uint32_t bad = 999;
    f.write(reinterpret_cast<const char*>(&bad), sizeof(bad));
    f.close();
    CHECK_THROWS_AS(load_model(path), CompatibilityError);
  }
  SUBCASE("a truncated file is an I/O error") {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    in.close();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    CHECK_THROWS_AS(load_model(path), IoError);
  }
  std::remove(path.c_str());
}

TEST_CASE("training separates an easy synthetic task") {
  RunConfig cfg = toy_run_config();
  Dataset data = generate_dataset(cfg.dataset);
  CascadeModel m = build_cascade(cfg);
  TrainResult res = train_model(m, data);
  REQUIRE(res.history.size() == 10);
  CHECK(!res.diverged);
  CHECK(res.best_metric >= 0.9);
  CHECK(model_metric(m, data.test) == res.best_metric);  // best snapshot restored
}

TEST_CASE("full-batch gradient descent decreases the loss monotonically") {
  RunConfig cfg = toy_run_config();
  cfg.optimizer = "sgd";
  cfg.lr = 0.02;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  cfg.epochs = 5;
  cfg.batch_size = cfg.dataset.train_samples;  // one step per epoch
  Dataset data = generate_dataset(cfg.dataset);
  CascadeModel m = build_cascade(cfg);
  TrainResult res = train_model(m, data);
  REQUIRE(res.history.size() == 5);
  for (size_t i = 1; i < res.history.size(); ++i)
    CHECK(res.history[i].train_loss < res.history[i - 1].train_loss);
}

TEST_CASE("the same seed reproduces the training history exactly") {
  RunConfig cfg = toy_run_config();
  cfg.epochs = 3;
  Dataset data = generate_dataset(cfg.dataset);

  CascadeModel m1 = build_cascade(cfg);
  TrainResult r1 = train_model(m1, data);
  CascadeModel m2 = build_cascade(cfg);
  TrainResult r2 = train_model(m2, data, /*threads=*/2);

  REQUIRE(r1.history.size() == r2.history.size());
  for (size_t i = 0; i < r1.history.size(); ++i) {
    CHECK(r1.history[i].train_loss == r2.history[i].train_loss);
    CHECK(r1.history[i].eval_metric == r2.history[i].eval_metric);
  }
  for (size_t i = 0; i < m1.params.size(); ++i)
    CHECK(m1.params[i].value == m2.params[i].value);
}

TEST_CASE("an exploding learning rate is caught and rolled back") {
  RunConfig cfg = toy_run_config();
  cfg.optimizer = "sgd";
  cfg.lr = 1e9;
  cfg.epochs = 6;
  Dataset data = generate_dataset(cfg.dataset);
  CascadeModel m = build_cascade(cfg);
  TrainResult res = train_model(m, data);
  CHECK(res.diverged);
  CHECK(!res.note.empty());
  CHECK(static_cast<int>(res.history.size()) < cfg.epochs);
  for (const Param& p : m.params) CHECK(p.value.all_finite());
}

TEST_CASE("a global-variant network ignores timestep order end to end") {
  Rng rng = make_rng(263);
  RunConfig cfg = net_config("pic_global", 2);
  CascadeModel m = build_cascade(cfg);
  randomize_all_parameters(m, rng);
  Tensor x = randn(rng, {1, 32, 8});
  {
    Tape warm;
    std::vector<Var> pv = bind_params(warm, m);
    forward(warm, m, pv, x, Mode::train);
  }
  Tensor base = eval_logits(m, x);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> perm(32);
    for (int i = 0; i < 32; ++i) perm[static_cast<size_t>(i)] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor shuffled({1, 32, 8});
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 8; ++c) shuffled.at(0, r, c) = x.at(0, perm[static_cast<size_t>(r)], c);
    Tensor out = eval_logits(m, shuffled);
    for (int64_t i = 0; i < out.numel(); ++i)
      CHECK(std::abs(out[i] - base[i]) <= 1e-9);
  }
}
