#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "picnet/layers.hpp"
#include "picnet/network.hpp"
#include "picnet/rng.hpp"

using namespace picnet;

namespace {

Tensor randn(Rng& rng, std::vector<int> shape, double sigma = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = gaussian(rng, 0.0, sigma);
  return t;
}

RunConfig layer_config(const std::string& variant, int channels = 8, int window = 3,
                       int keys = 4, int values = 4) {
  RunConfig cfg;
  cfg.variant = variant;
  cfg.depth = 1;
  cfg.channels = channels;
  cfg.dataset.channels = channels;
  cfg.window = window;
  cfg.keys = keys;
  cfg.values = values;
  return cfg;
}

Tensor layer_out(CascadeModel& m, const Tensor& x, SampleTrace* trace = nullptr) {
  Tape t;
  std::vector<Var> pv = bind_params(t, m);
  Var out = layer_forward_sample(t, t.leaf(x), m.blocks[0], pv, trace);
  return t.val(out);
}

Tensor row_of(const Tensor& t, int r) {
  Tensor row({t.dim(1)});
  for (int j = 0; j < t.dim(1); ++j) row[j] = t.at(r, j);
  return row;
}

}  // namespace

TEST_CASE("pic window output is bitwise invariant to window-row permutations") {
  Rng rng = make_rng(101);
  const int t_len = 4, cr = 3, m = 2, mv = 2;
  Tensor window = randn(rng, {t_len, cr});
  Tensor keys = randn(rng, {m, cr});
  Tensor values = randn(rng, {mv, cr});
  Tensor rw = randn(rng, {m, mv});
  Tensor rb = randn(rng, {mv});

  Tensor base;
  std::vector<int> perm = {0, 1, 2, 3};
  int checked = 0;
  do {
    Tensor shuffled({t_len, cr});
    for (int r = 0; r < t_len; ++r)
      for (int c = 0; c < cr; ++c) shuffled.at(r, c) = window.at(perm[static_cast<size_t>(r)], c);
    Tape t;
    Var y = pic_window(t, t.leaf(shuffled), t.leaf(keys), t.leaf(values), t.leaf(rw),
                       t.leaf(rb));
    if (base.empty())
      base = t.val(y);
    else
      CHECK(t.val(y) == base);
    ++checked;
  } while (std::next_permutation(perm.begin(), perm.end()));
  CHECK(checked == 24);
}

TEST_CASE("zero keys make the window signal content-free") {
  Rng rng = make_rng(103);
  Tensor keys({2, 3});  // all zero
  Tensor values = randn(rng, {2, 3});
  Tensor rw = randn(rng, {2, 2});
  Tensor rb = randn(rng, {2});
  Tape t;
  Var y1 = pic_window(t, t.leaf(randn(rng, {4, 3})), t.leaf(keys), t.leaf(values),
                      t.leaf(rw), t.leaf(rb));
  Var y2 = pic_window(t, t.leaf(randn(rng, {4, 3})), t.leaf(keys), t.leaf(values),
                      t.leaf(rw), t.leaf(rb));
  CHECK(t.val(y1) == t.val(y2));
}

TEST_CASE("single-key hand trace") {
  // similarities 3 and 2 -> max 3; alpha = relu(3*1 - 1) = 2; y = 2 * [0,1].
  Tape t;
  Var y = pic_window(t, t.leaf(Tensor::matrix({{3.0, 1.0}, {2.0, 5.0}})),
                     t.leaf(Tensor::matrix({{1.0, 0.0}})),
                     t.leaf(Tensor::matrix({{0.0, 1.0}})),
                     t.leaf(Tensor::matrix({{1.0}})), t.leaf(Tensor::row({-1.0})));
  CHECK(t.val(y) == Tensor::row({0.0, 2.0}));
}

TEST_CASE("freshly built residual blocks are exact identities") {
  Rng rng = make_rng(107);
  Tensor x = randn(rng, {6, 8});
  for (const char* variant : {"pic", "pic_ordered", "pic_inferred"}) {
    CAPTURE(variant);
    CascadeModel m = build_cascade(layer_config(variant));
    CHECK(layer_out(m, x) == x);
  }
  // The global block collapses time: identity means "temporal mean, exactly".
  CascadeModel g = build_cascade(layer_config("pic_global"));
  Tensor out = layer_out(g, x);
  REQUIRE(out.shape() == std::vector<int>{1, 8});
  for (int c = 0; c < 8; ++c) {
    double sum = 0.0;
    for (int r = 0; r < 6; ++r) sum += x.at(r, c);
    CHECK(out.at(0, c) == sum / 6.0);
  }
  // temporal_conv has no residual: a fresh block is not the identity.
  CascadeModel tc = build_cascade(layer_config("temporal_conv"));
  CHECK(layer_out(tc, x) != x);
}

TEST_CASE("degenerate lengths still work") {
  Rng rng = make_rng(109);
  for (auto [n, window] : std::vector<std::pair<int, int>>{{1, 3}, {5, 1}, {1, 1}}) {
    CAPTURE(n);
    CAPTURE(window);
    RunConfig cfg = layer_config("pic", 8, window);
    CascadeModel m = build_cascade(cfg);
    Rng prng = make_rng(7);
    randomize_all_parameters(m, prng);
    Tensor out = layer_out(m, randn(rng, {n, 8}));
    REQUIRE(out.shape() == std::vector<int>{n, 8});
    CHECK(out.all_finite());
  }
}

TEST_CASE("permutations that fix a position's window leave that output row unchanged") {
  Rng rng = make_rng(113);
  RunConfig cfg = layer_config("pic", 8, 3);
  CascadeModel m = build_cascade(cfg);
  randomize_all_parameters(m, rng);

  Tensor x = randn(rng, {5, 8});
  Tensor base = layer_out(m, x);

  // Swap rows 1 and 3: position 2 keeps its window multiset {1,2,3} and its
  // own residual row, so output row 2 is bitwise unchanged.
  Tensor swapped = x;
  for (int c = 0; c < 8; ++c) std::swap(swapped.at(1, c), swapped.at(3, c));
  Tensor out = layer_out(m, swapped);
  CHECK(row_of(out, 2) == row_of(base, 2));
  // Row 0's window gained different content; generically it moves.
  CHECK(row_of(out, 0) != row_of(base, 0));
}

TEST_CASE("ordered window is order sensitive with generic kernels") {
  Rng rng = make_rng(127);
  const int t_len = 3, cr = 4, m = 5;
  int moved = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Tensor window = randn(rng, {t_len, cr});
    Tensor keys_flat = randn(rng, {m, t_len * cr});
    Tensor values = randn(rng, {m, cr});
    Tensor swapped = window;
    for (int c = 0; c < cr; ++c) std::swap(swapped.at(0, c), swapped.at(1, c));
    Tape t;
    Var y1 = pic_ordered_window(t, t.leaf(window), t.leaf(keys_flat), t.leaf(values));
    Var y2 = pic_ordered_window(t, t.leaf(swapped), t.leaf(keys_flat), t.leaf(values));
    double diff = 0.0;
    for (int64_t i = 0; i < t.val(y1).numel(); ++i)
      diff = std::max(diff, std::abs(t.val(y1)[i] - t.val(y2)[i]));
    if (diff > 1e-9) ++moved;
  }
  CHECK(moved >= 99);
}

TEST_CASE("ordered window with a time-constant kernel is permutation invariant") {
  Rng rng = make_rng(131);
  const int t_len = 4, cr = 3, m = 2;
  Tensor slice = randn(rng, {m, cr});
  Tensor keys_flat({m, t_len * cr});
  for (int i = 0; i < m; ++i)
    for (int tt = 0; tt < t_len; ++tt)
      for (int c = 0; c < cr; ++c) keys_flat.at(i, tt * cr + c) = slice.at(i, c);
  Tensor values = randn(rng, {m, cr});
  Tensor window = randn(rng, {t_len, cr});

  Tensor base;
  std::vector<int> perm = {0, 1, 2, 3};
  do {
    Tensor shuffled({t_len, cr});
    for (int r = 0; r < t_len; ++r)
      for (int c = 0; c < cr; ++c) shuffled.at(r, c) = window.at(perm[static_cast<size_t>(r)], c);
    Tape t;
    Var y = pic_ordered_window(t, t.leaf(shuffled), t.leaf(keys_flat), t.leaf(values));
    if (base.empty()) {
      base = t.val(y);
    } else {
      for (int64_t i = 0; i < base.numel(); ++i)
        CHECK(std::abs(t.val(y)[i] - base[i]) <= 1e-12);
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
}

TEST_CASE("ordered window of zeros yields a zero vector") {
  Rng rng = make_rng(137);
  Tape t;
  Var y = pic_ordered_window(t, t.leaf(Tensor({3, 4})), t.leaf(randn(rng, {5, 12})),
                             t.leaf(randn(rng, {5, 4})));
  CHECK(t.val(y) == Tensor({4}));
}

TEST_CASE("batched sliding path equals the per-window reference bitwise") {
  Rng rng = make_rng(139);
  for (int window : {1, 3, 4, 9}) {
    CAPTURE(window);
    RunConfig cfg = layer_config("pic", 8, window);
    CascadeModel m = build_cascade(cfg);
    randomize_all_parameters(m, rng);
    Tensor x = randn(rng, {7, 8});

    Tape a;
    std::vector<Var> pva = bind_params(a, m);
    Var fast = layer_forward_sample(a, a.leaf(x), m.blocks[0], pva);

    Tape b;
    std::vector<Var> pvb = bind_params(b, m);
    Var ref = pic_layer_reference_sample(b, b.leaf(x), m.blocks[0], pvb);

    CHECK(a.val(fast) == b.val(ref));
  }
}

TEST_CASE("global layer equals an unpadded whole-sequence window, bitwise") {
  Rng rng = make_rng(149);
  RunConfig cfg = layer_config("pic_global", 8);
  CascadeModel m = build_cascade(cfg);
  randomize_all_parameters(m, rng);
  Tensor x = randn(rng, {6, 8});
  const BlockParams& b = m.blocks[0];

  Tensor fast = layer_out(m, x);

  Tape t;
  std::vector<Var> pv = bind_params(t, m);
  Var xv = t.leaf(x);
  Var reduced = t.affine(xv, pv[b.reduce_w], pv[b.reduce_b]);
  Var y = pic_window(t, reduced, pv[b.keys], pv[b.values], pv[b.remap_w], pv[b.remap_b]);
  Var branch = t.affine(y, pv[b.recover_w], pv[b.recover_b]);
  Var residual = t.mean_over_time(t.reshape(xv, {1, 6, 8}));  // [1 x 8]
  Var ref = t.add(residual, t.reshape(branch, {1, 8}));
  CHECK(fast == t.val(ref));
}

TEST_CASE("global layer is invariant to any timestep permutation") {
  Rng rng = make_rng(151);
  RunConfig cfg = layer_config("pic_global", 8);
  CascadeModel m = build_cascade(cfg);
  randomize_all_parameters(m, rng);
  Tensor x = randn(rng, {9, 8});
  Tensor base = layer_out(m, x);

  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> perm(9);
    for (int i = 0; i < 9; ++i) perm[static_cast<size_t>(i)] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor shuffled({9, 8});
    for (int r = 0; r < 9; ++r)
      for (int c = 0; c < 8; ++c) shuffled.at(r, c) = x.at(perm[static_cast<size_t>(r)], c);
    Tensor out = layer_out(m, shuffled);
    for (int64_t i = 0; i < out.numel(); ++i)
      CHECK(std::abs(out[i] - base[i]) <= 1e-12);  // residual mean reorders sums
  }
}

TEST_CASE("inferred window with zero inference weights reduces to a bias formula") {
  // K rows all b_k, V rows all b_v: every similarity row is identical, so
  // y = (sum of remapped alphas) * b_v.
  const int t_len = 2, cr = 2;
  Tensor zero_w({cr, cr});
  Tensor bk = Tensor::row({1.0, 0.0});
  Tensor bv = Tensor::row({0.0, 2.0});
  Tensor rw({t_len, t_len});  // identity remap
  rw.at(0, 0) = 1.0;
  rw.at(1, 1) = 1.0;
  Tensor rb({t_len});
  Tensor window = Tensor::matrix({{3.0, 1.0}, {0.5, -2.0}});

  Tape t;
  Var y = pic_inferred_window(t, t.leaf(window), t.leaf(zero_w), t.leaf(bk),
                              t.leaf(zero_w), t.leaf(bv), t.leaf(rw), t.leaf(rb));
  // s[k][t] = dot(b_k, w_t) = {3.0, 0.5}; row max = 3.0 for both keys.
  // alpha = relu([3, 3] * I) = [3, 3]; y = 3*b_v + 3*b_v = [0, 12].
  CHECK(t.val(y) == Tensor::row({0.0, 12.0}));
}

TEST_CASE("temporal conv with a center-selector kernel is the identity map") {
  const int c = 4, t_len = 3;
  RunConfig cfg = layer_config("temporal_conv", c, t_len);
  CascadeModel m = build_cascade(cfg);
  BlockParams& b = m.blocks[0];
  Tensor w({c, t_len * c});
  for (int o = 0; o < c; ++o) w.at(o, 1 * c + o) = 1.0;  // pick the window center
  m.params[static_cast<size_t>(b.conv_w)].value = w;
  m.params[static_cast<size_t>(b.conv_b)].value = Tensor({c});

  Rng rng = make_rng(157);
  Tensor x = randn(rng, {6, c});
  CHECK(layer_out(m, x) == x);
}

TEST_CASE("temporal conv with an averaging kernel is a moving average") {
  const int c = 4, t_len = 3;
  RunConfig cfg = layer_config("temporal_conv", c, t_len);
  CascadeModel m = build_cascade(cfg);
  BlockParams& b = m.blocks[0];
  Tensor w({c, t_len * c});
  for (int o = 0; o < c; ++o)
    for (int tt = 0; tt < t_len; ++tt) w.at(o, tt * c + o) = 1.0 / 3.0;
  m.params[static_cast<size_t>(b.conv_w)].value = w;
  m.params[static_cast<size_t>(b.conv_b)].value = Tensor({c});

  Rng rng = make_rng(163);
  Tensor x = randn(rng, {5, c});
  Tensor out = layer_out(m, x);
  for (int i = 0; i < 5; ++i)
    for (int ch = 0; ch < c; ++ch) {
      double want = 0.0;  // zero padding beyond the ends
      for (int d = -1; d <= 1; ++d)
        if (i + d >= 0 && i + d < 5) want += x.at(i + d, ch) / 3.0;
      CHECK(out.at(i, ch) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("window_indices marks padding with -1") {
  CHECK(window_indices(0, 5, 3, 1) == std::vector<int>{-1, 0, 1});
  CHECK(window_indices(2, 5, 3, 1) == std::vector<int>{1, 2, 3});
  CHECK(window_indices(4, 5, 3, 1) == std::vector<int>{3, 4, -1});
  // Even window: one more position on the right.
  CHECK(window_indices(0, 4, 4, 1) == std::vector<int>{-1, 0, 1, 2});
}

TEST_CASE("registered parameter sizes match the closed-form counts") {
  for (const char* variant :
       {"pic", "pic_ordered", "pic_global", "pic_inferred", "temporal_conv"}) {
    CAPTURE(variant);
    RunConfig cfg = layer_config(variant, 16, 5, 3, 7);
    cfg.depth = 3;
    CascadeModel m = build_cascade(cfg);
    int64_t total = 0;
    for (const Param& p : m.params) total += p.value.numel();
    const Variant v = variant_from_string(variant);
    const int64_t want =
        3 * block_param_count(v, 16, 5, 3, 7) + head_param_count(16, cfg.class_count());
    CHECK(total == want);
    CHECK(model_param_count(m) == want);
  }
}

TEST_CASE("fresh blocks have zero recover maps and bounded weights") {
  RunConfig cfg = layer_config("pic", 16, 5, 3, 7);
  CascadeModel m = build_cascade(cfg);
  const BlockParams& b = m.blocks[0];
  const Tensor& rec_w = m.params[static_cast<size_t>(b.recover_w)].value;
  const Tensor& rec_b = m.params[static_cast<size_t>(b.recover_b)].value;
  for (int64_t i = 0; i < rec_w.numel(); ++i) CHECK(rec_w[i] == 0.0);
  for (int64_t i = 0; i < rec_b.numel(); ++i) CHECK(rec_b[i] == 0.0);

  const Tensor& red_w = m.params[static_cast<size_t>(b.reduce_w)].value;
  const double bound = std::sqrt(6.0 / 16.0);
  for (int64_t i = 0; i < red_w.numel(); ++i) {
    CHECK(red_w[i] <= bound);
    CHECK(red_w[i] >= -bound);
  }
  Rng rng = make_rng(11);
  randomize_all_parameters(m, rng);
  bool moved = false;
  const Tensor& rec_w2 = m.params[static_cast<size_t>(b.recover_w)].value;
  for (int64_t i = 0; i < rec_w2.numel(); ++i) moved |= rec_w2[i] != 0.0;
  CHECK(moved);
  for (size_t i = 0; i < m.params.size(); ++i)
    if (m.params[i].kind == ParamKind::bn_scale)
      for (int64_t j = 0; j < m.params[i].value.numel(); ++j) {
        CHECK(m.params[i].value[j] >= 0.5);
        CHECK(m.params[i].value[j] <= 1.5);
      }
}

TEST_CASE("channels not divisible by four are rejected") {
  RunConfig cfg = layer_config("pic", 10);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
