#include <cmath>
#include <tuple>
#include <vector>
#include <random>

#include "doctest.h"
#include "picnet/ops.hpp"
#include "picnet/rng.hpp"

using namespace picnet;

namespace {

// Naive triple loop; accumulation order matches the production kernel so
// results agree to the last bit.
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += a.at(i, p) * b.at(p, j);
      out.at(i, j) = acc;
    }
  return out;
}

Tensor random_int_matrix(Rng& rng, int r, int c) {
  Tensor t({r, c});
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<double>(uniform_int(rng, -9, 9));
  return t;
}

}  // namespace

TEST_CASE("matmul matches the naive oracle bitwise on integer matrices") {
  Rng rng = make_rng(3);
  const std::vector<std::tuple<int, int, int>> shapes = {
      {1, 1, 1}, {2, 3, 4}, {5, 7, 2}, {8, 8, 8}};
  for (auto [m, k, n] : shapes) {
    Tensor a = random_int_matrix(rng, m, k);
    Tensor b = random_int_matrix(rng, k, n);
    CHECK(ops::matmul(a, b) == matmul_oracle(a, b));
  }
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
  Tensor a({2, 3});
  Tensor b({4, 2});
  CHECK_THROWS_AS(ops::matmul(a, b), DimensionError);
}

TEST_CASE("similarity is keys times window-transpose") {
  Rng rng = make_rng(4);
  Tensor keys = random_int_matrix(rng, 4, 6);
  Tensor window = random_int_matrix(rng, 3, 6);
  CHECK(ops::similarity(keys, window) == ops::matmul(keys, ops::transpose(window)));
  CHECK_THROWS_AS(ops::similarity(keys, random_int_matrix(rng, 3, 5)), DimensionError);
}

TEST_CASE("affine handles rank-1 and rank-2 inputs") {
  Tensor w = Tensor::matrix({{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}});  // [3 x 2]
  Tensor b = Tensor::row({10.0, 20.0});

  Tensor x1 = Tensor::row({1.0, 0.0, -1.0});
  Tensor y1 = ops::affine(x1, w, b);
  CHECK(y1.rank() == 1);
  CHECK(y1[0] == 1.0 - 5.0 + 10.0);
  CHECK(y1[1] == 2.0 - 6.0 + 20.0);

  Tensor x2 = Tensor::matrix({{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}});
  Tensor y2 = ops::affine(x2, w, b);
  CHECK(y2.at(0, 0) == 11.0);
  CHECK(y2.at(0, 1) == 22.0);
  CHECK(y2.at(1, 0) == 13.0);
  CHECK(y2.at(1, 1) == 24.0);

  CHECK_THROWS_AS(ops::affine(x1, w, Tensor::row({1.0, 2.0, 3.0})), DimensionError);
}

TEST_CASE("row_max picks the maximum with lowest-index tie-break") {
  Tensor s = Tensor::matrix({{1.0, 7.0, 7.0, 2.0}, {-3.0, -1.0, -2.0, -1.0}});
  auto [vals, arg] = ops::row_max(s);
  CHECK(vals[0] == 7.0);
  CHECK(vals[1] == -1.0);
  CHECK(arg[0] == 1);  // not 2: ties go to the lowest index
  CHECK(arg[1] == 1);
}

TEST_CASE("activations: hand values and softmax normalization") {
  Tensor x = Tensor::matrix({{-2.0, 0.0, 3.0}});
  Tensor r = ops::activation(x, ops::Activation::relu);
  CHECK(r.at(0, 0) == 0.0);
  CHECK(r.at(0, 2) == 3.0);
  Tensor l = ops::activation(x, ops::Activation::leaky_relu);
  CHECK(l.at(0, 0) == -2.0 * ops::kLeakySlope);
  CHECK(l.at(0, 2) == 3.0);
  Tensor sg = ops::activation(Tensor::matrix({{0.0, 1.0, -1.0}}), ops::Activation::sigmoid);
  CHECK(sg.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sg.at(0, 1) + sg.at(0, 2) == doctest::Approx(1.0).epsilon(1e-15));

  Rng rng = make_rng(5);
  Tensor z({4, 6});
  for (int64_t i = 0; i < z.numel(); ++i) z[i] = gaussian(rng, 0.0, 3.0);
  Tensor p = ops::activation(z, ops::Activation::softmax);
  for (int i = 0; i < 4; ++i) {
    double row = 0.0;
    for (int j = 0; j < 6; ++j) {
      CHECK(p.at(i, j) > 0.0);
      row += p.at(i, j);
    }
    CHECK(std::abs(row - 1.0) <= 1e-12);
  }
  // two-logit closed form
  Tensor two = ops::activation(Tensor::matrix({{std::log(3.0), 0.0}}),
                               ops::Activation::softmax);
  CHECK(two.at(0, 0) == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("max_pool_time halves the sequence and keeps channel maxima") {
  Tensor x = Tensor::matrix({{1.0, 8.0}, {5.0, 2.0}, {3.0, 3.0}, {4.0, 0.0}, {9.0, -1.0}});
  Tensor y = ops::max_pool_time(x, 2);
  REQUIRE(y.dim(0) == 3);  // ceil(5/2), short tail window kept
  CHECK(y.at(0, 0) == 5.0);
  CHECK(y.at(0, 1) == 8.0);
  CHECK(y.at(1, 0) == 4.0);
  CHECK(y.at(1, 1) == 3.0);
  CHECK(y.at(2, 0) == 9.0);
  CHECK(y.at(2, 1) == -1.0);

  auto [vals, src] = ops::max_pool_time_indexed(x, 2);
  CHECK(vals == y);
  CHECK(src[0] == 1);  // winning input row, laid out [out_row * c + channel]
  CHECK(src[1] == 0);
  CHECK(src[4] == 4);
}

TEST_CASE("add requires matching shapes") {
  CHECK_THROWS_AS(ops::add(Tensor({2, 2}), Tensor({2, 3})), DimensionError);
  Tensor a = Tensor::matrix({{1.0, 2.0}});
  Tensor b = Tensor::matrix({{0.5, -2.0}});
  Tensor c = ops::add(a, b);
  CHECK(c.at(0, 0) == 1.5);
  CHECK(c.at(0, 1) == 0.0);
}

TEST_CASE("transpose round-trips") {
  Rng rng = make_rng(6);
  Tensor a = random_int_matrix(rng, 3, 5);
  CHECK(ops::transpose(ops::transpose(a)) == a);
  CHECK(ops::transpose(a).at(4, 2) == a.at(2, 4));
}

TEST_CASE("tensor element access is rank-checked") {
  Tensor t({2, 3});
  CHECK_THROWS_AS(t.at(1), DimensionError);
  CHECK_THROWS_AS(Tensor({6}).at(1, 2), DimensionError);
  CHECK_THROWS_AS(Tensor({2, 3}, {1.0}), DimensionError);
}

TEST_CASE("check_finite flags NaN and Inf") {
  Tensor t({2});
  t[0] = std::nan("");
  CHECK_THROWS_AS(t.check_finite("test"), NumericError);
  t[0] = 0.0;
  CHECK_NOTHROW(t.check_finite("test"));
}
