#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "test_helpers.hpp"
#include "vilong/ops.hpp"
#include "vilong/oracle.hpp"
#include "vilong/rng.hpp"
#include "vilong/tensor.hpp"

using namespace vilong;
using vilong::testing::bitwise_equal;

TEST_CASE("matmul by the identity returns the input bitwise") {
  Rng rng(11);
  Tensor<double> a = uniform_init<double>({3, 4}, -2.0, 2.0, rng);
  Tensor<double> eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye(i, i) = 1.0;
  CHECK(bitwise_equal(matmul(a, eye), a));
}

TEST_CASE("matmul agrees with the scalar triple-loop reference") {
  Rng rng(12);
  Tensor<double> a = uniform_init<double>({5, 7}, -1.0, 1.0, rng);
  Tensor<double> b = uniform_init<double>({7, 3}, -1.0, 1.0, rng);
  CHECK(max_abs_diff(matmul(a, b), oracle::matmul_reference(a, b)) == 0.0);
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
  Tensor<double> a({2, 3});
  Tensor<double> b({4, 2});
  CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
}

TEST_CASE("matmul_nt and matmul_tn match explicit transposition") {
  Rng rng(13);
  Tensor<double> a = uniform_init<double>({4, 6}, -1.0, 1.0, rng);
  Tensor<double> b = uniform_init<double>({5, 6}, -1.0, 1.0, rng);
  CHECK(max_abs_diff(matmul_nt(a, b), matmul(a, transpose(b))) < 1e-14);
  Tensor<double> c = uniform_init<double>({4, 5}, -1.0, 1.0, rng);
  CHECK(max_abs_diff(matmul_tn(a, c), matmul(transpose(a), c)) < 1e-14);
}

TEST_CASE("softmax rows sum to one and respect the mask") {
  Rng rng(14);
  Tensor<double> scores = uniform_init<double>({3, 4}, -3.0, 3.0, rng);
  Tensor<std::uint8_t> mask = Tensor<std::uint8_t>::full({3, 4}, std::uint8_t(1));
  mask(1, 0) = 0;
  mask(1, 2) = 0;
  Tensor<double> probs = softmax_rows(scores, &mask);
  for (std::size_t i = 0; i < 3; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 4; ++j) row += probs(i, j);
    CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(probs(1, 0) == 0.0);
  CHECK(probs(1, 2) == 0.0);
}

TEST_CASE("softmax of a fully masked row is an error") {
  Tensor<double> scores({2, 3});
  Tensor<std::uint8_t> mask({2, 3});
  for (std::size_t j = 0; j < 3; ++j) mask(0, j) = 1;
  CHECK_THROWS(softmax_rows(scores, &mask));
}

TEST_CASE("softmax is invariant to a constant shift per row") {
  Rng rng(15);
  Tensor<double> scores = uniform_init<double>({2, 5}, -1.0, 1.0, rng);
  Tensor<double> shifted = scores;
  for (std::size_t j = 0; j < 5; ++j) shifted(0, j) += 123.0;
  Tensor<double> a = softmax_rows(scores);
  Tensor<double> b = softmax_rows(shifted);
  CHECK(max_abs_diff(a, b) < 1e-12);
}

TEST_CASE("layer_norm standardizes each row under unit gamma") {
  Rng rng(16);
  Tensor<double> x = uniform_init<double>({4, 8}, -5.0, 5.0, rng);
  Tensor<double> gamma = Tensor<double>::full({8}, 1.0);
  Tensor<double> beta({8});
  Tensor<double> y = layer_norm(x, gamma, beta);
  for (std::size_t i = 0; i < 4; ++i) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 8; ++j) mean += y(i, j);
    mean /= 8.0;
    for (std::size_t j = 0; j < 8; ++j) var += (y(i, j) - mean) * (y(i, j) - mean);
    var /= 8.0;
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("layer_norm gradient matches finite differences") {
  Rng rng(17);
  Tensor<double> x = uniform_init<double>({3, 5}, -1.0, 1.0, rng);
  Tensor<double> gamma = uniform_init<double>({5}, 0.5, 1.5, rng);
  Tensor<double> beta = uniform_init<double>({5}, -0.5, 0.5, rng);
  Tensor<double> w = uniform_init<double>({3, 5}, -1.0, 1.0, rng);
  auto loss = [&](const Tensor<double>& xin) {
    Tensor<double> y = layer_norm(xin, gamma, beta);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += w[i] * y[i];
    return acc;
  };
  LayerNormGrads<double> grads = layer_norm_backward(x, gamma, w);
  Tensor<double> fd = oracle::finite_diff_grad(loss, x);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    worst = std::max(worst, oracle::rel_err(grads.dx[i], fd[i]));
  CHECK(worst < 1e-6);
}

TEST_CASE("gelu hits the exact Gaussian-error values") {
  Tensor<double> x({3});
  x[0] = 0.0;
  x[1] = 1.0;
  x[2] = -1.0;
  Tensor<double> y = gelu(x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == doctest::Approx(0.8413447460685429).epsilon(1e-12));
  CHECK(y[2] == doctest::Approx(-0.15865525393145707).epsilon(1e-12));
}

TEST_CASE("gelu_backward matches the analytic derivative") {
  Tensor<double> x({1});
  x[0] = 1.0;
  Tensor<double> dy = Tensor<double>::full({1}, 1.0);
  Tensor<double> dx = gelu_backward(x, dy);
  // d/dx x*Phi(x) = Phi(x) + x*phi(x)
  CHECK(dx[0] == doctest::Approx(1.0833154705876864).epsilon(1e-10));
}

TEST_CASE("bilinear_resize to the source size is the identity bitwise") {
  Rng rng(18);
  Tensor<float> grid = uniform_init<float>({5, 7, 2}, -1.0, 1.0, rng);
  CHECK(bitwise_equal(bilinear_resize(grid, 5, 7), grid));
}

TEST_CASE("bilinear_resize reproduces linear ramps exactly") {
  Tensor<double> grid({3, 3, 1});
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 3; ++x) grid(y, x, 0) = double(3 * y + x);
  Tensor<double> up = bilinear_resize(grid, 5, 5);
  // align-corners: corners and center are fixed points, odd rows interpolate
  CHECK(up(0, 0, 0) == doctest::Approx(0.0));
  CHECK(up(0, 4, 0) == doctest::Approx(2.0));
  CHECK(up(4, 0, 0) == doctest::Approx(6.0));
  CHECK(up(4, 4, 0) == doctest::Approx(8.0));
  CHECK(up(2, 2, 0) == doctest::Approx(4.0));
  CHECK(up(0, 1, 0) == doctest::Approx(0.5));
  CHECK(up(1, 0, 0) == doctest::Approx(1.5));
}

TEST_CASE("trunc_normal_init stays inside two standard deviations") {
  Rng rng(19);
  const double stddev = 0.4;
  Tensor<double> t = trunc_normal_init<double>({1000}, stddev, rng);
  for (std::size_t i = 0; i < t.size(); ++i) {
    CHECK(std::abs(t[i]) <= 2.0 * stddev + 1e-12);
  }
}

TEST_CASE("rng streams are deterministic per seed") {
  Rng a(77), b(77), c(78);
  bool same = true, diff = false;
  for (int i = 0; i < 16; ++i) {
    std::uint64_t x = a.next_u64(), y = b.next_u64(), z = c.next_u64();
    same = same && (x == y);
    diff = diff || (x != z);
  }
  CHECK(same);
  CHECK(diff);
}

TEST_CASE("finite_diff_grad recovers the gradient of a quadratic") {
  Rng rng(20);
  Tensor<double> x = uniform_init<double>({6}, -1.0, 1.0, rng);
  auto f = [](const Tensor<double>& t) {
    double acc = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) acc += t[i] * t[i];
    return acc;
  };
  Tensor<double> g = oracle::finite_diff_grad(f, x);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    worst = std::max(worst, oracle::rel_err(g[i], 2.0 * x[i]));
  CHECK(worst < 1e-9);
}

TEST_CASE("finite_diff_grad sees softmax row sums as constant") {
  Rng rng(21);
  Tensor<double> x = uniform_init<double>({4}, -1.0, 1.0, rng);
  auto f = [](const Tensor<double>& t) {
    Tensor<double> row({1, t.size()});
    for (std::size_t i = 0; i < t.size(); ++i) row[i] = t[i];
    return double(sum(softmax_rows(row)));
  };
  Tensor<double> g = oracle::finite_diff_grad(f, x);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(g[i]) < 1e-7);
}
