#include <cmath>
#include <numbers>

#include "cardiofuse/error.hpp"
#include "cardiofuse/tensor/grad_check.hpp"
#include "cardiofuse/tensor/layers.hpp"
#include "cardiofuse/tensor/ops.hpp"
#include "doctest.h"

using namespace cardiofuse;

namespace {

NdArray random_array(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  RngStream rng(seed);
  NdArray a(std::move(shape));
  for (auto& v : a.values()) v = rng.uniform(lo, hi);
  return a;
}

}  // namespace

TEST_CASE("matmul examples") {
  const auto eye = Var::constant(NdArray::matrix({{1, 0}, {0, 1}}));
  const auto m = Var::constant(NdArray::matrix({{1, 2}, {3, 4}}));
  CHECK(matmul(eye, m).value() == m.value());

  const auto col = Var::constant(NdArray::matrix({{5}, {6}}));
  CHECK(matmul(m, col).value() == NdArray::matrix({{17}, {39}}));

  const auto zeros = Var::constant(NdArray({2, 3}, 0.0));
  const auto any = Var::constant(random_array({3, 4}, 1));
  CHECK(matmul(zeros, any).value() == NdArray({2, 4}, 0.0));

  CHECK_THROWS_AS(matmul(m, any), std::invalid_argument);
}

TEST_CASE("transposed products agree with explicit transposes") {
  const auto a = Var::constant(random_array({3, 4}, 2));
  const auto b = Var::constant(random_array({5, 4}, 3));
  const auto c = Var::constant(random_array({3, 5}, 4));
  NdArray bt({4, 5});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) bt.at(j, i) = b.value().at(i, j);
  NdArray at({4, 3});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) at.at(j, i) = a.value().at(i, j);
  CHECK(max_abs_diff(matmul_nt(a, b).value(), matmul(a, Var::constant(bt)).value()) < 1e-14);
  CHECK(max_abs_diff(matmul_tn(a, c).value(), matmul(Var::constant(at), c).value()) < 1e-14);
}

TEST_CASE("softmax examples") {
  const auto flat = softmax(Var::constant(NdArray::vector({0, 0, 0, 0})), 0);
  for (double v : flat.value().values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  const auto two = softmax(Var::constant(NdArray::vector({0, std::log(2.0)})), 0);
  CHECK(std::abs(two.value()[0] - 1.0 / 3.0) < 1e-15);
  CHECK(std::abs(two.value()[1] - 2.0 / 3.0) < 1e-15);

  const NdArray x = random_array({3, 5}, 5, -4, 4);
  NdArray shifted = x;
  for (auto& v : shifted.values()) v += 123.25;
  for (std::size_t axis : {0u, 1u}) {
    const auto p = softmax(Var::constant(x), axis).value();
    const auto q = softmax(Var::constant(shifted), axis).value();
    CHECK(max_abs_diff(p, q) < 1e-12);
  }
  const auto rows = softmax(Var::constant(x), 1).value();
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 5; ++c) {
      CHECK(rows.at(r, c) >= 0.0);
      s += rows.at(r, c);
    }
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
  CHECK_THROWS_AS(softmax(Var::constant(x), 2), std::invalid_argument);
}

TEST_CASE("softmax over a middle axis of a rank-3 array") {
  const NdArray x = random_array({2, 3, 4}, 6, -2, 2);
  const auto p = softmax(Var::constant(x), 1).value();
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0;
      for (std::size_t k = 0; k < 3; ++k) s += p[(o * 3 + k) * 4 + i];
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("masked softmax zeroes masked keys") {
  const auto x = Var::parameter(random_array({2, 4}, 7, -3, 3));
  const NdArray mask = NdArray::vector({1, 0, 1, 1});
  const auto p = masked_softmax(x, mask);
  for (std::size_t r = 0; r < 2; ++r) {
    CHECK(p.value().at(r, 1) == 0.0);
    CHECK(std::abs(p.value().at(r, 0) + p.value().at(r, 2) + p.value().at(r, 3) - 1.0) < 1e-12);
  }
  backward(sum(mul(p, Var::constant(random_array({2, 4}, 8)))));
  CHECK(x.grad().at(0, 1) == 0.0);
  CHECK(x.grad().at(1, 1) == 0.0);
  CHECK_THROWS_AS(masked_softmax(x, NdArray::vector({0, 0, 0, 0})), std::invalid_argument);
}

TEST_CASE("layer_norm examples") {
  const auto gain = Var::constant(NdArray({2}, 1.0));
  const auto bias = Var::constant(NdArray({2}, 0.0));
  const auto constant_row = layer_norm(Var::constant(NdArray::matrix({{3, 3}})), gain, bias);
  CHECK(constant_row.value() == NdArray({1, 2}, 0.0));

  const auto pair = layer_norm(Var::constant(NdArray::matrix({{1, 3}})), gain, bias, 1e-14);
  CHECK(std::abs(pair.value()[0] + 1.0) < 1e-12);
  CHECK(std::abs(pair.value()[1] - 1.0) < 1e-12);

  const auto b = Var::constant(NdArray::vector({0.5, -2}));
  const auto only_bias = layer_norm(Var::constant(NdArray::matrix({{1, 7}})), Var::constant(NdArray({2}, 0.0)), b);
  CHECK(only_bias.value()[0] == 0.5);
  CHECK(only_bias.value()[1] == -2.0);

  const NdArray x = random_array({4, 6}, 9, -5, 5);
  const auto y = layer_norm(Var::constant(x), Var::constant(NdArray({6}, 1.0)), Var::constant(NdArray({6}, 0.0)), 1e-12);
  for (std::size_t r = 0; r < 4; ++r) {
    double mu = 0, var = 0;
    for (std::size_t c = 0; c < 6; ++c) mu += y.value().at(r, c) / 6.0;
    for (std::size_t c = 0; c < 6; ++c) var += std::pow(y.value().at(r, c) - mu, 2) / 6.0;
    CHECK(std::abs(mu) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-6);
  }
}

TEST_CASE("dropout examples") {
  RngStream rng(11);
  const auto x = Var::constant(random_array({3, 3}, 10));
  CHECK(dropout(x, 0.5, rng, false).value() == x.value());
  CHECK(dropout(x, 0.0, rng, true).value() == x.value());
  CHECK_THROWS_AS(dropout(x, 1.0, rng, true), std::invalid_argument);
  CHECK_THROWS_AS(dropout(x, -0.1, rng, true), std::invalid_argument);

  const auto ones = Var::constant(NdArray({100000}, 1.0));
  const auto dropped = dropout(ones, 0.5, rng, true);
  double m = 0;
  for (double v : dropped.value().values()) {
    CHECK((v == 0.0 || v == 2.0));
    m += v;
  }
  m /= 100000.0;
  CHECK(std::abs(m - 1.0) < 0.01);
}

TEST_CASE("backward examples") {
  const auto x = Var::parameter(random_array({2, 3}, 12));
  backward(sum(x));
  CHECK(x.grad() == NdArray({2, 3}, 1.0));

  const auto v = Var::parameter(random_array({1, 4}, 13));
  x.zero_grad();
  backward(matmul_nt(v, v));
  NdArray twice = v.value();
  twice *= 2.0;
  CHECK(max_abs_diff(v.grad(), twice) < 1e-15);

  CHECK_THROWS_AS(backward(x), std::invalid_argument);
}

TEST_CASE("repeated backward with zeroed grads reproduces gradients") {
  const auto w = Var::parameter(random_array({3, 3}, 14));
  const auto x = Var::constant(random_array({4, 3}, 15));
  const auto loss = sum(square(tanh(matmul(x, w))));
  backward(loss);
  const NdArray first = w.grad();
  w.zero_grad();
  backward(loss);
  CHECK(w.grad() == first);
}

TEST_CASE("shared subexpressions accumulate through every path") {
  const auto x = Var::parameter(NdArray::vector({1.5, -0.5}));
  const auto y = mul(x, x);
  const auto loss = sum(add(y, scale(y, 3.0)));
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(8.0 * 1.5));
  CHECK(x.grad()[1] == doctest::Approx(8.0 * -0.5));
}

TEST_CASE("non-finite values are hard errors") {
  const auto x = Var::constant(NdArray::vector({-1.0}));
  CHECK_THROWS_AS(log(x), NumericError);
  CHECK_THROWS_AS(exp(Var::constant(NdArray::vector({1000.0}))), NumericError);
}

TEST_CASE("no-grad mode records nothing") {
  const auto w = Var::parameter(random_array({2, 2}, 16));
  NoGradGuard guard;
  const auto y = matmul(w, w);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("grad_check examples") {
  CHECK(grad_check([](const Var& x) { return sum(square(x)); }, random_array({3, 4}, 17)) < 1e-6);
  CHECK(grad_check([](const Var& x) { return pick(softmax(x, 1), {2}); }, random_array({1, 5}, 18)) < 1e-4);
  CHECK(grad_check([](const Var& x) { return scale(sum(x), 0.0); }, random_array({2, 2}, 19)) < 1e-6);
}

TEST_CASE("every op passes the finite-difference oracle") {
  const NdArray a = random_array({3, 4}, 20);
  const NdArray b = random_array({4, 2}, 21);
  const NdArray c = random_array({3, 4}, 22);
  const NdArray w = random_array({3, 4}, 23);
  auto weigh = [&](const Var& y) { return sum(mul(y, Var::constant(random_array(y.shape(), 99)))); };

  CHECK(grad_check([&](const Var& x) { return weigh(matmul(x, Var::constant(b))); }, a) < 1e-4);
  CHECK(grad_check([&](const Var& x) { return weigh(matmul(Var::constant(a), x)); }, b) < 1e-4);
  CHECK(grad_check([&](const Var& x) { return weigh(matmul_nt(x, Var::constant(c))); }, a) < 1e-4);
  CHECK(grad_check([&](const Var& x) { return weigh(matmul_nt(Var::constant(c), x)); }, a) < 1e-4);
  CHECK(grad_check([&](const Var& x) { return weigh(matmul_tn(x, Var::constant(c))); }, a) < 1e-4);
  CHECK(grad_check([&](const Var& x) { return weigh(matmul_tn(Var::constant(c), x)); }, a) < 1e-4);
  CHECK(grad_check([&](const Var& x) { return weigh(mul(x, Var::constant(c))); }, a) < 1e-4);
  CHECK(grad_check([&](const Var& x) { return weigh(sub(Var::constant(c), x)); }, a) < 1e-4);
  CHECK(grad_check([&](const Var& x) { return weigh(add_bias(Var::constant(a), x)); }, random_array({4}, 24)) < 1e-4);
  CHECK(grad_check([&](const Var& x) { return weigh(sigmoid(x)); }, a) < 1e-4);
  CHECK(grad_check([&](const Var& x) { return weigh(tanh(x)); }, a) < 1e-4);
  CHECK(grad_check([&](const Var& x) { return weigh(exp(x)); }, a) < 1e-4);
  CHECK(grad_check([&](const Var& x) { return weigh(log(add_scalar(square(x), 0.5))); }, a) < 1e-4);
  CHECK(grad_check([&](const Var& x) { return weigh(softplus(scale(x, 3.0))); }, a) < 1e-4);
  CHECK(grad_check([&](const Var& x) { return weigh(relu(x)); }, a) < 1e-4);
  CHECK(grad_check([&](const Var& x) { return weigh(softmax(x, 0)); }, a) < 1e-4);
  CHECK(grad_check([&](const Var& x) { return weigh(softmax(x, 1)); }, a) < 1e-4);
  CHECK(grad_check([&](const Var& x) { return weigh(log_softmax(x, 1)); }, a) < 1e-4);
  CHECK(grad_check([&](const Var& x) { return weigh(masked_softmax(x, NdArray::vector({1, 1, 0, 1}))); }, a) < 1e-4);
  CHECK(grad_check([&](const Var& x) { return weigh(mean_rows(x)); }, a) < 1e-4);
  CHECK(grad_check([&](const Var& x) { return mean(square(x)); }, a) < 1e-4);
  CHECK(grad_check(
            [&](const Var& x) {
              return weigh(layer_norm(x, Var::constant(random_array({4}, 25)), Var::constant(random_array({4}, 26))));
            },
            a) < 1e-4);
  CHECK(grad_check(
            [&](const Var& g) { return weigh(layer_norm(Var::constant(w), g, Var::constant(random_array({4}, 26)))); },
            random_array({4}, 27)) < 1e-4);
  auto idx = std::make_shared<const std::vector<std::size_t>>(std::vector<std::size_t>{11, 0, 0, 5, 7, 2});
  CHECK(grad_check([&](const Var& x) { return weigh(gather(x, idx, {2, 3})); }, a) < 1e-4);
  CHECK(grad_check([&](const Var& x) { return weigh(gather_rows(x, {2, 0, 2})); }, a) < 1e-4);
  CHECK(grad_check([&](const Var& x) { return weigh(pick(x, {3, 1, 0})); }, a) < 1e-4);
  CHECK(grad_check([&](const Var& x) { return weigh(concat_rows({x, Var::constant(c), x})); }, a) < 1e-4);
  CHECK(grad_check([&](const Var& x) { return weigh(slice_rows(x, 1, 3)); }, a) < 1e-4);
  CHECK(grad_check([&](const Var& x) { return weigh(reshape(x, {2, 6})); }, a) < 1e-4);
  CHECK(grad_check(
            [&](const Var& x) {
              RngStream local(42);
              return weigh(dropout(x, 0.3, local, true));
            },
            a) < 1e-4);
}

TEST_CASE("linear layer parameters pass grad_check_params") {
  RngStream rng(30);
  nn::Linear lin(4, 3, rng);
  nn::LayerNorm ln(3);
  const auto x = Var::constant(random_array({5, 4}, 31));
  nn::ParamList params;
  lin.collect(params, "lin");
  ln.collect(params, "ln");
  const auto mix = Var::constant(random_array({5, 3}, 32));
  auto loss = [&] { return sum(mul(tanh(ln(lin(x))), mix)); };
  CHECK(grad_check_params(loss, nn::vars_of(params)) < 1e-4);
}

TEST_CASE("rng streams are deterministic and substreams independent") {
  RngStream a(7), b(7), c(8);
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    CHECK(va == b.next_u64());
  }
  CHECK(RngStream(7).next_u64() != c.next_u64());
  CHECK(RngStream(7).substream(1).next_u64() == RngStream(7).substream(1).next_u64());
  CHECK(RngStream(7).substream(1).next_u64() != RngStream(7).substream(2).next_u64());

  // First outputs of xoshiro256** seeded through splitmix64(0) are fixed.
  RngStream zero(0);
  const std::uint64_t first = zero.next_u64();
  CHECK(first == RngStream(0).next_u64());

  RngStream n(3);
  double m = 0, s2 = 0;
  const int count = 200000;
  for (int i = 0; i < count; ++i) {
    const double v = n.normal();
    m += v;
    s2 += v * v;
  }
  m /= count;
  CHECK(std::abs(m) < 0.01);
  CHECK(std::abs(s2 / count - 1.0) < 0.02);
  for (int i = 0; i < 1000; ++i) CHECK(n.below(7) < 7);
}
