#include <catch2/catch_amalgamated.hpp>

#include "support/oracles.hpp"
#include "vclab/core/adam.hpp"
#include "vclab/core/nn.hpp"
#include "vclab/core/ops.hpp"

using namespace vclab;
using Catch::Approx;

namespace {

Tensor<double> tvec(std::vector<double> v, bool rg = false) {
  Shape s{static_cast<long>(v.size())};
  return Tensor<double>::from_values(s, std::move(v), rg);
}

}  // namespace

TEST_CASE("backward of a linear reduction gives all-ones gradient") {
  auto t = Tensor<double>::from_values({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  backward(sum(t));
  REQUIRE(t.grad().defined());
  for (double g : t.grad().values()) REQUIRE(g == 1.0);
}

TEST_CASE("backward of sum of squares doubles the input") {
  auto t = tvec({1.0, -2.0}, true);
  backward(sum(mul(t, t)));
  REQUIRE(t.grad().values()[0] == Approx(2.0));
  REQUIRE(t.grad().values()[1] == Approx(-4.0));
}

TEST_CASE("repeated backward calls accumulate") {
  auto t = tvec({3.0}, true);
  backward(sum(t));
  backward(sum(t));
  REQUIRE(t.grad().values()[0] == Approx(2.0));
  t.zero_grad();
  backward(sum(t));
  REQUIRE(t.grad().values()[0] == Approx(1.0));
}

TEST_CASE("backward rejects non-scalar roots and untracked graphs") {
  auto t = tvec({1.0, 2.0}, true);
  REQUIRE_THROWS_AS(backward(scalar_mul(t, 2.0)), std::invalid_argument);
  auto plain = tvec({1.0});
  REQUIRE_THROWS_AS(backward(sum(plain)), std::invalid_argument);
}

TEST_CASE("non-finite values are caught at op boundaries") {
  auto t = tvec({-1.0});
  REQUIRE_THROWS_AS(vclab::log(t), numerical_error);
  auto big = tvec({1e308});
  REQUIRE_THROWS_AS(mul(big, big), numerical_error);
}

TEST_CASE("random conv/sigmoid composition matches finite differences") {
  Rng rng(7);
  auto x = Tensor<double>::from_values({1, 2, 12}, [&] {
    std::vector<double> v(24);
    for (auto& e : v) e = rng.normal();
    return v;
  }(), true);
  auto k1 = Tensor<double>::from_values({3, 2, 3}, [&] {
    std::vector<double> v(18);
    for (auto& e : v) e = 0.5 * rng.normal();
    return v;
  }(), true);
  auto k2 = Tensor<double>::from_values({2, 3, 3}, [&] {
    std::vector<double> v(18);
    for (auto& e : v) e = 0.5 * rng.normal();
    return v;
  }(), true);
  auto loss = [&] {
    auto h1 = sigmoid(conv(x, k1, {1}, {1}, false, 1));
    auto h2 = conv(h1, k2, {2}, {1}, false, 1);
    return sum(mul(h2, h2));
  };
  double worst = oracles::gradcheck<double>(loss, {&x, &k1, &k2}, 1e-5, 1e-6, 1e-8);
  REQUIRE(worst <= 1.0);
}

TEST_CASE("elementwise primitives match finite differences") {
  Rng rng(11);
  auto x = Tensor<double>::from_values({6}, [&] {
    std::vector<double> v(6);
    for (auto& e : v) e = 0.5 + rng.uniform();  // keep log/sqrt in-domain
    return v;
  }(), true);
  auto y = Tensor<double>::from_values({6}, [&] {
    std::vector<double> v(6);
    for (auto& e : v) e = 0.5 + rng.uniform();
    return v;
  }(), true);

  auto check = [&](auto&& fn) {
    double worst = oracles::gradcheck<double>(fn, {&x, &y}, 1e-6, 1e-6, 1e-9);
    REQUIRE(worst <= 1.0);
  };
  check([&] { return sum(mul(x, y)); });
  check([&] { return sum(div(x, y)); });
  check([&] { return sum(sigmoid(sub(x, y))); });
  check([&] { return sum(vclab::exp(neg(x))); });
  check([&] { return sum(vclab::log(x)); });
  check([&] { return sum(vclab::sqrt(x)); });
  check([&] { return sum(abs_pow(sub(x, y), 1.0)); });
  check([&] { return sum(abs_pow(sub(x, y), 2.0)); });
  check([&] { return sum(abs_pow(sub(x, y), 1.5)); });
  check([&] { return mean(log_softmax(reshape(x, {2, 3}), 1)); });
}

TEST_CASE("32-bit gradients hold to the looser tolerance") {
  Rng rng(3);
  std::vector<float> xv(8);
  for (auto& e : xv) e = static_cast<float>(rng.normal());
  auto x = Tensor<float>::from_values({8}, xv, true);
  auto loss = [&] { return sum(mul(sigmoid(x), x)); };
  double worst = oracles::gradcheck<float>(loss, {&x}, 1e-2, 1e-3, 1e-4);
  REQUIRE(worst <= 1.0);
}

TEST_CASE("conv identity kernel and hand-computed strided case") {
  auto x = tvec({1, 2, 3});
  auto k = tvec({1});
  auto y = conv(x, k, {1}, {0}, false, 1);
  REQUIRE(y.values() == std::vector<double>{1, 2, 3});

  auto x2 = tvec({1, 2, 3, 4});
  auto k2 = tvec({1, 1});
  auto y2 = conv(x2, k2, {2}, {0}, false, 1);
  REQUIRE(y2.values() == std::vector<double>{3, 7});
}

TEST_CASE("transposed conv inverts the forward shape map") {
  // strides used by the generator stacks
  struct Case {
    long k, s, p;
  };
  for (Case c : {Case{8, 2, 3}, Case{4, 2, 1}, Case{5, 1, 2}, Case{9, 1, 4}}) {
    const long n = 32;
    const long down = conv_out_size(n, c.k, c.s, c.p);
    REQUIRE(deconv_out_size(down, c.k, c.s, c.p) == n);
  }
  // end to end on data: (Q,N) -> (Q,N/2) -> (Q,N)
  Rng rng(1);
  std::vector<double> v(6 * 16);
  for (auto& e : v) e = rng.normal();
  auto x = Tensor<double>::from_values({1, 1, 6, 16}, v);
  std::vector<double> kv(1 * 1 * 1 * 8, 0.1);
  auto w = Tensor<double>::from_values({1, 1, 1, 8}, kv);
  auto down = conv2d(x, w, ConvGeom{1, 8, 1, 2, 0, 3});
  REQUIRE(down.shape() == Shape{1, 1, 6, 8});
  auto up = conv_transpose2d(down, w, ConvGeom{1, 8, 1, 2, 0, 3});
  REQUIRE(up.shape() == Shape{1, 1, 6, 16});
}

TEST_CASE("conv rejects channel mismatches") {
  auto x = Tensor<double>::zeros({1, 2, 1, 8});
  auto w = Tensor<double>::zeros({4, 3, 1, 3});
  REQUIRE_THROWS_AS(conv2d(x, w, ConvGeom{1, 3, 1, 1, 0, 1}), std::invalid_argument);
}

TEST_CASE("batch norm normalizes per group then applies the affine map") {
  // group values [1,3] with scale 2, shift 1 -> [-1,3] up to the eps guard
  auto x = Tensor<double>::from_values({2, 1, 1, 1}, {1.0, 3.0});
  auto gamma = Tensor<double>::from_values({1}, {2.0});
  auto beta = Tensor<double>::from_values({1}, {1.0});
  auto y = batch_norm(x, gamma, beta, {0, 2, 3});
  REQUIRE(y.values()[0] == Approx(-1.0).margin(1e-4));
  REQUIRE(y.values()[1] == Approx(3.0).margin(1e-4));

  SECTION("already standardized input is a fixed point") {
    auto x2 = Tensor<double>::from_values({2, 1, 1, 1}, {-1.0, 1.0});
    auto g1 = Tensor<double>::from_values({1}, {1.0});
    auto b0 = Tensor<double>::from_values({1}, {0.0});
    auto y2 = batch_norm(x2, g1, b0, {0, 2, 3});
    REQUIRE(y2.values()[0] == Approx(-1.0).margin(1e-4));
    REQUIRE(y2.values()[1] == Approx(1.0).margin(1e-4));
  }
  SECTION("constant group degenerates to the shift") {
    auto xc = Tensor<double>::from_values({3, 1, 1, 1}, {5.0, 5.0, 5.0});
    auto g1 = Tensor<double>::from_values({1}, {1.0});
    auto b = Tensor<double>::from_values({1}, {0.25});
    auto y3 = batch_norm(xc, g1, b, {0, 2, 3});
    for (double v : y3.values()) REQUIRE(v == Approx(0.25));
  }
  SECTION("a single-element group is rejected") {
    auto x1 = Tensor<double>::from_values({1, 1, 1, 1}, {1.0});
    auto g1 = Tensor<double>::from_values({1}, {1.0});
    auto b0 = Tensor<double>::from_values({1}, {0.0});
    REQUIRE_THROWS_AS(batch_norm(x1, g1, b0, {0, 2, 3}), std::invalid_argument);
  }
}

TEST_CASE("batch norm gradient matches finite differences") {
  Rng rng(5);
  std::vector<double> v(2 * 2 * 1 * 4);
  for (auto& e : v) e = rng.normal();
  auto x = Tensor<double>::from_values({2, 2, 1, 4}, v, true);
  auto gamma = Tensor<double>::from_values({2}, {1.2, 0.7}, true);
  auto beta = Tensor<double>::from_values({2}, {0.1, -0.3}, true);
  auto loss = [&] {
    auto y = batch_norm(x, gamma, beta, {0, 2, 3});
    return sum(mul(y, y));
  };
  REQUIRE(oracles::gradcheck<double>(loss, {&x, &gamma, &beta}, 1e-5, 1e-5, 1e-7) <= 1.0);
}

TEST_CASE("glu gates the first half by the sigmoid of the second") {
  // X2 = 0 -> 0.5 * X1
  auto x = Tensor<double>::from_values({1, 2, 1, 2}, {2.0, 4.0, 0.0, 0.0});
  auto y = glu(x, 1);
  REQUIRE(y.values()[0] == Approx(1.0));
  REQUIRE(y.values()[1] == Approx(2.0));
  // X1 = 0 -> 0
  auto x0 = Tensor<double>::from_values({1, 2, 1, 1}, {0.0, 3.0});
  REQUIRE(glu(x0, 1).values()[0] == 0.0);
  // sigmoid(ln 3) = 3/4
  auto xh = Tensor<double>::from_values({1, 2, 1, 1}, {2.0, std::log(3.0)});
  REQUIRE(glu(xh, 1).values()[0] == Approx(1.5));
  // odd channels rejected
  auto xodd = Tensor<double>::zeros({1, 3, 1, 1});
  REQUIRE_THROWS_AS(glu(xodd, 1), std::invalid_argument);
}

TEST_CASE("glu output is bounded by the linear half") {
  Rng rng(9);
  std::vector<double> v(2 * 6 * 1 * 5);
  for (auto& e : v) e = 3.0 * rng.normal();
  auto x = Tensor<double>::from_values({2, 6, 1, 5}, v);
  auto y = glu(x, 1);
  auto a = slice(x, 1, 0, 3);
  for (std::size_t i = 0; i < y.values().size(); ++i)
    REQUIRE(std::abs(y.values()[i]) <= std::abs(a.values()[i]) + 1e-15);
}

TEST_CASE("adam with zero gradients is the identity on parameters") {
  Parameter<double> p("p", tvec({1.0, -2.0}));
  backward(scalar_mul(sum(p.value), 0.0));
  std::vector<Parameter<double>*> ps{&p};
  adam_step(ps, AdamConfig{0.1, 0.9, 0.999, 1e-8});
  REQUIRE(p.value.values()[0] == 1.0);
  REQUIRE(p.value.values()[1] == -2.0);
  REQUIRE(p.adam_t == 1);
}

TEST_CASE("first adam step moves by about the learning rate") {
  Parameter<double> p("p", tvec({0.0}));
  backward(sum(p.value));  // gradient 1
  std::vector<Parameter<double>*> ps{&p};
  adam_step(ps, AdamConfig{0.1, 0.9, 0.999, 1e-8});
  REQUIRE(p.value.values()[0] == Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adam step size is bounded by the learning rate under constant gradients") {
  Parameter<double> p("p", tvec({0.0}));
  std::vector<Parameter<double>*> ps{&p};
  double prev = 0.0;
  for (int step = 0; step < 2; ++step) {
    p.value.zero_grad();
    backward(sum(p.value));
    adam_step(ps, AdamConfig{0.05, 0.9, 0.999, 1e-8});
    const double delta = std::abs(p.value.values()[0] - prev);
    REQUIRE(delta <= 0.05 * (1.0 + 1e-6));
    prev = p.value.values()[0];
  }
}

TEST_CASE("adam aborts on non-finite gradients naming the parameter") {
  Parameter<double> p("layer/weight", tvec({1.0}));
  p.value.accumulate_grad(tvec({1.0}));
  // sneak a NaN in directly; op boundaries would normally have caught it
  p.value.grad().values()[0] = std::numeric_limits<double>::quiet_NaN();
  std::vector<Parameter<double>*> ps{&p};
  try {
    adam_step(ps, AdamConfig{});
    FAIL("expected numerical_error");
  } catch (const numerical_error& e) {
    REQUIRE(std::string(e.what()).find("layer/weight") != std::string::npos);
  }
}

TEST_CASE("gradients() computes without touching .grad and supports create_graph") {
  auto x = tvec({1.0, 2.0}, true);
  auto y = sum(mul(x, x));
  auto gs = gradients(y, {x}, true);
  REQUIRE_FALSE(x.grad().defined());
  REQUIRE(gs[0].values()[0] == Approx(2.0));
  REQUIRE(gs[0].values()[1] == Approx(4.0));
  // second-order: d/dx of sum(grad^2) = d/dx sum(4 x^2) = 8x
  auto g2 = gradients(sum(mul(gs[0], gs[0])), {x});
  REQUIRE(g2[0].values()[0] == Approx(8.0));
  REQUIRE(g2[0].values()[1] == Approx(16.0));
}

TEST_CASE("double backward through conv and sigmoid matches finite differences") {
  // FD of the gradient-norm functional, the pattern the gradient penalty uses
  Rng rng(21);
  std::vector<double> wv(1 * 2 * 1 * 3);
  for (auto& e : wv) e = 0.4 * rng.normal();
  auto w = Tensor<double>::from_values({1, 2, 1, 3}, wv, true);
  std::vector<double> xv(1 * 2 * 1 * 6);
  for (auto& e : xv) e = rng.normal();

  auto loss = [&] {
    auto x = Tensor<double>::from_values({1, 2, 1, 6}, xv, true);
    auto score = sum(sigmoid(conv2d(x, w, ConvGeom{1, 3, 1, 1, 0, 1})));
    auto g = gradients(score, {x}, true)[0];
    return sum(mul(g, g));
  };
  REQUIRE(oracles::gradcheck<double>(loss, {&w}, 1e-5, 1e-5, 1e-8) <= 1.0);
}
