#include <catch2/catch_amalgamated.hpp>

#include "uss/autograd/conv_ops.hpp"
#include "uss/autograd/gradcheck.hpp"
#include "uss/autograd/ops.hpp"
#include "uss/nn/adam.hpp"

using namespace uss;
using ag::Parameter;
using ag::Var;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * scale;
  return t;
}

// Finite-difference check of a loss built from a set of parameters.
void expect_gradcheck(const std::function<Var<double>()>& loss,
                      std::vector<Parameter<double>*> params, double tol,
                      uint64_t seed) {
  Rng rng(seed);
  auto report = ag::gradient_check(loss, params, tol, rng);
  INFO(report.summary());
  CHECK(report.pass);
}

}  // namespace

TEST_CASE("analytic derivatives of the stated examples") {
  // f(w) = sum(w * w), w = [1, 2, 3] -> grad [2, 4, 6]
  Parameter<double> w{"w", Tensor<double>({3}, {1.0, 2.0, 3.0})};
  auto wl = ag::leaf(w);
  auto loss = ag::sum_all(ag::mul(wl, wl));
  auto grads = ag::backward(loss);
  REQUIRE(grads.count(&w) == 1);
  const auto& g = grads.at(&w);
  CHECK(g[0] == Catch::Approx(2.0));
  CHECK(g[1] == Catch::Approx(4.0));
  CHECK(g[2] == Catch::Approx(6.0));

  // f(w) = sum(relu(w)), w = [-1, 0, 2] -> grad [0, 0, 1] (subgradient 0 at 0)
  Parameter<double> r{"r", Tensor<double>({3}, {-1.0, 0.0, 2.0})};
  auto rg = ag::backward(ag::sum_all(ag::relu(ag::leaf(r))));
  const auto& gr = rg.at(&r);
  CHECK(gr[0] == 0.0);
  CHECK(gr[1] == 0.0);
  CHECK(gr[2] == 1.0);
}

TEST_CASE("non-scalar backward is rejected") {
  Parameter<double> w{"w", Tensor<double>({2}, {1.0, 2.0})};
  auto v = ag::mul(ag::leaf(w), ag::leaf(w));
  CHECK_THROWS_AS(ag::backward(v), Error);
}

TEST_CASE("NaN in the forward names the primitive") {
  Parameter<double> w{"w", Tensor<double>({2}, {-1.0, 2.0})};
  auto bad = ag::sqrt_op(ag::leaf(w));  // sqrt(-1) = NaN
  auto loss = ag::sum_all(bad);
  try {
    ag::backward(loss);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.primitive() == std::string("sqrt"));
  }
}

TEST_CASE("per-primitive gradients match central finite differences") {
  Rng rng(42);

  SECTION("elementwise chain") {
    Parameter<double> w{"w", random_tensor({4, 5}, rng)};
    expect_gradcheck(
        [&] {
          auto x = ag::leaf(w);
          auto y = ag::add(ag::mul(ag::sigmoid(x), ag::tanh_op(x)),
                           ag::gelu(ag::scale(x, 0.7)));
          return ag::mean_all(ag::mul(y, y));
        },
        {&w}, 1e-6, 1);
  }

  SECTION("matmul and softmax") {
    Parameter<double> a{"a", random_tensor({3, 4}, rng)};
    Parameter<double> b{"b", random_tensor({4, 6}, rng)};
    expect_gradcheck(
        [&] {
          auto y = ag::softmax_rows(ag::matmul(ag::leaf(a), ag::leaf(b)));
          return ag::mean_all(ag::mul(y, y));
        },
        {&a, &b}, 1e-6, 2);
  }

  SECTION("layer norm") {
    Parameter<double> x{"x", random_tensor({5, 8}, rng)};
    Parameter<double> g{"g", random_tensor({8}, rng, 0.3)};
    Parameter<double> b{"b", random_tensor({8}, rng, 0.3)};
    expect_gradcheck(
        [&] {
          auto y = ag::layer_norm(ag::leaf(x), ag::add_scalar(ag::leaf(g), 1.0),
                                  ag::leaf(b));
          return ag::mean_all(ag::mul(y, y));
        },
        {&x, &g, &b}, 1e-4, 3);
  }

  SECTION("batch norm, training statistics") {
    Parameter<double> x{"x", random_tensor({3, 4, 5}, rng)};
    Parameter<double> g{"g", random_tensor({3}, rng, 0.3)};
    Parameter<double> b{"b", random_tensor({3}, rng, 0.3)};
    std::vector<double> rm(3, 0.0), rv(3, 1.0);
    expect_gradcheck(
        [&] {
          auto y = ag::batch_norm2d<double>(ag::leaf(x),
                                            ag::add_scalar(ag::leaf(g), 1.0),
                                            ag::leaf(b), rm, rv, true, nullptr,
                                            nullptr);
          return ag::mean_all(ag::mul(y, y));
        },
        {&x, &g, &b}, 1e-4, 4);
  }

  SECTION("conv2d with stride and padding") {
    Parameter<double> x{"x", random_tensor({2, 7, 9}, rng)};
    Parameter<double> w{"w", random_tensor({3, 2, 3, 3}, rng, 0.4)};
    Parameter<double> b{"b", random_tensor({3}, rng, 0.2)};
    expect_gradcheck(
        [&] {
          auto y = ag::conv2d(ag::leaf(x), ag::leaf(w), ag::leaf(b), 2, 2, 1, 1);
          return ag::mean_all(ag::mul(y, y));
        },
        {&x, &w, &b}, 1e-6, 5);
  }

  SECTION("transposed conv2d") {
    Parameter<double> x{"x", random_tensor({3, 4, 5}, rng)};
    Parameter<double> w{"w", random_tensor({3, 2, 2, 2}, rng, 0.4)};
    Parameter<double> b{"b", random_tensor({2}, rng, 0.2)};
    expect_gradcheck(
        [&] {
          auto y = ag::conv_transpose2d(ag::leaf(x), ag::leaf(w), ag::leaf(b), 2);
          return ag::mean_all(ag::mul(y, y));
        },
        {&x, &w, &b}, 1e-6, 6);
  }

  SECTION("pooling") {
    Parameter<double> x{"x", random_tensor({2, 6, 8}, rng)};
    expect_gradcheck(
        [&] {
          auto m = ag::mean_pool2d(ag::leaf(x), 2);
          auto M = ag::max_pool2d(ag::leaf(x), 2);
          return ag::mean_all(ag::mul(ag::add(m, M), ag::add(m, M)));
        },
        {&x}, 1e-6, 7);
  }

  SECTION("attention") {
    Parameter<double> q{"q", random_tensor({5, 4}, rng, 0.7)};
    Parameter<double> k{"k", random_tensor({5, 4}, rng, 0.7)};
    Parameter<double> v{"v", random_tensor({5, 4}, rng, 0.7)};
    expect_gradcheck(
        [&] {
          auto y = ag::scaled_dot_attention(ag::leaf(q), ag::leaf(k), ag::leaf(v));
          return ag::mean_all(ag::mul(y, y));
        },
        {&q, &k, &v}, 1e-5, 8);
  }

  SECTION("concat, slice, gather, tile, crop, pad") {
    Parameter<double> a{"a", random_tensor({4, 3}, rng)};
    Parameter<double> b{"b", random_tensor({4, 2}, rng)};
    Parameter<double> img{"img", random_tensor({2, 5, 6}, rng)};
    expect_gradcheck(
        [&] {
          auto cat = ag::concat_cols<double>({ag::leaf(a), ag::leaf(b)});
          auto s = ag::slice_cols(cat, 1, 3);
          auto g = ag::gather_rows(s, {2, 0, 2, 3});
          auto t = ag::tile_rows(g, 9);
          auto i2 = ag::pad2d(ag::crop2d(ag::leaf(img), 4, 5), 5, 7);
          return ag::add(ag::mean_all(ag::mul(t, t)), ag::mean_all(ag::mul(i2, i2)));
        },
        {&a, &b, &img}, 1e-6, 9);
  }

  SECTION("row_pool_meanmax and mean reductions") {
    Parameter<double> x{"x", random_tensor({7, 4}, rng)};
    expect_gradcheck(
        [&] {
          auto p = ag::row_pool_meanmax(ag::leaf(x), 3);  // window 3, zero-pad tail
          auto m = ag::mean_rows(ag::leaf(x));
          return ag::add(ag::mean_all(ag::mul(p, p)),
                         ag::mean_all(ag::mul(m, m)));
        },
        {&x}, 1e-6, 10);
  }

  SECTION("division and channel affine") {
    Parameter<double> x{"x", random_tensor({3, 2, 4}, rng)};
    Parameter<double> g{"g", random_tensor({3}, rng, 0.5)};
    Parameter<double> b{"b", random_tensor({3}, rng, 0.5)};
    expect_gradcheck(
        [&] {
          auto y = ag::channel_affine(ag::leaf(x), ag::add_scalar(ag::leaf(g), 2.0),
                                      ag::leaf(b));
          auto d = ag::div(y, ag::add_scalar(ag::mul(y, y), 1.0));
          return ag::mean_all(d);
        },
        {&x, &g, &b}, 1e-6, 11);
  }

  SECTION("cross entropy") {
    Parameter<double> z{"z", random_tensor({6}, rng)};
    expect_gradcheck([&] { return ag::cross_entropy_logits(ag::leaf(z), 2); },
                     {&z}, 1e-6, 12);
  }
}

TEST_CASE("random conv net gradients match finite differences") {
  Rng rng(2024);
  Parameter<double> w1{"w1", random_tensor({4, 1, 3, 3}, rng, 0.5)};
  Parameter<double> b1{"b1", random_tensor({4}, rng, 0.1)};
  Parameter<double> w2{"w2", random_tensor({6, 4, 3, 3}, rng, 0.3)};
  Parameter<double> b2{"b2", random_tensor({6}, rng, 0.1)};
  Parameter<double> w3{"w3", random_tensor({3, 6, 3, 3}, rng, 0.3)};
  Parameter<double> b3{"b3", random_tensor({3}, rng, 0.1)};
  const Tensor<double> input = random_tensor({1, 12, 14}, rng);

  auto loss = [&] {
    auto x = ag::constant(input);
    auto h1 = ag::relu(ag::conv2d(x, ag::leaf(w1), ag::leaf(b1), 1, 1, 1, 1));
    auto h2 = ag::relu(ag::conv2d(h1, ag::leaf(w2), ag::leaf(b2), 2, 2, 1, 1));
    auto h3 = ag::conv2d(h2, ag::leaf(w3), ag::leaf(b3), 1, 1, 0, 0);
    return ag::mean_all(ag::mul(h3, h3));
  };
  Rng check_rng(7);
  auto report =
      ag::gradient_check(loss, {&w1, &b1, &w2, &b2, &w3, &b3}, 1e-4, check_rng);
  INFO(report.summary());
  CHECK(report.pass);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("backprop is linear in the loss") {
  Rng rng(5);
  Parameter<double> w{"w", random_tensor({6, 6}, rng)};
  const Tensor<double> c1 = random_tensor({6, 6}, rng);
  const Tensor<double> c2 = random_tensor({6, 6}, rng);

  auto f = [&] {
    return ag::mean_all(ag::mul(ag::leaf(w), ag::constant(c1)));
  };
  auto g = [&] {
    return ag::mean_all(ag::sigmoid(ag::mul(ag::leaf(w), ag::constant(c2))));
  };
  const double a = 2.25, b = -0.75;
  auto combined = ag::add(ag::scale(f(), a), ag::scale(g(), b));
  auto grad_combined = ag::backward(combined).at(&w);
  auto grad_f = ag::backward(f()).at(&w);
  auto grad_g = ag::backward(g()).at(&w);
  for (int64_t i = 0; i < grad_combined.size(); ++i)
    CHECK(grad_combined[i] ==
          Catch::Approx(a * grad_f[i] + b * grad_g[i]).margin(1e-12));
}

TEST_CASE("forward is deterministic for identical seeds") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    Parameter<float> w{"w", random_tensor({8, 8}, rng).cast<float>()};
    auto y = ag::softmax_rows(ag::matmul(ag::leaf(w), ag::leaf(w)));
    return y->value;
  };
  auto a = run(99), b = run(99), c = run(100);
  REQUIRE(a.size() == b.size());
  bool identical = true, differs = false;
  for (int64_t i = 0; i < a.size(); ++i) {
    identical &= a[i] == b[i];
    differs |= a[i] != c[i];
  }
  CHECK(identical);
  CHECK(differs);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged, moments decay") {
  Parameter<float> w{"w", Tensor<float>({3}, {1.0f, -2.0f, 3.0f})};
  nn::Adam<float> opt(0.001f);
  ag::GradMap<float> grads;
  grads.emplace(&w, Tensor<float>({3}));
  const Tensor<float> before = w.value;
  for (int step = 0; step < 5; ++step) opt.step({&w}, grads);
  for (int64_t i = 0; i < 3; ++i) CHECK(w.value[i] == before[i]);
}

TEST_CASE("adam: first step moves by about -lr") {
  Parameter<float> w{"w", Tensor<float>({1}, {0.0f})};
  nn::Adam<float> opt(0.001f);
  ag::GradMap<float> grads;
  grads.emplace(&w, Tensor<float>({1}, {1.0f}));
  opt.step({&w}, grads);
  // bias-corrected first step: -lr * g / (|g| + eps) = -lr
  CHECK(w.value[0] == Catch::Approx(-0.001).epsilon(1e-3));
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adam: 100 steps descend (w-3)^2 close to the optimum") {
  Parameter<float> w{"w", Tensor<float>({1}, {0.0f})};
  nn::Adam<float> opt(0.1f);
  for (int step = 0; step < 100; ++step) {
    auto loss_var = [&] {
      auto x = ag::add_scalar(ag::leaf(w), -3.0f);
      return ag::mul(x, x);
    }();
    auto loss_scalar = ag::reshape(loss_var, {});
    auto grads = ag::backward(loss_scalar);
    opt.step({&w}, grads);
  }
  CHECK(std::abs(w.value[0] - 3.0f) < 0.1f);
}

TEST_CASE("adam rejects shape mismatch") {
  Parameter<float> w{"w", Tensor<float>({3})};
  nn::Adam<float> opt;
  ag::GradMap<float> grads;
  grads.emplace(&w, Tensor<float>({2}));
  CHECK_THROWS_AS(opt.step({&w}, grads), Error);
}
