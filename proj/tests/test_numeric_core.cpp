#include <doctest.h>

#include "skelreid/grad_check.hpp"
#include "skelreid/optim.hpp"
#include "skelreid/tensor.hpp"

#include <cmath>
#include <random>

using namespace skelreid;

namespace {

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (Index i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

// Keeps entries away from 0 so |x|^3 and ReLU stay smooth under +-eps.
Tensor<double> away_from_zero(Shape shape, std::mt19937_64& rng) {
  Tensor<double> t = random_tensor(std::move(shape), rng, 0.1, 1.0);
  std::bernoulli_distribution flip(0.5);
  for (Index i = 0; i < t.size(); ++i) {
    if (flip(rng)) t[i] = -t[i];
  }
  return t;
}

Tensor<double> from_rows(Shape shape, std::initializer_list<double> values) {
  Tensor<double> t(std::move(shape));
  Index i = 0;
  for (double v : values) t[i++] = v;
  return t;
}

// Naive definition of the strided convolution for cross-checking.
Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& k, Index stride) {
  const Index c_in = x.dim(0), frames = x.dim(1), nodes = x.dim(2);
  const Index c_out = k.dim(0), width = k.dim(2);
  const Index pad = (width - stride) / 2;
  Tensor<double> out({c_out, frames / stride, nodes});
  for (Index o = 0; o < c_out; ++o)
    for (Index t = 0; t < frames / stride; ++t)
      for (Index j = 0; j < nodes; ++j) {
        double s = 0;
        for (Index c = 0; c < c_in; ++c)
          for (Index w = 0; w < width; ++w) {
            const Index src = t * stride + w - pad;
            if (src >= 0 && src < frames) s += k(o, c, w) * x(c, src, j);
          }
        out(o, t, j) = s;
      }
  return out;
}

}  // namespace

TEST_SUITE("matmul") {
  TEST_CASE("identity times X is X") {
    std::mt19937_64 rng(1);
    const auto x = random_tensor({2, 3}, rng);
    const auto eye = from_rows({2, 2}, {1, 0, 0, 1});
    CHECK(matmul(eye, x) == x);
  }

  TEST_CASE("hand product") {
    const auto a = from_rows({2, 2}, {1, 2, 3, 4});
    const auto b = from_rows({2, 1}, {1, 1});
    const auto c = matmul(a, b);
    CHECK(c.shape() == Shape{2, 1});
    CHECK(c[0] == 3.0);
    CHECK(c[1] == 7.0);
  }

  TEST_CASE("zero matrix annihilates") {
    std::mt19937_64 rng(2);
    const auto x = random_tensor({3, 4}, rng);
    const auto c = matmul(Tensor<double>({2, 3}), x);
    CHECK(c.values().isZero(0.0));
  }

  TEST_CASE("inner extent mismatch throws") {
    CHECK_THROWS_AS(matmul(Tensor<double>({2, 3}), Tensor<double>({2, 3})), ShapeError);
  }

  TEST_CASE("backward matches finite differences") {
    std::mt19937_64 rng(3);
    ParamTensor<double> a(random_tensor({3, 4}, rng));
    ParamTensor<double> b(random_tensor({4, 2}, rng));
    const auto weights = random_tensor({3, 2}, rng);
    auto loss = [&] { return matmul(a.value, b.value).values().dot(weights.values()); };
    auto backward = [&] {
      auto g = matmul_backward(a.value, b.value, weights);
      a.grad = g.da;
      b.grad = g.db;
    };
    const auto r = grad_check<double>(loss, backward, {&a, &b});
    CHECK(r.max_relative_error < 1e-6);
  }
}

TEST_SUITE("conv_temporal") {
  TEST_CASE("frame chain of the encoder") {
    const Tensor<double> kernel({1, 1, 9});
    for (auto [t_in, t_out] : {std::pair{50, 25}, {25, 12}, {12, 6}, {6, 3}, {3, 1}}) {
      CHECK(conv_temporal(Tensor<double>({1, t_in, 2}), kernel).dim(1) == t_out);
    }
  }

  TEST_CASE("output length is floor(T/2) for T in [1, 128]") {
    const Tensor<double> kernel({2, 2, 9});
    for (Index t = 1; t <= 128; ++t) {
      CHECK(conv_temporal(Tensor<double>({2, t, 3}), kernel).dim(1) == t / 2);
    }
  }

  TEST_CASE("T = 0 is rejected") {
    CHECK_THROWS_AS(conv_temporal(Tensor<double>({1, 0, 3}), Tensor<double>({1, 1, 9})), ShapeError);
  }

  TEST_CASE("delta at tap 3 picks even frames") {
    std::mt19937_64 rng(4);
    const auto x = random_tensor({3, 20, 4}, rng);
    Tensor<double> kernel({3, 3, 9});
    for (Index c = 0; c < 3; ++c) kernel(c, c, 3) = 1.0;
    const auto y = conv_temporal(x, kernel);
    REQUIRE(y.shape() == Shape{3, 10, 4});
    for (Index c = 0; c < 3; ++c)
      for (Index t = 0; t < 10; ++t)
        for (Index j = 0; j < 4; ++j) CHECK(y(c, t, j) == x(c, 2 * t, j));
  }

  TEST_CASE("zero kernel gives zero output") {
    std::mt19937_64 rng(5);
    const auto y = conv_temporal(random_tensor({2, 11, 3}, rng), Tensor<double>({4, 2, 9}));
    CHECK(y.values().isZero(0.0));
  }

  TEST_CASE("matches the naive definition") {
    std::mt19937_64 rng(6);
    for (Index t : {2, 3, 7, 13, 50}) {
      const auto x = random_tensor({3, t, 5}, rng);
      const auto k = random_tensor({4, 3, 9}, rng);
      const auto fast = conv_temporal(x, k);
      const auto slow = conv_oracle(x, k, 2);
      REQUIRE(fast.shape() == slow.shape());
      CHECK((fast.values() - slow.values()).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  TEST_CASE("backward matches finite differences") {
    std::mt19937_64 rng(7);
    ParamTensor<double> x(random_tensor({3, 11, 4}, rng));
    ParamTensor<double> k(random_tensor({2, 3, 9}, rng));
    const auto weights = random_tensor({2, 5, 4}, rng);
    auto loss = [&] { return conv_temporal(x.value, k.value).values().dot(weights.values()); };
    auto backward = [&] {
      auto g = conv_temporal_backward(x.value, k.value, weights);
      x.grad = g.dx;
      k.grad = g.dkernel;
    };
    const auto r = grad_check<double>(loss, backward, {&x, &k});
    CHECK(r.max_relative_error < 1e-6);
  }
}

TEST_SUITE("l3_pool") {
  TEST_CASE("examples") {
    CHECK(l3_pool(from_rows({1, 3}, {1, 1, 1}))[0] == doctest::Approx(1.442249).epsilon(1e-6));
    CHECK(l3_pool(from_rows({1, 1}, {-2.5}))[0] == doctest::Approx(2.5).epsilon(1e-15));
    CHECK(l3_pool(Tensor<double>({2, 4}))[1] == 0.0);
  }

  TEST_CASE("zero channel has zero gradient") {
    const Tensor<double> x({1, 3});
    const auto pooled = l3_pool(x);
    const auto dx = l3_pool_backward(x, pooled, from_rows({1}, {1.0}));
    CHECK(dx.values().isZero(0.0));
  }

  TEST_CASE("l3_pool after matmul passes grad check") {
    std::mt19937_64 rng(8);
    ParamTensor<double> w(away_from_zero({4, 4}, rng));
    const auto x = away_from_zero({4, 5}, rng);
    const auto weights = random_tensor({4}, rng);
    auto loss = [&] { return l3_pool(matmul(w.value, x)).values().dot(weights.values()); };
    auto backward = [&] {
      const auto y = matmul(w.value, x);
      const auto dy = l3_pool_backward(y, l3_pool(y), weights);
      w.grad = matmul_backward(w.value, x, dy).da;
    };
    const auto r = grad_check<double>(loss, backward, {&w});
    CHECK(r.max_relative_error < 1e-6);
  }

  TEST_CASE("direct grad check away from zero") {
    std::mt19937_64 rng(9);
    ParamTensor<double> x(away_from_zero({3, 6}, rng));
    const auto weights = random_tensor({3}, rng);
    auto loss = [&] { return l3_pool(x.value).values().dot(weights.values()); };
    auto backward = [&] { x.grad = l3_pool_backward(x.value, l3_pool(x.value), weights); };
    CHECK(grad_check<double>(loss, backward, {&x}).max_relative_error < 1e-6);
  }
}

TEST_CASE("relu backward matches finite differences away from the kink") {
  std::mt19937_64 rng(10);
  ParamTensor<double> x(away_from_zero({4, 5}, rng));
  const auto weights = random_tensor({4, 5}, rng);
  auto loss = [&] { return relu(x.value).values().dot(weights.values()); };
  auto backward = [&] { x.grad = relu_backward(x.value, weights); };
  CHECK(grad_check<double>(loss, backward, {&x}).max_relative_error < 1e-6);
}

TEST_SUITE("sgd") {
  TEST_CASE("zero gradient and velocity leave parameters unchanged") {
    std::mt19937_64 rng(11);
    ParamTensor<double> p(random_tensor({3, 3}, rng));
    const auto before = p.value;
    ParamTensor<double>* ps[] = {&p};
    sgd_nesterov_step<double>(ps, OptimConfig{});
    CHECK(p.value == before);
  }

  TEST_CASE("hand-evaluated nesterov step") {
    ParamTensor<double> p(from_rows({1}, {1.0}));
    p.grad[0] = 1.0;
    ParamTensor<double>* ps[] = {&p};
    OptimConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.momentum = 0.9;
    sgd_nesterov_step<double>(ps, cfg);
    CHECK(p.velocity[0] == doctest::Approx(-0.1).epsilon(1e-15));
    CHECK(p.value[0] == doctest::Approx(0.81).epsilon(1e-15));
  }

  TEST_CASE("plain momentum adds the velocity") {
    ParamTensor<double> p(from_rows({1}, {1.0}));
    p.grad[0] = 1.0;
    p.velocity[0] = 0.5;
    ParamTensor<double>* ps[] = {&p};
    OptimConfig cfg{0.1, 0.9, 0.1, 10, false};
    sgd_nesterov_step<double>(ps, cfg);
    CHECK(p.velocity[0] == doctest::Approx(0.35));
    CHECK(p.value[0] == doctest::Approx(1.35));
  }

  TEST_CASE("momentum zero is bit-identical to gradient descent") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 20; ++trial) {
      ParamTensor<double> p(random_tensor({5, 7}, rng, -10, 10));
      p.grad = random_tensor({5, 7}, rng, -10, 10);
      const double lr = std::uniform_real_distribution<double>(1e-4, 1.0)(rng);
      const Eigen::VectorXd expected = p.value.values() - lr * p.grad.values();
      OptimConfig cfg;
      cfg.momentum = 0.0;
      ParamTensor<double>* ps[] = {&p};
      for (bool nesterov : {true, false}) {
        ParamTensor<double> q = p;
        ParamTensor<double>* qs[] = {&q};
        cfg.nesterov = nesterov;
        sgd_nesterov_step<double>(qs, cfg, lr);
        CHECK(q.value.values() == expected);
      }
      (void)ps;
    }
  }

  TEST_CASE("learning-rate schedule") {
    const OptimConfig cfg;
    for (int epoch = 0; epoch < 50; ++epoch) {
      CHECK(scheduled_learning_rate(cfg, epoch) == 1e-2 * std::pow(0.1, epoch / 10));
    }
    CHECK(scheduled_learning_rate(cfg, 0) == 1e-2);
    CHECK(scheduled_learning_rate(cfg, 10) == doctest::Approx(1e-3).epsilon(1e-15));
    CHECK(scheduled_learning_rate(cfg, 20) == doctest::Approx(1e-4).epsilon(1e-15));
  }

  TEST_CASE("config validation") {
    CHECK_THROWS(OptimConfig{0.0, 0.9, 0.1, 10, true}.validate());
    CHECK_THROWS(OptimConfig{1e-2, 1.0, 0.1, 10, true}.validate());
    CHECK_THROWS(OptimConfig{1e-2, 0.9, 0.0, 10, true}.validate());
    CHECK_NOTHROW(OptimConfig{}.validate());
  }
}

TEST_SUITE("grad_check") {
  TEST_CASE("square at three") {
    ParamTensor<double> theta(from_rows({1}, {3.0}));
    auto loss = [&] { return theta.value[0] * theta.value[0]; };
    auto backward = [&] { theta.grad[0] = 2.0 * theta.value[0]; };
    const auto r = grad_check<double>(loss, backward, {&theta}, 1e-5);
    CHECK(r.analytic_at_worst == 6.0);
    CHECK(r.numeric_at_worst == doctest::Approx(6.0));
    CHECK(r.max_relative_error < 1e-8);
  }

  TEST_CASE("constant function") {
    ParamTensor<double> theta(from_rows({2}, {1.0, -4.0}));
    auto loss = [&] { return 5.0; };
    auto backward = [&] {};
    CHECK(grad_check<double>(loss, backward, {&theta}).max_relative_error == 0.0);
  }

  TEST_CASE("detects a wrong gradient") {
    ParamTensor<double> theta(from_rows({1}, {2.0}));
    auto loss = [&] { return theta.value[0] * theta.value[0]; };
    auto backward = [&] { theta.grad[0] = 3.0 * theta.value[0]; };
    CHECK(grad_check<double>(loss, backward, {&theta}).max_relative_error > 0.1);
  }
}

TEST_CASE("templated core also runs in single precision") {
  std::mt19937_64 rng(13);
  Tensor<float> x({2, 10, 3});
  for (Index i = 0; i < x.size(); ++i) x[i] = static_cast<float>(i % 7) - 3.0f;
  Tensor<float> k({2, 2, 9});
  k(0, 0, 3) = 1.0f;
  k(1, 1, 3) = 1.0f;
  const auto y = conv_temporal(x, k);
  CHECK(y(1, 2, 1) == x(1, 4, 1));
  CHECK(l3_pool(Tensor<float>({2, 3})).size() == 2);
}
