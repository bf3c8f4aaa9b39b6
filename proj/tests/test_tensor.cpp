#include "agm/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <vector>

namespace {

constexpr double kFdStep = 1e-6;

// Central difference of a scalar functional w.r.t. one storage slot.
double fd_slot(const std::function<double()>& eval, double& slot) {
  const double saved = slot;
  slot = saved + kFdStep;
  const double up = eval();
  slot = saved - kFdStep;
  const double down = eval();
  slot = saved;
  return (up - down) / (2.0 * kFdStep);
}

// Checks every coordinate of every parameter: analytic vs central difference,
// relative error at most 1e-5.
void expect_grads_match(std::vector<agm::Tensor>& params,
                        const std::function<agm::Tensor()>& build) {
  std::vector<std::vector<double>> analytic;
  {
    agm::Tape tape;
    agm::GradScope scope(tape);
    agm::Tensor loss = build();
    tape.backward(loss);
    for (const auto& p : params) {
      analytic.push_back(tape.grad(p).values());
    }
  }
  const auto eval = [&]() { return build().item(); };
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi].values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double a = analytic[pi][i];
      const double n = fd_slot(eval, vals[i]);
      const double tol = 1e-5 * std::max(std::abs(a), std::abs(n)) + 1e-9;
      ASSERT_LE(std::abs(a - n), tol)
          << "param " << pi << " index " << i << ": analytic " << a << " numeric " << n;
    }
  }
}

agm::Tensor randn(agm::Rng& rng, agm::Shape shape) {
  return agm::random_normal(rng, std::move(shape)).set_requires_grad(true);
}

// Random values kept away from a kink at `center` so finite differences stay valid.
agm::Tensor randn_away_from(agm::Rng& rng, agm::Shape shape, double center, double gap) {
  agm::Tensor t = agm::random_normal(rng, std::move(shape));
  for (double& v : t.values()) {
    if (std::abs(v - center) < gap) {
      v = center + (v >= center ? gap : -gap);
    }
  }
  t.set_requires_grad(true);
  return t;
}

// ---------------------------------------------------------------------------
// Forward values

TEST(Tensor, ConstructionAndAccess) {
  agm::Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.at(1, 2), 6.0);
  EXPECT_EQ(agm::Tensor::scalar(4.5).item(), 4.5);
  EXPECT_THROW(t.item(), std::invalid_argument);
  EXPECT_THROW(agm::Tensor({2, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
}

TEST(Tensor, ElementwiseForward) {
  agm::Tensor a({2, 2}, std::vector<double>{1, 2, 3, 4});
  agm::Tensor b({2, 2}, std::vector<double>{10, 20, 30, 40});
  EXPECT_EQ(agm::add(a, b).values(), (std::vector<double>{11, 22, 33, 44}));
  EXPECT_EQ(agm::sub(b, a).values(), (std::vector<double>{9, 18, 27, 36}));
  EXPECT_EQ(agm::mul(a, b).values(), (std::vector<double>{10, 40, 90, 160}));
  EXPECT_EQ(agm::div(b, a).values(), (std::vector<double>{10, 10, 10, 10}));
  EXPECT_EQ(agm::scale(a, 2.0).values(), (std::vector<double>{2, 4, 6, 8}));
  EXPECT_EQ(agm::add(a, 1.0).values(), (std::vector<double>{2, 3, 4, 5}));
  EXPECT_EQ(agm::sub(1.0, a).values(), (std::vector<double>{0, -1, -2, -3}));
}

TEST(Tensor, BroadcastForward) {
  agm::Tensor a({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  agm::Tensor row({3}, std::vector<double>{10, 20, 30});
  EXPECT_EQ(agm::add(a, row).values(), (std::vector<double>{11, 22, 33, 14, 25, 36}));
  EXPECT_EQ(agm::add(row, a).values(), (std::vector<double>{11, 22, 33, 14, 25, 36}));
  EXPECT_EQ(agm::mul(a, agm::Tensor::scalar(3.0)).values(),
            (std::vector<double>{3, 6, 9, 12, 15, 18}));
  EXPECT_EQ(agm::sub(agm::Tensor::scalar(0.0), a).at(0, 0), -1.0);
}

TEST(Tensor, ShapeMismatchThrows) {
  agm::Tensor a({2, 3});
  agm::Tensor b({4});
  try {
    agm::add(a, b);
    FAIL() << "expected invalid_argument";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("shape mismatch"), std::string::npos);
  }
}

TEST(Tensor, DivisionByZeroThrows) {
  agm::Tensor a({2}, std::vector<double>{1, 2});
  agm::Tensor b({2}, std::vector<double>{1, 0});
  EXPECT_THROW(agm::div(a, b), std::domain_error);
}

TEST(Tensor, MatmulMatchesNaiveOracle) {
  agm::Rng rng(4);
  agm::Tensor a = agm::random_normal(rng, {3, 5});
  agm::Tensor b = agm::random_normal(rng, {5, 4});
  agm::Tensor c = agm::matmul(a, b);
  ASSERT_EQ(c.shape(), (agm::Shape{3, 4}));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 5; ++k) {
        acc += a.at(i, k) * b.at(k, j);
      }
      EXPECT_NEAR(c.at(i, j), acc, 1e-13 * (1.0 + std::abs(acc)));
    }
  }
  EXPECT_THROW(agm::matmul(a, agm::Tensor({3, 2})), std::invalid_argument);
}

TEST(Tensor, UnaryForwardValues) {
  agm::Tensor x({5}, std::vector<double>{-2, -0.5, 0, 0.5, 2});
  EXPECT_EQ(agm::relu(x).values(), (std::vector<double>{0, 0, 0, 0.5, 2}));
  EXPECT_DOUBLE_EQ(agm::sigmoid(agm::Tensor::scalar(0.0)).item(), 0.5);
  EXPECT_NEAR(agm::sigmoid(agm::Tensor::scalar(2.0)).item(), 1.0 / (1.0 + std::exp(-2.0)),
              1e-15);
  EXPECT_NEAR(agm::silu(agm::Tensor::scalar(1.0)).item(), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_DOUBLE_EQ(agm::gelu(agm::Tensor::scalar(0.0)).item(), 0.0);
  // gelu(x) = x * Phi(x) with the exact Gaussian CDF.
  EXPECT_NEAR(agm::gelu(agm::Tensor::scalar(1.0)).item(),
              0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0))), 1e-15);
  EXPECT_EQ(agm::square(x).values(), (std::vector<double>{4, 0.25, 0, 0.25, 4}));
  EXPECT_EQ(agm::clamp(x, -1.0, 1.0).values(), (std::vector<double>{-1, -0.5, 0, 0.5, 1}));
  EXPECT_NEAR(agm::sin(agm::Tensor::scalar(0.7)).item(), std::sin(0.7), 1e-16);
  EXPECT_NEAR(agm::cos(agm::Tensor::scalar(0.7)).item(), std::cos(0.7), 1e-16);
}

TEST(Tensor, SigmoidStableAtExtremes) {
  EXPECT_NEAR(agm::sigmoid(agm::Tensor::scalar(800.0)).item(), 1.0, 1e-15);
  EXPECT_GE(agm::sigmoid(agm::Tensor::scalar(-800.0)).item(), 0.0);
  EXPECT_LT(agm::sigmoid(agm::Tensor::scalar(-800.0)).item(), 1e-300);
  EXPECT_TRUE(std::isfinite(agm::silu(agm::Tensor::scalar(-800.0)).item()));
}

TEST(Tensor, ReductionsForward) {
  agm::Tensor x({2, 4}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
  EXPECT_EQ(agm::reduce_sum(x).item(), 36.0);
  EXPECT_EQ(agm::reduce_mean(x).item(), 4.5);
  EXPECT_EQ(agm::reduce_sum(x, 0).values(), (std::vector<double>{6, 8, 10, 12}));
  EXPECT_EQ(agm::reduce_sum(x, 1).values(), (std::vector<double>{10, 26}));
  EXPECT_EQ(agm::reduce_mean(x, 1).values(), (std::vector<double>{2.5, 6.5}));
  EXPECT_EQ(agm::reduce_sum(x, 1).shape(), (agm::Shape{2}));
  EXPECT_THROW(agm::reduce_sum(x, 2), std::invalid_argument);
  EXPECT_THROW(agm::reduce_sum(agm::Tensor({0})), std::invalid_argument);
}

TEST(Tensor, PairwiseMeanOfEqualValuesIsExact) {
  // Power-of-two length: the pairwise tree averages equal values with no
  // rounding at all.
  const double v = 0.1 + 1.0 / 3.0;
  for (std::size_t n : {2u, 8u, 256u, 1024u}) {
    agm::Tensor x({n}, v);
    EXPECT_EQ(agm::reduce_mean(x).item(), v) << "n=" << n;
  }
}

TEST(Tensor, ReshapeSharesStorage) {
  agm::Tensor x({6}, std::vector<double>{1, 2, 3, 4, 5, 6});
  agm::Tensor y = x.reshape({2, 3});
  EXPECT_EQ(y.at(1, 0), 4.0);
  y.values()[0] = 99.0;
  EXPECT_EQ(x.at(0), 99.0);
  EXPECT_THROW(x.reshape({4}), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Gradients vs finite differences

TEST(TensorGrad, ElementwiseBinaries) {
  agm::Rng rng(100);
  agm::Tensor a = randn(rng, {100});
  agm::Tensor b = randn(rng, {100});
  std::vector<agm::Tensor> ab{a, b};
  // Mean-reduced losses stay O(1) so central differences at h=1e-6 resolve
  // even the smallest gradient coordinates.
  expect_grads_match(ab, [&] { return agm::reduce_mean(agm::square(agm::add(a, b))); });
  expect_grads_match(ab, [&] { return agm::reduce_mean(agm::square(agm::sub(a, b))); });
  expect_grads_match(ab, [&] { return agm::reduce_mean(agm::square(agm::mul(a, b))); });

  agm::Tensor denom = agm::random_normal(rng, {100});
  for (double& v : denom.values()) {
    v = 0.5 + std::abs(v);
  }
  denom.set_requires_grad(true);
  std::vector<agm::Tensor> ad{a, denom};
  expect_grads_match(ad, [&] { return agm::reduce_mean(agm::square(agm::div(a, denom))); });
}

TEST(TensorGrad, Broadcasts) {
  agm::Rng rng(101);
  agm::Tensor a = randn(rng, {4, 25});
  agm::Tensor row = randn(rng, {25});
  agm::Tensor s = randn(rng, {1});
  std::vector<agm::Tensor> pr{a, row};
  expect_grads_match(pr, [&] { return agm::reduce_sum(agm::square(agm::add(a, row))); });
  expect_grads_match(pr, [&] { return agm::reduce_sum(agm::square(agm::mul(row, a))); });
  std::vector<agm::Tensor> ps{a, s};
  expect_grads_match(ps, [&] { return agm::reduce_sum(agm::square(agm::mul(a, s))); });
  expect_grads_match(ps, [&] { return agm::reduce_sum(agm::square(agm::sub(s, a))); });
}

TEST(TensorGrad, Unaries) {
  agm::Rng rng(102);
  {
    agm::Tensor x = randn_away_from(rng, {100}, 0.0, 1e-3);
    std::vector<agm::Tensor> p{x};
    expect_grads_match(p, [&] { return agm::reduce_mean(agm::square(agm::relu(x))); });
  }
  for (auto op : {agm::sigmoid, agm::silu, agm::gelu, agm::sin, agm::cos, agm::square}) {
    agm::Tensor x = randn(rng, {100});
    std::vector<agm::Tensor> p{x};
    expect_grads_match(p, [&] { return agm::reduce_mean(agm::square(op(x))); });
  }
  {
    agm::Tensor x = agm::random_normal(rng, {100});
    for (double& v : x.values()) {
      if (std::abs(std::abs(v) - 1.0) < 1e-3) {
        v = 0.0;
      }
    }
    x.set_requires_grad(true);
    std::vector<agm::Tensor> p{x};
    expect_grads_match(p, [&] { return agm::reduce_mean(agm::square(agm::clamp(x, -1.0, 1.0))); });
  }
}

TEST(TensorGrad, Matmul) {
  agm::Rng rng(103);
  agm::Tensor a = randn(rng, {5, 7});
  agm::Tensor b = randn(rng, {7, 4});
  std::vector<agm::Tensor> p{a, b};
  expect_grads_match(p, [&] { return agm::reduce_sum(agm::square(agm::matmul(a, b))); });
}

TEST(TensorGrad, Reductions) {
  agm::Rng rng(104);
  agm::Tensor x = randn(rng, {6, 17});
  std::vector<agm::Tensor> p{x};
  expect_grads_match(p, [&] { return agm::reduce_sum(agm::square(x)); });
  expect_grads_match(p, [&] { return agm::square(agm::reduce_mean(x)); });
  expect_grads_match(p, [&] { return agm::reduce_sum(agm::square(agm::reduce_sum(x, 0))); });
  expect_grads_match(p, [&] { return agm::reduce_sum(agm::square(agm::reduce_mean(x, 1))); });
}

TEST(TensorGrad, CompositeChain) {
  agm::Rng rng(105);
  agm::Tensor x = randn(rng, {8, 5});
  agm::Tensor w = randn(rng, {5, 6});
  agm::Tensor b = randn(rng, {6});
  std::vector<agm::Tensor> p{x, w, b};
  expect_grads_match(p, [&] {
    return agm::reduce_mean(agm::square(agm::silu(agm::add(agm::matmul(x, w), b))));
  });
}

TEST(TensorGrad, AccumulationThroughSharedInput) {
  agm::Tensor p({3}, std::vector<double>{1, 2, 3});
  p.set_requires_grad(true);
  agm::Tensor a({3}, std::vector<double>{10, 20, 30});
  agm::Tensor b({3}, std::vector<double>{1, 1, 1});
  agm::Tape tape;
  agm::GradScope scope(tape);
  agm::Tensor loss = agm::reduce_sum(agm::add(agm::mul(p, a), agm::mul(p, b)));
  tape.backward(loss);
  EXPECT_EQ(tape.grad(p).values(), (std::vector<double>{11, 21, 31}));
}

TEST(TensorGrad, ReshapeFlowsToOriginal) {
  agm::Tensor x({6}, std::vector<double>{1, 2, 3, 4, 5, 6});
  x.set_requires_grad(true);
  agm::Tape tape;
  agm::GradScope scope(tape);
  agm::Tensor y = x.reshape({2, 3});
  agm::Tensor loss = agm::reduce_sum(agm::square(y));
  tape.backward(loss);
  const agm::Tensor g = tape.grad(x);
  ASSERT_EQ(g.shape(), (agm::Shape{6}));
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(g.at(i), 2.0 * x.at(i));
  }
}

// ---------------------------------------------------------------------------
// Stop-gradient and tape bookkeeping

TEST(TensorGrad, StopGradientBlocksExactly) {
  agm::Tensor p({4}, std::vector<double>{1, -2, 3, -4});
  p.set_requires_grad(true);
  agm::Tensor q({4}, std::vector<double>{5, 6, 7, 8});
  q.set_requires_grad(true);
  agm::Tape tape;
  agm::GradScope scope(tape);
  // p only reaches the loss through stop_gradient; q keeps a live path.
  agm::Tensor blocked = agm::stop_gradient(agm::square(p));
  agm::Tensor loss = agm::add(agm::reduce_sum(blocked), agm::reduce_sum(agm::square(q)));
  tape.backward(loss);
  const agm::Tensor gp = tape.grad(p);
  for (double g : gp.values()) {
    EXPECT_EQ(g, 0.0);
  }
  EXPECT_EQ(tape.grad(q).values(), (std::vector<double>{10, 12, 14, 16}));
}

TEST(TensorGrad, StopGradientForwardIdentityAndMixedPath) {
  agm::Tensor p({3}, std::vector<double>{0.5, -1.5, 2.0});
  p.set_requires_grad(true);
  agm::Tape tape;
  agm::GradScope scope(tape);
  agm::Tensor sg = agm::stop_gradient(agm::square(p));
  EXPECT_EQ(sg.values(), (std::vector<double>{0.25, 2.25, 4.0}));
  // loss = sum(sg(p^2) * p): only the second factor carries gradient, so
  // d loss / dp = sg(p^2) exactly.
  agm::Tensor loss = agm::reduce_sum(agm::mul(sg, p));
  tape.backward(loss);
  EXPECT_EQ(tape.grad(p).values(), sg.values());
}

TEST(TensorGrad, UnreachedParameterGetsZeros) {
  agm::Tensor p({2}, std::vector<double>{1, 2});
  p.set_requires_grad(true);
  agm::Tensor q({3}, std::vector<double>{1, 2, 3});
  q.set_requires_grad(true);
  agm::Tape tape;
  agm::GradScope scope(tape);
  agm::Tensor loss = agm::reduce_sum(q);
  tape.backward(loss);
  const agm::Tensor g = tape.grad(p);
  ASSERT_EQ(g.shape(), p.shape());
  EXPECT_EQ(g.values(), (std::vector<double>{0, 0}));
}

TEST(TensorGrad, BackwardErrors) {
  agm::Tensor p({2}, std::vector<double>{1, 2});
  p.set_requires_grad(true);
  {
    agm::Tape tape;
    agm::GradScope scope(tape);
    agm::Tensor vec = agm::square(p);
    EXPECT_THROW(tape.backward(vec), std::invalid_argument);
  }
  {
    agm::Tape tape;
    agm::GradScope scope(tape);
    agm::Tensor off_tape = agm::Tensor::scalar(1.0);
    EXPECT_THROW(tape.backward(off_tape), std::invalid_argument);
  }
  {
    agm::Tape tape;
    agm::GradScope scope(tape);
    agm::Tensor loss = agm::reduce_sum(agm::square(p));
    tape.backward(loss);
    EXPECT_THROW(tape.backward(loss), std::logic_error);
  }
}

TEST(TensorGrad, NoActiveTapeRecordsNothing) {
  agm::Tensor p({2}, std::vector<double>{1, 2});
  p.set_requires_grad(true);
  agm::Tensor out = agm::square(p);  // no GradScope
  EXPECT_EQ(out.values(), (std::vector<double>{1, 4}));
  agm::Tape tape;
  EXPECT_FALSE(tape.tracks(out));
}

}  // namespace
