#include "agm/bridge.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace {

const agm::ScheduleParams kSp{};  // sigma_max = 0.01

TEST(Schedule, EndpointIdentities) {
  EXPECT_EQ(agm::alpha(0.0), 0.0);
  EXPECT_NEAR(agm::alpha(1.0), 1.0, 1e-12);
  EXPECT_NEAR(agm::alpha(0.5), 0.5, 1e-12);
  EXPECT_EQ(agm::sigma(0.0, kSp), 0.0);
  EXPECT_NEAR(agm::sigma(1.0, kSp), 0.0, 1e-12);
  EXPECT_NEAR(agm::sigma(0.5, kSp), kSp.sigma_max, 1e-15);
  EXPECT_EQ(agm::alpha_prime(0.0), 0.0);
  EXPECT_NEAR(agm::alpha_prime(0.5), std::numbers::pi / 2.0, 1e-15);
  EXPECT_NEAR(agm::sigma_prime(0.5, kSp), 0.0, 1e-12 * kSp.sigma_max);
}

TEST(Schedule, MonotoneAlphaAndBounds) {
  double prev = -1.0;
  for (int i = 0; i <= 100; ++i) {
    const double t = i / 100.0;
    const double a = agm::alpha(t);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
    EXPECT_GT(a, prev);
    prev = a;
    EXPECT_GE(agm::sigma(t, kSp), 0.0);
    EXPECT_LE(agm::sigma(t, kSp), kSp.sigma_max);
  }
}

TEST(Schedule, DomainChecks) {
  EXPECT_THROW(agm::alpha(-0.001), std::domain_error);
  EXPECT_THROW(agm::alpha(1.001), std::domain_error);
  EXPECT_THROW(agm::alpha_prime(2.0), std::domain_error);
  EXPECT_THROW(agm::sigma(-1.0, kSp), std::domain_error);
  EXPECT_THROW(agm::sigma_prime(1.5, kSp), std::domain_error);
  const double nan = std::nan("");
  EXPECT_THROW(agm::alpha(nan), std::domain_error);
}

TEST(Schedule, DerivativesMatchFiniteDifferences) {
  const double h = 1e-5;
  agm::Rng rng(17);
  for (int i = 0; i < 50; ++i) {
    const double t = h + (1.0 - 2.0 * h) * rng.uniform01();
    const double fd_a = (agm::alpha(t + h) - agm::alpha(t - h)) / (2.0 * h);
    const double a = agm::alpha_prime(t);
    EXPECT_NEAR(a, fd_a, 1e-6 * std::max(1.0, std::abs(a)));
    const double fd_s = (agm::sigma(t + h, kSp) - agm::sigma(t - h, kSp)) / (2.0 * h);
    const double s = agm::sigma_prime(t, kSp);
    EXPECT_NEAR(s, fd_s, 1e-6 * std::max(kSp.sigma_max, std::abs(s)));
  }
}

TEST(Bridge, ReproducesEndpoints) {
  agm::Rng rng(3);
  agm::Tensor x0 = agm::random_normal(rng, {16, 2});
  agm::Tensor x1 = agm::random_normal(rng, {16, 2});
  agm::Tensor eps = agm::random_normal(rng, {16, 2});

  agm::BridgeBatch at0 = agm::construct_bridge(x0, x1, eps, agm::Tensor({16}, 0.0), kSp);
  EXPECT_EQ(at0.xt.values(), x0.values());  // alpha(0) and sigma(0) are exactly zero

  agm::BridgeBatch at1 = agm::construct_bridge(x0, x1, eps, agm::Tensor({16}, 1.0), kSp);
  for (std::size_t i = 0; i < at1.xt.size(); ++i) {
    EXPECT_NEAR(at1.xt.values()[i], x1.values()[i], 1e-12);
  }
}

TEST(Bridge, TargetIsTimeDerivativeOfPath) {
  const double h = 1e-6;
  agm::Rng rng(5);
  agm::Tensor x0 = agm::random_normal(rng, {8, 3});
  agm::Tensor x1 = agm::random_normal(rng, {8, 3});
  agm::Tensor eps = agm::random_normal(rng, {8, 3});
  for (int trial = 0; trial < 25; ++trial) {
    const double t = h + (1.0 - 2.0 * h) * rng.uniform01();
    agm::BridgeBatch mid = agm::construct_bridge(x0, x1, eps, agm::Tensor({8}, t), kSp);
    agm::BridgeBatch up = agm::construct_bridge(x0, x1, eps, agm::Tensor({8}, t + h), kSp);
    agm::BridgeBatch down = agm::construct_bridge(x0, x1, eps, agm::Tensor({8}, t - h), kSp);
    for (std::size_t i = 0; i < mid.target.size(); ++i) {
      const double fd = (up.xt.values()[i] - down.xt.values()[i]) / (2.0 * h);
      const double an = mid.target.values()[i];
      const double scale = std::max({std::abs(an), std::abs(fd), 1e-3});
      EXPECT_LE(std::abs(an - fd), 1e-6 * scale)
          << "t=" << t << " i=" << i << " analytic=" << an << " fd=" << fd;
    }
  }
}

TEST(Bridge, PerRowTimesAreIndependent) {
  agm::Tensor x0({2, 1}, std::vector<double>{0.0, 0.0});
  agm::Tensor x1({2, 1}, std::vector<double>{1.0, 1.0});
  agm::Tensor eps({2, 1}, std::vector<double>{0.0, 0.0});
  agm::Tensor t({2}, std::vector<double>{0.0, 1.0});
  agm::BridgeBatch bb = agm::construct_bridge(x0, x1, eps, t, kSp);
  EXPECT_EQ(bb.xt.at(0, 0), 0.0);
  EXPECT_NEAR(bb.xt.at(1, 0), 1.0, 1e-12);
}

TEST(Bridge, ShapeValidation) {
  agm::Tensor x0({4, 2});
  agm::Tensor x1({4, 2});
  agm::Tensor eps({4, 2});
  agm::Tensor t({4});
  EXPECT_THROW(agm::construct_bridge(agm::Tensor({3, 2}), x1, eps, t, kSp),
               std::invalid_argument);
  EXPECT_THROW(agm::construct_bridge(x0, x1, agm::Tensor({4, 3}), t, kSp),
               std::invalid_argument);
  EXPECT_THROW(agm::construct_bridge(x0, x1, eps, agm::Tensor({5}), kSp),
               std::invalid_argument);
  EXPECT_THROW(agm::construct_bridge(x0, x1, eps, agm::Tensor({4, 1}), kSp),
               std::invalid_argument);
}

TEST(Bridge, TimeOutOfRangeRejected) {
  agm::Tensor x0({1, 1});
  agm::Tensor x1({1, 1});
  agm::Tensor eps({1, 1});
  EXPECT_THROW(agm::construct_bridge(x0, x1, eps, agm::Tensor({1}, 1.5), kSp),
               std::domain_error);
}

TEST(Bridge, BuildDrawsTimesThenNoise) {
  agm::Rng rng_build = agm::Rng::stream(9, agm::streams::kBridge);
  agm::Rng rng_mirror = agm::Rng::stream(9, agm::streams::kBridge);
  agm::Rng data_rng(1);
  agm::Tensor x0 = agm::random_normal(data_rng, {6, 2});
  agm::Tensor x1 = agm::random_normal(data_rng, {6, 2});

  agm::BridgeBatch bb = agm::build_bridge(x0, x1, rng_build, kSp);
  agm::Tensor t_expected = agm::random_uniform01(rng_mirror, {6});
  agm::Tensor eps_expected = agm::random_normal(rng_mirror, {6, 2});
  EXPECT_EQ(bb.t.values(), t_expected.values());
  EXPECT_EQ(bb.eps.values(), eps_expected.values());
  agm::BridgeBatch rebuilt = agm::construct_bridge(x0, x1, eps_expected, t_expected, kSp);
  EXPECT_EQ(bb.xt.values(), rebuilt.xt.values());
  EXPECT_EQ(bb.target.values(), rebuilt.target.values());
  // The two generators must now be in identical states.
  EXPECT_EQ(rng_build.next_u64(), rng_mirror.next_u64());
}

TEST(Bridge, SigmaMaxScalesNoiseTerm) {
  agm::Tensor x0({1, 1}, 0.0);
  agm::Tensor x1({1, 1}, 0.0);
  agm::Tensor eps({1, 1}, 1.0);
  agm::Tensor t({1}, 0.5);
  agm::ScheduleParams wide{0.5};
  agm::BridgeBatch bb = agm::construct_bridge(x0, x1, eps, t, wide);
  EXPECT_NEAR(bb.xt.item(), 0.5, 1e-15);  // sigma(0.5) = sigma_max
  agm::BridgeBatch narrow = agm::construct_bridge(x0, x1, eps, t, kSp);
  EXPECT_NEAR(narrow.xt.item(), 0.01, 1e-15);
}

}  // namespace
