#pragma once

// Pinned stochastic bridge between a standard normal source and the data
// distribution. The interpolation weight alpha rises from 0 to 1 and the
// noise envelope sigma vanishes at both endpoints, so the bridge is exact at
// t=0 and t=1. Targets are the time derivative of the interpolant, which is
// what the drift network regresses onto.

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "agm/rng.hpp"
#include "agm/tensor.hpp"

namespace agm {

struct ScheduleParams {
  double sigma_max = 0.01;
};

namespace detail {

inline void check_time(double t, const char* fn) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw std::domain_error(std::string(fn) + ": t=" + std::to_string(t) +
                            " outside [0,1]");
  }
}

}  // namespace detail

// alpha(t) = sin^2(pi t / 2)
inline double alpha(double t) {
  detail::check_time(t, "alpha");
  const double s = std::sin(std::numbers::pi * t / 2.0);
  return s * s;
}

// alpha'(t) = (pi/2) sin(pi t)
inline double alpha_prime(double t) {
  detail::check_time(t, "alpha_prime");
  return (std::numbers::pi / 2.0) * std::sin(std::numbers::pi * t);
}

// sigma(t) = sigma_max sin(pi t)
inline double sigma(double t, const ScheduleParams& sp) {
  detail::check_time(t, "sigma");
  return sp.sigma_max * std::sin(std::numbers::pi * t);
}

// sigma'(t) = sigma_max pi cos(pi t)
inline double sigma_prime(double t, const ScheduleParams& sp) {
  detail::check_time(t, "sigma_prime");
  return sp.sigma_max * std::numbers::pi * std::cos(std::numbers::pi * t);
}

struct BridgeBatch {
  Tensor xt;      // [B x D] interpolated states
  Tensor target;  // [B x D] d/dt of the interpolant at each row's time
  Tensor t;       // [B] times
  Tensor eps;     // [B x D] bridge noise
};

// x_t = alpha(t) x1 + (1 - alpha(t)) x0 + sigma(t) eps, rowwise. The target
// is alpha'(t) (x1 - x0) + sigma'(t) eps.
inline BridgeBatch construct_bridge(const Tensor& x0, const Tensor& x1, const Tensor& eps,
                                    const Tensor& t, const ScheduleParams& sp) {
  if (x0.shape() != x1.shape() || x0.shape() != eps.shape() || x0.rank() != 2) {
    throw std::invalid_argument("construct_bridge: endpoint/noise shapes disagree: " +
                                shape_str(x0.shape()) + ", " + shape_str(x1.shape()) + ", " +
                                shape_str(eps.shape()));
  }
  const std::size_t batch = x0.shape()[0];
  const std::size_t dim = x0.shape()[1];
  if (t.rank() != 1 || t.shape()[0] != batch) {
    throw std::invalid_argument("construct_bridge: t has shape " + shape_str(t.shape()) +
                                ", expected [" + std::to_string(batch) + "]");
  }

  BridgeBatch out;
  out.xt = Tensor({batch, dim});
  out.target = Tensor({batch, dim});
  out.t = t;
  out.eps = eps;
  for (std::size_t b = 0; b < batch; ++b) {
    const double tb = t.at(b);
    const double a = alpha(tb);
    const double ap = alpha_prime(tb);
    const double s = sigma(tb, sp);
    const double spr = sigma_prime(tb, sp);
    for (std::size_t d = 0; d < dim; ++d) {
      const double v0 = x0.at(b, d);
      const double v1 = x1.at(b, d);
      const double e = eps.at(b, d);
      out.xt.values()[b * dim + d] = a * v1 + (1.0 - a) * v0 + s * e;
      out.target.values()[b * dim + d] = ap * (v1 - v0) + spr * e;
    }
  }
  return out;
}

// Draws times first, then noise, from the given stream.
inline BridgeBatch build_bridge(const Tensor& x0, const Tensor& x1, Rng& rng,
                                const ScheduleParams& sp) {
  const std::size_t batch = x0.shape()[0];
  Tensor t = random_uniform01(rng, {batch});
  Tensor eps = random_normal(rng, x0.shape());
  return construct_bridge(x0, x1, eps, t, sp);
}

}  // namespace agm
