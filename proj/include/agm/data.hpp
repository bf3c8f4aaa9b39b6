#pragma once

// Seeded 2-D toy target distributions, streamed as fresh draws per batch.
// eight_gaussians is the workhorse: 8 well-separated modes on a circle make
// mode coverage directly measurable.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "agm/rng.hpp"
#include "agm/tensor.hpp"

namespace agm {

enum class ToyKind { eight_gaussians, two_moons, checkerboard, spiral };

inline std::string to_string(ToyKind k) {
  switch (k) {
    case ToyKind::eight_gaussians: return "eight_gaussians";
    case ToyKind::two_moons: return "two_moons";
    case ToyKind::checkerboard: return "checkerboard";
    case ToyKind::spiral: return "spiral";
  }
  return "?";
}

inline ToyKind toy_kind_from_string(const std::string& s) {
  if (s == "eight_gaussians") {
    return ToyKind::eight_gaussians;
  }
  if (s == "two_moons") {
    return ToyKind::two_moons;
  }
  if (s == "checkerboard") {
    return ToyKind::checkerboard;
  }
  if (s == "spiral") {
    return ToyKind::spiral;
  }
  throw std::invalid_argument("unknown dataset kind '" + s + "'");
}

struct ToyDistribution {
  ToyKind kind = ToyKind::eight_gaussians;
  double scale = 2.0;      // mode-circle radius / pattern extent
  double noise_std = 0.1;  // per-mode / per-point jitter
};

// Centers for distributions with enumerable modes.
inline std::vector<std::array<double, 2>> mode_centers(const ToyDistribution& dist) {
  if (dist.kind != ToyKind::eight_gaussians) {
    throw std::invalid_argument("mode_centers: " + to_string(dist.kind) +
                                " has no enumerable modes");
  }
  std::vector<std::array<double, 2>> centers;
  centers.reserve(8);
  for (int k = 0; k < 8; ++k) {
    const double a = std::numbers::pi / 4.0 * static_cast<double>(k);
    centers.push_back({dist.scale * std::cos(a), dist.scale * std::sin(a)});
  }
  return centers;
}

// n i.i.d. draws as an [n x 2] tensor. Per row the draw order is fixed:
// the kind's uniforms first, then one pair of normals for the jitter.
inline Tensor sample_data(const ToyDistribution& dist, std::size_t n, Rng& rng) {
  if (n == 0) {
    throw std::invalid_argument("sample_data: n must be >= 1");
  }
  Tensor out({n, 2});
  double noise[2];
  for (std::size_t i = 0; i < n; ++i) {
    double x = 0.0;
    double y = 0.0;
    switch (dist.kind) {
      case ToyKind::eight_gaussians: {
        const auto m = std::min<std::size_t>(7, static_cast<std::size_t>(rng.uniform01() * 8.0));
        const double a = std::numbers::pi / 4.0 * static_cast<double>(m);
        x = dist.scale * std::cos(a);
        y = dist.scale * std::sin(a);
        break;
      }
      case ToyKind::two_moons: {
        const bool upper = rng.uniform01() < 0.5;
        const double theta = rng.uniform01() * std::numbers::pi;
        if (upper) {
          x = std::cos(theta);
          y = std::sin(theta);
        } else {
          x = 1.0 - std::cos(theta);
          y = 0.5 - std::sin(theta);
        }
        x *= dist.scale;
        y *= dist.scale;
        break;
      }
      case ToyKind::checkerboard: {
        // 4x4 alternating cells spanning [-2,2]^2 before scaling.
        const double u1 = rng.uniform01() * 4.0 - 2.0;
        const double u2 = rng.uniform01() - (rng.uniform01() < 0.5 ? 0.0 : 2.0);
        x = u1;
        y = u2 + std::fmod(std::floor(u1) + 4.0, 2.0);
        x *= dist.scale / 2.0;
        y *= dist.scale / 2.0;
        break;
      }
      case ToyKind::spiral: {
        // Two-turn Archimedean arm, uniform density along its length.
        const double u = rng.uniform01();
        const double theta = 4.0 * std::numbers::pi * std::sqrt(u);
        const double r = dist.scale * theta / (4.0 * std::numbers::pi);
        x = r * std::cos(theta);
        y = r * std::sin(theta);
        break;
      }
    }
    rng.fill_normal({noise, 2});
    out.values()[i * 2] = x + dist.noise_std * noise[0];
    out.values()[i * 2 + 1] = y + dist.noise_std * noise[1];
  }
  return out;
}

// Fixed reference set for metrics, drawn from a stream disjoint from the
// training data stream derived from the same seed.
inline Tensor holdout_split(const ToyDistribution& dist, std::uint64_t seed, std::size_t n_eval) {
  Rng rng = Rng::stream(seed, streams::kEval);
  return sample_data(dist, n_eval, rng);
}

}  // namespace agm
