#pragma once

// Euler-Maruyama integration of a drift field from standard normal noise at
// t=0 to samples at t=1. Only a drift model fits through the interface: it
// must expose forward(x, t), which a potential net (forward(x) alone) does
// not satisfy, so the potential is structurally out of the sampling path.
//
// The grid is left-endpoint: t = n/N for n = 0..N-1, so the drift is never
// evaluated at t=1. Inference noise is drawn fresh every step, including
// the last one.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "agm/rng.hpp"
#include "agm/tensor.hpp"

namespace agm {

template <class M>
concept DriftModel = requires(const M& m, const Tensor& x, const Tensor& t) {
  { m.forward(x, t) } -> std::convertible_to<Tensor>;
};

struct SamplerConfig {
  std::size_t nfe = 500;
  double sigma_sde = 0.01;
  std::size_t n_samples = 10000;
  std::uint64_t seed = 1;

  void validate() const {
    if (nfe < 1) {
      throw std::invalid_argument("sampler.nfe must be >= 1");
    }
    if (n_samples < 1) {
      throw std::invalid_argument("sampler.n_samples must be >= 1");
    }
    if (!(sigma_sde >= 0.0)) {
      throw std::invalid_argument("sampler.sigma_sde must be >= 0");
    }
  }
};

class SamplerAbort : public std::runtime_error {
 public:
  SamplerAbort(std::size_t step, const std::string& what)
      : std::runtime_error("sampler aborted at step " + std::to_string(step) + ": " + what),
        step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

namespace detail {

inline void check_finite_state(const Tensor& x, std::size_t step) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x.at(i))) {
      throw SamplerAbort(step, "non-finite state at element " + std::to_string(i));
    }
  }
}

}  // namespace detail

// Integrates from the given start state; `trajectory`, when non-null,
// receives all N+1 states as [(N+1) x B x D].
template <DriftModel M>
Tensor integrate(const M& drift, Tensor x, const SamplerConfig& cfg, Rng& rng,
                 Tensor* trajectory = nullptr) {
  cfg.validate();
  // Tensor copies share storage; work on a private buffer so the caller's
  // start state is never mutated in place.
  x = Tensor(x.shape(), x.values());
  const std::size_t batch = x.shape()[0];
  const std::size_t dim = x.shape()[1];
  const std::size_t n = cfg.nfe;
  const double dt = 1.0 / static_cast<double>(n);
  const double noise_scale = cfg.sigma_sde * std::sqrt(dt);

  if (trajectory != nullptr) {
    *trajectory = Tensor({n + 1, batch, dim});
    std::copy(x.data(), x.data() + x.size(), trajectory->data());
  }

  Tensor xi({batch, dim});
  for (std::size_t step = 0; step < n; ++step) {
    const double t = static_cast<double>(step) * dt;
    Tensor tvec({batch}, t);
    const Tensor f = drift.forward(x, tvec);
    if (cfg.sigma_sde > 0.0) {
      rng.fill_normal({xi.data(), xi.size()});
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      double v = x.at(i) + f.at(i) * dt;
      if (cfg.sigma_sde > 0.0) {
        v += noise_scale * xi.at(i);
      }
      x.values()[i] = v;
    }
    detail::check_finite_state(x, step);
    if (trajectory != nullptr) {
      std::copy(x.data(), x.data() + x.size(), trajectory->data() + (step + 1) * x.size());
    }
  }
  return x;
}

// Draws the start state from N(0,I) and integrates to t=1.
template <DriftModel M>
Tensor sample(const M& drift, std::size_t dim, const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  Tensor x0 = random_normal(rng, {cfg.n_samples, dim});
  return integrate(drift, std::move(x0), cfg, rng);
}

// As sample(), but keeps every intermediate state: [(N+1) x n_samples x D],
// slice 0 the initial noise, slice N the final samples.
template <DriftModel M>
Tensor sample_trajectory(const M& drift, std::size_t dim, const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  Tensor x0 = random_normal(rng, {cfg.n_samples, dim});
  Tensor traj;
  integrate(drift, std::move(x0), cfg, rng, &traj);
  return traj;
}

// ---------------------------------------------------------------------------
// Persistence: one CSV row per sample plus a JSON sidecar describing the run.

inline void write_samples_csv(const std::string& path, const Tensor& samples) {
  if (samples.rank() != 2) {
    throw std::invalid_argument("write_samples_csv: expected [n x D], got " +
                                shape_str(samples.shape()));
  }
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("write_samples_csv: cannot open " + path);
  }
  out.precision(17);
  const std::size_t n = samples.shape()[0];
  const std::size_t d = samples.shape()[1];
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      out << samples.at(i, j) << (j + 1 < d ? "," : "\n");
    }
  }
  if (!out.good()) {
    throw std::runtime_error("write_samples_csv: write failed for " + path);
  }
}

inline Tensor read_samples_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("read_samples_csv: cannot open " + path);
  }
  std::vector<double> values;
  std::size_t cols = 0;
  std::size_t rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    std::size_t row_cols = 0;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      std::size_t next = line.find(',', pos);
      if (next == std::string::npos) {
        next = line.size();
      }
      try {
        values.push_back(std::stod(line.substr(pos, next - pos)));
      } catch (const std::exception&) {
        throw std::runtime_error("read_samples_csv: bad value in " + path + " row " +
                                 std::to_string(rows + 1));
      }
      ++row_cols;
      pos = next + 1;
      if (next == line.size()) {
        break;
      }
    }
    if (cols == 0) {
      cols = row_cols;
    } else if (row_cols != cols) {
      throw std::runtime_error("read_samples_csv: ragged row " + std::to_string(rows + 1) +
                               " in " + path);
    }
    ++rows;
  }
  if (rows == 0) {
    throw std::runtime_error("read_samples_csv: " + path + " holds no samples");
  }
  return Tensor({rows, cols}, std::move(values));
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("write_json: cannot open " + path);
  }
  out << j.dump(2) << "\n";
  if (!out.good()) {
    throw std::runtime_error("write_json: write failed for " + path);
  }
}

inline nlohmann::json sampler_sidecar(const SamplerConfig& cfg, std::size_t dim,
                                      const std::string& checkpoint_id) {
  return nlohmann::json{{"nfe", cfg.nfe},
                        {"sigma_sde", cfg.sigma_sde},
                        {"n_samples", cfg.n_samples},
                        {"seed", cfg.seed},
                        {"dim", dim},
                        {"checkpoint", checkpoint_id}};
}

}  // namespace agm
