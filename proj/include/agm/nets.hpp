#pragma once

// The drift network f(x,t), the scalar potential V(x), and the EMA shadow
// of the drift. Everything is an MLP over row-major [batch x feature]
// tensors.
//
// Drift: trunk Linear layers with SiLU, conditioned on time through FiLM.
// The time scalar is expanded into sinusoidal features (geometric frequency
// ladder), projected by a two-layer MLP, and each trunk layer derives a
// scale and shift from that vector: z = Linear(h); z = z*(1+s) + shift;
// h = SiLU(z). The output layer starts at exactly zero, so a fresh drift
// net is the zero velocity field.
//
// Potential: plain GELU MLP from x to one scalar per row, no time input,
// and its parameter count is held to a small fraction of the drift's.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "agm/rng.hpp"
#include "agm/tensor.hpp"

namespace agm {

struct Param {
  std::string name;
  Tensor value;  // shares storage with the owning layer
};

inline std::size_t param_count(const std::vector<Param>& params) {
  std::size_t n = 0;
  for (const auto& p : params) {
    n += p.value.size();
  }
  return n;
}

namespace detail {

struct Linear {
  Tensor w;  // [in x out]
  Tensor b;  // [out]

  static Linear fan_in_uniform(std::size_t in, std::size_t out, Rng& rng) {
    Linear l;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    l.w = random_uniform01(rng, {in, out});
    l.b = random_uniform01(rng, {out});
    for (double& v : l.w.values()) {
      v = (2.0 * v - 1.0) * bound;
    }
    for (double& v : l.b.values()) {
      v = (2.0 * v - 1.0) * bound;
    }
    l.w.set_requires_grad(true);
    l.b.set_requires_grad(true);
    return l;
  }

  static Linear zeros(std::size_t in, std::size_t out) {
    Linear l;
    l.w = Tensor({in, out});
    l.b = Tensor({out});
    l.w.set_requires_grad(true);
    l.b.set_requires_grad(true);
    return l;
  }

  Tensor operator()(const Tensor& x) const { return add(matmul(x, w), b); }

  void register_params(const std::string& prefix, std::vector<Param>& out) const {
    out.push_back({prefix + ".w", w});
    out.push_back({prefix + ".b", b});
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Drift network

struct DriftConfig {
  std::size_t dim = 2;
  std::vector<std::size_t> hidden = {256, 256, 256};
  std::size_t time_freqs = 64;   // sinusoidal frequency count E
  std::size_t time_width = 128;  // projection and FiLM-source width
  double freq_min = 1.0;
  double freq_max = 1000.0;
};

class DriftNet {
 public:
  DriftNet(const DriftConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg_.dim == 0 || cfg_.time_freqs == 0 || cfg_.time_width == 0) {
      throw std::invalid_argument("DriftNet: dim, time_freqs, time_width must be positive");
    }
    const std::size_t raw = 2 * cfg_.time_freqs;
    time_proj_.push_back(detail::Linear::fan_in_uniform(raw, cfg_.time_width, rng));
    time_proj_.push_back(detail::Linear::fan_in_uniform(cfg_.time_width, cfg_.time_width, rng));

    std::size_t in = cfg_.dim;
    for (std::size_t h : cfg_.hidden) {
      trunk_.push_back(detail::Linear::fan_in_uniform(in, h, rng));
      film_scale_.push_back(detail::Linear::fan_in_uniform(cfg_.time_width, h, rng));
      film_shift_.push_back(detail::Linear::fan_in_uniform(cfg_.time_width, h, rng));
      in = h;
    }
    out_ = detail::Linear::zeros(in, cfg_.dim);

    for (std::size_t i = 0; i < time_proj_.size(); ++i) {
      time_proj_[i].register_params("time." + std::to_string(i), params_);
    }
    for (std::size_t l = 0; l < trunk_.size(); ++l) {
      trunk_[l].register_params("trunk." + std::to_string(l), params_);
      film_scale_[l].register_params("film." + std::to_string(l) + ".scale", params_);
      film_shift_[l].register_params("film." + std::to_string(l) + ".shift", params_);
    }
    out_.register_params("out", params_);
  }

  // x: [B x dim], t: [B] with values in [0,1] -> [B x dim]
  Tensor forward(const Tensor& x, const Tensor& t) const {
    if (x.rank() != 2 || x.shape()[1] != cfg_.dim) {
      throw std::invalid_argument("DriftNet::forward: x shape " + shape_str(x.shape()) +
                                  ", expected [B," + std::to_string(cfg_.dim) + "]");
    }
    if (t.rank() != 1 || t.shape()[0] != x.shape()[0]) {
      throw std::invalid_argument("DriftNet::forward: t shape " + shape_str(t.shape()) +
                                  " does not match batch " + std::to_string(x.shape()[0]));
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!(t.at(i) >= 0.0 && t.at(i) <= 1.0)) {
        throw std::domain_error("DriftNet::forward: t[" + std::to_string(i) + "]=" +
                                std::to_string(t.at(i)) + " outside [0,1]");
      }
    }

    Tensor tv = silu(time_proj_[0](sinusoidal_features(t)));
    tv = time_proj_[1](tv);

    Tensor h = x;
    for (std::size_t l = 0; l < trunk_.size(); ++l) {
      Tensor z = trunk_[l](h);
      Tensor s1 = add(film_scale_[l](tv), 1.0);
      z = add(mul(z, s1), film_shift_[l](tv));
      h = silu(z);
    }
    return out_(h);
  }

  // Constant [B x 2E] features: sin(f_j t) block then cos(f_j t) block,
  // frequencies geometric from freq_min to freq_max.
  Tensor sinusoidal_features(const Tensor& t) const {
    const std::size_t batch = t.shape()[0];
    const std::size_t e = cfg_.time_freqs;
    Tensor raw({batch, 2 * e});
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t j = 0; j < e; ++j) {
        const double frac = e > 1 ? static_cast<double>(j) / static_cast<double>(e - 1) : 0.0;
        const double freq = cfg_.freq_min * std::pow(cfg_.freq_max / cfg_.freq_min, frac);
        const double angle = freq * t.at(b);
        raw.values()[b * 2 * e + j] = std::sin(angle);
        raw.values()[b * 2 * e + e + j] = std::cos(angle);
      }
    }
    return raw;
  }

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  std::size_t param_count() const { return agm::param_count(params_); }
  const DriftConfig& config() const { return cfg_; }

 private:
  DriftConfig cfg_;
  std::vector<detail::Linear> time_proj_;
  std::vector<detail::Linear> trunk_;
  std::vector<detail::Linear> film_scale_;
  std::vector<detail::Linear> film_shift_;
  detail::Linear out_;
  std::vector<Param> params_;
};

// ---------------------------------------------------------------------------
// Potential network

struct PotentialConfig {
  std::size_t dim = 2;
  std::vector<std::size_t> hidden = {128, 128};
};

class PotentialNet {
 public:
  PotentialNet(const PotentialConfig& cfg, Rng& rng) : cfg_(cfg) {
    std::size_t in = cfg_.dim;
    for (std::size_t h : cfg_.hidden) {
      hidden_.push_back(detail::Linear::fan_in_uniform(in, h, rng));
      in = h;
    }
    out_ = detail::Linear::fan_in_uniform(in, 1, rng);
    for (std::size_t l = 0; l < hidden_.size(); ++l) {
      hidden_[l].register_params("hidden." + std::to_string(l), params_);
    }
    out_.register_params("out", params_);
  }

  // x: [B x dim] -> [B]
  Tensor forward(const Tensor& x) const {
    if (x.rank() != 2 || x.shape()[1] != cfg_.dim) {
      throw std::invalid_argument("PotentialNet::forward: x shape " + shape_str(x.shape()) +
                                  ", expected [B," + std::to_string(cfg_.dim) + "]");
    }
    Tensor h = x;
    for (const auto& layer : hidden_) {
      h = gelu(layer(h));
    }
    return out_(h).reshape({x.shape()[0]});
  }

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  std::size_t param_count() const { return agm::param_count(params_); }
  const PotentialConfig& config() const { return cfg_; }

 private:
  PotentialConfig cfg_;
  std::vector<detail::Linear> hidden_;
  detail::Linear out_;
  std::vector<Param> params_;
};

// The potential stays tiny relative to the drift; enforced where both nets
// are built together.
inline void check_param_budget(const DriftNet& drift, const PotentialNet& potential,
                               double max_ratio = 0.05) {
  const double ratio = static_cast<double>(potential.param_count()) /
                       static_cast<double>(drift.param_count());
  if (ratio > max_ratio) {
    throw std::invalid_argument("potential/drift parameter ratio " + std::to_string(ratio) +
                                " exceeds " + std::to_string(max_ratio));
  }
}

// ---------------------------------------------------------------------------
// EMA shadow of the drift parameters

class EmaShadow {
 public:
  explicit EmaShadow(const DriftNet& live) {
    for (const auto& p : live.params()) {
      params_.push_back({p.name, Tensor(p.value.shape(), p.value.values())});
    }
  }

  // shadow = tau*shadow + (1-tau)*live
  void update(const DriftNet& live, double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) {
      throw std::invalid_argument("EmaShadow::update: tau=" + std::to_string(tau) +
                                  " outside [0,1]");
    }
    const auto& lp = live.params();
    if (lp.size() != params_.size()) {
      throw std::invalid_argument("EmaShadow::update: parameter list size mismatch");
    }
    for (std::size_t i = 0; i < lp.size(); ++i) {
      if (lp[i].value.shape() != params_[i].value.shape()) {
        throw std::invalid_argument("EmaShadow::update: shape mismatch at " + lp[i].name);
      }
      auto& sv = params_[i].value.values();
      const auto& lv = lp[i].value.values();
      for (std::size_t k = 0; k < sv.size(); ++k) {
        sv[k] = tau * sv[k] + (1.0 - tau) * lv[k];
      }
    }
  }

  // A drift net with the same config but shadow weights (for sampling).
  DriftNet materialize(const DriftNet& live) const {
    Rng scratch(0);
    DriftNet net(live.config(), scratch);
    auto& dst = net.params();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (dst[i].name != params_[i].name || dst[i].value.shape() != params_[i].value.shape()) {
        throw std::logic_error("EmaShadow::materialize: layout mismatch at " + dst[i].name);
      }
      dst[i].value.values() = params_[i].value.values();
    }
    return net;
  }

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }

 private:
  std::vector<Param> params_;
};

// Gradients for a parameter list after a tape sweep; parameters that never
// reached the loss come back as zeros.
inline std::unordered_map<std::string, Tensor> collect_grads(const Tape& tape,
                                                             const std::vector<Param>& params) {
  std::unordered_map<std::string, Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    out.emplace(p.name, tape.grad(p.value));
  }
  return out;
}

}  // namespace agm
