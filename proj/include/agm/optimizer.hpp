#pragma once

// Adam with bias correction, no weight decay, no gradient clipping. One
// instance per network; first/second moments live in slots aligned with the
// parameter list so they serialize alongside the weights.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "agm/nets.hpp"
#include "agm/tensor.hpp"

namespace agm {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamSlot {
  std::string name;
  std::vector<double> m;
  std::vector<double> v;
};

class Adam {
 public:
  Adam(const std::vector<Param>& params, AdamConfig cfg) : cfg_(cfg) {
    slots_.reserve(params.size());
    for (const auto& p : params) {
      slots_.push_back({p.name, std::vector<double>(p.value.size(), 0.0),
                        std::vector<double>(p.value.size(), 0.0)});
    }
  }

  // Applies one update using gradients recorded on `tape`. Parameters the
  // loss never touched have zero gradient and therefore keep their exact
  // values (zero moments give a zero step).
  void step(const Tape& tape, std::vector<Param>& params) {
    if (params.size() != slots_.size()) {
      throw std::invalid_argument("Adam::step: parameter list changed size");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Tensor g = tape.grad(params[i].value);
      auto& m = slots_[i].m;
      auto& v = slots_[i].v;
      auto& w = params[i].value.values();
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = g.at(k);
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
        w[k] -= cfg_.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
      }
    }
  }

  std::uint64_t step_count() const { return t_; }
  void set_step_count(std::uint64_t t) { t_ = t; }
  std::vector<AdamSlot>& slots() { return slots_; }
  const std::vector<AdamSlot>& slots() const { return slots_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<AdamSlot> slots_;
  std::uint64_t t_ = 0;
};

}  // namespace agm
