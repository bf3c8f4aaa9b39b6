#pragma once

// Training objectives: the hinge-margin contrastive loss for the potential,
// the detached importance weights it induces, and the weighted regression
// loss for the drift.
//
// The potential loss exists in two sign conventions. "prose" (default)
// scores bridge samples high and pure noise low; "as_written" is the
// mirrored form. Both share the L2 pull on bridge potentials.
//
// Weights: s = sigmoid(V), normalized by the batch mean of s so the
// pre-clamp mean is exactly 1, scaled by lambda_v around 1, then clamped.
// With detach_weights=true (normal operation) the V entering the weights is
// severed from the tape, so the drift loss moves only drift parameters.
// detach_weights=false is a diagnostic that lets the drift loss reach back
// into the potential.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include "agm/bridge.hpp"
#include "agm/nets.hpp"
#include "agm/tensor.hpp"

namespace agm {

enum class SignConvention { prose, as_written };

inline std::string to_string(SignConvention s) {
  return s == SignConvention::prose ? "prose" : "as_written";
}

inline SignConvention sign_convention_from_string(const std::string& s) {
  if (s == "prose") {
    return SignConvention::prose;
  }
  if (s == "as_written") {
    return SignConvention::as_written;
  }
  throw std::invalid_argument("unknown sign_convention '" + s + "' (prose|as_written)");
}

struct ObjectiveConfig {
  double margin = 1.0;
  double gamma_v = 1e-3;
  double lambda_v = 0.1;
  double clamp_lo = 0.1;
  double clamp_hi = 10.0;
  SignConvention sign_convention = SignConvention::prose;
  bool detach_weights = true;

  void validate() const {
    if (!(margin > 0.0)) {
      throw std::invalid_argument("objective.margin must be > 0");
    }
    if (!(gamma_v >= 0.0) || !(lambda_v >= 0.0)) {
      throw std::invalid_argument("objective.gamma_v and objective.lambda_v must be >= 0");
    }
    if (!(clamp_lo > 0.0) || !(clamp_hi > clamp_lo)) {
      throw std::invalid_argument("objective clamp range must satisfy 0 < clamp_lo < clamp_hi");
    }
    if (!(clamp_lo <= 1.0 && 1.0 <= clamp_hi)) {
      throw std::invalid_argument("objective clamp range must contain 1");
    }
  }
};

struct WeightStats {
  double pre_clamp_mean = 0.0;
  double post_clamp_mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  double clamp_rate = 0.0;  // fraction of the batch the clamp altered
};

// Contrastive loss on potential outputs for bridge samples (V_xt) and pure
// noise (V_z), plus an L2 pull on the bridge potentials.
inline Tensor potential_loss(const Tensor& v_xt, const Tensor& v_z, const ObjectiveConfig& cfg) {
  if (v_xt.shape() != v_z.shape() || v_xt.rank() != 1) {
    throw std::invalid_argument("potential_loss: batch shapes disagree: " +
                                shape_str(v_xt.shape()) + " vs " + shape_str(v_z.shape()));
  }
  const double m = cfg.margin;
  Tensor hinge_bridge;
  Tensor hinge_noise;
  if (cfg.sign_convention == SignConvention::prose) {
    hinge_bridge = relu(sub(m, v_xt));
    hinge_noise = relu(add(v_z, m));
  } else {
    hinge_bridge = relu(add(v_xt, m));
    hinge_noise = relu(sub(m, v_z));
  }
  Tensor loss = add(reduce_mean(hinge_bridge), reduce_mean(hinge_noise));
  return add(loss, scale(reduce_mean(square(v_xt)), cfg.gamma_v));
}

struct WeightedBatch {
  Tensor w;  // [B], post-clamp
  WeightStats stats;
};

inline WeightedBatch importance_weights(const Tensor& v_xt, const ObjectiveConfig& cfg) {
  if (v_xt.rank() != 1 || v_xt.size() == 0) {
    throw std::invalid_argument("importance_weights: expected a non-empty [B] tensor, got " +
                                shape_str(v_xt.shape()));
  }
  const Tensor v = cfg.detach_weights ? stop_gradient(v_xt) : v_xt;
  const Tensor s = sigmoid(v);
  const Tensor ratio = div(s, reduce_mean(s));
  const Tensor pre = add(scale(sub(ratio, 1.0), cfg.lambda_v), 1.0);
  const Tensor w = clamp(pre, cfg.clamp_lo, cfg.clamp_hi);

  WeightedBatch out;
  out.w = w;
  const std::size_t n = pre.size();
  out.stats.pre_clamp_mean = detail::pairwise_sum(pre.data(), n, 1) / static_cast<double>(n);
  out.stats.post_clamp_mean = detail::pairwise_sum(w.data(), n, 1) / static_cast<double>(n);
  out.stats.min = w.at(0);
  out.stats.max = w.at(0);
  std::size_t clamped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out.stats.min = std::min(out.stats.min, w.at(i));
    out.stats.max = std::max(out.stats.max, w.at(i));
    if (pre.at(i) < cfg.clamp_lo || pre.at(i) > cfg.clamp_hi) {
      ++clamped;
    }
  }
  out.stats.clamp_rate = static_cast<double>(clamped) / static_cast<double>(n);
  return out;
}

// Mean over the batch of w_i * squared-error of row i (summed over features).
inline Tensor drift_loss(const Tensor& pred, const Tensor& target, const Tensor& w) {
  if (pred.shape() != target.shape() || pred.rank() != 2) {
    throw std::invalid_argument("drift_loss: pred " + shape_str(pred.shape()) + " vs target " +
                                shape_str(target.shape()));
  }
  if (w.rank() != 1 || w.shape()[0] != pred.shape()[0]) {
    throw std::invalid_argument("drift_loss: w " + shape_str(w.shape()) +
                                " does not match batch " + std::to_string(pred.shape()[0]));
  }
  const Tensor row_sq = reduce_sum(square(sub(pred, target)), 1);
  return reduce_mean(mul(row_sq, w));
}

struct GradFlowReport {
  double grad_norm_phi_from_lf = 0.0;
};

// How strongly the drift loss reaches the potential's parameters: exactly
// zero when weights are detached, generically positive otherwise.
inline GradFlowReport grad_flow_diagnostic(const BridgeBatch& batch, const DriftNet& drift,
                                           const PotentialNet& potential,
                                           const ObjectiveConfig& cfg) {
  Tape tape;
  GradScope scope(tape);
  const Tensor v_xt = potential.forward(batch.xt);
  const WeightedBatch wb = importance_weights(v_xt, cfg);
  const Tensor pred = drift.forward(batch.xt, batch.t);
  const Tensor loss = drift_loss(pred, batch.target, wb.w);
  tape.backward(loss);

  double sq = 0.0;
  for (const auto& p : potential.params()) {
    const Tensor g = tape.grad(p.value);
    for (std::size_t i = 0; i < g.size(); ++i) {
      sq += g.at(i) * g.at(i);
    }
  }
  return GradFlowReport{std::sqrt(sq)};
}

}  // namespace agm
