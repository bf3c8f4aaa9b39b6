#pragma once

// Distribution metrics for 2-D toy runs (sliced Wasserstein-2, k-NN
// precision/recall, mode coverage), input-gradient saliency for the
// potential, and a finite-difference harness covering every differentiable
// path the objectives use.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "agm/bridge.hpp"
#include "agm/data.hpp"
#include "agm/nets.hpp"
#include "agm/objective.hpp"
#include "agm/rng.hpp"
#include "agm/tensor.hpp"

namespace agm {

// Exact Wasserstein-2 distance between two 1-D empirical distributions:
// the L2 norm of the quantile-function difference, integrated segment by
// segment over the merged breakpoint grid (i/n and j/m), which handles
// unequal sample counts without interpolation error.
inline double w2_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) {
    throw std::invalid_argument("w2_1d: empty sample set");
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  const double denom = static_cast<double>(n) * static_cast<double>(m);
  std::size_t i = 0;
  std::size_t j = 0;
  std::uint64_t q = 0;  // current quantile as a multiple of 1/(n*m)
  double acc = 0.0;
  while (i < n && j < m) {
    const std::uint64_t qa = static_cast<std::uint64_t>(i + 1) * m;
    const std::uint64_t qb = static_cast<std::uint64_t>(j + 1) * n;
    const std::uint64_t qn = std::min(qa, qb);
    const double d = a[i] - b[j];
    acc += static_cast<double>(qn - q) / denom * d * d;
    q = qn;
    if (qa == qn) {
      ++i;
    }
    if (qb == qn) {
      ++j;
    }
  }
  return std::sqrt(acc);
}

// Mean over random unit directions of the exact projected 1-D distance.
inline double sliced_w2(const Tensor& a, const Tensor& b, std::size_t n_projections, Rng& rng) {
  if (a.size() == 0 || b.size() == 0) {
    throw std::invalid_argument("sliced_w2: empty sample set");
  }
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1]) {
    throw std::invalid_argument("sliced_w2: incompatible shapes " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  if (n_projections == 0) {
    throw std::invalid_argument("sliced_w2: n_projections must be >= 1");
  }
  const std::size_t d = a.shape()[1];
  std::vector<double> u(d);
  std::vector<double> pa(a.shape()[0]);
  std::vector<double> pb(b.shape()[0]);
  double total = 0.0;
  for (std::size_t p = 0; p < n_projections; ++p) {
    double norm = 0.0;
    do {
      rng.fill_normal({u.data(), d});
      norm = 0.0;
      for (double v : u) {
        norm += v * v;
      }
      norm = std::sqrt(norm);
    } while (norm == 0.0);
    for (double& v : u) {
      v /= norm;
    }
    for (std::size_t r = 0; r < pa.size(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        s += a.at(r, c) * u[c];
      }
      pa[r] = s;
    }
    for (std::size_t r = 0; r < pb.size(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        s += b.at(r, c) * u[c];
      }
      pb[r] = s;
    }
    total += w2_1d(pa, pb);
  }
  return total / static_cast<double>(n_projections);
}

// ---------------------------------------------------------------------------
// k-NN manifold precision/recall

namespace detail {

inline double sq_dist(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  const std::size_t d = a.shape()[1];
  double s = 0.0;
  for (std::size_t c = 0; c < d; ++c) {
    const double diff = a.at(i, c) - b.at(j, c);
    s += diff * diff;
  }
  return s;
}

// Squared distance from each point to its k-th nearest neighbor within the
// same set, self excluded.
inline std::vector<double> knn_sq_radii(const Tensor& pts, std::size_t k) {
  const std::size_t n = pts.shape()[0];
  std::vector<double> radii(n);
  std::priority_queue<double> heap;  // max-heap of the k smallest so far
  for (std::size_t i = 0; i < n; ++i) {
    while (!heap.empty()) {
      heap.pop();
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) {
        continue;
      }
      const double d2 = sq_dist(pts, i, pts, j);
      if (heap.size() < k) {
        heap.push(d2);
      } else if (d2 < heap.top()) {
        heap.pop();
        heap.push(d2);
      }
    }
    radii[i] = heap.top();
  }
  return radii;
}

// Fraction of query points lying within any support point's radius.
inline double manifold_coverage(const Tensor& query, const Tensor& support,
                                const std::vector<double>& sq_radii) {
  const std::size_t nq = query.shape()[0];
  const std::size_t ns = support.shape()[0];
  std::size_t inside = 0;
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t j = 0; j < ns; ++j) {
      if (sq_dist(query, i, support, j) <= sq_radii[j]) {
        ++inside;
        break;
      }
    }
  }
  return static_cast<double>(inside) / static_cast<double>(nq);
}

}  // namespace detail

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

inline PrecisionRecall knn_precision_recall(const Tensor& generated, const Tensor& reference,
                                            std::size_t k) {
  if (generated.rank() != 2 || reference.rank() != 2 ||
      generated.shape()[1] != reference.shape()[1]) {
    throw std::invalid_argument("knn_precision_recall: incompatible shapes " +
                                shape_str(generated.shape()) + " vs " +
                                shape_str(reference.shape()));
  }
  if (k == 0 || generated.shape()[0] < k + 1 || reference.shape()[0] < k + 1) {
    throw std::invalid_argument("knn_precision_recall: need at least k+1 points per set (k=" +
                                std::to_string(k) + ")");
  }
  const auto ref_radii = detail::knn_sq_radii(reference, k);
  const auto gen_radii = detail::knn_sq_radii(generated, k);
  PrecisionRecall pr;
  pr.precision = detail::manifold_coverage(generated, reference, ref_radii);
  pr.recall = detail::manifold_coverage(reference, generated, gen_radii);
  return pr;
}

// Fraction of known modes that own at least one sample within 3 per-mode
// standard deviations.
inline double mode_coverage(const Tensor& generated, const ToyDistribution& dist) {
  const auto centers = mode_centers(dist);  // rejects kinds without modes
  const double r = 3.0 * dist.noise_std;
  const double r2 = r * r;
  std::size_t hit = 0;
  for (const auto& c : centers) {
    for (std::size_t i = 0; i < generated.shape()[0]; ++i) {
      const double dx = generated.at(i, 0) - c[0];
      const double dy = generated.at(i, 1) - c[1];
      if (dx * dx + dy * dy <= r2) {
        ++hit;
        break;
      }
    }
  }
  return static_cast<double>(hit) / static_cast<double>(centers.size());
}

// Per-sample input gradient of the potential: rows of the result are
// grad_x V(x) at the corresponding input row.
inline Tensor potential_saliency(const PotentialNet& net, const Tensor& x) {
  Tensor probe(x.shape(), x.values());
  probe.set_requires_grad(true);
  Tape tape;
  GradScope scope(tape);
  const Tensor v = net.forward(probe);
  tape.backward(reduce_sum(v));
  return tape.grad(probe);
}

inline double mean_saliency_norm(const PotentialNet& net, const Tensor& x) {
  const Tensor g = potential_saliency(net, x);
  const std::size_t b = g.shape()[0];
  const std::size_t d = g.shape()[1];
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      s += g.at(i, j) * g.at(i, j);
    }
    total += std::sqrt(s);
  }
  return total / static_cast<double>(b);
}

// ---------------------------------------------------------------------------
// Metric report

struct MetricReport {
  double sliced_w2 = 0.0;
  double sliced_w2_std = 0.0;  // spread across repeated projection streams
  double precision = 0.0;
  double recall = 0.0;
  std::optional<double> mode_coverage;
  std::size_t n_generated = 0;
  std::size_t n_reference = 0;
  std::size_t k = 0;
  std::size_t n_projections = 0;
};

inline nlohmann::json metric_report_json(const MetricReport& r) {
  nlohmann::json j{{"sliced_w2", r.sliced_w2},
                   {"sliced_w2_std", r.sliced_w2_std},
                   {"precision", r.precision},
                   {"recall", r.recall},
                   {"n_generated", r.n_generated},
                   {"n_reference", r.n_reference},
                   {"k", r.k},
                   {"n_projections", r.n_projections}};
  j["mode_coverage"] = r.mode_coverage.has_value() ? nlohmann::json(*r.mode_coverage)
                                                   : nlohmann::json(nullptr);
  return j;
}

inline const char* metric_csv_header() {
  return "sliced_w2,sliced_w2_std,precision,recall,mode_coverage,n_generated,n_reference,k,"
         "n_projections";
}

inline std::string metric_csv_row(const MetricReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.sliced_w2 << "," << r.sliced_w2_std << "," << r.precision << "," << r.recall << ",";
  if (r.mode_coverage.has_value()) {
    os << *r.mode_coverage;
  }
  os << "," << r.n_generated << "," << r.n_reference << "," << r.k << "," << r.n_projections;
  return os.str();
}

// Point estimate uses the first projection stream; the reported spread is
// the population std over `repeats` independent projection streams.
inline MetricReport compute_metrics(const Tensor& generated, const Tensor& reference,
                                    const std::optional<ToyDistribution>& dist, std::size_t k,
                                    std::size_t n_projections, std::uint64_t seed,
                                    std::size_t repeats = 3) {
  MetricReport r;
  std::vector<double> vals;
  for (std::size_t i = 0; i < std::max<std::size_t>(repeats, 1); ++i) {
    Rng rng = Rng::stream(seed, streams::kProjections + i);
    vals.push_back(sliced_w2(generated, reference, n_projections, rng));
  }
  r.sliced_w2 = vals[0];
  double mean = 0.0;
  for (double v : vals) {
    mean += v;
  }
  mean /= static_cast<double>(vals.size());
  double var = 0.0;
  for (double v : vals) {
    var += (v - mean) * (v - mean);
  }
  r.sliced_w2_std = std::sqrt(var / static_cast<double>(vals.size()));

  const PrecisionRecall pr = knn_precision_recall(generated, reference, k);
  r.precision = pr.precision;
  r.recall = pr.recall;
  if (dist.has_value() && dist->kind == ToyKind::eight_gaussians) {
    r.mode_coverage = mode_coverage(generated, *dist);
  }
  r.n_generated = generated.shape()[0];
  r.n_reference = reference.shape()[0];
  r.k = k;
  r.n_projections = n_projections;
  return r;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient harness

// Central difference of a scalar-valued closure w.r.t. one stored value.
inline double central_diff(std::function<double()> eval, double& value, double h = 1e-6) {
  const double orig = value;
  value = orig + h;
  const double fp = eval();
  value = orig - h;
  const double fm = eval();
  value = orig;
  return (fp - fm) / (2.0 * h);
}

// Agreement criterion: relative error at most 1e-5 with a small absolute
// floor so near-zero pairs do not fail on roundoff.
inline bool fd_close(double analytic, double numeric) {
  return std::abs(analytic - numeric) <=
         1e-5 * std::max(std::abs(analytic), std::abs(numeric)) + 1e-9;
}

struct GradcheckEntry {
  std::string name;
  double max_abs_diff = 0.0;
  double max_rel_err = 0.0;
  bool pass = true;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  bool all_pass = true;
};

inline nlohmann::json gradcheck_report_json(const GradcheckReport& r) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& e : r.entries) {
    checks.push_back({{"name", e.name},
                      {"max_abs_diff", e.max_abs_diff},
                      {"max_rel_err", e.max_rel_err},
                      {"pass", e.pass}});
  }
  return nlohmann::json{{"all_pass", r.all_pass}, {"checks", checks}};
}

namespace detail {

inline void fd_update_entry(GradcheckEntry& e, double analytic, double numeric) {
  const double diff = std::abs(analytic - numeric);
  e.max_abs_diff = std::max(e.max_abs_diff, diff);
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  if (scale > 0.0) {
    e.max_rel_err = std::max(e.max_rel_err, diff / scale);
  }
  if (!fd_close(analytic, numeric)) {
    e.pass = false;
  }
}

// Compares tape gradients of `loss_fn` against central differences for
// every element of every listed parameter.
inline GradcheckEntry fd_check_params(const std::string& name, std::vector<Param>& params,
                                      const std::function<Tensor()>& loss_fn) {
  GradcheckEntry entry{name};
  Tape tape;
  {
    GradScope scope(tape);
    tape.backward(loss_fn());
  }
  auto eval = [&] { return loss_fn().item(); };
  for (auto& p : params) {
    const Tensor g = tape.grad(p.value);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double numeric = central_diff(eval, p.value.values()[i]);
      detail::fd_update_entry(entry, g.at(i), numeric);
    }
  }
  return entry;
}

}  // namespace detail

// Exercises every differentiable path the training step relies on, on small
// randomized networks, against central finite differences.
inline GradcheckReport gradcheck_suite(std::uint64_t seed = 7) {
  DriftConfig dcfg;
  dcfg.dim = 3;
  dcfg.hidden = {8, 7};
  dcfg.time_freqs = 4;
  dcfg.time_width = 5;
  dcfg.freq_max = 50.0;
  PotentialConfig pcfg;
  pcfg.dim = 3;
  pcfg.hidden = {6, 5};

  Rng r_drift = Rng::stream(seed, streams::kDriftInit);
  Rng r_pot = Rng::stream(seed, streams::kPotentialInit);
  DriftNet drift(dcfg, r_drift);
  PotentialNet potential(pcfg, r_pot);
  // The zero-initialized output layer would zero out every trunk gradient;
  // randomize it so the check is not vacuous.
  for (auto& p : drift.params()) {
    if (p.name.rfind("out.", 0) == 0) {
      for (double& v : p.value.values()) {
        v = (2.0 * r_drift.uniform01() - 1.0) * 0.5;
      }
    }
  }

  const std::size_t batch = 4;
  Rng r_data = Rng::stream(seed, streams::kData);
  Rng r_bridge = Rng::stream(seed, streams::kBridge);
  Rng r_noise = Rng::stream(seed, streams::kNoise);
  const Tensor x0 = random_normal(r_data, {batch, dcfg.dim});
  Tensor x1 = random_normal(r_data, {batch, dcfg.dim});
  for (double& v : x1.values()) {
    v = 1.5 * v + 0.5;
  }
  const ScheduleParams sp;
  const BridgeBatch bb = build_bridge(x0, x1, r_bridge, sp);
  const Tensor z = random_normal(r_noise, {batch, dcfg.dim});

  ObjectiveConfig ocfg;
  GradcheckReport report;

  {  // drift parameters through the weighted drift loss (weights are data)
    const Tensor w = importance_weights(potential.forward(bb.xt), ocfg).w;
    auto loss = [&] { return drift_loss(drift.forward(bb.xt, bb.t), bb.target, w); };
    report.entries.push_back(detail::fd_check_params("drift_params_through_drift_loss",
                                                     drift.params(), loss));
  }
  {  // potential parameters through the contrastive loss
    auto loss = [&] { return potential_loss(potential.forward(bb.xt), potential.forward(z), ocfg); };
    report.entries.push_back(detail::fd_check_params("potential_params_through_potential_loss",
                                                     potential.params(), loss));
  }
  {  // detached weights: the drift loss must not reach the potential at all
    GradcheckEntry entry{"potential_params_through_drift_loss_detached"};
    Tape tape;
    {
      GradScope scope(tape);
      const Tensor w = importance_weights(potential.forward(bb.xt), ocfg).w;
      tape.backward(drift_loss(drift.forward(bb.xt, bb.t), bb.target, w));
    }
    for (const auto& p : potential.params()) {
      const Tensor g = tape.grad(p.value);
      for (std::size_t i = 0; i < g.size(); ++i) {
        entry.max_abs_diff = std::max(entry.max_abs_diff, std::abs(g.at(i)));
        if (g.at(i) != 0.0) {
          entry.pass = false;
        }
      }
    }
    report.entries.push_back(entry);
  }
  {  // no-detach diagnostic: gradients flow into the potential and match FD
    ObjectiveConfig diag = ocfg;
    diag.detach_weights = false;
    auto loss = [&] {
      const Tensor w = importance_weights(potential.forward(bb.xt), diag).w;
      return drift_loss(drift.forward(bb.xt, bb.t), bb.target, w);
    };
    GradcheckEntry entry =
        detail::fd_check_params("potential_params_through_drift_loss_no_detach",
                                potential.params(), loss);
    if (entry.max_abs_diff == 0.0) {
      entry.pass = false;  // the diagnostic path must be live
    }
    report.entries.push_back(entry);
  }
  {  // input gradient used by saliency
    GradcheckEntry entry{"saliency_input_gradient"};
    Rng r_pts = Rng::stream(seed, streams::kEval);
    Tensor pts = random_normal(r_pts, {20, pcfg.dim});
    const Tensor g = potential_saliency(potential, pts);
    auto eval = [&] { return reduce_sum(potential.forward(pts)).item(); };
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double numeric = central_diff(eval, pts.values()[i]);
      detail::fd_update_entry(entry, g.at(i), numeric);
    }
    report.entries.push_back(entry);
  }

  for (const auto& e : report.entries) {
    report.all_pass = report.all_pass && e.pass;
  }
  return report;
}

}  // namespace agm
