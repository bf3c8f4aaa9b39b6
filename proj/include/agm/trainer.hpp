#pragma once

// The training loop. Each step runs two phases against one shared bridge
// batch: first the potential is updated on its contrastive loss, then the
// importance weights are formed from the freshly updated potential and the
// drift takes a weighted regression step. The EMA shadow trails the drift.
//
// Every random draw comes from a named stream derived from the run seed
// (data, bridge, noise, sampler, eval), so runs are reproducible and the
// lambda_v=0 ablation arm sees bitwise-identical data.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "agm/bridge.hpp"
#include "agm/checkpoint.hpp"
#include "agm/config.hpp"
#include "agm/data.hpp"
#include "agm/eval.hpp"
#include "agm/nets.hpp"
#include "agm/objective.hpp"
#include "agm/optimizer.hpp"
#include "agm/sampler.hpp"
#include "agm/tensor.hpp"

namespace agm {

struct StepRecord {
  std::uint64_t step = 0;  // 1-based
  double loss_f = 0.0;
  double loss_v = 0.0;
  WeightStats weights;
  double wall_s = 0.0;  // filled by run_training (cumulative)
};

// Intermediate step tensors, captured on request for inspection.
struct StepDebug {
  BridgeBatch bridge;
  Tensor x1;
  Tensor z;
  Tensor w;
};

class TrainAbort : public std::runtime_error {
 public:
  TrainAbort(StepRecord rec, const std::string& what)
      : std::runtime_error("training aborted at step " + std::to_string(rec.step) + ": " + what),
        record_(rec) {}
  const StepRecord& record() const { return record_; }

 private:
  StepRecord record_;
};

struct TrainerState {
  TrainConfig cfg;
  DriftNet drift;
  PotentialNet potential;
  EmaShadow ema;
  Adam opt_f;
  Adam opt_v;
  Rng rng_data;
  Rng rng_bridge;
  Rng rng_noise;
  std::uint64_t step = 0;  // completed steps
};

inline TrainerState init_trainer(const TrainConfig& cfg) {
  cfg.validate();
  Rng r_drift = Rng::stream(cfg.seed, streams::kDriftInit);
  Rng r_pot = Rng::stream(cfg.seed, streams::kPotentialInit);
  DriftNet drift(cfg.model.drift(), r_drift);
  PotentialNet potential(cfg.model.potential(), r_pot);
  check_param_budget(drift, potential);
  EmaShadow ema(drift);
  Adam opt_f(drift.params(), AdamConfig{cfg.lr_f, 0.9, 0.999, 1e-8});
  Adam opt_v(potential.params(), AdamConfig{cfg.lr_v, 0.9, 0.999, 1e-8});
  return TrainerState{cfg,
                      std::move(drift),
                      std::move(potential),
                      std::move(ema),
                      std::move(opt_f),
                      std::move(opt_v),
                      Rng::stream(cfg.seed, streams::kData),
                      Rng::stream(cfg.seed, streams::kBridge),
                      Rng::stream(cfg.seed, streams::kNoise),
                      0};
}

inline StepRecord train_step(TrainerState& st, StepDebug* dbg = nullptr) {
  const TrainConfig& cfg = st.cfg;
  const std::size_t batch = cfg.batch_size;
  const std::size_t dim = cfg.model.dim;

  const Tensor x1 = sample_data(cfg.data, batch, st.rng_data);
  const Tensor x0 = random_normal(st.rng_bridge, {batch, dim});
  const BridgeBatch bb = build_bridge(x0, x1, st.rng_bridge, cfg.schedule);
  const Tensor z = random_normal(st.rng_noise, {batch, dim});

  StepRecord rec;
  rec.step = st.step + 1;

  {  // potential phase
    Tape tape;
    GradScope scope(tape);
    const Tensor lv =
        potential_loss(st.potential.forward(bb.xt), st.potential.forward(z), cfg.objective);
    rec.loss_v = lv.item();
    if (!std::isfinite(rec.loss_v)) {
      throw TrainAbort(rec, "non-finite potential loss");
    }
    tape.backward(lv);
    st.opt_v.step(tape, st.potential.params());
  }

  WeightedBatch wb;
  {  // drift phase; weights come from the just-updated potential
    Tape tape;
    GradScope scope(tape);
    wb = importance_weights(st.potential.forward(bb.xt), cfg.objective);
    rec.weights = wb.stats;
    const Tensor pred = st.drift.forward(bb.xt, bb.t);
    const Tensor lf = drift_loss(pred, bb.target, wb.w);
    rec.loss_f = lf.item();
    if (!std::isfinite(rec.loss_f)) {
      throw TrainAbort(rec, "non-finite drift loss");
    }
    tape.backward(lf);
    st.opt_f.step(tape, st.drift.params());
  }

  st.ema.update(st.drift, cfg.ema_tau);
  ++st.step;

  if (dbg != nullptr) {
    dbg->bridge = bb;
    dbg->x1 = x1;
    dbg->z = z;
    dbg->w = wb.w;
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Checkpoint conversion

inline CheckpointData to_checkpoint(const TrainerState& st) {
  CheckpointData data;
  data.config = config_json(st.cfg);
  data.step = st.step;
  data.rng_states.emplace("data", st.rng_data.state());
  data.rng_states.emplace("bridge", st.rng_bridge.state());
  data.rng_states.emplace("noise", st.rng_noise.state());
  data.counters.emplace("opt_f", st.opt_f.step_count());
  data.counters.emplace("opt_v", st.opt_v.step_count());

  auto push_params = [&](const std::string& prefix, const std::vector<Param>& params) {
    for (const auto& p : params) {
      data.blocks.push_back({prefix + "." + p.name, p.value.shape(), p.value.values()});
    }
  };
  push_params("drift", st.drift.params());
  push_params("potential", st.potential.params());
  push_params("ema", st.ema.params());
  auto push_slots = [&](const std::string& prefix, const Adam& opt,
                        const std::vector<Param>& params) {
    const auto& slots = opt.slots();
    for (std::size_t i = 0; i < slots.size(); ++i) {
      data.blocks.push_back({prefix + "." + slots[i].name + ".m", params[i].value.shape(),
                             slots[i].m});
      data.blocks.push_back({prefix + "." + slots[i].name + ".v", params[i].value.shape(),
                             slots[i].v});
    }
  };
  push_slots("opt_f", st.opt_f, st.drift.params());
  push_slots("opt_v", st.opt_v, st.potential.params());
  return data;
}

namespace detail {

inline void restore_params(const CheckpointData& data, const std::string& prefix,
                           std::vector<Param>& params) {
  for (auto& p : params) {
    const CheckpointBlock* b = data.find(prefix + "." + p.name);
    if (b == nullptr) {
      throw CheckpointError("checkpoint is missing block '" + prefix + "." + p.name + "'");
    }
    if (b->shape != p.value.shape()) {
      throw CheckpointError("checkpoint block '" + b->name + "' has shape " +
                            shape_str(b->shape) + " but the config builds " +
                            shape_str(p.value.shape()));
    }
    p.value.values() = b->values;
  }
}

inline void restore_slots(const CheckpointData& data, const std::string& prefix, Adam& opt) {
  for (auto& slot : opt.slots()) {
    const CheckpointBlock* m = data.find(prefix + "." + slot.name + ".m");
    const CheckpointBlock* v = data.find(prefix + "." + slot.name + ".v");
    if (m == nullptr || v == nullptr) {
      throw CheckpointError("checkpoint is missing optimizer block for '" + slot.name + "'");
    }
    if (m->values.size() != slot.m.size() || v->values.size() != slot.v.size()) {
      throw CheckpointError("optimizer block '" + slot.name + "' size disagrees with config");
    }
    slot.m = m->values;
    slot.v = v->values;
  }
}

}  // namespace detail

inline TrainerState from_checkpoint(const CheckpointData& data) {
  const TrainConfig cfg = config_from_json(data.config);
  TrainerState st = init_trainer(cfg);
  detail::restore_params(data, "drift", st.drift.params());
  detail::restore_params(data, "potential", st.potential.params());
  detail::restore_params(data, "ema", st.ema.params());
  detail::restore_slots(data, "opt_f", st.opt_f);
  detail::restore_slots(data, "opt_v", st.opt_v);
  st.opt_f.set_step_count(data.counters.at("opt_f"));
  st.opt_v.set_step_count(data.counters.at("opt_v"));
  st.rng_data = Rng::from_state(data.rng_states.at("data"));
  st.rng_bridge = Rng::from_state(data.rng_states.at("bridge"));
  st.rng_noise = Rng::from_state(data.rng_states.at("noise"));
  st.step = data.step;
  return st;
}

inline TrainerState load_trainer(const std::string& checkpoint_path) {
  return from_checkpoint(load_checkpoint(checkpoint_path));
}

// ---------------------------------------------------------------------------
// Full runs

struct RunArtifacts {
  std::string run_dir;
  std::vector<StepRecord> trace;  // every step, regardless of log_every
  std::string final_checkpoint;
  TrainerState state;
};

namespace detail {

inline void write_trace_header(std::ofstream& out) {
  out << "step,L_f,L_V,w_mean_preclamp,w_min,w_max,clamp_rate\n";
}

inline void write_trace_row(std::ofstream& out, const StepRecord& r) {
  out << r.step << "," << r.loss_f << "," << r.loss_v << "," << r.weights.pre_clamp_mean << ","
      << r.weights.min << "," << r.weights.max << "," << r.weights.clamp_rate << "\n";
}

}  // namespace detail

inline RunArtifacts run_training(const TrainConfig& cfg, const std::string& run_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(run_dir) / "checkpoints");
  write_json((fs::path(run_dir) / "config.json").string(), config_json(cfg));

  std::ofstream trace_out(fs::path(run_dir) / "trace.csv");
  if (!trace_out) {
    throw std::runtime_error("run_training: cannot write trace.csv in " + run_dir);
  }
  trace_out.precision(17);
  detail::write_trace_header(trace_out);

  RunArtifacts art{run_dir, {}, "", init_trainer(cfg)};
  art.trace.reserve(cfg.steps);

  const auto t0 = std::chrono::steady_clock::now();
  for (std::uint64_t s = 1; s <= cfg.steps; ++s) {
    StepRecord rec = train_step(art.state);
    rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (rec.step % cfg.log_every == 0 || rec.step == cfg.steps) {
      detail::write_trace_row(trace_out, rec);
    }
    if (rec.step % cfg.checkpoint_every == 0 || rec.step == cfg.steps) {
      const std::string path =
          (fs::path(run_dir) / "checkpoints" / ("step_" + std::to_string(rec.step) + ".agmckpt"))
              .string();
      save_checkpoint(path, to_checkpoint(art.state));
      art.final_checkpoint = path;
      trace_out.flush();
    }
    art.trace.push_back(rec);
  }

  const StepRecord& last = art.trace.back();
  write_json((fs::path(run_dir) / "summary.json").string(),
             nlohmann::json{{"steps", cfg.steps},
                            {"final_loss_f", last.loss_f},
                            {"final_loss_v", last.loss_v},
                            {"wall_seconds", last.wall_s},
                            {"final_checkpoint", art.final_checkpoint},
                            {"trace", "trace.csv"}});
  return art;
}

// Samples from the EMA drift and scores against a fresh holdout reference.
inline MetricReport evaluate_run(const TrainerState& st, const std::string& run_dir) {
  namespace fs = std::filesystem;
  const TrainConfig& cfg = st.cfg;
  const DriftNet ema_net = st.ema.materialize(st.drift);
  Rng rng = Rng::stream(cfg.seed, streams::kSampler);
  const Tensor samples = sample(ema_net, cfg.model.dim, cfg.sampler, rng);
  write_samples_csv((fs::path(run_dir) / "samples.csv").string(), samples);
  write_json((fs::path(run_dir) / "samples.json").string(),
             sampler_sidecar(cfg.sampler, cfg.model.dim, "ema@step_" + std::to_string(st.step)));

  const Tensor reference = holdout_split(cfg.data, cfg.seed, cfg.eval.n_reference);
  const MetricReport report = compute_metrics(samples, reference, cfg.data, cfg.eval.k,
                                              cfg.eval.n_projections, cfg.seed);
  write_json((fs::path(run_dir) / "metrics.json").string(), metric_report_json(report));
  std::ofstream csv(fs::path(run_dir) / "metrics.csv");
  csv << metric_csv_header() << "\n" << metric_csv_row(report) << "\n";
  return report;
}

// ---------------------------------------------------------------------------
// Ablation: full objective vs lambda_v=0 baseline, sharing everything else

struct ArmResult {
  TrainConfig cfg;
  std::string run_dir;
  std::vector<StepRecord> trace;
  MetricReport metrics;
  TrainerState state;
};

struct AblationResult {
  ArmResult full;
  ArmResult baseline;
  nlohmann::json report;
};

inline ArmResult run_arm(const TrainConfig& cfg, const std::string& dir) {
  RunArtifacts art = run_training(cfg, dir);
  MetricReport metrics = evaluate_run(art.state, art.run_dir);
  return ArmResult{cfg, art.run_dir, std::move(art.trace), metrics, std::move(art.state)};
}

namespace detail {

inline nlohmann::json ablation_delta(const MetricReport& full, const MetricReport& base) {
  auto rel = [](double d, double denom) {
    return denom != 0.0 ? nlohmann::json(d / denom) : nlohmann::json(nullptr);
  };
  const double dw = full.sliced_w2 - base.sliced_w2;
  const double dp = full.precision - base.precision;
  const double dr = full.recall - base.recall;
  return nlohmann::json{
      {"absolute", {{"sliced_w2", dw}, {"precision", dp}, {"recall", dr}}},
      {"relative",
       {{"sliced_w2", rel(dw, base.sliced_w2)},
        {"precision", rel(dp, base.precision)},
        {"recall", rel(dr, base.recall)}}}};
}

}  // namespace detail

inline AblationResult run_ablation(const TrainConfig& cfg, const std::string& out_dir) {
  namespace fs = std::filesystem;
  TrainConfig base_cfg = cfg;
  base_cfg.objective.lambda_v = 0.0;  // the single field the arms differ in

  AblationResult result{run_arm(cfg, (fs::path(out_dir) / "full").string()),
                        run_arm(base_cfg, (fs::path(out_dir) / "baseline").string()),
                        nlohmann::json()};
  result.report =
      nlohmann::json{{"seed", cfg.seed},
                     {"full", metric_report_json(result.full.metrics)},
                     {"baseline", metric_report_json(result.baseline.metrics)},
                     {"delta", detail::ablation_delta(result.full.metrics,
                                                      result.baseline.metrics)}};
  write_json((fs::path(out_dir) / "ablation.json").string(), result.report);
  return result;
}

struct AblationSuiteResult {
  std::vector<AblationResult> pairs;
  nlohmann::json summary;
};

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline AblationSuiteResult run_ablation_suite(const TrainConfig& cfg, std::size_t n_seeds,
                                              const std::string& out_dir) {
  if (n_seeds < 1) {
    throw ConfigError("ablation needs at least one seed");
  }
  namespace fs = std::filesystem;
  AblationSuiteResult suite;
  nlohmann::json per_seed = nlohmann::json::array();
  std::vector<double> full_w2;
  std::vector<double> base_w2;
  for (std::size_t i = 0; i < n_seeds; ++i) {
    TrainConfig c = cfg;
    c.seed = cfg.seed + i;
    const std::string pair_dir = (fs::path(out_dir) / ("seed_" + std::to_string(c.seed))).string();
    AblationResult pair = run_ablation(c, pair_dir);
    per_seed.push_back(pair.report);
    full_w2.push_back(pair.full.metrics.sliced_w2);
    base_w2.push_back(pair.baseline.metrics.sliced_w2);
    suite.pairs.push_back(std::move(pair));
  }

  auto collect = [&](auto proj) {
    std::vector<double> f;
    std::vector<double> b;
    for (const auto& p : suite.pairs) {
      f.push_back(proj(p.full.metrics));
      b.push_back(proj(p.baseline.metrics));
    }
    return nlohmann::json{{"full", median(f)}, {"baseline", median(b)}};
  };
  const nlohmann::json med{
      {"sliced_w2", collect([](const MetricReport& m) { return m.sliced_w2; })},
      {"precision", collect([](const MetricReport& m) { return m.precision; })},
      {"recall", collect([](const MetricReport& m) { return m.recall; })}};

  suite.summary = nlohmann::json{{"n_seeds", n_seeds},
                                 {"base_seed", cfg.seed},
                                 {"seeds", per_seed},
                                 {"median", med},
                                 {"median_sliced_w2_full", median(full_w2)},
                                 {"median_sliced_w2_baseline", median(base_w2)}};
  write_json((fs::path(out_dir) / "ablation_summary.json").string(), suite.summary);
  return suite;
}

}  // namespace agm
