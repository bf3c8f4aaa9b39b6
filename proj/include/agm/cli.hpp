#pragma once

// Command-line front end: train / ablate / sample / metrics / gradcheck /
// saliency. Config resolution is defaults, then --config JSON, then
// repeated --set dotted overrides; the resolved config lands in the run
// directory. Exit codes: 0 success, 1 usage or config error, 2 runtime
// abort. Failures print a one-line JSON error record to stderr.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "agm/checkpoint.hpp"
#include "agm/config.hpp"
#include "agm/eval.hpp"
#include "agm/sampler.hpp"
#include "agm/trainer.hpp"

namespace agm {

namespace detail {

inline void emit_error(const std::string& kind, const std::string& message,
                       const std::string& out_dir = "") {
  const nlohmann::json record{{"error", kind}, {"message", message}};
  std::cerr << record.dump() << "\n";
  if (!out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (!ec) {
      std::ofstream out(std::filesystem::path(out_dir) / "error.json");
      out << record.dump(2) << "\n";
    }
  }
}

inline TrainConfig resolve_config(const std::string& config_path,
                                  const std::vector<std::string>& overrides) {
  TrainConfig cfg;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) {
      throw ConfigError("cannot read config file '" + config_path + "'");
    }
    const nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) {
      throw ConfigError("config file '" + config_path + "' is not valid JSON");
    }
    apply_config_json(cfg, j);
  }
  for (const auto& o : overrides) {
    apply_override(cfg, o);
  }
  cfg.validate();
  return cfg;
}

inline std::vector<double> parse_time_list(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) {
      continue;
    }
    const double t = std::stod(item);
    if (!(t >= 0.0 && t <= 1.0)) {
      throw ConfigError("saliency time " + item + " outside [0,1]");
    }
    out.push_back(t);
  }
  if (out.empty()) {
    throw ConfigError("no saliency times given");
  }
  return out;
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Bridge-matching trainer with a potential-weighted drift loss"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string ckpt_path;
  std::string run_dir;
  std::string samples_path;
  std::string json_path;
  std::string t_list = "0.1,0.5,0.9";
  std::vector<std::string> overrides;
  std::size_t n_seeds = 3;
  std::uint64_t gradcheck_seed = 7;
  std::size_t saliency_n = 256;

  auto* train = app.add_subcommand("train", "Run the training loop");
  train->add_option("--config", config_path, "JSON config file");
  train->add_option("--out", out_dir, "Run directory")->required();
  train->add_option("--set", overrides, "Dotted override, e.g. objective.lambda_v=0");

  auto* ablate = app.add_subcommand("ablate", "Paired full-vs-baseline runs");
  ablate->add_option("--config", config_path, "JSON config file");
  ablate->add_option("--out", out_dir, "Output directory")->required();
  ablate->add_option("--set", overrides, "Dotted override applied to both arms");
  ablate->add_option("--seeds", n_seeds, "Number of paired seeds")->check(CLI::PositiveNumber);

  auto* sample_cmd = app.add_subcommand("sample", "Generate samples from a checkpoint's EMA drift");
  sample_cmd->add_option("--ckpt", ckpt_path, "Checkpoint file")->required();
  sample_cmd->add_option("--out", out_dir, "Output directory")->required();
  std::size_t nfe_flag = 0;
  double sigma_flag = 0.0;
  std::size_t n_samples_flag = 0;
  std::uint64_t seed_flag = 0;
  auto* nfe_opt = sample_cmd->add_option("--nfe", nfe_flag, "Integration steps");
  auto* sigma_opt = sample_cmd->add_option("--sigma-sde", sigma_flag, "Inference noise");
  auto* nsamp_opt = sample_cmd->add_option("--n-samples", n_samples_flag, "Sample count");
  auto* seed_opt = sample_cmd->add_option("--seed", seed_flag, "Sampling seed");

  auto* metrics_cmd = app.add_subcommand("metrics", "Score samples against a fresh holdout set");
  metrics_cmd->add_option("--run", run_dir, "Run directory holding config.json")->required();
  metrics_cmd->add_option("--samples", samples_path, "Samples CSV (default <run>/samples.csv)");

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient audit");
  gradcheck_cmd->add_option("--seed", gradcheck_seed, "Harness seed");
  gradcheck_cmd->add_option("--json", json_path, "Write the report as JSON");

  auto* saliency_cmd =
      app.add_subcommand("saliency", "Potential input gradients on bridge samples");
  saliency_cmd->add_option("--ckpt", ckpt_path, "Checkpoint file")->required();
  saliency_cmd->add_option("--out", out_dir, "Output directory")->required();
  saliency_cmd->add_option("--t", t_list, "Comma-separated bridge times (default 0.1,0.5,0.9)");
  saliency_cmd->add_option("--n", saliency_n, "Bridge samples per time")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (train->parsed()) {
      const TrainConfig cfg = detail::resolve_config(config_path, overrides);
      const RunArtifacts art = run_training(cfg, out_dir);
      std::cout << "trained " << cfg.steps << " steps, final L_f=" << art.trace.back().loss_f
                << " L_V=" << art.trace.back().loss_v << ", run dir " << out_dir << "\n";
      return 0;
    }
    if (ablate->parsed()) {
      const TrainConfig cfg = detail::resolve_config(config_path, overrides);
      const AblationSuiteResult suite = run_ablation_suite(cfg, n_seeds, out_dir);
      std::cout << suite.summary.dump(2) << "\n";
      return 0;
    }
    if (sample_cmd->parsed()) {
      TrainerState st = load_trainer(ckpt_path);
      SamplerConfig sc = st.cfg.sampler;
      sc.seed = st.cfg.seed;
      if (nfe_opt->count() > 0) {
        sc.nfe = nfe_flag;
      }
      if (sigma_opt->count() > 0) {
        sc.sigma_sde = sigma_flag;
      }
      if (nsamp_opt->count() > 0) {
        sc.n_samples = n_samples_flag;
      }
      if (seed_opt->count() > 0) {
        sc.seed = seed_flag;
      }
      sc.validate();
      const DriftNet net = st.ema.materialize(st.drift);
      Rng rng = Rng::stream(sc.seed, streams::kSampler);
      const Tensor samples = sample(net, st.cfg.model.dim, sc, rng);
      std::filesystem::create_directories(out_dir);
      write_samples_csv((std::filesystem::path(out_dir) / "samples.csv").string(), samples);
      write_json((std::filesystem::path(out_dir) / "samples.json").string(),
                 sampler_sidecar(sc, st.cfg.model.dim, ckpt_path));
      std::cout << "wrote " << sc.n_samples << " samples to " << out_dir << "/samples.csv\n";
      return 0;
    }
    if (metrics_cmd->parsed()) {
      const auto cfg_path = std::filesystem::path(run_dir) / "config.json";
      std::ifstream in(cfg_path);
      if (!in) {
        throw ConfigError("cannot read " + cfg_path.string());
      }
      const nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
      if (j.is_discarded()) {
        throw ConfigError(cfg_path.string() + " is not valid JSON");
      }
      const TrainConfig cfg = config_from_json(j);
      cfg.validate();
      const std::string spath =
          samples_path.empty() ? (std::filesystem::path(run_dir) / "samples.csv").string()
                               : samples_path;
      const Tensor samples = read_samples_csv(spath);
      const Tensor reference = holdout_split(cfg.data, cfg.seed, cfg.eval.n_reference);
      const MetricReport report = compute_metrics(samples, reference, cfg.data, cfg.eval.k,
                                                  cfg.eval.n_projections, cfg.seed);
      write_json((std::filesystem::path(run_dir) / "metrics.json").string(),
                 metric_report_json(report));
      std::ofstream csv(std::filesystem::path(run_dir) / "metrics.csv");
      csv << metric_csv_header() << "\n" << metric_csv_row(report) << "\n";
      std::cout << metric_report_json(report).dump(2) << "\n";
      return 0;
    }
    if (gradcheck_cmd->parsed()) {
      const GradcheckReport report = gradcheck_suite(gradcheck_seed);
      for (const auto& e : report.entries) {
        std::cout << (e.pass ? "PASS " : "FAIL ") << e.name
                  << " max_abs_diff=" << e.max_abs_diff << " max_rel_err=" << e.max_rel_err
                  << "\n";
      }
      if (!json_path.empty()) {
        write_json(json_path, gradcheck_report_json(report));
      }
      if (!report.all_pass) {
        detail::emit_error("gradcheck", "finite-difference audit failed");
        return 2;
      }
      std::cout << "gradcheck: all checks passed\n";
      return 0;
    }
    if (saliency_cmd->parsed()) {
      const std::vector<double> times = detail::parse_time_list(t_list);
      TrainerState st = load_trainer(ckpt_path);
      const TrainConfig& cfg = st.cfg;
      const std::size_t dim = cfg.model.dim;
      Rng rng = Rng::stream(cfg.seed, streams::kEval);

      std::filesystem::create_directories(out_dir);
      std::ofstream csv(std::filesystem::path(out_dir) / "saliency.csv");
      csv.precision(17);
      csv << "t";
      for (std::size_t d = 0; d < dim; ++d) {
        csv << ",x" << d;
      }
      for (std::size_t d = 0; d < dim; ++d) {
        csv << ",g" << d;
      }
      csv << "\n";

      nlohmann::json norms = nlohmann::json::array();
      for (const double t : times) {
        const Tensor x1 = sample_data(cfg.data, saliency_n, rng);
        const Tensor x0 = random_normal(rng, {saliency_n, dim});
        const Tensor eps = random_normal(rng, {saliency_n, dim});
        const Tensor tvec({saliency_n}, t);
        const BridgeBatch bb = construct_bridge(x0, x1, eps, tvec, cfg.schedule);
        const Tensor g = potential_saliency(st.potential, bb.xt);
        for (std::size_t i = 0; i < saliency_n; ++i) {
          csv << t;
          for (std::size_t d = 0; d < dim; ++d) {
            csv << "," << bb.xt.at(i, d);
          }
          for (std::size_t d = 0; d < dim; ++d) {
            csv << "," << g.at(i, d);
          }
          csv << "\n";
        }
        norms.push_back({{"t", t}, {"mean_grad_norm", mean_saliency_norm(st.potential, bb.xt)}});
      }
      write_json((std::filesystem::path(out_dir) / "saliency.json").string(),
                 nlohmann::json{{"checkpoint", ckpt_path},
                                {"times", times},
                                {"n_per_time", saliency_n},
                                {"mean_grad_norms", norms}});
      std::cout << "wrote saliency for " << times.size() << " time slices to " << out_dir
                << "/saliency.csv\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    detail::emit_error("config", e.what(), out_dir);
    return 1;
  } catch (const TrainAbort& e) {
    detail::emit_error("train_abort", e.what(), out_dir);
    return 2;
  } catch (const SamplerAbort& e) {
    detail::emit_error("sampler_abort", e.what(), out_dir);
    return 2;
  } catch (const CheckpointError& e) {
    detail::emit_error("checkpoint", e.what(), out_dir);
    return 2;
  } catch (const std::exception& e) {
    detail::emit_error("runtime", e.what(), out_dir);
    return 2;
  }
  return 1;
}

inline int run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> full;
  full.reserve(args.size() + 1);
  full.push_back("agm");
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  argv.reserve(full.size());
  for (const auto& s : full) {
    argv.push_back(s.c_str());
  }
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace agm
