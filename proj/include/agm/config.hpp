#pragma once

// Run configuration: defaults are the desk-scale preset (20k steps,
// batch 256, D=2, ema_tau=0.999). Resolution order is defaults, then a
// JSON file, then dotted-path overrides; unknown keys are rejected by
// name at every stage, and the resolved config re-serializes losslessly
// for the run directory.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "agm/bridge.hpp"
#include "agm/data.hpp"
#include "agm/nets.hpp"
#include "agm/objective.hpp"
#include "agm/sampler.hpp"

namespace agm {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  std::size_t dim = 2;
  std::vector<std::size_t> hidden = {256, 256, 256};
  std::size_t time_freqs = 64;
  std::size_t time_width = 128;
  double freq_min = 1.0;
  double freq_max = 1000.0;
  std::vector<std::size_t> potential_hidden = {128, 128};

  DriftConfig drift() const {
    return DriftConfig{dim, hidden, time_freqs, time_width, freq_min, freq_max};
  }
  PotentialConfig potential() const { return PotentialConfig{dim, potential_hidden}; }
};

struct EvalConfig {
  std::size_t k = 5;
  std::size_t n_projections = 256;
  std::size_t n_reference = 10000;
};

struct TrainConfig {
  std::uint64_t steps = 20000;
  std::size_t batch_size = 256;
  double lr_f = 2e-4;
  double lr_v = 1e-4;
  double ema_tau = 0.999;
  std::uint64_t seed = 1;
  std::uint64_t log_every = 1;
  std::uint64_t checkpoint_every = 5000;
  ObjectiveConfig objective;
  ScheduleParams schedule;
  ToyDistribution data;
  ModelConfig model;
  SamplerConfig sampler;
  EvalConfig eval;

  void validate() const {
    if (steps < 1) {
      throw ConfigError("steps must be >= 1");
    }
    if (batch_size < 2) {
      throw ConfigError("batch_size must be >= 2 (the weight normalizer is a batch mean)");
    }
    if (!(lr_f > 0.0) || !(lr_v > 0.0)) {
      throw ConfigError("lr_f and lr_v must be > 0");
    }
    if (!(ema_tau >= 0.0 && ema_tau <= 1.0)) {
      throw ConfigError("ema_tau must lie in [0,1]");
    }
    if (log_every < 1 || checkpoint_every < 1) {
      throw ConfigError("log_every and checkpoint_every must be >= 1");
    }
    if (model.dim != 2) {
      throw ConfigError("model.dim must be 2: the toy datasets are two-dimensional");
    }
    if (!(schedule.sigma_max >= 0.0)) {
      throw ConfigError("schedule.sigma_max must be >= 0");
    }
    if (!(data.noise_std >= 0.0)) {
      throw ConfigError("data.noise_std must be >= 0");
    }
    if (eval.k < 1 || eval.n_projections < 1 || eval.n_reference < 2) {
      throw ConfigError("eval.k, eval.n_projections must be >= 1 and eval.n_reference >= 2");
    }
    try {
      objective.validate();
      sampler.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
};

// ---------------------------------------------------------------------------
// JSON resolution

namespace detail {

[[noreturn]] inline void bad_key(const std::string& path) {
  throw ConfigError("unknown config key '" + path + "'");
}

[[noreturn]] inline void bad_type(const std::string& path, const char* want) {
  throw ConfigError("config key '" + path + "' must be " + std::string(want));
}

inline double get_f64(const nlohmann::json& v, const std::string& path) {
  if (!v.is_number()) {
    bad_type(path, "a number");
  }
  return v.get<double>();
}

inline std::uint64_t get_u64(const nlohmann::json& v, const std::string& path) {
  if (v.is_number_unsigned()) {
    return v.get<std::uint64_t>();
  }
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  }
  bad_type(path, "a non-negative integer");
}

inline std::size_t get_size(const nlohmann::json& v, const std::string& path) {
  return static_cast<std::size_t>(get_u64(v, path));
}

inline bool get_bool(const nlohmann::json& v, const std::string& path) {
  if (!v.is_boolean()) {
    bad_type(path, "a boolean");
  }
  return v.get<bool>();
}

inline std::string get_str(const nlohmann::json& v, const std::string& path) {
  if (!v.is_string()) {
    bad_type(path, "a string");
  }
  return v.get<std::string>();
}

inline std::vector<std::size_t> get_size_list(const nlohmann::json& v, const std::string& path) {
  if (!v.is_array()) {
    bad_type(path, "an array of non-negative integers");
  }
  std::vector<std::size_t> out;
  for (const auto& e : v) {
    out.push_back(get_size(e, path));
  }
  return out;
}

}  // namespace detail

inline void apply_config_json(TrainConfig& cfg, const nlohmann::json& j,
                              const std::string& prefix = "") {
  if (!j.is_object()) {
    throw ConfigError("config " + (prefix.empty() ? std::string("root") : "'" + prefix + "'") +
                      " must be a JSON object");
  }
  for (const auto& [key, val] : j.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (prefix.empty()) {
      if (key == "steps") {
        cfg.steps = detail::get_u64(val, path);
      } else if (key == "batch_size") {
        cfg.batch_size = detail::get_size(val, path);
      } else if (key == "lr_f") {
        cfg.lr_f = detail::get_f64(val, path);
      } else if (key == "lr_v") {
        cfg.lr_v = detail::get_f64(val, path);
      } else if (key == "ema_tau") {
        cfg.ema_tau = detail::get_f64(val, path);
      } else if (key == "seed") {
        cfg.seed = detail::get_u64(val, path);
      } else if (key == "log_every") {
        cfg.log_every = detail::get_u64(val, path);
      } else if (key == "checkpoint_every") {
        cfg.checkpoint_every = detail::get_u64(val, path);
      } else if (key == "objective" || key == "schedule" || key == "data" || key == "model" ||
                 key == "sampler" || key == "eval") {
        apply_config_json(cfg, val, key);
      } else {
        detail::bad_key(path);
      }
    } else if (prefix == "objective") {
      if (key == "margin") {
        cfg.objective.margin = detail::get_f64(val, path);
      } else if (key == "gamma_v") {
        cfg.objective.gamma_v = detail::get_f64(val, path);
      } else if (key == "lambda_v") {
        cfg.objective.lambda_v = detail::get_f64(val, path);
      } else if (key == "clamp_lo") {
        cfg.objective.clamp_lo = detail::get_f64(val, path);
      } else if (key == "clamp_hi") {
        cfg.objective.clamp_hi = detail::get_f64(val, path);
      } else if (key == "sign_convention") {
        try {
          cfg.objective.sign_convention = sign_convention_from_string(detail::get_str(val, path));
        } catch (const std::invalid_argument& e) {
          throw ConfigError(std::string(e.what()) + " at '" + path + "'");
        }
      } else if (key == "detach_weights") {
        cfg.objective.detach_weights = detail::get_bool(val, path);
      } else {
        detail::bad_key(path);
      }
    } else if (prefix == "schedule") {
      if (key == "sigma_max") {
        cfg.schedule.sigma_max = detail::get_f64(val, path);
      } else {
        detail::bad_key(path);
      }
    } else if (prefix == "data") {
      if (key == "kind") {
        try {
          cfg.data.kind = toy_kind_from_string(detail::get_str(val, path));
        } catch (const std::invalid_argument& e) {
          throw ConfigError(std::string(e.what()) + " at '" + path + "'");
        }
      } else if (key == "scale") {
        cfg.data.scale = detail::get_f64(val, path);
      } else if (key == "noise_std") {
        cfg.data.noise_std = detail::get_f64(val, path);
      } else {
        detail::bad_key(path);
      }
    } else if (prefix == "model") {
      if (key == "dim") {
        cfg.model.dim = detail::get_size(val, path);
      } else if (key == "hidden") {
        cfg.model.hidden = detail::get_size_list(val, path);
      } else if (key == "time_freqs") {
        cfg.model.time_freqs = detail::get_size(val, path);
      } else if (key == "time_width") {
        cfg.model.time_width = detail::get_size(val, path);
      } else if (key == "freq_min") {
        cfg.model.freq_min = detail::get_f64(val, path);
      } else if (key == "freq_max") {
        cfg.model.freq_max = detail::get_f64(val, path);
      } else if (key == "potential_hidden") {
        cfg.model.potential_hidden = detail::get_size_list(val, path);
      } else {
        detail::bad_key(path);
      }
    } else if (prefix == "sampler") {
      if (key == "nfe") {
        cfg.sampler.nfe = detail::get_size(val, path);
      } else if (key == "sigma_sde") {
        cfg.sampler.sigma_sde = detail::get_f64(val, path);
      } else if (key == "n_samples") {
        cfg.sampler.n_samples = detail::get_size(val, path);
      } else {
        detail::bad_key(path);
      }
    } else if (prefix == "eval") {
      if (key == "k") {
        cfg.eval.k = detail::get_size(val, path);
      } else if (key == "n_projections") {
        cfg.eval.n_projections = detail::get_size(val, path);
      } else if (key == "n_reference") {
        cfg.eval.n_reference = detail::get_size(val, path);
      } else {
        detail::bad_key(path);
      }
    } else {
      detail::bad_key(path);
    }
  }
}

inline nlohmann::json config_json(const TrainConfig& cfg) {
  return nlohmann::json{
      {"steps", cfg.steps},
      {"batch_size", cfg.batch_size},
      {"lr_f", cfg.lr_f},
      {"lr_v", cfg.lr_v},
      {"ema_tau", cfg.ema_tau},
      {"seed", cfg.seed},
      {"log_every", cfg.log_every},
      {"checkpoint_every", cfg.checkpoint_every},
      {"objective",
       {{"margin", cfg.objective.margin},
        {"gamma_v", cfg.objective.gamma_v},
        {"lambda_v", cfg.objective.lambda_v},
        {"clamp_lo", cfg.objective.clamp_lo},
        {"clamp_hi", cfg.objective.clamp_hi},
        {"sign_convention", to_string(cfg.objective.sign_convention)},
        {"detach_weights", cfg.objective.detach_weights}}},
      {"schedule", {{"sigma_max", cfg.schedule.sigma_max}}},
      {"data",
       {{"kind", to_string(cfg.data.kind)},
        {"scale", cfg.data.scale},
        {"noise_std", cfg.data.noise_std}}},
      {"model",
       {{"dim", cfg.model.dim},
        {"hidden", cfg.model.hidden},
        {"time_freqs", cfg.model.time_freqs},
        {"time_width", cfg.model.time_width},
        {"freq_min", cfg.model.freq_min},
        {"freq_max", cfg.model.freq_max},
        {"potential_hidden", cfg.model.potential_hidden}}},
      {"sampler",
       {{"nfe", cfg.sampler.nfe},
        {"sigma_sde", cfg.sampler.sigma_sde},
        {"n_samples", cfg.sampler.n_samples}}},
      {"eval",
       {{"k", cfg.eval.k},
        {"n_projections", cfg.eval.n_projections},
        {"n_reference", cfg.eval.n_reference}}}};
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  apply_config_json(cfg, j);
  return cfg;
}

// One dotted override: "objective.lambda_v=0". The value is parsed as JSON
// when possible, otherwise taken as a bare string (so enum names need no
// quoting on the command line).
inline void apply_override(TrainConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must look like key.path=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) {
    value = raw;
  }

  nlohmann::json patch = value;
  std::size_t end = path.size();
  while (true) {
    const auto dot = path.rfind('.', end - 1);
    const std::size_t start = dot == std::string::npos ? 0 : dot + 1;
    const std::string segment = path.substr(start, end - start);
    if (segment.empty()) {
      throw ConfigError("override '" + assignment + "' has an empty path segment");
    }
    patch = nlohmann::json{{segment, std::move(patch)}};
    if (dot == std::string::npos) {
      break;
    }
    end = dot;
  }
  apply_config_json(cfg, patch);
}

}  // namespace agm
