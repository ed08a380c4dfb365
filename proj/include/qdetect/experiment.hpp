#pragma once

// Experiment config: strict JSON parsing (unknown keys are errors), echo back to JSON, content hash.

#include <cstdint>
#include <cstdio>
#include <optional>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "qdetect/attacks.hpp"
#include "qdetect/dataset.hpp"
#include "qdetect/errors.hpp"
#include "qdetect/pipeline.hpp"
#include "qdetect/samplers.hpp"
#include "qdetect/serialization.hpp"

namespace qdetect {

struct DatasetSource {
  std::optional<std::string> path;
  DatasetFormat format = DatasetFormat::csv;
  std::optional<SynthSpec> synthetic;  // seed field is overwritten by the global seed
};

struct AttackSpec {
  std::string type = "none";  // none | label_flip | badnets | narcissus
  double ratio = 0.0;
  Label source_class = 0;
  Label target_class = 0;
  TriggerSpec trigger;
};

struct SamplerSpec {
  std::string kind = "annealing";  // annealing | exhaustive
  SamplerConfig config;
};

struct BaselineToggles {
  bool random = true;
  bool loss_scan = true;
  bool dcm = true;
  std::size_t loss_scan_warm_epochs = 2;
};

struct EvaluationSpec {
  std::size_t test_n = 900;  // synthetic sources: size of the held-out stream
  std::optional<std::string> test_path;
  DatasetFormat test_format = DatasetFormat::csv;
  FitConfig fit{1000, 0.5, 0, 0};
};

struct BenchSpec {
  std::size_t instances = 100;
  std::size_t spins = 16;
  SamplerConfig sampler;  // annealing settings under test (defaults unless overridden)
};

struct GradcheckSpec {
  std::size_t instances = 5;
  std::size_t qwan_steps = 200;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "qdetect_out";
  DatasetSource dataset;
  AttackSpec attack;
  DetectionConfig detection;
  SamplerSpec sampler;
  BaselineToggles baselines;
  EvaluationSpec evaluation;
  BenchSpec bench;
  GradcheckSpec gradcheck;
};

namespace detail {

/// Tracks which keys of a JSON object were consumed; finish() rejects the rest.
class StrictObject {
 public:
  StrictObject(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be a JSON object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!j_.at(key).is_number_unsigned()) throw ConfigError(where(key) + " must be a non-negative integer");
    }
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  StrictObject child(const std::string& key) {
    seen_.insert(key);
    return StrictObject(j_.at(key), path_ + "." + key);
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError("unknown key " + where(item.key()));
  }

  std::string where(const std::string& key = {}) const {
    const std::string p = key.empty() ? path_ : path_ + "." + key;
    return "'" + p + "'";
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename T>
void require_positive(const StrictObject& o, const std::string& key, T v) {
  if (!(v > T{})) throw ConfigError(o.where(key) + " must be positive");
}

inline DatasetFormat format_from(const StrictObject& o, const std::string& key, const std::string& s) {
  try {
    return parse_format(s);
  } catch (const Error&) {
    throw ConfigError(o.where(key) + " must be \"csv\" or \"qds1\"");
  }
}

inline std::string format_name(DatasetFormat f) { return f == DatasetFormat::csv ? "csv" : "qds1"; }

inline void parse_synthetic(StrictObject o, SynthSpec& s) {
  o.read("n", s.n);
  o.read("d", s.d);
  o.read("classes", s.classes);
  o.read("spread", s.spread);
  o.finish();
  s.validate();
}

inline void parse_dataset(StrictObject o, DatasetSource& src) {
  const bool has_path = o.has("path"), has_synth = o.has("synthetic");
  if (has_path == has_synth) throw ConfigError(o.where() + " needs exactly one of \"path\" or \"synthetic\"");
  if (has_path) {
    std::string p, fmt = "csv";
    o.read("path", p);
    o.read("format", fmt);
    src.path = p;
    src.format = format_from(o, "format", fmt);
  } else {
    SynthSpec s;
    parse_synthetic(o.child("synthetic"), s);
    src.synthetic = s;
  }
  o.finish();
}

inline void parse_trigger(StrictObject o, TriggerSpec& t) {
  o.read("positions", t.positions);
  o.read("values", t.values);
  o.read("amplitude", t.amplitude);
  o.finish();
  if (t.positions.size() != t.values.size()) throw ConfigError(o.where() + " positions and values differ in length");
}

inline void parse_attack(StrictObject o, AttackSpec& a) {
  o.read("type", a.type);
  if (a.type != "none" && a.type != "label_flip" && a.type != "badnets" && a.type != "narcissus")
    throw ConfigError(o.where("type") + " must be one of none, label_flip, badnets, narcissus");
  o.read("ratio", a.ratio);
  o.read("source_class", a.source_class);
  o.read("target_class", a.target_class);
  if (a.type == "narcissus") a.trigger = default_narcissus_trigger();
  if (o.has("trigger")) parse_trigger(o.child("trigger"), a.trigger);
  o.finish();
  if (!(a.ratio >= 0.0 && a.ratio <= 1.0)) throw ConfigError(o.where("ratio") + " must lie in [0, 1]");
  if ((a.type == "badnets" || a.type == "narcissus") && a.trigger.empty())
    throw ConfigError(o.where("trigger") + " is required for trigger attacks");
}

inline void parse_qwan(StrictObject o, TrainConfig& t) {
  o.read("learning_rate", t.learning_rate);
  o.read("beta_nudge", t.beta_nudge);
  o.read("thermometer_bits", t.thermometer_bits);
  o.read("weight_clip", t.weight_clip);
  o.finish();
}

inline void parse_detection(StrictObject o, DetectionConfig& c) {
  o.read("epochs", c.epochs);
  o.read("warmup_epochs", c.warmup_epochs);
  o.read("batch_size", c.batch_size);
  o.read("subset_size", c.subset_size);
  o.read("loss_threshold_quantile", c.loss_threshold_quantile);
  o.read("lr_virtual", c.lr_virtual);
  o.read("lr_actual", c.lr_actual);
  o.read("hidden_spins", c.hidden);
  o.read("weight_reads", c.weight_reads);
  o.read("threads", c.threads);
  o.read("model_hidden_width", c.model.hidden_width);
  if (o.has("qwan")) parse_qwan(o.child("qwan"), c.qwan);
  o.finish();
}

inline void parse_sampler(StrictObject o, SamplerSpec& s) {
  o.read("kind", s.kind);
  if (s.kind != "annealing" && s.kind != "exhaustive")
    throw ConfigError(o.where("kind") + " must be \"annealing\" or \"exhaustive\"");
  o.read("num_reads", s.config.num_reads);
  o.read("sweeps", s.config.sweeps);
  o.read("beta_start", s.config.beta_start);
  o.read("beta_end", s.config.beta_end);
  o.read("num_threads", s.config.num_threads);
  o.finish();
  try {
    s.config.validate();
  } catch (const Error& e) {
    throw ConfigError(o.where() + ": " + e.what());
  }
}

inline void parse_baselines(StrictObject o, BaselineToggles& b) {
  o.read("random", b.random);
  o.read("loss_scan", b.loss_scan);
  o.read("dcm", b.dcm);
  o.read("loss_scan_warm_epochs", b.loss_scan_warm_epochs);
  o.finish();
}

inline void parse_evaluation(StrictObject o, EvaluationSpec& e) {
  o.read("test_n", e.test_n);
  if (o.has("test_path")) {
    std::string p, fmt = "csv";
    o.read("test_path", p);
    o.read("test_format", fmt);
    e.test_path = p;
    e.test_format = format_from(o, "test_format", fmt);
  }
  o.read("train_steps", e.fit.steps);
  o.read("train_lr", e.fit.lr);
  o.read("hidden_width", e.fit.hidden_width);
  o.finish();
  require_positive(o, "test_n", e.test_n);
  require_positive(o, "train_lr", e.fit.lr);
}

inline void parse_bench(StrictObject o, BenchSpec& b) {
  o.read("instances", b.instances);
  o.read("spins", b.spins);
  o.read("num_reads", b.sampler.num_reads);
  o.read("sweeps", b.sampler.sweeps);
  o.read("beta_start", b.sampler.beta_start);
  o.read("beta_end", b.sampler.beta_end);
  o.read("num_threads", b.sampler.num_threads);
  o.finish();
  try {
    b.sampler.validate();
  } catch (const Error& e) {
    throw ConfigError(o.where() + ": " + e.what());
  }
  require_positive(o, "instances", b.instances);
  if (b.spins < 1 || b.spins > kExhaustiveLimit)
    throw ConfigError(o.where("spins") + " must be in [1, " + std::to_string(kExhaustiveLimit) + "]");
}

inline void parse_gradcheck(StrictObject o, GradcheckSpec& g) {
  o.read("instances", g.instances);
  o.read("qwan_steps", g.qwan_steps);
  o.finish();
}

}  // namespace detail

inline ExperimentConfig parse_experiment(const Json& j) {
  ExperimentConfig c;
  detail::StrictObject o(j, "config");
  o.read("seed", c.seed);
  o.read("output_dir", c.output_dir);
  if (!o.has("dataset")) throw ConfigError("'config.dataset' is required");
  detail::parse_dataset(o.child("dataset"), c.dataset);
  if (o.has("attack")) detail::parse_attack(o.child("attack"), c.attack);
  if (o.has("detection")) detail::parse_detection(o.child("detection"), c.detection);
  if (o.has("sampler")) detail::parse_sampler(o.child("sampler"), c.sampler);
  if (o.has("baselines")) detail::parse_baselines(o.child("baselines"), c.baselines);
  if (o.has("evaluation")) detail::parse_evaluation(o.child("evaluation"), c.evaluation);
  if (o.has("bench")) detail::parse_bench(o.child("bench"), c.bench);
  if (o.has("gradcheck")) detail::parse_gradcheck(o.child("gradcheck"), c.gradcheck);
  o.finish();
  return c;
}

/// Full config including defaulted fields; parse_experiment(to_json(c)) reproduces c.
inline Json to_json(const ExperimentConfig& c) {
  Json ds;
  if (c.dataset.synthetic) {
    const auto& s = *c.dataset.synthetic;
    ds["synthetic"] = {{"n", s.n}, {"d", s.d}, {"classes", s.classes}, {"spread", s.spread}};
  } else {
    ds["path"] = c.dataset.path.value_or("");
    ds["format"] = detail::format_name(c.dataset.format);
  }
  Json attack{{"type", c.attack.type}, {"ratio", c.attack.ratio}, {"source_class", c.attack.source_class},
              {"target_class", c.attack.target_class}};
  if (!c.attack.trigger.empty())
    attack["trigger"] = {{"positions", c.attack.trigger.positions},
                         {"values", c.attack.trigger.values},
                         {"amplitude", c.attack.trigger.amplitude}};
  const auto& d = c.detection;
  Json det{{"epochs", d.epochs},
           {"warmup_epochs", d.warmup_epochs},
           {"batch_size", d.batch_size},
           {"subset_size", d.subset_size},
           {"loss_threshold_quantile", d.loss_threshold_quantile},
           {"lr_virtual", d.lr_virtual},
           {"lr_actual", d.lr_actual},
           {"hidden_spins", d.hidden},
           {"weight_reads", d.weight_reads},
           {"threads", d.threads},
           {"model_hidden_width", d.model.hidden_width},
           {"qwan",
            {{"learning_rate", d.qwan.learning_rate},
             {"beta_nudge", d.qwan.beta_nudge},
             {"thermometer_bits", d.qwan.thermometer_bits},
             {"weight_clip", d.qwan.weight_clip}}}};
  const auto& s = c.sampler.config;
  Json sampler{{"kind", c.sampler.kind},       {"num_reads", s.num_reads}, {"sweeps", s.sweeps},
               {"beta_start", s.beta_start},   {"beta_end", s.beta_end},   {"num_threads", s.num_threads}};
  Json eval{{"test_n", c.evaluation.test_n},
            {"train_steps", c.evaluation.fit.steps},
            {"train_lr", c.evaluation.fit.lr},
            {"hidden_width", c.evaluation.fit.hidden_width}};
  if (c.evaluation.test_path) {
    eval["test_path"] = *c.evaluation.test_path;
    eval["test_format"] = detail::format_name(c.evaluation.test_format);
  }
  return Json{{"seed", c.seed},
              {"output_dir", c.output_dir},
              {"dataset", ds},
              {"attack", attack},
              {"detection", det},
              {"sampler", sampler},
              {"baselines",
               {{"random", c.baselines.random},
                {"loss_scan", c.baselines.loss_scan},
                {"dcm", c.baselines.dcm},
                {"loss_scan_warm_epochs", c.baselines.loss_scan_warm_epochs}}},
              {"evaluation", eval},
              {"bench",
               {{"instances", c.bench.instances},
                {"spins", c.bench.spins},
                {"num_reads", c.bench.sampler.num_reads},
                {"sweeps", c.bench.sampler.sweeps},
                {"beta_start", c.bench.sampler.beta_start},
                {"beta_end", c.bench.sampler.beta_end},
                {"num_threads", c.bench.sampler.num_threads}}},
              {"gradcheck", {{"instances", c.gradcheck.instances}, {"qwan_steps", c.gradcheck.qwan_steps}}}};
}

/// Config as echoed into results: everything except the output location.
inline Json config_echo(const ExperimentConfig& c) {
  Json j = to_json(c);
  j.erase("output_dir");
  return j;
}

/// FNV-1a over the compact dump of config_echo, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : config_echo(c).dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Seeds of each experiment component, all derived from the global seed.
struct SeedPlan {
  std::uint64_t data, attack, detection, sampler, random_baseline, loss_scan, retrain;
};

inline SeedPlan seed_plan(std::uint64_t seed) {
  return SeedPlan{seed, derive_seed(seed, 7), seed, seed, derive_seed(seed, 99), derive_seed(seed, 11), derive_seed(seed, 13)};
}

}  // namespace qdetect
