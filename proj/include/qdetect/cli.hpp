#pragma once

// qdetect command line: poison, detect, baselines, evaluate, bench-sampler, gradcheck.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qdetect/attacks.hpp"
#include "qdetect/dataset.hpp"
#include "qdetect/experiment.hpp"
#include "qdetect/gradcheck.hpp"
#include "qdetect/pipeline.hpp"
#include "qdetect/qwan.hpp"
#include "qdetect/samplers.hpp"
#include "qdetect/serialization.hpp"

namespace qdetect::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kConfigError = 2, kDataError = 3, kRuntimeFailure = 4 };

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const AttackError*>(&e) ||
      dynamic_cast<const SelectionError*>(&e))
    return kConfigError;
  if (dynamic_cast<const DataError*>(&e)) return kDataError;
  return kRuntimeFailure;
}

struct Options {
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  DatasetFormat format = DatasetFormat::qds1;
  bool quiet = false;
};

/// Files written by one run; removed again unless commit() is reached.
class OutputSet {
 public:
  explicit OutputSet(std::filesystem::path dir) : dir_(std::move(dir)) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::exists(dir_)) {
      fs::create_directories(dir_, ec);
      if (ec) throw DataError("cannot create output directory '" + dir_.string() + "': " + ec.message());
      created_dir_ = true;
    } else if (!fs::is_directory(dir_)) {
      throw DataError("output path '" + dir_.string() + "' is not a directory");
    }
  }
  OutputSet(const OutputSet&) = delete;
  OutputSet& operator=(const OutputSet&) = delete;

  ~OutputSet() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& p : written_) std::filesystem::remove(p, ec);
    if (created_dir_ && std::filesystem::is_empty(dir_, ec)) std::filesystem::remove(dir_, ec);
  }

  std::filesystem::path path(const std::string& name) {
    auto p = dir_ / name;
    written_.push_back(p);
    return p;
  }

  void write_text(const std::string& name, const std::string& text) {
    const auto p = path(name);
    std::ofstream os(p, std::ios::binary);
    os << text;
    if (!os) throw DataError("write failed for '" + p.string() + "'");
  }

  void write_json(const std::string& name, const Json& j) { write_text(name, j.dump(2) + "\n"); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& p : written_) out.push_back(p.filename().string());
    return out;
  }

  void commit() { committed_ = true; }

 private:
  std::filesystem::path dir_;
  std::vector<std::filesystem::path> written_;
  bool created_dir_ = false;
  bool committed_ = false;
};

inline Json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config '" + path + "'");
  try {
    return Json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

/// Accepts an experiment config or a run manifest (whose embedded config and seed are reused).
inline ExperimentConfig load_config(const Options& o) {
  const Json j = read_json_file(o.config_path);
  ExperimentConfig c;
  if (j.is_object() && j.value("format", std::string{}) == "qdetect-manifest-v1") {
    if (j.value("command", std::string{}) != o.command)
      throw ConfigError("manifest was recorded for '" + j.value("command", std::string{}) + "', not '" + o.command + "'");
    Json inner = j.at("config");
    inner["output_dir"] = j.value("output_dir", std::string("qdetect_out"));
    c = parse_experiment(inner);
    if (config_hash(c) != j.value("config_hash", std::string{}))
      throw ConfigError("manifest config_hash does not match its embedded config");
  } else {
    c = parse_experiment(j);
  }
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.output_dir = *o.out;
  return c;
}

inline PoisonedDataset clean_dataset(const ExperimentConfig& c) {
  if (c.dataset.synthetic) {
    SynthSpec s = *c.dataset.synthetic;
    s.seed = seed_plan(c.seed).data;
    return synth(s);
  }
  return ingest(*c.dataset.path, c.dataset.format);
}

inline PoisonedDataset apply_attack(const PoisonedDataset& clean, const ExperimentConfig& c) {
  const auto& a = c.attack;
  const std::uint64_t s = seed_plan(c.seed).attack;
  if (a.type == "label_flip") return flip_labels_targeted(clean, a.source_class, a.target_class, a.ratio, s);
  if (a.type == "badnets") return badnets(clean, a.trigger, a.target_class, a.ratio, s);
  if (a.type == "narcissus") return narcissus_like(clean, a.trigger, a.target_class, a.ratio, s);
  return clean;
}

inline LabeledBatch test_set(const ExperimentConfig& c) {
  if (c.evaluation.test_path) return ingest(*c.evaluation.test_path, c.evaluation.test_format).all();
  if (!c.dataset.synthetic) throw ConfigError("'evaluation.test_path' is required for file datasets");
  SynthSpec s = *c.dataset.synthetic;
  s.seed = seed_plan(c.seed).data;
  s.n = c.evaluation.test_n;
  return synth(s, 1).all();
}

inline std::unique_ptr<Sampler> make_sampler(const ExperimentConfig& c) {
  if (c.sampler.kind == "exhaustive") return std::make_unique<ExhaustiveSampler>();
  SamplerConfig sc = c.sampler.config;
  sc.seed = seed_plan(c.seed).sampler;
  return std::make_unique<AnnealingSampler>(sc);
}

inline DetectionConfig detection_config(const ExperimentConfig& c) {
  DetectionConfig d = c.detection;
  d.seed = seed_plan(c.seed).detection;
  return d;
}

inline Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline Json selection_json(const SelectionResult& r, bool with_weights) {
  Json j{{"method", r.method},
         {"subset_size", r.selected.size()},
         {"cr", r.cr},
         {"cr_rand", r.cr_rand},
         {"ncr", optional_json(r.ncr)},
         {"ncr_applicable", r.ncr.has_value()},
         {"selected", r.selected}};
  if (!r.diagnostics.empty()) {
    Json diag = Json::array();
    for (const auto& d : r.diagnostics)
      diag.push_back({{"epoch", d.epoch},
                      {"mean_weight_clean", d.mean_weight_clean},
                      {"mean_weight_poisoned", d.mean_weight_poisoned},
                      {"mean_loss", d.mean_loss}});
    j["diagnostics"] = diag;
  }
  if (with_weights) j["weights"] = r.weights.weights;
  return j;
}

inline std::vector<SelectionResult> run_baselines(const PoisonedDataset& d, const ExperimentConfig& c) {
  std::vector<SelectionResult> out;
  const std::size_t n = c.detection.subset_size;
  const auto plan = seed_plan(c.seed);
  if (c.baselines.random) out.push_back(baseline_random(d, n, plan.random_baseline));
  if (c.baselines.loss_scan) {
    LossScanConfig lc;
    lc.warm_epochs = c.baselines.loss_scan_warm_epochs;
    lc.batch_size = c.detection.batch_size;
    lc.lr = c.detection.lr_actual;
    lc.seed = plan.loss_scan;
    out.push_back(baseline_loss_scan(d, n, lc));
  }
  if (c.baselines.dcm) out.push_back(baseline_dcm(d, n));
  return out;
}

inline Json dataset_summary(const PoisonedDataset& d) {
  Json meta{{"type", d.meta.type}, {"ratio", d.meta.ratio}, {"warnings", d.meta.warnings}};
  if (d.meta.source_class) meta["source_class"] = *d.meta.source_class;
  if (d.meta.target_class) meta["target_class"] = *d.meta.target_class;
  return Json{{"n", d.size()},
              {"d", d.dims()},
              {"classes", d.classes},
              {"poison_count", d.poison_count()},
              {"cr_rand", cr_rand_expected(d)},
              {"attack", meta}};
}

inline std::string weights_csv(const PoisonedDataset& d, const SelectionResult& r) {
  std::vector<std::uint8_t> sel(d.size(), 0);
  for (auto i : r.selected) sel[i] = 1;
  std::ostringstream os;
  os << "sample_index,weight,flag,selected\n";
  os.precision(17);
  for (std::size_t i = 0; i < d.size(); ++i)
    os << i << ',' << r.weights.weights[i] << ',' << int(d.flags[i]) << ',' << int(sel[i]) << '\n';
  return os.str();
}

struct RunContext {
  const Options& opts;
  const ExperimentConfig& config;
  OutputSet& out;
  std::ostream& log;
  Json results;
};

inline void say(RunContext& ctx, const std::string& line) {
  if (!ctx.opts.quiet) ctx.log << line << '\n';
}

inline std::string fmt(double v, int prec = 2) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << v;
  return os.str();
}

inline std::string ncr_text(const SelectionResult& r) { return r.ncr ? fmt(*r.ncr) + "%" : "n/a"; }

inline void cmd_poison(RunContext& ctx) {
  const auto d = apply_attack(clean_dataset(ctx.config), ctx.config);
  const std::string name = std::string("dataset.") + detail::format_name(ctx.opts.format);
  export_dataset(d, ctx.out.path(name).string(), ctx.opts.format);
  std::vector<std::size_t> poisoned;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d.flags[i]) poisoned.push_back(i);
  ctx.results["dataset"] = dataset_summary(d);
  ctx.results["dataset_file"] = name;
  ctx.results["poisoned_indices"] = poisoned;
  for (const auto& w : d.meta.warnings) say(ctx, "warning: " + w);
  say(ctx, "poisoned " + std::to_string(d.poison_count()) + " of " + std::to_string(d.size()) + " samples -> " + name);
}

inline void cmd_detect(RunContext& ctx) {
  const auto d = apply_attack(clean_dataset(ctx.config), ctx.config);
  const auto sampler = make_sampler(ctx.config);
  const auto r = run_q_detection(d, detection_config(ctx.config), *sampler);
  ctx.results["dataset"] = dataset_summary(d);
  ctx.results["q_detection"] = selection_json(r, true);
  Json base = Json::object();
  for (const auto& b : run_baselines(d, ctx.config)) base[b.method] = selection_json(b, false);
  ctx.results["baselines"] = base;
  ctx.out.write_text("weights.csv", weights_csv(d, r));
  ctx.out.write_json("qwan_checkpoint.json", qwan_checkpoint(*r.qwan, ctx.config.detection.qwan, ctx.config.seed));
  ctx.out.write_json("domain_checkpoint.json", classifier_checkpoint(*r.domain));
  say(ctx, "q_detection: CR " + fmt(r.cr) + "%  CR_rand " + fmt(r.cr_rand) + "%  NCR " + ncr_text(r));
  for (const auto& [k, v] : base.items())
    say(ctx, k + ": CR " + fmt(v["cr"].get<double>()) + "%  NCR " +
                 (v["ncr"].is_null() ? std::string("n/a") : fmt(v["ncr"].get<double>()) + "%"));
}

inline void cmd_baselines(RunContext& ctx) {
  const auto d = apply_attack(clean_dataset(ctx.config), ctx.config);
  ctx.results["dataset"] = dataset_summary(d);
  Json base = Json::object();
  for (const auto& b : run_baselines(d, ctx.config)) {
    base[b.method] = selection_json(b, false);
    say(ctx, b.method + ": CR " + fmt(b.cr) + "%  NCR " + ncr_text(b));
  }
  ctx.results["baselines"] = base;
}

inline void cmd_evaluate(RunContext& ctx) {
  const auto& c = ctx.config;
  const auto d = apply_attack(clean_dataset(c), c);
  const auto test = test_set(c);
  const auto sampler = make_sampler(c);
  std::vector<SelectionResult> sel;
  sel.push_back(run_q_detection(d, detection_config(c), *sampler));
  for (auto& b : run_baselines(d, c)) sel.push_back(std::move(b));

  std::optional<Label> target;
  if (c.attack.type != "none") target = c.attack.target_class;
  FitConfig fc = c.evaluation.fit;
  fc.seed = seed_plan(c.seed).retrain;
  Json evals = Json::object();
  auto record = [&](const std::string& name, std::span<const std::size_t> idx, const Json& selection) {
    const auto rep = retrain_eval(d, idx, test, fc, target);
    evals[name] = {{"selection", selection},
                   {"overall_accuracy", rep.overall_accuracy},
                   {"target_accuracy", optional_json(rep.target_accuracy)}};
    say(ctx, name + ": test accuracy " + fmt(100.0 * rep.overall_accuracy) + "%" +
                 (rep.target_accuracy ? "  target class " + fmt(100.0 * *rep.target_accuracy) + "%" : ""));
  };
  for (const auto& r : sel) record(r.method, r.selected, selection_json(r, false));
  // Ground-truth reference: the first N clean samples (reporting only).
  std::vector<std::size_t> oracle;
  for (std::size_t i = 0; i < d.size() && oracle.size() < c.detection.subset_size; ++i)
    if (!d.flags[i]) oracle.push_back(i);
  if (!oracle.empty()) record("clean_oracle", oracle, Json{{"subset_size", oracle.size()}});
  record("full_dataset", [&] {
    std::vector<std::size_t> all(d.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }(), Json{{"subset_size", d.size()}});
  ctx.results["dataset"] = dataset_summary(d);
  ctx.results["test_size"] = test.size();
  ctx.results["evaluations"] = evals;
}

/// Dense random instance: fields and couplings uniform in [-1, 1].
inline IsingProblem random_bench_instance(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  IsingProblem p(n);
  for (std::size_t i = 0; i < n; ++i) p.add_field(static_cast<Index>(i), uniform(rng, -1.0, 1.0));
  for (std::size_t i = 1; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) p.add_coupling(static_cast<Index>(i), static_cast<Index>(j), uniform(rng, -1.0, 1.0));
  return p;
}

inline void cmd_bench_sampler(RunContext& ctx) {
  const auto& b = ctx.config.bench;
  std::ostringstream csv;
  csv.precision(17);
  csv << "instance,exhaustive_min,sa_min,hit\n";
  Json rows = Json::array();
  std::size_t hits = 0;
  for (std::size_t k = 0; k < b.instances; ++k) {
    const auto p = random_bench_instance(b.spins, derive_seed(ctx.config.seed, 0xBE7C, k));
    SamplerConfig sc = b.sampler;
    sc.seed = derive_seed(ctx.config.seed, 0x5A, k);
    const double ex = exhaustive_solve(p).best().energy;
    const double sa = sa_sample(p, sc).best().energy;
    const bool hit = sa <= ex + 1e-9 * std::max(1.0, std::abs(ex));
    hits += hit;
    csv << k << ',' << ex << ',' << sa << ',' << int(hit) << '\n';
    rows.push_back({{"instance", k}, {"exhaustive_min", ex}, {"sa_min", sa}, {"hit", hit}});
  }
  ctx.out.write_text("bench.csv", csv.str());
  ctx.results["instances"] = rows;
  ctx.results["hits"] = hits;
  ctx.results["total"] = b.instances;
  say(ctx, "sa hit the exhaustive minimum on " + std::to_string(hits) + "/" + std::to_string(b.instances) +
               " instances of " + std::to_string(b.spins) + " spins");
}

inline void cmd_gradcheck(RunContext& ctx) {
  const auto& g = ctx.config.gradcheck;
  std::ostringstream csv;
  csv.precision(17);
  csv << "instance,model,coordinate,analytic,numeric,rel_error\n";
  double worst = 0.0;
  Json inst = Json::array();
  for (std::size_t k = 0; k < g.instances; ++k) {
    for (std::size_t width : {std::size_t{0}, std::size_t{4}}) {
      const auto gi = random_gradcheck_instance(derive_seed(ctx.config.seed, 0x6C, k, width), width);
      const auto rows = gradient_check(gi.params, gi.batch, gi.weights);
      double w = 0.0;
      const char* model = width ? "relu_hidden" : "softmax";
      for (const auto& r : rows) {
        w = std::max(w, r.rel_error);
        csv << k << ',' << model << ',' << r.coordinate << ',' << r.analytic << ',' << r.numeric << ',' << r.rel_error
            << '\n';
      }
      worst = std::max(worst, w);
      inst.push_back({{"instance", k}, {"model", model}, {"coordinates", rows.size()}, {"max_rel_error", w}});
    }
  }
  ctx.out.write_text("gradcheck.csv", csv.str());
  ctx.results["domain_model"] = {{"instances", inst}, {"max_rel_error", worst}};

  // Q-WAN threshold task, 4-2-1 network with exhaustive phase solving.
  ExhaustiveSampler ex;
  TrainConfig tc;
  const auto rep = train_threshold_task(QwanTopology{4, 2, 1}, tc, ex, g.qwan_steps, ctx.config.seed);
  std::ostringstream curve;
  curve.precision(17);
  curve << "step,sample_mse,grid_mse\n";
  for (std::size_t s = 0; s < rep.step_mse.size(); ++s)
    curve << s << ',' << rep.step_mse[s] << ',' << rep.grid_mse[s] << '\n';
  ctx.out.write_text("qwan_curve.csv", curve.str());
  ctx.results["qwan_threshold_task"] = {{"steps", g.qwan_steps},
                                        {"grid_accuracy", rep.grid_accuracy},
                                        {"final_grid_mse", rep.grid_mse.empty() ? 0.0 : rep.grid_mse.back()},
                                        {"grid_mse", rep.grid_mse}};
  say(ctx, "domain model max relative error " + fmt(worst, 9));
  say(ctx, "q-wan threshold task grid accuracy " + fmt(100.0 * rep.grid_accuracy) + "%");
}

inline void dispatch(RunContext& ctx) {
  const auto& cmd = ctx.opts.command;
  if (cmd == "poison") return cmd_poison(ctx);
  if (cmd == "detect") return cmd_detect(ctx);
  if (cmd == "baselines") return cmd_baselines(ctx);
  if (cmd == "evaluate") return cmd_evaluate(ctx);
  if (cmd == "bench-sampler") return cmd_bench_sampler(ctx);
  if (cmd == "gradcheck") return cmd_gradcheck(ctx);
  throw ConfigError("unknown command '" + cmd + "'");
}

inline Json versions() {
  return Json{{"qdetect", kVersion},
              {"compiler", __VERSION__},
              {"cplusplus", static_cast<long>(__cplusplus)},
              {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
}

/// Runs one parsed command; returns the process exit code.
inline int run(const Options& opts, std::ostream& log, std::ostream& err) {
  try {
    const auto t0 = std::chrono::steady_clock::now();
    const ExperimentConfig config = load_config(opts);
    OutputSet out(config.output_dir);
    RunContext ctx{opts, config, out, log, Json::object()};
    ctx.results["command"] = opts.command;
    ctx.results["config_hash"] = config_hash(config);
    ctx.results["seed"] = config.seed;
    ctx.results["config"] = config_echo(config);
    dispatch(ctx);
    out.write_json("results.json", ctx.results);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    Json manifest{{"format", "qdetect-manifest-v1"},
                  {"command", opts.command},
                  {"config_hash", config_hash(config)},
                  {"seed", config.seed},
                  {"output_dir", config.output_dir},
                  {"config", config_echo(config)},
                  {"versions", versions()},
                  {"outputs", out.names()},
                  {"wall_time_seconds", wall}};
    out.write_json("manifest.json", manifest);
    out.commit();
    if (!opts.quiet) log << "wrote " << config.output_dir << " (" << fmt(wall, 1) << " s)\n";
    return kOk;
  } catch (const std::exception& e) {
    err << "qdetect " << opts.command << ": " << e.what() << '\n';
    return exit_code_for(e);
  }
}

/// argv-level entry point shared by the executable and the tests.
inline int main(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Q-Detection: poisoned-sample filtering with an annealing-trained weight network"};
  app.require_subcommand(1);
  Options opts;
  std::string format = "qds1";
  std::uint64_t seed = 0;
  std::string out;
  const std::vector<std::pair<const char*, const char*>> commands{
      {"poison", "inject the configured attack and write the dataset"},
      {"detect", "run Q-Detection and the enabled baselines"},
      {"baselines", "run only the baseline selectors"},
      {"evaluate", "retrain on each selected subset and score a clean test set"},
      {"bench-sampler", "compare simulated annealing against exhaustive minima"},
      {"gradcheck", "finite-difference gradient report and Q-WAN learning curve"}};
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opts.config_path, "experiment config or run manifest (JSON)")->required();
    sub->add_option("--seed", seed, "override the global seed");
    sub->add_option("--out", out, "output directory");
    sub->add_option("--format", format, "dataset output format")->check(CLI::IsMember({"csv", "qds1"}));
    sub->add_flag("--quiet", opts.quiet, "suppress progress output");
    subs.push_back(sub);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, log, err);
    return code == 0 ? kOk : kConfigError;
  }
  for (auto* s : subs) {
    if (!s->parsed()) continue;
    opts.command = s->get_name();
    if (s->count("--seed")) opts.seed = seed;
    if (s->count("--out")) opts.out = out;
  }
  opts.format = parse_format(format);
  return run(opts, log, err);
}

}  // namespace qdetect::cli
