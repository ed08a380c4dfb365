#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "qdetect/cli.hpp"
#include "scenario.hpp"

using namespace qdetect;
namespace fs = std::filesystem;

namespace {

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root_ = fs::temp_directory_path() / (std::string("qdetect_cli_") + info->name());
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  int run(std::vector<std::string> args) {
    args.insert(args.begin(), "qdetect");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    log_.str("");
    err_.str("");
    return cli::main(static_cast<int>(argv.size()), argv.data(), log_, err_);
  }

  std::string write_config(const Json& j, const std::string& name = "config.json") {
    const auto p = root_ / name;
    std::ofstream(p) << j.dump(2);
    return p.string();
  }

  /// A small but complete experiment, fast enough for every command.
  static Json small_config() {
    return Json::parse(R"({
      "seed": 4,
      "dataset": {"synthetic": {"n": 120, "d": 6, "classes": 3, "spread": 0.2}},
      "attack": {"type": "label_flip", "ratio": 0.3, "source_class": 0, "target_class": 1},
      "detection": {"epochs": 1, "warmup_epochs": 2, "batch_size": 40, "subset_size": 60,
                    "hidden_spins": 4, "weight_reads": 1},
      "sampler": {"kind": "annealing", "num_reads": 1, "sweeps": 20},
      "evaluation": {"test_n": 90, "train_steps": 100},
      "bench": {"instances": 4, "spins": 8, "num_reads": 10, "sweeps": 200},
      "gradcheck": {"instances": 2, "qwan_steps": 10}
    })");
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
  }

  static Json load(const fs::path& p) { return Json::parse(slurp(p)); }

  fs::path root_;
  std::ostringstream log_, err_;
};

}  // namespace

TEST_F(CliTest, BundledConfigMatchesPinnedScenario) {
  const auto bundled = parse_experiment(cli::read_json_file(QDETECT_CONFIG_DIR "/label_flip_20.json"));
  EXPECT_EQ(config_hash(bundled), config_hash(scenario::label_flip_config(0)));
  EXPECT_EQ(config_echo(bundled), config_echo(scenario::label_flip_config(0)));
}

TEST_F(CliTest, DetectOnBundledConfig) {
  const auto out = root_ / "detect";
  ASSERT_EQ(run({"detect", "--config", QDETECT_CONFIG_DIR "/label_flip_20.json", "--out", out.string(), "--quiet"}), 0)
      << err_.str();
  EXPECT_TRUE(log_.str().empty());
  const auto res = load(out / "results.json");
  ASSERT_TRUE(res["q_detection"]["ncr"].is_number());
  EXPECT_TRUE(res["q_detection"]["ncr_applicable"].get<bool>());
  EXPECT_EQ(res["q_detection"]["selected"].size(), 300u);
  EXPECT_EQ(res["q_detection"]["weights"].size(), 600u);
  EXPECT_EQ(res["q_detection"]["diagnostics"].size(), 6u);
  for (const char* b : {"random", "loss_scan", "dcm"}) EXPECT_TRUE(res["baselines"].contains(b)) << b;
  EXPECT_FALSE(res.contains("wall_time_seconds"));
  for (const char* f : {"weights.csv", "qwan_checkpoint.json", "domain_checkpoint.json", "manifest.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  std::ifstream csv(out / "weights.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "sample_index,weight,flag,selected");
  std::size_t rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 600u);

  const auto m = load(out / "manifest.json");
  EXPECT_EQ(m["format"], "qdetect-manifest-v1");
  EXPECT_EQ(m["command"], "detect");
  EXPECT_EQ(m["config_hash"], res["config_hash"]);
  EXPECT_TRUE(m["wall_time_seconds"].is_number());
  EXPECT_TRUE(m["versions"].contains("qdetect"));
  const auto q = qwan_from_checkpoint(load(out / "qwan_checkpoint.json"));
  EXPECT_EQ(q.topology.n_hidden, 32u);
  EXPECT_NO_THROW(classifier_from_checkpoint(load(out / "domain_checkpoint.json")));
}

TEST_F(CliTest, ManifestRerunIsByteIdentical) {
  const auto cfg = write_config(small_config());
  const auto a = root_ / "a", b = root_ / "b";
  ASSERT_EQ(run({"detect", "--config", cfg, "--out", a.string()}), 0) << err_.str();
  ASSERT_EQ(run({"detect", "--config", (a / "manifest.json").string(), "--out", b.string()}), 0) << err_.str();
  EXPECT_EQ(slurp(a / "results.json"), slurp(b / "results.json"));
  EXPECT_EQ(slurp(a / "weights.csv"), slurp(b / "weights.csv"));
}

TEST_F(CliTest, ManifestForAnotherCommandRejected) {
  const auto cfg = write_config(small_config());
  const auto a = root_ / "a";
  ASSERT_EQ(run({"baselines", "--config", cfg, "--out", a.string()}), 0) << err_.str();
  EXPECT_EQ(run({"detect", "--config", (a / "manifest.json").string(), "--out", (root_ / "b").string()}), 2);
  auto m = load(a / "manifest.json");
  m["config"]["seed"] = 999;
  const auto tampered = write_config(m, "tampered.json");
  EXPECT_EQ(run({"baselines", "--config", tampered, "--out", (root_ / "c").string()}), 2);
  EXPECT_NE(err_.str().find("config_hash"), std::string::npos);
}

TEST_F(CliTest, SeedOverride) {
  const auto cfg = write_config(small_config());
  ASSERT_EQ(run({"baselines", "--config", cfg, "--out", (root_ / "a").string(), "--seed", "11"}), 0);
  ASSERT_EQ(run({"baselines", "--config", cfg, "--out", (root_ / "b").string()}), 0);
  const auto a = load(root_ / "a" / "results.json"), b = load(root_ / "b" / "results.json");
  EXPECT_EQ(a["seed"], 11);
  EXPECT_EQ(b["seed"], 4);
  EXPECT_NE(a["config_hash"], b["config_hash"]);
  EXPECT_NE(a["baselines"]["random"]["selected"], b["baselines"]["random"]["selected"]);
}

TEST_F(CliTest, OutDirDoesNotChangeHash) {
  const auto cfg = write_config(small_config());
  ASSERT_EQ(run({"baselines", "--config", cfg, "--out", (root_ / "a").string()}), 0);
  ASSERT_EQ(run({"baselines", "--config", cfg, "--out", (root_ / "b").string()}), 0);
  EXPECT_EQ(slurp(root_ / "a" / "results.json"), slurp(root_ / "b" / "results.json"));
}

TEST_F(CliTest, UnknownKeyIsConfigError) {
  auto j = small_config();
  j["detection"]["epoch"] = 3;
  const auto out = root_ / "never";
  EXPECT_EQ(run({"detect", "--config", write_config(j), "--out", out.string()}), 2);
  EXPECT_NE(err_.str().find("config.detection.epoch"), std::string::npos) << err_.str();
  EXPECT_FALSE(fs::exists(out));
}

TEST_F(CliTest, ArgumentErrors) {
  EXPECT_EQ(run({"detect"}), 2);
  EXPECT_EQ(run({"explode", "--config", "x.json"}), 2);
  EXPECT_EQ(run({"poison", "--config", write_config(small_config()), "--format", "parquet"}), 2);
  EXPECT_EQ(run({"detect", "--config", (root_ / "missing.json").string()}), 2);
  std::ofstream(root_ / "broken.json") << "{ not json";
  EXPECT_EQ(run({"detect", "--config", (root_ / "broken.json").string()}), 2);
}

TEST_F(CliTest, BadDatasetIsDataErrorAndCleansUp) {
  std::ofstream(root_ / "bad.csv") << "a,label\n0.5,0\n2.0,1\n";
  Json j = small_config();
  j["dataset"] = {{"path", (root_ / "bad.csv").string()}, {"format", "csv"}};
  const auto out = root_ / "out";
  EXPECT_EQ(run({"baselines", "--config", write_config(j), "--out", out.string()}), 3);
  EXPECT_NE(err_.str().find("line 3"), std::string::npos) << err_.str();
  EXPECT_FALSE(fs::exists(out));
}

TEST_F(CliTest, FailureKeepsExistingDirectoryButRemovesPartialFiles) {
  Json j = small_config();
  j["evaluation"]["test_path"] = (root_ / "absent.qds1").string();
  const auto out = root_ / "existing";
  fs::create_directories(out);
  std::ofstream(out / "keep.txt") << "mine";
  EXPECT_EQ(run({"evaluate", "--config", write_config(j), "--out", out.string()}), 3);
  EXPECT_TRUE(fs::exists(out / "keep.txt"));
  EXPECT_FALSE(fs::exists(out / "results.json"));
}

TEST_F(CliTest, ExecutableExitStatus) {
  auto status = [](const std::string& args) {
    const int raw = std::system((std::string(QDETECT_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  EXPECT_EQ(status("--help"), 0);
  EXPECT_EQ(status("detect"), 2);
  Json j = small_config();
  j["bogus"] = true;
  EXPECT_EQ(status("detect --config " + write_config(j) + " --out " + (root_ / "x").string()), 2);
  j.erase("bogus");
  j["dataset"] = {{"path", (root_ / "nope.csv").string()}, {"format", "csv"}};
  EXPECT_EQ(status("detect --config " + write_config(j, "nofile.json") + " --out " + (root_ / "y").string()), 3);
  EXPECT_EQ(status("gradcheck --quiet --config " + write_config(small_config(), "ok.json") + " --out " +
                   (root_ / "z").string()),
            0);
}

TEST_F(CliTest, ExitCodeMapping) {
  EXPECT_EQ(cli::exit_code_for(ConfigError("x")), 2);
  EXPECT_EQ(cli::exit_code_for(AttackError("x")), 2);
  EXPECT_EQ(cli::exit_code_for(SelectionError("x")), 2);
  EXPECT_EQ(cli::exit_code_for(DataError("x")), 3);
  EXPECT_EQ(cli::exit_code_for(RuntimeFailure("x")), 4);
  EXPECT_EQ(cli::exit_code_for(std::runtime_error("x")), 4);
}

TEST_F(CliTest, PoisonWritesBothFormats) {
  const auto cfg = write_config(small_config());
  const auto a = root_ / "q", b = root_ / "c";
  ASSERT_EQ(run({"poison", "--config", cfg, "--out", a.string()}), 0) << err_.str();
  ASSERT_EQ(run({"poison", "--config", cfg, "--out", b.string(), "--format", "csv"}), 0) << err_.str();
  const auto dq = ingest((a / "dataset.qds1").string(), DatasetFormat::qds1);
  const auto dc = ingest((b / "dataset.csv").string(), DatasetFormat::csv);
  EXPECT_TRUE(same_content(dq, dc));
  const auto res = load(a / "results.json");
  EXPECT_EQ(res["poisoned_indices"].size(), dq.poison_count());
  EXPECT_EQ(dq.poison_count(), 12u);  // ceil(0.3 * 40)
}

TEST_F(CliTest, FileDatasetRoundTripThroughDetect) {
  const auto cfg = write_config(small_config());
  ASSERT_EQ(run({"poison", "--config", cfg, "--out", (root_ / "p").string()}), 0);
  Json j = small_config();
  j["dataset"] = {{"path", (root_ / "p" / "dataset.qds1").string()}, {"format", "qds1"}};
  j["attack"] = {{"type", "none"}};
  ASSERT_EQ(run({"baselines", "--config", write_config(j, "file.json"), "--out", (root_ / "f").string()}), 0)
      << err_.str();
  // Flags travel with the file, so CR is still measured against the injected poison.
  const auto res = load(root_ / "f" / "results.json");
  EXPECT_NEAR(res["baselines"]["random"]["cr_rand"].get<double>(), 10.0, 1e-12);
}

TEST_F(CliTest, EvaluateReportsReferences) {
  ASSERT_EQ(run({"evaluate", "--config", write_config(small_config()), "--out", (root_ / "e").string()}), 0)
      << err_.str();
  const auto ev = load(root_ / "e" / "results.json")["evaluations"];
  for (const char* k : {"q_detection", "random", "loss_scan", "dcm", "clean_oracle", "full_dataset"}) {
    ASSERT_TRUE(ev.contains(k)) << k;
    EXPECT_GE(ev[k]["overall_accuracy"].get<double>(), 0.0);
    EXPECT_TRUE(ev[k]["target_accuracy"].is_number());
  }
}

TEST_F(CliTest, BenchSampler) {
  ASSERT_EQ(run({"bench-sampler", "--config", write_config(small_config()), "--out", (root_ / "b").string()}), 0);
  const auto res = load(root_ / "b" / "results.json");
  EXPECT_EQ(res["total"], 4);
  EXPECT_EQ(res["instances"].size(), 4u);
  for (const auto& r : res["instances"]) EXPECT_GE(r["sa_min"].get<double>(), r["exhaustive_min"].get<double>() - 1e-9);
  const auto csv = slurp(root_ / "b" / "bench.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST_F(CliTest, Gradcheck) {
  ASSERT_EQ(run({"gradcheck", "--config", write_config(small_config()), "--out", (root_ / "g").string()}), 0);
  const auto res = load(root_ / "g" / "results.json");
  EXPECT_LT(res["domain_model"]["max_rel_error"].get<double>(), 1e-4);
  EXPECT_EQ(res["domain_model"]["instances"].size(), 4u);
  EXPECT_EQ(res["qwan_threshold_task"]["grid_mse"].size(), 10u);
  EXPECT_TRUE(fs::exists(root_ / "g" / "gradcheck.csv"));
  EXPECT_TRUE(fs::exists(root_ / "g" / "qwan_curve.csv"));
}

TEST(Config, JsonRoundTripKeepsHash) {
  auto c = scenario::label_flip_config(42);
  c.attack.type = "badnets";
  c.attack.trigger = TriggerSpec{{1, 2}, {0.5, 1.0}, 0.7};
  c.sampler.kind = "exhaustive";
  c.baselines.dcm = false;
  c.evaluation.test_path = "/tmp/x.csv";
  c.evaluation.test_format = DatasetFormat::csv;
  const auto back = parse_experiment(to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(to_json(back), to_json(c));
  c.detection.epochs += 1;
  EXPECT_NE(config_hash(back), config_hash(c));
}

TEST(Config, Rejections) {
  const auto base = to_json(scenario::label_flip_config(0));
  auto bad = [&](auto mutate) {
    Json j = base;
    mutate(j);
    return j;
  };
  EXPECT_THROW(parse_experiment(bad([](Json& j) { j.erase("dataset"); })), ConfigError);
  EXPECT_THROW(parse_experiment(bad([](Json& j) { j["attack"]["type"] = "gradient"; })), ConfigError);
  EXPECT_THROW(parse_experiment(bad([](Json& j) { j["sampler"]["kind"] = "quantum"; })), ConfigError);
  EXPECT_THROW(parse_experiment(bad([](Json& j) { j["detection"]["epochs"] = "six"; })), ConfigError);
  EXPECT_THROW(parse_experiment(bad([](Json& j) { j["seed"] = -1; })), ConfigError);
  EXPECT_THROW(parse_experiment(bad([](Json& j) { j["detection"]["epochs"] = 2.5; })), ConfigError);
  EXPECT_THROW(parse_experiment(Json::array()), ConfigError);
}

TEST(Config, SeedPlanStreamsDistinct) {
  const auto p = seed_plan(5);
  std::set<std::uint64_t> s{p.data, p.attack, p.random_baseline, p.loss_scan, p.retrain};
  EXPECT_EQ(s.size(), 5u);
  EXPECT_EQ(p.data, 5u);
}
