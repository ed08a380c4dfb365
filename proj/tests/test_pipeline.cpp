#include <gtest/gtest.h>

#include <cmath>

#include "qdetect/pipeline.hpp"
#include "scenario.hpp"

using namespace qdetect;

namespace {

/// n x 1 dataset with the first `poisoned` rows flagged (labels untouched).
PoisonedDataset flagged(std::size_t n, std::size_t poisoned) {
  PoisonedDataset d;
  d.features = Matrix<float>(n, 1, 0.5f);
  d.labels.assign(n, 0);
  d.original_labels = d.labels;
  d.flags.assign(n, 0);
  for (std::size_t i = 0; i < poisoned; ++i) d.flags[i] = 1;
  d.classes = 1;
  return d;
}

/// Cheap detection settings for plumbing tests.
DetectionConfig tiny_config() {
  DetectionConfig c;
  c.epochs = 1;
  c.warmup_epochs = 1;
  c.batch_size = 30;
  c.subset_size = 60;
  c.hidden = 4;
  c.weight_reads = 1;
  c.seed = 3;
  return c;
}

AnnealingSampler tiny_sampler() {
  SamplerConfig s;
  s.num_reads = 1;
  s.sweeps = 20;
  s.seed = 1;
  return AnnealingSampler(s);
}

PoisonedDataset tiny_data(double ratio = 0.3) {
  SynthSpec s;
  s.n = 120;
  s.d = 6;
  s.spread = 0.2;
  s.seed = 5;
  return flip_labels_targeted(synth(s), 0, 1, ratio, 2);
}

}  // namespace

TEST(SelectTop, Examples) {
  EXPECT_EQ(select_top(std::vector<double>{0.9, 0.1, 0.5}, 2), (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(select_top(std::vector<double>(5, 0.3), 3), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(select_top(std::vector<double>{0.2, 0.8, 0.5, 0.8}, 4), (std::vector<std::size_t>{1, 3, 2, 0}));
  EXPECT_THROW(select_top(std::vector<double>{0.1}, 2), SelectionError);
}

TEST(SelectTop, InvariantUnderMonotoneTransforms) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> w(40);
    for (auto& x : w) x = static_cast<double>(uniform_index(rng, 16)) / 16.0;  // repeats on purpose
    const auto base = select_top(w, 17);
    const std::vector<std::function<double(double)>> transforms{
        [](double x) { return 2.0 * x + 1.0; }, [](double x) { return std::exp(x); },
        [](double x) { return x * x * x; }, [](double x) { return std::atan(x - 0.3); }};
    for (const auto& f : transforms) {
      std::vector<double> t(w.size());
      std::transform(w.begin(), w.end(), t.begin(), f);
      EXPECT_EQ(select_top(t, 17), base);
    }
  }
}

TEST(SelectTop, OrderedUniqueByWeight) {
  Rng rng(9);
  std::vector<double> w(100);
  for (auto& x : w) x = static_cast<double>(uniform_index(rng, 10));
  const auto s = select_top(w, 60);
  std::set<std::size_t> uniq(s.begin(), s.end());
  EXPECT_EQ(uniq.size(), s.size());
  for (std::size_t k = 1; k < s.size(); ++k)
    EXPECT_TRUE(w[s[k - 1]] > w[s[k]] || (w[s[k - 1]] == w[s[k]] && s[k - 1] < s[k]));
}

TEST(Metrics, CorruptionRatioExamples) {
  std::vector<std::size_t> sel(4000);
  std::iota(sel.begin(), sel.end(), std::size_t{0});
  EXPECT_DOUBLE_EQ(corruption_ratio(sel, flagged(5000, 0).flags), 0.0);
  EXPECT_DOUBLE_EQ(corruption_ratio(sel, flagged(5000, 40).flags), 1.0);
  EXPECT_THROW(corruption_ratio(std::vector<std::size_t>{}, flagged(5, 0).flags), SelectionError);
  EXPECT_THROW(corruption_ratio(std::vector<std::size_t>{9}, flagged(5, 0).flags), SelectionError);
}

TEST(Metrics, NcrExamples) {
  EXPECT_DOUBLE_EQ(*ncr(5, 10), 50.0);
  EXPECT_DOUBLE_EQ(*ncr(7.5, 7.5), 100.0);
  EXPECT_FALSE(ncr(3, 0).has_value());
  // Ratio scale of a badly failed selector: CR at 9.29x the random-subset CR.
  EXPECT_NEAR(*ncr(92.9, 10.0), 929.0, 1e-9);
}

TEST(Metrics, CrRandExpected) {
  EXPECT_DOUBLE_EQ(cr_rand_expected(flagged(600, 120)), 20.0);
  EXPECT_DOUBLE_EQ(cr_rand_expected(flagged(600, 0)), 0.0);
}

TEST(Metrics, CrRandMatchesMonteCarlo) {
  const auto d = flagged(600, 120);
  double sum = 0.0, ncr_sum = 0.0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto r = baseline_random(d, 300, s);
    sum += r.cr;
    ncr_sum += *r.ncr;
  }
  EXPECT_NEAR(sum / 1000.0, cr_rand_expected(d), 0.5);
  EXPECT_NEAR(ncr_sum / 1000.0, 100.0, 5.0);
}

TEST(Metrics, RandomSubsetHypergeometric) {
  const auto d = flagged(10000, 1000);
  double ncr_sum = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto r = baseline_random(d, 4000, derive_seed(s, 1));
    EXPECT_NEAR(r.cr, 10.0, 1.5);
    ncr_sum += *r.ncr;
  }
  EXPECT_NEAR(ncr_sum / 20.0, 100.0, 10.0);
}

TEST(Baselines, RandomIsSeededAndSorted) {
  const auto d = flagged(200, 20);
  const auto a = baseline_random(d, 50, 4), b = baseline_random(d, 50, 4), c = baseline_random(d, 50, 5);
  EXPECT_EQ(a.selected, b.selected);
  EXPECT_NE(a.selected, c.selected);
  EXPECT_TRUE(std::is_sorted(a.selected.begin(), a.selected.end()));
  EXPECT_THROW(baseline_random(d, 201, 1), SelectionError);
}

TEST(Baselines, DcmConstructedGeometry) {
  // Two tight clusters; poisoned rows carry a cluster's label but sit far from it.
  const std::size_t per = 100, bad = 10, dims = 4;
  PoisonedDataset d;
  d.classes = 2;
  d.features = Matrix<float>(2 * (per + bad), dims);
  Rng rng(3);
  std::size_t row = 0;
  for (Label c = 0; c < 2; ++c) {
    const double centre = c == 0 ? 0.45 : 0.55;
    for (std::size_t i = 0; i < per + bad; ++i, ++row) {
      const bool poison = i >= per;
      for (std::size_t j = 0; j < dims; ++j)
        d.features(row, j) = static_cast<float>((poison ? (c == 0 ? 0.95 : 0.05) : centre) + 0.005 * normal01(rng));
      d.labels.push_back(c);
      d.flags.push_back(poison);
    }
  }
  d.original_labels = d.labels;
  const auto r = baseline_dcm(d, 2 * per);
  EXPECT_DOUBLE_EQ(r.cr, 0.0);
  EXPECT_DOUBLE_EQ(*r.ncr, 0.0);
}

TEST(Baselines, LossScanDeterministic) {
  const auto d = tiny_data();
  EXPECT_EQ(baseline_loss_scan(d, 50).selected, baseline_loss_scan(d, 50).selected);
}

TEST(Detection, ZeroPoisonNcrNotApplicable) {
  SynthSpec s;
  s.n = 120;
  s.d = 6;
  const auto d = synth(s);
  const auto r = run_q_detection(d, tiny_config(), tiny_sampler());
  EXPECT_DOUBLE_EQ(r.cr, 0.0);
  EXPECT_DOUBLE_EQ(r.cr_rand, 0.0);
  EXPECT_FALSE(r.ncr.has_value());
}

TEST(Detection, OracleWeightsGiveCleanSelection) {
  const auto d = tiny_data();
  DetectionHooks hooks;
  hooks.final_weight_override = [&](std::size_t i, double) { return 1.0 - d.flags[i]; };
  const auto r = run_q_detection(d, tiny_config(), tiny_sampler(), hooks);
  EXPECT_DOUBLE_EQ(r.cr, 0.0);
  EXPECT_DOUBLE_EQ(*r.ncr, 0.0);
}

TEST(Detection, ResultShape) {
  const auto d = tiny_data();
  const auto cfg = tiny_config();
  const auto r = run_q_detection(d, cfg, tiny_sampler());
  EXPECT_EQ(r.selected.size(), cfg.subset_size);
  EXPECT_EQ(r.weights.weights.size(), d.size());
  for (double w : r.weights.weights) {
    EXPECT_GE(w, 0.0);
    EXPECT_LE(w, 1.0);
  }
  EXPECT_EQ(r.selected, select_top(r.weights.weights, cfg.subset_size));
  EXPECT_DOUBLE_EQ(r.cr, corruption_ratio(r.selected, d.flags));
  EXPECT_EQ(r.diagnostics.size(), cfg.epochs);
  ASSERT_TRUE(r.qwan && r.domain);
}

TEST(Detection, DomainModelOnlyChangesInActualUpdate) {
  const auto d = tiny_data();
  std::uint64_t at_copy = 0;
  std::size_t checks = 0, actual_changes = 0;
  DetectionHooks hooks;
  hooks.on_stage = [&](Stage s, const ClassifierParams& domain, const ClassifierParams& virt) {
    const auto h = params_hash(domain);
    switch (s) {
      case Stage::virtual_copy:
        at_copy = h;
        EXPECT_EQ(params_hash(virt), h);
        break;
      case Stage::adversarial_filtering:
        EXPECT_EQ(h, at_copy);
        ++checks;
        break;
      case Stage::selective_learning:
        EXPECT_EQ(h, at_copy);
        EXPECT_NE(params_hash(virt), h);
        ++checks;
        break;
      case Stage::actual_update:
        actual_changes += h != at_copy;
        break;
    }
  };
  auto cfg = tiny_config();
  cfg.epochs = 2;
  run_q_detection(d, cfg, tiny_sampler(), hooks);
  EXPECT_EQ(checks, 2u * 2u * 4u);
  EXPECT_GT(actual_changes, 0u);
}

TEST(Detection, InputNotMutated) {
  const auto d = tiny_data();
  const auto copy = d;
  run_q_detection(d, tiny_config(), tiny_sampler());
  EXPECT_TRUE(same_content(d, copy));
  EXPECT_EQ(d.original_labels, copy.original_labels);
  EXPECT_EQ(d.meta, copy.meta);
}

TEST(Detection, DeterministicAndThreadIndependent) {
  const auto d = tiny_data();
  auto cfg = tiny_config();
  const auto a = run_q_detection(d, cfg, tiny_sampler());
  const auto b = run_q_detection(d, cfg, tiny_sampler());
  cfg.threads = 4;
  const auto c = run_q_detection(d, cfg, tiny_sampler());
  EXPECT_EQ(a.weights.weights, b.weights.weights);
  EXPECT_EQ(a.weights.weights, c.weights.weights);
  EXPECT_EQ(a.selected, c.selected);
}

TEST(Detection, ConfigValidation) {
  const auto d = tiny_data();
  auto cfg = tiny_config();
  cfg.subset_size = d.size() + 1;
  EXPECT_THROW(run_q_detection(d, cfg, tiny_sampler()), ConfigError);
  cfg = tiny_config();
  cfg.loss_threshold_quantile = 1.0;
  EXPECT_THROW(run_q_detection(d, cfg, tiny_sampler()), ConfigError);
  EXPECT_THROW(run_q_detection(PoisonedDataset{}, tiny_config(), tiny_sampler()), ConfigError);
}

TEST(Retrain, DeterministicAndEmptyRejected) {
  const auto d = tiny_data();
  const auto test = synth(SynthSpec{200, 6, 3, 0.2, 5}, 1).all();
  std::vector<std::size_t> idx(60);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const FitConfig fc{300, 0.5, 0, 1};
  const auto a = retrain_eval(d, idx, test, fc, Label{1});
  const auto b = retrain_eval(d, idx, test, fc, Label{1});
  EXPECT_EQ(a.overall_accuracy, b.overall_accuracy);
  EXPECT_EQ(a.target_accuracy, b.target_accuracy);
  EXPECT_THROW(retrain_eval(d, std::vector<std::size_t>{}, test, fc), EvaluationError);
}

// The 20%-flip desk scenario, five seeds.
class LabelFlipScenario : public ::testing::Test {
 protected:
  static constexpr std::uint64_t kSeeds = 5;
  static const std::vector<scenario::Run>& runs() {
    static const std::vector<scenario::Run> all = [] {
      std::vector<scenario::Run> v;
      for (std::uint64_t s = 0; s < kSeeds; ++s) v.push_back(scenario::prepare(s));
      return v;
    }();
    return all;
  }
  static const std::vector<SelectionResult>& detections() {
    static const std::vector<SelectionResult> all = [] {
      std::vector<SelectionResult> v;
      for (const auto& r : runs()) v.push_back(scenario::detect(r));
      return v;
    }();
    return all;
  }
};

TEST_F(LabelFlipScenario, QDetectionNcrAndWeightSeparation) {
  int ok = 0;
  for (const auto& q : detections()) ok += q.ncr && *q.ncr <= 50.0;
  EXPECT_GE(ok, 4);
  ok = 0;
  for (const auto& q : detections()) {
    const auto& last = q.diagnostics.back();
    ok += last.mean_weight_clean > last.mean_weight_poisoned;
  }
  EXPECT_GE(ok, 4);
}

TEST_F(LabelFlipScenario, LossScanBeatsRandom) {
  int ok = 0;
  for (const auto& r : runs()) {
    LossScanConfig lc;
    lc.seed = seed_plan(r.config.seed).loss_scan;
    ok += *baseline_loss_scan(r.data, r.config.detection.subset_size, lc).ncr < 100.0;
  }
  EXPECT_GE(ok, 4);
}

TEST_F(LabelFlipScenario, CleanOracleBeatsRandomRetrain) {
  int ok = 0;
  for (const auto& r : runs()) {
    const double oracle = scenario::retrain_accuracy(r, scenario::clean_oracle(r));
    const double random = scenario::retrain_accuracy(r, scenario::random_subset(r).selected);
    ok += oracle - random >= 0.02;
  }
  EXPECT_GE(ok, 4);
}

TEST(Retrain, NullEffectWithoutPoison) {
  auto run = scenario::prepare(0);
  run.config.attack.type = "none";
  run.data = cli::clean_dataset(run.config);
  const auto q = scenario::detect(run);
  const double a = scenario::retrain_accuracy(run, q.selected);
  const double b = scenario::retrain_accuracy(run, scenario::random_subset(run).selected);
  EXPECT_NEAR(a, b, 0.02);
}
