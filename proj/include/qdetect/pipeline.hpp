#pragma once

// Bilevel clean-subset selection driven by the weight-assigning network, the corruption
// metrics used to score a selection, baseline selectors and retrain evaluation.
//
// Per epoch and batch:
//   1. virtual model <- copy of the domain model
//   2. adversarial filtering: guided targets -1 above the batch loss quantile, +1 below;
//      summed free/guided contrast updates the Q-WAN
//   3. selective learning: Q-WAN weights drive a weighted step of the virtual model, then
//      a second Q-WAN update with targets recomputed from the stepped virtual model
//   4. actual update: Q-WAN weights drive a weighted step of the domain model
// After the last epoch the frozen Q-WAN weights every sample and the top N are selected.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qdetect/dataset.hpp"
#include "qdetect/domain_model.hpp"
#include "qdetect/errors.hpp"
#include "qdetect/parallel.hpp"
#include "qdetect/qwan.hpp"
#include "qdetect/random.hpp"
#include "qdetect/samplers.hpp"

namespace qdetect {

struct DetectionConfig {
  std::size_t epochs = 6;
  std::size_t warmup_epochs = 15;  // unweighted domain-model pre-training before the bilevel loop
  std::size_t batch_size = 60;
  std::size_t subset_size = 300;
  double loss_threshold_quantile = 0.85;
  double lr_virtual = 0.5;
  double lr_actual = 0.5;
  std::size_t hidden = 32;        // Q-WAN hidden spins
  std::size_t weight_reads = 3;   // free phases averaged per weight
  std::size_t threads = 1;        // per-sample phase runs within a batch
  TrainConfig qwan{0.02, 2.0, 8, 2.0};
  FitConfig model{0, 0.5, 0, 0};  // architecture of the domain model (steps unused)
  std::uint64_t seed = 0;

  QwanTopology topology() const { return QwanTopology{qwan.thermometer_bits, hidden, 1}; }

  void validate(std::size_t dataset_size) const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (subset_size < 1 || subset_size > dataset_size) throw ConfigError("subset_size must be in [1, dataset size]");
    if (!(loss_threshold_quantile > 0.0 && loss_threshold_quantile < 1.0))
      throw ConfigError("loss_threshold_quantile must lie in (0, 1)");
    if (!(lr_virtual > 0.0) || !(lr_actual > 0.0)) throw ConfigError("stage learning rates must be positive");
    if (weight_reads < 1) throw ConfigError("weight_reads must be >= 1");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    topology().validate();
    qwan.validate(topology());
  }
};

/// Per-sample weights in [0, 1] produced at stage `stage`.
struct SampleWeights {
  std::size_t stage = 0;
  std::vector<double> weights;
};

struct EpochDiagnostics {
  std::size_t epoch = 0;
  double mean_weight_clean = 0.0;     // actual-update weights, ground truth used for reporting only
  double mean_weight_poisoned = 0.0;  // NaN when the dataset has no poisoned samples
  double mean_loss = 0.0;
};

struct SelectionResult {
  std::string method;
  std::vector<std::size_t> selected;  // descending weight, ties by ascending index
  SampleWeights weights;
  double cr = 0.0;
  double cr_rand = 0.0;
  std::optional<double> ncr;  // empty when the dataset holds no poison
  std::vector<EpochDiagnostics> diagnostics;
  std::optional<QwanParams> qwan;
  std::optional<ClassifierParams> domain;
};

/// Indices of the N largest weights, ties by ascending index.
inline std::vector<std::size_t> select_top(std::span<const double> weights, std::size_t n) {
  if (n > weights.size()) throw SelectionError("subset size exceeds the number of samples");
  std::vector<std::size_t> idx(weights.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return weights[a] > weights[b]; });
  idx.resize(n);
  return idx;
}

/// Percentage of poisoned samples in a selection.
inline double corruption_ratio(std::span<const std::size_t> selected, std::span<const std::uint8_t> flags) {
  if (selected.empty()) throw SelectionError("corruption ratio of an empty selection");
  std::size_t poisoned = 0;
  for (auto i : selected) {
    if (i >= flags.size()) throw SelectionError("selected index out of range");
    poisoned += flags[i];
  }
  return 100.0 * static_cast<double>(poisoned) / static_cast<double>(selected.size());
}

/// 100 * cr / cr_rand; empty (not applicable) when cr_rand is 0.
inline std::optional<double> ncr(double cr, double cr_rand) {
  if (cr_rand == 0.0) return std::nullopt;
  return 100.0 * cr / cr_rand;
}

/// Expected corruption ratio of a uniformly random subset.
inline double cr_rand_expected(const PoisonedDataset& d) {
  if (d.size() == 0) return 0.0;
  return 100.0 * static_cast<double>(d.poison_count()) / static_cast<double>(d.size());
}

/// Fills selection, CR, CR_rand and NCR from a full-dataset weight vector.
inline SelectionResult finish_selection(std::string method, const PoisonedDataset& d, std::vector<double> weights,
                                        std::size_t n, std::size_t stage = 0) {
  SelectionResult r;
  r.method = std::move(method);
  r.selected = select_top(weights, n);
  r.weights = SampleWeights{stage, std::move(weights)};
  r.cr = corruption_ratio(r.selected, d.flags);
  r.cr_rand = cr_rand_expected(d);
  r.ncr = ncr(r.cr, r.cr_rand);
  return r;
}

/// Min-max scaling to [0, 1]; a constant vector maps to all zeros.
inline std::vector<double> minmax_normalize(std::span<const double> v) {
  std::vector<double> out(v.size(), 0.0);
  if (v.empty()) return out;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::clamp((v[i] - *lo) / range, 0.0, 1.0);
  return out;
}

/// Linear-interpolation quantile (q in [0, 1]) of an unsorted sample.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw EvaluationError("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

enum class Stage { virtual_copy, adversarial_filtering, selective_learning, actual_update };

inline std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::virtual_copy: return "virtual_copy";
    case Stage::adversarial_filtering: return "adversarial_filtering";
    case Stage::selective_learning: return "selective_learning";
    case Stage::actual_update: return "actual_update";
  }
  return "unknown";
}

struct DetectionHooks {
  /// Called after each stage of each batch with the current domain and virtual models.
  std::function<void(Stage, const ClassifierParams& domain, const ClassifierParams& virtual_model)> on_stage;
  /// Replaces the final Q-WAN weight of sample `index` (test plumbing for oracle selectors).
  std::function<double(std::size_t index, double loss_norm)> final_weight_override;
};

namespace detail {

/// Free + guided phase for every sample of a batch; returns the summed Q-WAN delta.
inline QwanDelta contrast_batch(const QwanParams& psi, std::span<const double> losses, const DetectionConfig& cfg,
                                const Sampler& sampler, std::uint64_t seed) {
  const auto norm = minmax_normalize(losses);
  const double threshold = quantile(std::vector<double>(losses.begin(), losses.end()), cfg.loss_threshold_quantile);
  const auto& topo = psi.topology;
  std::vector<QwanDelta> deltas(losses.size());
  parallel_for(losses.size(), cfg.threads, [&](std::size_t i) {
    const ClampSet input = encode_loss(norm[i], topo.n_input);
    const SpinState target{losses[i] > threshold ? -1 : 1};
    const PhaseResult free = run_phase(psi, input, std::nullopt, 0.0, sampler, derive_seed(seed, i, 0));
    const PhaseResult guided = run_phase(psi, input, target, cfg.qwan.beta_nudge, sampler, derive_seed(seed, i, 1));
    deltas[i] = ep_delta(topo, input, free, guided, cfg.qwan.learning_rate);
  });
  QwanDelta total(topo);
  for (const auto& d : deltas) total += d;
  return total;
}

inline std::vector<double> batch_weights(const QwanParams& psi, std::span<const double> losses,
                                         const DetectionConfig& cfg, const Sampler& sampler, std::uint64_t seed) {
  const auto norm = minmax_normalize(losses);
  std::vector<double> w(losses.size());
  parallel_for(losses.size(), cfg.threads, [&](std::size_t i) {
    w[i] = infer_weight(psi, norm[i], sampler, cfg.weight_reads, derive_seed(seed, i));
  });
  return w;
}

template <typename F>
auto with_stage(Stage s, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const DimensionError&) {
    throw;
  } catch (const std::exception& e) {
    throw RuntimeFailure(std::string(stage_name(s)) + ": " + e.what());
  }
}

}  // namespace detail

inline SelectionResult run_q_detection(const PoisonedDataset& d, const DetectionConfig& cfg, const Sampler& sampler,
                                       const DetectionHooks& hooks = {}) {
  if (d.size() == 0) throw ConfigError("dataset is empty");
  cfg.validate(d.size());
  const QwanTopology topo = cfg.topology();
  QwanParams psi = QwanParams::random(topo, derive_seed(cfg.seed, 0x9A11));
  FitConfig arch = cfg.model;
  arch.seed = derive_seed(cfg.seed, 0xD0D0);
  ClassifierParams domain = init_classifier(d.classes, d.dims(), arch);

  for (std::size_t e = 0; e < cfg.warmup_epochs; ++e) {
    const auto order = permutation(d.size(), derive_seed(cfg.seed, 0xA8A8, e));
    for (std::size_t start = 0; start < d.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, d.size() - start));
      domain = unweighted_step(domain, d.batch(idx), cfg.lr_actual);
    }
  }

  auto notify = [&](Stage s, const ClassifierParams& virt) {
    if (hooks.on_stage) hooks.on_stage(s, domain, virt);
  };

  std::vector<EpochDiagnostics> diagnostics;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = permutation(d.size(), derive_seed(cfg.seed, 0xE90C, epoch));
    double wsum_clean = 0.0, wsum_poison = 0.0, loss_sum = 0.0;
    std::size_t n_clean = 0, n_poison = 0;
    for (std::size_t start = 0, batch_no = 0; start < d.size(); start += cfg.batch_size, ++batch_no) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, d.size() - start));
      const LabeledBatch batch = d.batch(idx);
      const std::uint64_t bseed = derive_seed(cfg.seed, epoch, batch_no);

      ClassifierParams virt = clone_virtual(domain);
      notify(Stage::virtual_copy, virt);

      detail::with_stage(Stage::adversarial_filtering, [&] {
        const auto losses = per_sample_loss(virt, batch);
        psi = apply_delta(psi, detail::contrast_batch(psi, losses, cfg, sampler, derive_seed(bseed, 1)),
                          cfg.qwan.weight_clip);
        return 0;
      });
      notify(Stage::adversarial_filtering, virt);

      detail::with_stage(Stage::selective_learning, [&] {
        const auto losses = per_sample_loss(virt, batch);
        const auto w = detail::batch_weights(psi, losses, cfg, sampler, derive_seed(bseed, 2));
        virt = weighted_step(virt, batch, w, cfg.lr_virtual);
        const auto refreshed = per_sample_loss(virt, batch);
        psi = apply_delta(psi, detail::contrast_batch(psi, refreshed, cfg, sampler, derive_seed(bseed, 3)),
                          cfg.qwan.weight_clip);
        return 0;
      });
      notify(Stage::selective_learning, virt);

      detail::with_stage(Stage::actual_update, [&] {
        const auto losses = per_sample_loss(domain, batch);
        const auto w = detail::batch_weights(psi, losses, cfg, sampler, derive_seed(bseed, 4));
        domain = weighted_step(domain, batch, w, cfg.lr_actual);
        for (std::size_t k = 0; k < idx.size(); ++k) {
          loss_sum += losses[k];
          if (d.flags[idx[k]]) {
            wsum_poison += w[k];
            ++n_poison;
          } else {
            wsum_clean += w[k];
            ++n_clean;
          }
        }
        return 0;
      });
      notify(Stage::actual_update, virt);
    }
    diagnostics.push_back(EpochDiagnostics{
        epoch, n_clean ? wsum_clean / static_cast<double>(n_clean) : std::nan(""),
        n_poison ? wsum_poison / static_cast<double>(n_poison) : std::nan(""), loss_sum / static_cast<double>(d.size())});
  }

  const auto losses = per_sample_loss(domain, d.all());
  const auto norm = minmax_normalize(losses);
  std::vector<double> weights(d.size());
  const std::uint64_t fseed = derive_seed(cfg.seed, 0xF1A1);
  detail::with_stage(Stage::actual_update, [&] {
    parallel_for(d.size(), cfg.threads, [&](std::size_t i) {
      weights[i] = hooks.final_weight_override ? hooks.final_weight_override(i, norm[i])
                                               : infer_weight(psi, norm[i], sampler, cfg.weight_reads, derive_seed(fseed, i));
    });
    return 0;
  });
  for (double w : weights)
    if (!(w >= 0.0 && w <= 1.0)) throw RuntimeFailure("final weight outside [0, 1]");

  SelectionResult r = finish_selection("q_detection", d, std::move(weights), cfg.subset_size, cfg.epochs);
  r.diagnostics = std::move(diagnostics);
  r.qwan = std::move(psi);
  r.domain = std::move(domain);
  return r;
}

/// Mean clean and poisoned weight of a full-dataset weight vector (ground truth for reporting).
inline std::pair<double, double> mean_weight_by_flag(const PoisonedDataset& d, std::span<const double> w) {
  double c = 0.0, p = 0.0;
  std::size_t nc = 0, np = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.flags[i]) {
      p += w[i];
      ++np;
    } else {
      c += w[i];
      ++nc;
    }
  }
  return {nc ? c / static_cast<double>(nc) : std::nan(""), np ? p / static_cast<double>(np) : std::nan("")};
}

inline SelectionResult baseline_random(const PoisonedDataset& d, std::size_t n, std::uint64_t seed) {
  if (n > d.size()) throw SelectionError("subset size exceeds the number of samples");
  const auto order = permutation(d.size(), seed);
  std::vector<double> w(d.size(), 0.0);
  for (std::size_t k = 0; k < n; ++k) w[order[k]] = 1.0;
  SelectionResult r = finish_selection("random", d, std::move(w), n);
  return r;
}

struct LossScanConfig {
  std::size_t warm_epochs = 2;
  std::size_t batch_size = 60;
  double lr = 0.5;
  std::uint64_t seed = 0;
};

/// Lowest-loss samples after a short unweighted warm-up of a fresh model.
inline SelectionResult baseline_loss_scan(const PoisonedDataset& d, std::size_t n, const LossScanConfig& cfg = {}) {
  if (n > d.size()) throw SelectionError("subset size exceeds the number of samples");
  if (cfg.batch_size < 1) throw ConfigError("loss scan batch_size must be >= 1");
  ClassifierParams p = ClassifierParams::softmax(d.classes, d.dims());
  for (std::size_t e = 0; e < cfg.warm_epochs; ++e) {
    const auto order = permutation(d.size(), derive_seed(cfg.seed, e));
    for (std::size_t start = 0; start < d.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, d.size() - start));
      p = unweighted_step(p, d.batch(idx), cfg.lr);
    }
  }
  const auto norm = minmax_normalize(per_sample_loss(p, d.all()));
  std::vector<double> w(norm.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 1.0 - norm[i];
  return finish_selection("loss_scan", d, std::move(w), n);
}

/// Smallest Euclidean distances to the (standardized) mean of each sample's labeled class.
inline SelectionResult baseline_dcm(const PoisonedDataset& d, std::size_t n) {
  if (n > d.size()) throw SelectionError("subset size exceeds the number of samples");
  const std::size_t dims = d.dims();
  std::vector<double> mean(dims, 0.0), sd(dims, 0.0);
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < dims; ++j) mean[j] += d.features(i, j);
  for (auto& m : mean) m /= static_cast<double>(d.size());
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < dims; ++j) sd[j] += std::pow(d.features(i, j) - mean[j], 2);
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(d.size()));
  auto z = [&](std::size_t i, std::size_t j) { return sd[j] > 0.0 ? (d.features(i, j) - mean[j]) / sd[j] : 0.0; };

  Matrix<double> cmean(d.classes, dims, 0.0);
  std::vector<std::size_t> count(d.classes, 0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    ++count[d.labels[i]];
    for (std::size_t j = 0; j < dims; ++j) cmean(d.labels[i], j) += z(i, j);
  }
  for (std::size_t c = 0; c < d.classes; ++c)
    for (std::size_t j = 0; j < dims; ++j)
      if (count[c]) cmean(c, j) /= static_cast<double>(count[c]);
  std::vector<double> dist(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < dims; ++j) s += std::pow(z(i, j) - cmean(d.labels[i], j), 2);
    dist[i] = std::sqrt(s);
  }
  const auto norm = minmax_normalize(dist);
  std::vector<double> w(norm.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 1.0 - norm[i];
  return finish_selection("dcm", d, std::move(w), n);
}

struct RetrainReport {
  double overall_accuracy = 0.0;
  std::optional<double> target_accuracy;
};

/// Fresh classifier trained on the selected rows (stored labels), scored on a clean test set.
inline RetrainReport retrain_eval(const PoisonedDataset& d, std::span<const std::size_t> selected,
                                  const LabeledBatch& testset, const FitConfig& cfg,
                                  std::optional<Label> target_class = std::nullopt) {
  if (selected.empty()) throw EvaluationError("retrain on an empty selection");
  const ClassifierParams p = fit(init_classifier(d.classes, d.dims(), cfg), d.batch(selected), cfg);
  RetrainReport r;
  r.overall_accuracy = accuracy(p, testset);
  if (target_class) r.target_accuracy = per_class_accuracy(p, testset, *target_class);
  return r;
}

}  // namespace qdetect
