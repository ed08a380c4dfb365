#pragma once

// Seeded poisoners with ground-truth flags: targeted label flipping, BadNets-style trigger
// insertion with relabeling, and a clean-label blended trigger that approximates Narcissus.
// Poison counts are exact ceilings of ratio * (eligible samples).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "qdetect/dataset.hpp"
#include "qdetect/errors.hpp"
#include "qdetect/random.hpp"

namespace qdetect {

namespace detail {

inline std::size_t poison_count(double ratio, std::size_t eligible) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw AttackError("poison ratio must lie in [0, 1]");
  // The epsilon keeps products such as 0.03 * 1000 = 30.000000000000004 from rounding up.
  const double exact = ratio * static_cast<double>(eligible);
  return std::min(eligible, static_cast<std::size_t>(std::ceil(exact - 1e-9 * std::max(1.0, exact))));
}

inline void check_class(const PoisonedDataset& d, Label c, const char* role) {
  if (c >= d.classes) throw AttackError(std::string("unknown ") + role + " class " + std::to_string(c));
}

/// `count` indices drawn from `pool` by a seeded shuffle, returned in ascending order.
inline std::vector<std::size_t> choose(std::vector<std::size_t> pool, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  shuffle(std::span<std::size_t>(pool), rng);
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

inline std::vector<std::size_t> indices_of_class(const PoisonedDataset& d, Label c) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d.labels[i] == c) out.push_back(i);
  return out;
}

inline void write_trigger(std::span<float> row, const TriggerSpec& t, double amplitude) {
  for (std::size_t k = 0; k < t.positions.size(); ++k) {
    const double old = row[t.positions[k]];
    const double v = (1.0 - amplitude) * old + amplitude * t.values[k];
    row[t.positions[k]] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
}

}  // namespace detail

inline PoisonedDataset flip_labels_targeted(const PoisonedDataset& d, Label source, Label target, double ratio,
                                            std::uint64_t seed) {
  detail::check_class(d, source, "source");
  detail::check_class(d, target, "target");
  if (source == target) throw AttackError("source and target class must differ");
  const auto pool = detail::indices_of_class(d, source);
  const auto chosen = detail::choose(pool, detail::poison_count(ratio, pool.size()), seed);
  PoisonedDataset out = d;
  for (auto i : chosen) {
    out.labels[i] = target;
    out.flags[i] = 1;
  }
  out.meta = AttackMeta{"label_flip", ratio, source, target, {}, seed, {}};
  return out;
}

inline PoisonedDataset badnets(const PoisonedDataset& d, const TriggerSpec& trigger, Label target, double ratio,
                               std::uint64_t seed) {
  detail::check_class(d, target, "target");
  trigger.validate(d.dims());
  std::vector<std::size_t> pool(d.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  const auto chosen = detail::choose(pool, detail::poison_count(ratio, pool.size()), seed);
  PoisonedDataset out = d;
  for (auto i : chosen) {
    detail::write_trigger(out.features.row(i), trigger, 1.0);
    out.labels[i] = target;
    out.flags[i] = 1;
  }
  out.meta = AttackMeta{"badnets", ratio, std::nullopt, target, trigger, seed, {}};
  return out;
}

/// Clean-label attack: blends the trigger into target-class samples, labels untouched.
inline PoisonedDataset narcissus_like(const PoisonedDataset& d, const TriggerSpec& trigger, Label target, double ratio,
                                      std::uint64_t seed) {
  detail::check_class(d, target, "target");
  trigger.validate(d.dims());
  const auto pool = detail::indices_of_class(d, target);
  const auto chosen = detail::choose(pool, detail::poison_count(ratio, pool.size()), seed);
  PoisonedDataset out = d;
  for (auto i : chosen) {
    detail::write_trigger(out.features.row(i), trigger, trigger.amplitude);
    out.flags[i] = 1;
  }
  out.meta = AttackMeta{"narcissus", ratio, std::nullopt, target, trigger, seed, {}};
  if (trigger.amplitude == 0.0 && !chosen.empty())
    out.meta.warnings.push_back("trigger amplitude 0 leaves flagged samples unmodified");
  return out;
}

/// Default clean-label trigger: three positions set toward 1 with amplitude 0.2.
inline TriggerSpec default_narcissus_trigger() { return TriggerSpec{{0, 1, 2}, {1.0, 1.0, 1.0}, 0.2}; }

/// Test-time activation: writes the trigger (blended by its amplitude) into every row.
inline LabeledBatch apply_trigger_to_all(const LabeledBatch& testset, const TriggerSpec& trigger) {
  trigger.validate(testset.features.cols);
  LabeledBatch out = testset;
  for (std::size_t r = 0; r < out.size(); ++r) {
    auto row = out.features.row(r);
    for (std::size_t k = 0; k < trigger.positions.size(); ++k) {
      const std::size_t p = trigger.positions[k];
      row[p] = std::clamp((1.0 - trigger.amplitude) * row[p] + trigger.amplitude * trigger.values[k], 0.0, 1.0);
    }
  }
  return out;
}

}  // namespace qdetect
