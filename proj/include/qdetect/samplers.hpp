#pragma once

// Ground-state search over Ising problems plus the clamp/nudge transformations used by
// the weight-assigning network.
//
// Two backends share the Sampler interface: exhaustive enumeration (exact, n <= 24) and
// single-spin-flip Metropolis annealing with a geometric inverse-temperature schedule.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qdetect/errors.hpp"
#include "qdetect/parallel.hpp"
#include "qdetect/qubo.hpp"
#include "qdetect/random.hpp"

namespace qdetect {

struct SamplerConfig {
  std::size_t num_reads = 50;
  std::size_t sweeps = 2000;
  double beta_start = 0.1;
  double beta_end = 5.0;
  std::uint64_t seed = 0;
  /// Worker threads for independent reads; results do not depend on this value.
  std::size_t num_threads = 1;

  void validate() const {
    if (num_reads < 1) throw ConfigError("sampler num_reads must be >= 1");
    if (sweeps < 1) throw ConfigError("sampler sweeps must be >= 1");
    if (!(beta_start > 0.0) || !std::isfinite(beta_start) || !std::isfinite(beta_end))
      throw ConfigError("sampler betas must be positive and finite");
    if (!(beta_end > beta_start)) throw ConfigError("sampler beta_end must exceed beta_start");
    if (num_threads < 1) throw ConfigError("sampler num_threads must be >= 1");
  }

  friend bool operator==(const SamplerConfig&, const SamplerConfig&) = default;
};

struct SampleRecord {
  SpinState state;
  double energy = 0.0;
  std::size_t occurrences = 0;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

/// Distinct states sorted by ascending energy, ties in the order they were first found.
class SampleSet {
 public:
  SampleSet() = default;
  explicit SampleSet(std::vector<SampleRecord> records) : records_(std::move(records)) {}

  std::span<const SampleRecord> records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }

  const SampleRecord& best() const {
    if (records_.empty()) throw Error("empty sample set has no best record");
    return records_.front();
  }

  std::size_t total_occurrences() const noexcept {
    std::size_t total = 0;
    for (const auto& r : records_) total += r.occurrences;
    return total;
  }

  friend bool operator==(const SampleSet&, const SampleSet&) = default;

 private:
  std::vector<SampleRecord> records_;
};

namespace detail {

/// Compressed adjacency of an Ising problem: neighbours and coupling strengths per spin.
struct Adjacency {
  std::vector<std::size_t> start;
  std::vector<Index> neighbor;
  std::vector<double> weight;

  explicit Adjacency(const IsingProblem& p) : start(p.n() + 1, 0) {
    for (const auto& t : p.couplings()) {
      ++start[t.i + 1];
      ++start[t.j + 1];
    }
    for (std::size_t i = 0; i < p.n(); ++i) start[i + 1] += start[i];
    neighbor.resize(start.back());
    weight.resize(start.back());
    std::vector<std::size_t> cursor(start.begin(), start.end() - 1);
    for (const auto& t : p.couplings()) {
      neighbor[cursor[t.i]] = t.j;
      weight[cursor[t.i]++] = t.value;
      neighbor[cursor[t.j]] = t.i;
      weight[cursor[t.j]++] = t.value;
    }
  }
};

inline double energy_scale(const IsingProblem& p) {
  double s = std::abs(p.offset());
  for (const auto& t : p.couplings()) s += std::abs(t.value);
  for (double h : p.field()) s += std::abs(h);
  return std::max(1.0, s);
}

}  // namespace detail

inline constexpr std::size_t kExhaustiveLimit = 24;

/// Enumerates all 2^n states and returns every ground state, each with occurrences = 1.
///
/// Enumeration walks a Gray code starting from the state whose code is `start_code`, so
/// `start_code` only changes which degenerate ground state is found first. States whose
/// exact energy lies within 1e-9 * (sum of |coefficients|) of the minimum count as ground.
inline SampleSet exhaustive_solve(const IsingProblem& p, std::uint64_t start_code = 0) {
  const std::size_t n = p.n();
  if (n > kExhaustiveLimit) throw SizeLimitError("exhaustive_solve supports at most 24 spins");
  if (n == 0) return SampleSet({SampleRecord{SpinState{}, p.offset(), 1}});

  const std::uint64_t mask = start_code & ((std::uint64_t{1} << n) - 1);
  const detail::Adjacency adj(p);
  const auto h = p.field();
  const double scale = detail::energy_scale(p);
  const double loose = 1e-6 * scale;
  const double tight = 1e-9 * scale;

  std::vector<int> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = ((mask >> i) & 1U) ? 1 : -1;
  std::vector<double> local(n);
  for (std::size_t i = 0; i < n; ++i) {
    double f = h[i];
    for (std::size_t k = adj.start[i]; k < adj.start[i + 1]; ++k) f += adj.weight[k] * s[adj.neighbor[k]];
    local[i] = f;
  }
  double e = energy_ising(p, spins_from_code(mask, n));

  // (code, approximate energy) candidates within the loose band of the running minimum.
  std::vector<std::pair<std::uint64_t, double>> cand{{mask, e}};
  double running_min = e;
  std::size_t prune_at = 64;
  std::uint64_t code = mask;
  const std::uint64_t total = std::uint64_t{1} << n;
  for (std::uint64_t k = 1; k < total; ++k) {
    const auto i = static_cast<std::size_t>(std::countr_zero(k));
    e += -2.0 * s[i] * local[i];
    s[i] = -s[i];
    code ^= std::uint64_t{1} << i;
    const double d = 2.0 * s[i];
    for (std::size_t q = adj.start[i]; q < adj.start[i + 1]; ++q) local[adj.neighbor[q]] += adj.weight[q] * d;
    if (e <= running_min + loose) {
      running_min = std::min(running_min, e);
      cand.emplace_back(code, e);
      if (cand.size() >= prune_at) {
        std::erase_if(cand, [&](const auto& c) { return c.second > running_min + loose; });
        prune_at = std::max<std::size_t>(64, 2 * cand.size());
      }
    }
  }

  std::vector<SampleRecord> records;
  records.reserve(cand.size());
  double exact_min = std::numeric_limits<double>::infinity();
  for (const auto& [c, approx] : cand) {
    if (approx > running_min + loose) continue;
    SpinState st = spins_from_code(c, n);
    const double exact = energy_ising(p, st);
    exact_min = std::min(exact_min, exact);
    records.push_back(SampleRecord{std::move(st), exact, 1});
  }
  std::erase_if(records, [&](const SampleRecord& r) { return r.energy > exact_min + tight; });
  std::stable_sort(records.begin(), records.end(),
                   [](const SampleRecord& a, const SampleRecord& b) { return a.energy < b.energy; });
  return SampleSet(std::move(records));
}

/// Inverse temperature for sweep k of `sweeps`, geometric from beta_start to beta_end.
inline double beta_at(const SamplerConfig& cfg, std::size_t k) {
  if (cfg.sweeps == 1) return cfg.beta_end;
  const double t = static_cast<double>(k) / static_cast<double>(cfg.sweeps - 1);
  return cfg.beta_start * std::pow(cfg.beta_end / cfg.beta_start, t);
}

/// Independent Metropolis anneals. Read r draws from a generator seeded by (cfg.seed, r);
/// records are merged in read order, so the result is a pure function of (p, cfg).
inline SampleSet sa_sample(const IsingProblem& p, const SamplerConfig& cfg) {
  cfg.validate();
  const std::size_t n = p.n();
  if (n == 0) return SampleSet({SampleRecord{SpinState{}, p.offset(), cfg.num_reads}});

  const detail::Adjacency adj(p);
  const auto h = p.field();
  std::vector<double> betas(cfg.sweeps);
  for (std::size_t k = 0; k < cfg.sweeps; ++k) betas[k] = beta_at(cfg, k);

  std::vector<SpinState> finals(cfg.num_reads);
  parallel_for(cfg.num_reads, cfg.num_threads, [&](std::size_t r) {
    Rng rng(derive_seed(cfg.seed, r));
    std::vector<int> s(n);
    for (auto& v : s) v = (rng() >> 63) ? 1 : -1;
    std::vector<double> local(n);
    for (std::size_t i = 0; i < n; ++i) {
      double f = h[i];
      for (std::size_t k = adj.start[i]; k < adj.start[i + 1]; ++k) f += adj.weight[k] * s[adj.neighbor[k]];
      local[i] = f;
    }
    for (const double beta : betas) {
      for (std::size_t i = 0; i < n; ++i) {
        const double delta = -2.0 * s[i] * local[i];
        bool accept = delta <= 0.0;
        if (!accept) {
          const double x = beta * delta;
          accept = x < 40.0 && uniform01(rng) < std::exp(-x);
        }
        if (accept) {
          s[i] = -s[i];
          const double d = 2.0 * s[i];
          for (std::size_t q = adj.start[i]; q < adj.start[i + 1]; ++q) local[adj.neighbor[q]] += adj.weight[q] * d;
        }
      }
    }
    std::vector<std::int8_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<std::int8_t>(s[i]);
    finals[r] = SpinState(std::move(out));
  });

  std::vector<SampleRecord> records;
  std::map<SpinState, std::size_t> slot;
  for (auto& st : finals) {
    auto [it, inserted] = slot.try_emplace(st, records.size());
    if (inserted) {
      const double e = energy_ising(p, st);
      records.push_back(SampleRecord{std::move(st), e, 1});
    } else {
      ++records[it->second].occurrences;
    }
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const SampleRecord& a, const SampleRecord& b) { return a.energy < b.energy; });
  return SampleSet(std::move(records));
}

/// Fixed spin values for a subset of indices.
class ClampSet {
 public:
  struct Entry {
    Index index;
    int spin;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  ClampSet() = default;
  ClampSet(std::initializer_list<Entry> entries) {
    for (const auto& e : entries) add(e.index, e.spin);
  }

  void add(Index index, int spin) {
    if (spin != 1 && spin != -1) throw ClampError("clamp spin must be -1 or +1");
    for (const auto& e : entries_)
      if (e.index == index) throw ClampError("duplicate clamp index " + std::to_string(index));
    entries_.push_back({index, spin});
  }

  std::span<const Entry> entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  friend bool operator==(const ClampSet&, const ClampSet&) = default;

 private:
  std::vector<Entry> entries_;
};

/// Problem over the unclamped spins; free_indices[k] is the original index of reduced spin k.
struct ClampedProblem {
  IsingProblem problem;
  std::vector<Index> free_indices;
};

inline ClampedProblem apply_clamps(const IsingProblem& p, const ClampSet& c) {
  constexpr int kFree = 0;
  std::vector<int> value(p.n(), kFree);
  for (const auto& e : c.entries()) {
    if (e.index >= p.n()) throw ClampError("clamp index " + std::to_string(e.index) + " out of range");
    if (value[e.index] != kFree) throw ClampError("duplicate clamp index " + std::to_string(e.index));
    value[e.index] = e.spin;
  }
  constexpr Index kNone = std::numeric_limits<Index>::max();
  std::vector<Index> reduced(p.n(), kNone);
  ClampedProblem out;
  for (Index i = 0; i < p.n(); ++i) {
    if (value[i] == kFree) {
      reduced[i] = static_cast<Index>(out.free_indices.size());
      out.free_indices.push_back(i);
    }
  }
  out.problem = IsingProblem(out.free_indices.size());
  IsingProblem& q = out.problem;
  for (const auto& t : p.couplings()) {
    const bool fi = value[t.i] == kFree;
    const bool fj = value[t.j] == kFree;
    if (fi && fj)
      q.add_coupling(reduced[t.i], reduced[t.j], t.value);
    else if (fi)
      q.add_field(reduced[t.i], t.value * value[t.j]);
    else if (fj)
      q.add_field(reduced[t.j], t.value * value[t.i]);
    else
      q.add_offset(t.value * value[t.i] * value[t.j]);
  }
  const auto h = p.field();
  for (Index i = 0; i < p.n(); ++i) {
    if (value[i] == kFree)
      q.add_field(reduced[i], h[i]);
    else
      q.add_offset(h[i] * value[i]);
  }
  q.add_offset(p.offset());
  return out;
}

/// Full-length state from clamp values plus an assignment of the reduced problem's spins.
inline SpinState compose_state(std::size_t n, const ClampSet& c, const ClampedProblem& reduced, const SpinState& free) {
  if (free.size() != reduced.free_indices.size()) throw DimensionError("free state length does not match reduced problem");
  std::vector<std::int8_t> s(n, -1);
  for (const auto& e : c.entries()) s.at(e.index) = static_cast<std::int8_t>(e.spin);
  for (std::size_t k = 0; k < free.size(); ++k) s.at(reduced.free_indices[k]) = static_cast<std::int8_t>(free[k]);
  return SpinState(std::move(s));
}

/// Adds (beta_n/2) * sum_y (s_y - target_y)^2, which for spins equals
/// beta_n * |outputs| - beta_n * sum_y target_y s_y.
inline IsingProblem apply_nudge(const IsingProblem& p, std::span<const Index> outputs, const SpinState& targets,
                                double beta_n) {
  if (!std::isfinite(beta_n) || beta_n < 0.0) throw NudgeError("beta_n must be finite and >= 0");
  if (targets.size() != outputs.size()) throw NudgeError("targets length does not match outputs");
  for (std::size_t a = 0; a < outputs.size(); ++a) {
    if (outputs[a] >= p.n()) throw NudgeError("nudge index " + std::to_string(outputs[a]) + " out of range");
    for (std::size_t b = 0; b < a; ++b)
      if (outputs[a] == outputs[b]) throw NudgeError("duplicate nudge index " + std::to_string(outputs[a]));
  }
  IsingProblem out = p;
  if (beta_n == 0.0) return out;
  for (std::size_t a = 0; a < outputs.size(); ++a) out.add_field(outputs[a], -beta_n * targets[a]);
  out.add_offset(beta_n * static_cast<double>(outputs.size()));
  return out;
}

/// Solver seam: a problem and a per-call seed in, a SampleSet out.
class Sampler {
 public:
  virtual ~Sampler() = default;
  virtual SampleSet sample(const IsingProblem& p, std::uint64_t seed) const = 0;
  virtual std::string name() const = 0;
};

/// Exact solver. The seed chooses the enumeration start, which randomizes the order of
/// degenerate ground states (and therefore best()) without changing the set.
class ExhaustiveSampler final : public Sampler {
 public:
  SampleSet sample(const IsingProblem& p, std::uint64_t seed) const override {
    return exhaustive_solve(p, mix64(seed));
  }
  std::string name() const override { return "exhaustive"; }
};

class AnnealingSampler final : public Sampler {
 public:
  explicit AnnealingSampler(SamplerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  SampleSet sample(const IsingProblem& p, std::uint64_t seed) const override {
    SamplerConfig c = cfg_;
    c.seed = derive_seed(cfg_.seed, seed);
    return sa_sample(p, c);
  }
  std::string name() const override { return "simulated_annealing"; }
  const SamplerConfig& config() const noexcept { return cfg_; }

 private:
  SamplerConfig cfg_;
};

}  // namespace qdetect
