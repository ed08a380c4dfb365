#pragma once

// Quantum weight-assigning network: a bipartite input -> hidden -> output spin network
// whose ground state, with input spins clamped to a thermometer code of a sample's loss,
// yields that sample's weight. Trained by contrasting spin correlations of a free phase
// against a guided phase nudged toward target outputs.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "qdetect/errors.hpp"
#include "qdetect/qubo.hpp"
#include "qdetect/random.hpp"
#include "qdetect/samplers.hpp"

namespace qdetect {

/// Spin layout: inputs [0, n_input), hidden next, outputs last.
struct QwanTopology {
  std::size_t n_input = 4;
  std::size_t n_hidden = 2;
  std::size_t n_output = 1;

  std::size_t total() const noexcept { return n_input + n_hidden + n_output; }
  Index input_index(std::size_t k) const noexcept { return static_cast<Index>(k); }
  Index hidden_index(std::size_t k) const noexcept { return static_cast<Index>(n_input + k); }
  Index output_index(std::size_t k) const noexcept { return static_cast<Index>(n_input + n_hidden + k); }

  std::vector<Index> output_indices() const {
    std::vector<Index> out(n_output);
    for (std::size_t k = 0; k < n_output; ++k) out[k] = output_index(k);
    return out;
  }

  void validate() const {
    if (n_input < 1) throw ConfigError("Q-WAN needs at least one input spin");
    if (n_hidden < 1) throw ConfigError("Q-WAN needs at least one hidden spin");
    if (n_output < 1) throw ConfigError("Q-WAN needs at least one output spin");
  }

  friend bool operator==(const QwanTopology&, const QwanTopology&) = default;
};

struct TrainConfig {
  double learning_rate = 0.1;
  double beta_nudge = 1.0;
  std::size_t thermometer_bits = 4;
  double weight_clip = 2.0;

  void validate(const QwanTopology& topo) const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
    if (!(beta_nudge > 0.0) || !std::isfinite(beta_nudge)) throw ConfigError("beta_nudge must be positive");
    if (!(weight_clip > 0.0) || !std::isfinite(weight_clip)) throw ConfigError("weight_clip must be positive");
    if (thermometer_bits != topo.n_input) throw ConfigError("thermometer_bits must equal the Q-WAN input count");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Trainable couplings and fields. Only layer-adjacent couplings exist by construction.
struct QwanParams {
  QwanTopology topology;
  std::vector<double> j_ih;  // n_input x n_hidden, row-major
  std::vector<double> j_ho;  // n_hidden x n_output, row-major
  std::vector<double> bias;  // hidden then output

  QwanParams() = default;
  explicit QwanParams(QwanTopology topo)
      : topology(topo),
        j_ih(topo.n_input * topo.n_hidden, 0.0),
        j_ho(topo.n_hidden * topo.n_output, 0.0),
        bias(topo.n_hidden + topo.n_output, 0.0) {
    topo.validate();
  }

  /// Uniform in [-scale, scale].
  static QwanParams random(QwanTopology topo, std::uint64_t seed, double scale = 0.1) {
    QwanParams p(topo);
    Rng rng(seed);
    for (auto& v : p.j_ih) v = uniform(rng, -scale, scale);
    for (auto& v : p.j_ho) v = uniform(rng, -scale, scale);
    for (auto& v : p.bias) v = uniform(rng, -scale, scale);
    return p;
  }

  double& ih(std::size_t in, std::size_t hid) { return j_ih[in * topology.n_hidden + hid]; }
  double ih(std::size_t in, std::size_t hid) const { return j_ih[in * topology.n_hidden + hid]; }
  double& ho(std::size_t hid, std::size_t out) { return j_ho[hid * topology.n_output + out]; }
  double ho(std::size_t hid, std::size_t out) const { return j_ho[hid * topology.n_output + out]; }
  double& hidden_bias(std::size_t k) { return bias[k]; }
  double hidden_bias(std::size_t k) const { return bias[k]; }
  double& output_bias(std::size_t k) { return bias[topology.n_hidden + k]; }
  double output_bias(std::size_t k) const { return bias[topology.n_hidden + k]; }

  void validate() const {
    topology.validate();
    if (j_ih.size() != topology.n_input * topology.n_hidden || j_ho.size() != topology.n_hidden * topology.n_output ||
        bias.size() != topology.n_hidden + topology.n_output)
      throw DimensionError("Q-WAN parameter sizes do not match topology");
    for (auto* v : {&j_ih, &j_ho, &bias})
      for (double x : *v)
        if (!std::isfinite(x)) throw ProblemError("non-finite Q-WAN parameter");
  }

  /// Full-network Ising problem (no clamps).
  IsingProblem to_ising() const {
    const auto& t = topology;
    IsingProblem p(t.total());
    // Insert in canonical (i > j) sorted order so each insertion appends.
    for (std::size_t h = 0; h < t.n_hidden; ++h)
      for (std::size_t i = 0; i < t.n_input; ++i) p.add_coupling(t.hidden_index(h), t.input_index(i), ih(i, h));
    for (std::size_t o = 0; o < t.n_output; ++o)
      for (std::size_t h = 0; h < t.n_hidden; ++h) p.add_coupling(t.output_index(o), t.hidden_index(h), ho(h, o));
    for (std::size_t h = 0; h < t.n_hidden; ++h) p.add_field(t.hidden_index(h), bias[h]);
    for (std::size_t o = 0; o < t.n_output; ++o) p.add_field(t.output_index(o), bias[t.n_hidden + o]);
    return p;
  }

  friend bool operator==(const QwanParams&, const QwanParams&) = default;
};

/// Thermometer code over k input spins: spin j is +1 iff loss_norm >= (j + 0.5)/k.
inline ClampSet encode_loss(double loss_norm, std::size_t k) {
  if (!(loss_norm >= 0.0 && loss_norm <= 1.0)) throw EncodingError("normalized loss must lie in [0, 1]");
  if (k < 1) throw EncodingError("thermometer code needs at least one bit");
  ClampSet c;
  for (std::size_t j = 0; j < k; ++j) {
    const double threshold = (static_cast<double>(j) + 0.5) / static_cast<double>(k);
    c.add(static_cast<Index>(j), loss_norm >= threshold ? 1 : -1);
  }
  return c;
}

inline void check_input_clamps(const QwanTopology& topo, const ClampSet& input) {
  if (input.size() != topo.n_input) throw ClampError("input clamps must cover exactly the input spins");
  for (const auto& e : input.entries())
    if (e.index >= topo.n_input) throw ClampError("clamp on a non-input spin");
}

/// Free-phase problem over hidden + output spins (reduced indices: hidden first, then outputs).
inline ClampedProblem build_free(const QwanParams& params, const ClampSet& input) {
  check_input_clamps(params.topology, input);
  return apply_clamps(params.to_ising(), input);
}

enum class Phase { free, guided };

struct PhaseResult {
  SpinState state;  // hidden then output spins
  double energy = 0.0;
  Phase phase = Phase::free;
};

/// Free phase when `target` is empty, guided phase (nudged outputs) otherwise.
inline PhaseResult run_phase(const QwanParams& params, const ClampSet& input, const std::optional<SpinState>& target,
                             double beta_nudge, const Sampler& sampler, std::uint64_t seed) {
  const auto& topo = params.topology;
  ClampedProblem reduced = build_free(params, input);
  PhaseResult out;
  IsingProblem problem = std::move(reduced.problem);
  if (target) {
    if (target->size() != topo.n_output) throw DimensionError("target length does not match output count");
    std::vector<Index> outputs(topo.n_output);
    for (std::size_t o = 0; o < topo.n_output; ++o) outputs[o] = static_cast<Index>(topo.n_hidden + o);
    problem = apply_nudge(problem, outputs, *target, beta_nudge);
    out.phase = Phase::guided;
  }
  const SampleSet samples = sampler.sample(problem, seed);
  const SampleRecord& best = samples.best();
  out.state = best.state;
  out.energy = best.energy;
  return out;
}

/// Parameter increments with the same layout as QwanParams.
struct QwanDelta {
  std::vector<double> j_ih;
  std::vector<double> j_ho;
  std::vector<double> bias;

  QwanDelta() = default;
  explicit QwanDelta(const QwanTopology& t)
      : j_ih(t.n_input * t.n_hidden, 0.0), j_ho(t.n_hidden * t.n_output, 0.0), bias(t.n_hidden + t.n_output, 0.0) {}

  QwanDelta& operator+=(const QwanDelta& o) {
    for (std::size_t k = 0; k < j_ih.size(); ++k) j_ih[k] += o.j_ih[k];
    for (std::size_t k = 0; k < j_ho.size(); ++k) j_ho[k] += o.j_ho[k];
    for (std::size_t k = 0; k < bias.size(); ++k) bias[k] += o.bias[k];
    return *this;
  }
};

/// dJ_ij = -lr [(s_i s_j)^guided - (s_i s_j)^free], dh_i = -lr [s_i^guided - s_i^free].
/// Input spins take the shared clamp values in both phases.
inline QwanDelta ep_delta(const QwanTopology& topo, const ClampSet& input, const PhaseResult& free,
                          const PhaseResult& guided, double lr) {
  check_input_clamps(topo, input);
  const std::size_t n_free = topo.n_hidden + topo.n_output;
  if (free.state.size() != n_free || guided.state.size() != n_free)
    throw DimensionError("phase state length does not match hidden + output count");
  std::vector<int> in(topo.n_input);
  for (const auto& e : input.entries()) in[e.index] = e.spin;
  const auto& f = free.state;
  const auto& g = guided.state;

  QwanDelta d(topo);
  for (std::size_t i = 0; i < topo.n_input; ++i)
    for (std::size_t h = 0; h < topo.n_hidden; ++h)
      d.j_ih[i * topo.n_hidden + h] = -lr * in[i] * (g[h] - f[h]);
  for (std::size_t h = 0; h < topo.n_hidden; ++h)
    for (std::size_t o = 0; o < topo.n_output; ++o) {
      const std::size_t out = topo.n_hidden + o;
      d.j_ho[h * topo.n_output + o] = -lr * (g[h] * g[out] - f[h] * f[out]);
    }
  for (std::size_t k = 0; k < n_free; ++k) d.bias[k] = -lr * (g[k] - f[k]);
  return d;
}

/// params + delta, every entry clipped to [-clip, clip].
inline QwanParams apply_delta(const QwanParams& params, const QwanDelta& d, double clip) {
  QwanParams out = params;
  auto step = [clip](std::vector<double>& p, const std::vector<double>& dp) {
    if (p.size() != dp.size()) throw DimensionError("delta does not match Q-WAN parameters");
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = std::clamp(p[k] + dp[k], -clip, clip);
  };
  step(out.j_ih, d.j_ih);
  step(out.j_ho, d.j_ho);
  step(out.bias, d.bias);
  return out;
}

inline QwanParams ep_update(const QwanParams& params, const ClampSet& input, const PhaseResult& free,
                            const PhaseResult& guided, double lr, double weight_clip) {
  return apply_delta(params, ep_delta(params.topology, input, free, guided, lr), weight_clip);
}

/// rho(s) = (s + 1)/2.
constexpr double activation(int spin) noexcept { return 0.5 * (spin + 1); }

/// Mean output activation of a phase result.
inline double output_activation(const QwanTopology& topo, const PhaseResult& r) {
  double sum = 0.0;
  for (std::size_t o = 0; o < topo.n_output; ++o) sum += activation(r.state[topo.n_hidden + o]);
  return sum / static_cast<double>(topo.n_output);
}

/// Clean-membership weight in [0, 1]: mean output activation over `reads` free phases.
inline double infer_weight(const QwanParams& params, double loss_norm, const Sampler& sampler, std::size_t reads,
                           std::uint64_t seed) {
  if (reads < 1) throw ConfigError("infer_weight needs at least one read");
  const ClampSet input = encode_loss(loss_norm, params.topology.n_input);
  double sum = 0.0;
  for (std::size_t r = 0; r < reads; ++r) {
    const PhaseResult free = run_phase(params, input, std::nullopt, 0.0, sampler, derive_seed(seed, r));
    sum += output_activation(params.topology, free);
  }
  return sum / static_cast<double>(reads);
}

/// Learning curve of the threshold task: output +1 iff loss_norm > threshold.
struct ThresholdTaskReport {
  QwanParams params;
  std::vector<double> step_mse;  // (rho(free output) - rho(target))^2 of the training sample
  std::vector<double> grid_mse;  // mean squared error on the evaluation grid after each step
  double grid_accuracy = 0.0;    // output-sign accuracy on the grid after training
};

/// Evenly spaced loss values 0, 1/(points-1), ..., 1.
inline std::vector<double> loss_grid(std::size_t points) {
  std::vector<double> g(points);
  for (std::size_t k = 0; k < points; ++k)
    g[k] = points == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(points - 1);
  return g;
}

/// Deterministic free-phase output sign of `params` at each grid value (seeded tie-breaks).
inline std::vector<int> output_signs(const QwanParams& params, std::span<const double> grid, const Sampler& sampler,
                                     std::uint64_t seed) {
  std::vector<int> out(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const PhaseResult r =
        run_phase(params, encode_loss(grid[k], params.topology.n_input), std::nullopt, 0.0, sampler, derive_seed(seed, k));
    out[k] = r.state[params.topology.n_hidden];
  }
  return out;
}

inline ThresholdTaskReport train_threshold_task(const QwanTopology& topo, const TrainConfig& cfg, const Sampler& sampler,
                                                std::size_t steps, std::uint64_t seed, double threshold = 0.5,
                                                std::size_t grid_points = 21) {
  cfg.validate(topo);
  ThresholdTaskReport rep;
  rep.params = QwanParams::random(topo, derive_seed(seed, 1));
  Rng rng(derive_seed(seed, 2));
  const auto grid = loss_grid(grid_points);
  auto grid_target = [threshold](double x) { return x > threshold ? 1 : -1; };
  // Returns {sign accuracy of the first output, mean squared activation error over all outputs}.
  auto grid_eval = [&](const QwanParams& p) {
    std::size_t hits = 0;
    double sq = 0.0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const int t = grid_target(grid[k]);
      const PhaseResult r = run_phase(p, encode_loss(grid[k], topo.n_input), std::nullopt, 0.0, sampler,
                                      derive_seed(seed, 3, k));
      hits += r.state[topo.n_hidden] == t;
      for (std::size_t o = 0; o < topo.n_output; ++o) sq += std::pow(activation(r.state[topo.n_hidden + o]) - activation(t), 2);
    }
    const auto n = static_cast<double>(grid.size());
    return std::pair{static_cast<double>(hits) / n, sq / (n * static_cast<double>(topo.n_output))};
  };
  for (std::size_t step = 0; step < steps; ++step) {
    const double loss = uniform01(rng);
    const int target = grid_target(loss);
    const ClampSet input = encode_loss(loss, topo.n_input);
    std::vector<std::int8_t> tv(topo.n_output, static_cast<std::int8_t>(target));
    const SpinState target_state(std::move(tv));
    const PhaseResult free = run_phase(rep.params, input, std::nullopt, 0.0, sampler, derive_seed(seed, 4, step));
    const PhaseResult guided = run_phase(rep.params, input, target_state, cfg.beta_nudge, sampler, derive_seed(seed, 5, step));
    const double err = output_activation(topo, free) - activation(target);
    rep.step_mse.push_back(err * err);
    rep.params = ep_update(rep.params, input, free, guided, cfg.learning_rate, cfg.weight_clip);
    rep.grid_mse.push_back(grid_eval(rep.params).second);
  }
  rep.grid_accuracy = grid_eval(rep.params).first;
  return rep;
}

}  // namespace qdetect
