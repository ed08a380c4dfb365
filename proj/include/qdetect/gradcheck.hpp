#pragma once

// Central finite-difference check of weighted_gradient, per coordinate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "qdetect/domain_model.hpp"
#include "qdetect/random.hpp"

namespace qdetect {

struct GradCheckRow {
  std::size_t coordinate = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;  // |a - n| / max(|a|, |n|, 1e-6)
};

inline double relative_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

inline std::vector<GradCheckRow> gradient_check(const ClassifierParams& p, const LabeledBatch& b,
                                                std::span<const double> weights, double h = 1e-5) {
  const auto g = weighted_gradient(p, b, weights);
  const auto flat = p.flatten();
  std::vector<GradCheckRow> rows(flat.size());
  ClassifierParams probe = p;
  auto shifted = flat;
  for (std::size_t k = 0; k < flat.size(); ++k) {
    shifted[k] = flat[k] + h;
    probe.assign_flat(shifted);
    const double up = weighted_loss(probe, b, weights);
    shifted[k] = flat[k] - h;
    probe.assign_flat(shifted);
    const double down = weighted_loss(probe, b, weights);
    shifted[k] = flat[k];
    const double num = (up - down) / (2.0 * h);
    rows[k] = GradCheckRow{k, g[k], num, relative_error(g[k], num)};
  }
  return rows;
}

/// Small random instance: features in [0,1], random labels and weights, random parameters.
struct GradCheckInstance {
  ClassifierParams params;
  LabeledBatch batch;
  std::vector<double> weights;
};

inline GradCheckInstance random_gradcheck_instance(std::uint64_t seed, std::size_t hidden_width, std::size_t n = 8,
                                                   std::size_t d = 5, std::size_t classes = 3) {
  Rng rng(seed);
  GradCheckInstance inst;
  inst.params = hidden_width ? ClassifierParams::with_hidden(classes, d, hidden_width, derive_seed(seed, 1))
                             : ClassifierParams::softmax(classes, d);
  auto flat = inst.params.flatten();
  for (auto& x : flat) x += uniform(rng, -0.5, 0.5);
  inst.params.assign_flat(flat);
  inst.batch.features = Matrix<double>(n, d);
  for (auto& x : inst.batch.features.data) x = uniform01(rng);
  inst.batch.labels.resize(n);
  for (auto& l : inst.batch.labels) l = static_cast<Label>(uniform_index(rng, classes));
  inst.weights.resize(n);
  for (auto& w : inst.weights) w = uniform01(rng);
  return inst;
}

}  // namespace qdetect
