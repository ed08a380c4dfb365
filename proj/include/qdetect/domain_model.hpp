#pragma once

// Classical classifier whose per-sample cross-entropy losses feed the weight-assigning
// network: softmax regression, optionally with one rectified hidden layer.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <vector>

#include "qdetect/errors.hpp"
#include "qdetect/matrix.hpp"
#include "qdetect/random.hpp"

namespace qdetect {

using Label = std::uint32_t;

struct LabeledBatch {
  Matrix<double> features;  // batch x features
  std::vector<Label> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

struct HiddenLayer {
  Matrix<double> v;       // hidden x features
  std::vector<double> c;  // hidden

  friend bool operator==(const HiddenLayer&, const HiddenLayer&) = default;
};

/// Without a hidden layer w is classes x features; with one it is classes x hidden width.
struct ClassifierParams {
  Matrix<double> w;
  std::vector<double> b;
  std::optional<HiddenLayer> hidden;
  std::size_t n_features = 0;

  static ClassifierParams softmax(std::size_t classes, std::size_t features) {
    ClassifierParams p;
    p.w = Matrix<double>(classes, features, 0.0);
    p.b.assign(classes, 0.0);
    p.n_features = features;
    return p;
  }

  /// Hidden weights uniform in +-sqrt(6/(fan_in + fan_out)), output weights likewise, biases zero.
  static ClassifierParams with_hidden(std::size_t classes, std::size_t features, std::size_t width, std::uint64_t seed) {
    ClassifierParams p;
    Rng rng(seed);
    HiddenLayer hl{Matrix<double>(width, features), std::vector<double>(width, 0.0)};
    const double a1 = std::sqrt(6.0 / static_cast<double>(features + width));
    for (auto& x : hl.v.data) x = uniform(rng, -a1, a1);
    p.w = Matrix<double>(classes, width);
    const double a2 = std::sqrt(6.0 / static_cast<double>(width + classes));
    for (auto& x : p.w.data) x = uniform(rng, -a2, a2);
    p.b.assign(classes, 0.0);
    p.hidden = std::move(hl);
    p.n_features = features;
    return p;
  }

  std::size_t classes() const noexcept { return b.size(); }

  void validate() const {
    const std::size_t width = hidden ? hidden->v.rows : n_features;
    if (w.rows != b.size() || w.cols != width || w.data.size() != w.rows * w.cols)
      throw DimensionError("classifier output layer dimensions are inconsistent");
    if (hidden && (hidden->v.cols != n_features || hidden->c.size() != hidden->v.rows))
      throw DimensionError("classifier hidden layer dimensions are inconsistent");
    for (double x : flatten())
      if (!std::isfinite(x)) throw ProblemError("non-finite classifier parameter");
  }

  /// w, b, then (v, c) if present.
  std::vector<double> flatten() const {
    std::vector<double> out(w.data);
    out.insert(out.end(), b.begin(), b.end());
    if (hidden) {
      out.insert(out.end(), hidden->v.data.begin(), hidden->v.data.end());
      out.insert(out.end(), hidden->c.begin(), hidden->c.end());
    }
    return out;
  }

  void assign_flat(std::span<const double> flat) {
    std::size_t k = 0;
    auto take = [&](std::vector<double>& dst) {
      if (k + dst.size() > flat.size()) throw DimensionError("flat parameter vector too short");
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(k), dst.size(), dst.begin());
      k += dst.size();
    };
    take(w.data);
    take(b);
    if (hidden) {
      take(hidden->v.data);
      take(hidden->c);
    }
    if (k != flat.size()) throw DimensionError("flat parameter vector too long");
  }

  friend bool operator==(const ClassifierParams&, const ClassifierParams&) = default;
};

/// Deep copy used for the virtual model.
inline ClassifierParams clone_virtual(const ClassifierParams& p) { return p; }

/// FNV-1a over the bit patterns of the flattened parameters.
inline std::uint64_t params_hash(const ClassifierParams& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double x : p.flatten()) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof bits);
    for (int k = 0; k < 8; ++k) {
      h ^= (bits >> (8 * k)) & 0xFFU;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

namespace detail {

inline void check_batch(const ClassifierParams& p, const LabeledBatch& b) {
  if (b.features.rows != b.labels.size()) throw DimensionError("batch feature rows do not match label count");
  if (b.features.cols != p.n_features) throw DimensionError("batch feature width does not match classifier");
  for (Label y : b.labels)
    if (y >= p.classes()) throw DimensionError("label outside classifier class range");
}

/// Forward pass for one sample: hidden pre-activations (if any), activations fed to the
/// output layer, and logits.
struct Forward {
  std::vector<double> pre;
  std::vector<double> act;
  std::vector<double> logits;
};

inline void forward(const ClassifierParams& p, std::span<const double> x, Forward& f) {
  if (p.hidden) {
    const auto& hl = *p.hidden;
    f.pre.assign(hl.v.rows, 0.0);
    f.act.assign(hl.v.rows, 0.0);
    for (std::size_t h = 0; h < hl.v.rows; ++h) {
      double z = hl.c[h];
      const auto row = hl.v.row(h);
      for (std::size_t j = 0; j < x.size(); ++j) z += row[j] * x[j];
      f.pre[h] = z;
      f.act[h] = z > 0.0 ? z : 0.0;
    }
  } else {
    f.act.assign(x.begin(), x.end());
  }
  f.logits.assign(p.classes(), 0.0);
  for (std::size_t c = 0; c < p.classes(); ++c) {
    double z = p.b[c];
    const auto row = p.w.row(c);
    for (std::size_t j = 0; j < f.act.size(); ++j) z += row[j] * f.act[j];
    f.logits[c] = z;
  }
}

/// In-place softmax; returns the log-sum-exp of the input.
inline double softmax_inplace(std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (auto& v : z) {
    v = std::exp(v - m);
    s += v;
  }
  for (auto& v : z) v /= s;
  return m + std::log(s);
}

}  // namespace detail

/// -log softmax(logits)[label] per sample, stabilized by max-logit subtraction.
inline std::vector<double> per_sample_loss(const ClassifierParams& p, const LabeledBatch& b) {
  detail::check_batch(p, b);
  std::vector<double> out(b.size());
  detail::Forward f;
  for (std::size_t i = 0; i < b.size(); ++i) {
    detail::forward(p, b.features.row(i), f);
    const double zy = f.logits[b.labels[i]];
    const double lse = detail::softmax_inplace(f.logits);
    out[i] = std::max(0.0, lse - zy);
  }
  return out;
}

namespace detail {

/// Sum over samples of (w_i times) the per-sample cross-entropy gradient, in index order, laid out like flatten().
/// With no weights each sample contributes its plain gradient.
inline std::vector<double> gradient_sum(const ClassifierParams& p, const LabeledBatch& b,
                                        const std::span<const double>* weights) {
  const std::size_t C = p.classes();
  const std::size_t A = p.w.cols;
  std::vector<double> gw(C * A, 0.0), gb(C, 0.0), gv, gc;
  if (p.hidden) {
    gv.assign(p.hidden->v.data.size(), 0.0);
    gc.assign(p.hidden->c.size(), 0.0);
  }
  Forward f;
  std::vector<double> dlogit(C), dact;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (weights && (*weights)[i] == 0.0) continue;
    const auto x = b.features.row(i);
    forward(p, x, f);
    softmax_inplace(f.logits);
    for (std::size_t c = 0; c < C; ++c) {
      const double r = f.logits[c] - (c == b.labels[i] ? 1.0 : 0.0);
      dlogit[c] = weights ? (*weights)[i] * r : r;
    }
    for (std::size_t c = 0; c < C; ++c) {
      gb[c] += dlogit[c];
      for (std::size_t j = 0; j < A; ++j) gw[c * A + j] += dlogit[c] * f.act[j];
    }
    if (p.hidden) {
      const auto& hl = *p.hidden;
      dact.assign(A, 0.0);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t j = 0; j < A; ++j) dact[j] += p.w(c, j) * dlogit[c];
      for (std::size_t h = 0; h < A; ++h) {
        if (f.pre[h] <= 0.0) continue;
        gc[h] += dact[h];
        for (std::size_t j = 0; j < hl.v.cols; ++j) gv[h * hl.v.cols + j] += dact[h] * x[j];
      }
    }
  }
  std::vector<double> g(std::move(gw));
  g.insert(g.end(), gb.begin(), gb.end());
  g.insert(g.end(), gv.begin(), gv.end());
  g.insert(g.end(), gc.begin(), gc.end());
  return g;
}

inline ClassifierParams descend(const ClassifierParams& p, const std::vector<double>& g, double lr) {
  auto flat = p.flatten();
  for (std::size_t k = 0; k < flat.size(); ++k) flat[k] -= lr * g[k];
  ClassifierParams out = p;
  out.assign_flat(flat);
  return out;
}

}  // namespace detail

/// Gradient of (sum_i w_i L_i) / max(sum_i w_i, 1e-8), laid out like flatten().
inline std::vector<double> weighted_gradient(const ClassifierParams& p, const LabeledBatch& b,
                                             std::span<const double> weights) {
  detail::check_batch(p, b);
  if (weights.size() != b.size()) throw DimensionError("weights length does not match batch size");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw DimensionError("sample weights must be finite and non-negative");
    total += w;
  }
  auto g = detail::gradient_sum(p, b, &weights);
  const double scale = 1.0 / std::max(total, 1e-8);
  for (auto& v : g) v *= scale;
  return g;
}

/// Gradient of the plain mean loss.
inline std::vector<double> mean_gradient(const ClassifierParams& p, const LabeledBatch& b) {
  detail::check_batch(p, b);
  auto g = detail::gradient_sum(p, b, nullptr);
  const double scale = 1.0 / static_cast<double>(b.size());
  for (auto& v : g) v *= scale;
  return g;
}

/// Objective whose gradient weighted_gradient returns.
inline double weighted_loss(const ClassifierParams& p, const LabeledBatch& b, std::span<const double> weights) {
  const auto losses = per_sample_loss(p, b);
  if (weights.size() != losses.size()) throw DimensionError("weights length does not match batch size");
  double num = 0.0, total = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    num += weights[i] * losses[i];
    total += weights[i];
  }
  return num / std::max(total, 1e-8);
}

/// One plain gradient-descent step on the normalized weighted loss.
inline ClassifierParams weighted_step(const ClassifierParams& p, const LabeledBatch& b, std::span<const double> weights,
                                      double lr) {
  return detail::descend(p, weighted_gradient(p, b, weights), lr);
}

/// Mean-loss step.
inline ClassifierParams unweighted_step(const ClassifierParams& p, const LabeledBatch& b, double lr) {
  if (b.size() == 0) return p;
  return detail::descend(p, mean_gradient(p, b), lr);
}

inline std::vector<Label> predict(const ClassifierParams& p, const LabeledBatch& b) {
  detail::check_batch(p, b);
  std::vector<Label> out(b.size());
  detail::Forward f;
  for (std::size_t i = 0; i < b.size(); ++i) {
    detail::forward(p, b.features.row(i), f);
    // max_element returns the first maximum, i.e. ties go to the lowest class index.
    out[i] = static_cast<Label>(std::max_element(f.logits.begin(), f.logits.end()) - f.logits.begin());
  }
  return out;
}

inline double accuracy(const ClassifierParams& p, const LabeledBatch& b) {
  if (b.size() == 0) throw EvaluationError("accuracy of an empty set");
  const auto pred = predict(p, b);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < b.size(); ++i) hits += pred[i] == b.labels[i];
  return static_cast<double>(hits) / static_cast<double>(b.size());
}

inline double per_class_accuracy(const ClassifierParams& p, const LabeledBatch& b, Label cls) {
  const auto pred = predict(p, b);
  std::size_t hits = 0, count = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b.labels[i] != cls) continue;
    ++count;
    hits += pred[i] == cls;
  }
  if (count == 0) throw EvaluationError("class " + std::to_string(cls) + " absent from evaluation set");
  return static_cast<double>(hits) / static_cast<double>(count);
}

/// Full-batch gradient descent settings for training a fresh classifier.
struct FitConfig {
  std::size_t steps = 1000;
  double lr = 0.5;
  std::size_t hidden_width = 0;  // 0 selects plain softmax regression
  std::uint64_t seed = 0;

  friend bool operator==(const FitConfig&, const FitConfig&) = default;
};

inline ClassifierParams init_classifier(std::size_t classes, std::size_t features, const FitConfig& cfg) {
  return cfg.hidden_width == 0 ? ClassifierParams::softmax(classes, features)
                               : ClassifierParams::with_hidden(classes, features, cfg.hidden_width, cfg.seed);
}

inline ClassifierParams fit(ClassifierParams p, const LabeledBatch& b, const FitConfig& cfg) {
  for (std::size_t s = 0; s < cfg.steps; ++s) p = unweighted_step(p, b, cfg.lr);
  return p;
}

}  // namespace qdetect
