#pragma once

// JSON documents: problem dumps, Q-WAN and classifier checkpoints.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "qdetect/domain_model.hpp"
#include "qdetect/errors.hpp"
#include "qdetect/qubo.hpp"
#include "qdetect/qwan.hpp"

namespace qdetect {

using Json = nlohmann::ordered_json;

namespace detail {

template <typename Problem, typename AddQuad, typename AddLin>
Problem problem_from_json(const Json& j, AddQuad add_quad, AddLin add_lin) {
  try {
    Problem p(j.at("n").get<std::size_t>());
    for (const auto& t : j.at("quadratic")) {
      if (!t.is_array() || t.size() != 3) throw ProblemError("quadratic entries must be [i, j, v]");
      add_quad(p, t[0].get<Index>(), t[1].get<Index>(), t[2].get<double>());
    }
    const auto& lin = j.at("linear");
    if (lin.size() != p.n()) throw DimensionError("linear vector length does not match n");
    for (std::size_t i = 0; i < lin.size(); ++i) add_lin(p, static_cast<Index>(i), lin[i].get<double>());
    p.add_offset(j.value("offset", 0.0));
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ProblemError(std::string("malformed problem JSON: ") + e.what());
  }
}

inline Json matrix_json(const Matrix<double>& m) {
  return Json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

inline Matrix<double> matrix_from_json(const Json& j) {
  Matrix<double> m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  m.data = j.at("data").get<std::vector<double>>();
  if (m.data.size() != m.rows * m.cols) throw DimensionError("matrix data length does not match shape");
  return m;
}

}  // namespace detail

inline Json to_json(const QuboProblem& p) {
  Json quad = Json::array();
  for (const auto& t : p.quadratic()) quad.push_back(Json::array({t.i, t.j, t.value}));
  return Json{{"n", p.n()}, {"quadratic", quad}, {"linear", std::vector<double>(p.linear().begin(), p.linear().end())},
              {"offset", p.offset()}};
}

inline Json to_json(const IsingProblem& p) {
  Json quad = Json::array();
  for (const auto& t : p.couplings()) quad.push_back(Json::array({t.i, t.j, t.value}));
  return Json{{"n", p.n()}, {"quadratic", quad}, {"linear", std::vector<double>(p.field().begin(), p.field().end())},
              {"offset", p.offset()}};
}

inline QuboProblem qubo_from_json(const Json& j) {
  return detail::problem_from_json<QuboProblem>(
      j, [](QuboProblem& p, Index a, Index b, double v) { p.add_quadratic(a, b, v); },
      [](QuboProblem& p, Index a, double v) { p.add_linear(a, v); });
}

inline IsingProblem ising_from_json(const Json& j) {
  return detail::problem_from_json<IsingProblem>(
      j, [](IsingProblem& p, Index a, Index b, double v) { p.add_coupling(a, b, v); },
      [](IsingProblem& p, Index a, double v) { p.add_field(a, v); });
}

/// Topology, coupling triples over full-network spin indices, biases, training config, seed.
inline Json qwan_checkpoint(const QwanParams& p, const TrainConfig& cfg, std::uint64_t seed) {
  const auto& t = p.topology;
  Json couplings = Json::array();
  const IsingProblem full = p.to_ising();
  for (const auto& c : full.couplings()) couplings.push_back(Json::array({c.i, c.j, c.value}));
  return Json{{"format", "qwan-checkpoint-v1"},
              {"topology", {{"n_input", t.n_input}, {"n_hidden", t.n_hidden}, {"n_output", t.n_output}}},
              {"couplings", couplings},
              {"biases", p.bias},
              {"train_config",
               {{"learning_rate", cfg.learning_rate},
                {"beta_nudge", cfg.beta_nudge},
                {"thermometer_bits", cfg.thermometer_bits},
                {"weight_clip", cfg.weight_clip}}},
              {"seed", seed}};
}

inline QwanParams qwan_from_checkpoint(const Json& j) {
  try {
    const auto& tj = j.at("topology");
    QwanParams p(QwanTopology{tj.at("n_input").get<std::size_t>(), tj.at("n_hidden").get<std::size_t>(),
                              tj.at("n_output").get<std::size_t>()});
    const auto& t = p.topology;
    for (const auto& c : j.at("couplings")) {
      const auto a = c.at(0).get<std::size_t>();
      const auto b = c.at(1).get<std::size_t>();
      const double v = c.at(2).get<double>();
      const std::size_t hid_lo = t.n_input, out_lo = t.n_input + t.n_hidden;
      if (a >= hid_lo && a < out_lo && b < hid_lo)
        p.ih(b, a - hid_lo) = v;
      else if (a >= out_lo && a < t.total() && b >= hid_lo && b < out_lo)
        p.ho(b - hid_lo, a - out_lo) = v;
      else
        throw ProblemError("checkpoint coupling between non-adjacent layers");
    }
    p.bias = j.at("biases").get<std::vector<double>>();
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ProblemError(std::string("malformed Q-WAN checkpoint: ") + e.what());
  }
}

inline Json classifier_checkpoint(const ClassifierParams& p) {
  Json j{{"format", "classifier-checkpoint-v1"},
         {"n_features", p.n_features},
         {"w", detail::matrix_json(p.w)},
         {"b", p.b}};
  if (p.hidden) j["hidden"] = Json{{"v", detail::matrix_json(p.hidden->v)}, {"c", p.hidden->c}};
  return j;
}

inline ClassifierParams classifier_from_checkpoint(const Json& j) {
  try {
    ClassifierParams p;
    p.n_features = j.at("n_features").get<std::size_t>();
    p.w = detail::matrix_from_json(j.at("w"));
    p.b = j.at("b").get<std::vector<double>>();
    if (j.contains("hidden"))
      p.hidden = HiddenLayer{detail::matrix_from_json(j["hidden"].at("v")), j["hidden"].at("c").get<std::vector<double>>()};
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ProblemError(std::string("malformed classifier checkpoint: ") + e.what());
  }
}

}  // namespace qdetect
