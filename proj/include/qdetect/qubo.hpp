#pragma once

// QUBO and Ising energy functions, spin/bit states and the exact mapping between them.
//
// Both problem kinds store their quadratic part sparsely as canonically ordered
// (i, j, value) triples: i <= j for QUBO, i > j for Ising. Duplicate positions are
// merged on insertion.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "qdetect/errors.hpp"

namespace qdetect {

using Index = std::uint32_t;

struct QuadTerm {
  Index i;
  Index j;
  double value;

  friend bool operator==(const QuadTerm&, const QuadTerm&) = default;
};

namespace detail {

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw ProblemError(std::string("non-finite ") + what);
}

inline void insert_term(std::vector<QuadTerm>& terms, Index i, Index j, double v) {
  auto it = std::lower_bound(terms.begin(), terms.end(), std::pair{i, j},
                             [](const QuadTerm& t, const std::pair<Index, Index>& key) {
                               return std::pair{t.i, t.j} < key;
                             });
  if (it != terms.end() && it->i == i && it->j == j) {
    it->value += v;
    require_finite(it->value, "quadratic coefficient");
  } else {
    terms.insert(it, QuadTerm{i, j, v});
  }
}

inline double term_at(const std::vector<QuadTerm>& terms, Index i, Index j) {
  auto it = std::lower_bound(terms.begin(), terms.end(), std::pair{i, j},
                             [](const QuadTerm& t, const std::pair<Index, Index>& key) {
                               return std::pair{t.i, t.j} < key;
                             });
  return (it != terms.end() && it->i == i && it->j == j) ? it->value : 0.0;
}

}  // namespace detail

/// Spin assignment over {-1, +1}.
class SpinState {
 public:
  SpinState() = default;
  explicit SpinState(std::size_t n, std::int8_t fill = -1) : spins_(n, fill) { validate(); }
  explicit SpinState(std::vector<std::int8_t> spins) : spins_(std::move(spins)) { validate(); }
  SpinState(std::initializer_list<int> spins) {
    spins_.reserve(spins.size());
    for (int s : spins) spins_.push_back(static_cast<std::int8_t>(s));
    validate();
  }

  std::size_t size() const noexcept { return spins_.size(); }
  int operator[](std::size_t i) const { return spins_[i]; }
  void set(std::size_t i, int s) {
    if (s != 1 && s != -1) throw ProblemError("spin value must be -1 or +1");
    spins_[i] = static_cast<std::int8_t>(s);
  }
  void flip(std::size_t i) { spins_[i] = static_cast<std::int8_t>(-spins_[i]); }
  std::span<const std::int8_t> values() const noexcept { return spins_; }

  friend bool operator==(const SpinState&, const SpinState&) = default;
  friend auto operator<=>(const SpinState&, const SpinState&) = default;

 private:
  void validate() const {
    for (auto s : spins_)
      if (s != 1 && s != -1) throw ProblemError("spin value must be -1 or +1");
  }
  std::vector<std::int8_t> spins_;
};

/// Binary assignment over {0, 1}.
class BitState {
 public:
  BitState() = default;
  explicit BitState(std::size_t n, std::uint8_t fill = 0) : bits_(n, fill) { validate(); }
  explicit BitState(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) { validate(); }
  BitState(std::initializer_list<int> bits) {
    bits_.reserve(bits.size());
    for (int b : bits) bits_.push_back(static_cast<std::uint8_t>(b));
    validate();
  }

  std::size_t size() const noexcept { return bits_.size(); }
  int operator[](std::size_t i) const { return bits_[i]; }
  std::span<const std::uint8_t> values() const noexcept { return bits_; }

  friend bool operator==(const BitState&, const BitState&) = default;

 private:
  void validate() const {
    for (auto b : bits_)
      if (b > 1) throw ProblemError("bit value must be 0 or 1");
  }
  std::vector<std::uint8_t> bits_;
};

inline BitState spin_to_bit(const SpinState& s) {
  std::vector<std::uint8_t> bits(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) bits[i] = static_cast<std::uint8_t>((1 + s[i]) / 2);
  return BitState(std::move(bits));
}

inline SpinState bit_to_spin(const BitState& x) {
  std::vector<std::int8_t> spins(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) spins[i] = static_cast<std::int8_t>(2 * x[i] - 1);
  return SpinState(std::move(spins));
}

/// State number `code` (bit i of the code is variable i) as spins.
inline SpinState spins_from_code(std::uint64_t code, std::size_t n) {
  std::vector<std::int8_t> spins(n);
  for (std::size_t i = 0; i < n; ++i) spins[i] = ((code >> i) & 1U) ? 1 : -1;
  return SpinState(std::move(spins));
}

/// Minimize x^T Q x + h.x + offset over binary x; Q symmetric, stored upper-triangular.
class QuboProblem {
 public:
  explicit QuboProblem(std::size_t n = 0) : linear_(n, 0.0) {}

  std::size_t n() const noexcept { return linear_.size(); }

  /// Adds v to Q[i][j] (and by symmetry Q[j][i]); position is canonicalized to i <= j.
  void add_quadratic(Index i, Index j, double v) {
    detail::require_finite(v, "quadratic coefficient");
    if (i > j) std::swap(i, j);
    check_index(j);
    detail::insert_term(quadratic_, i, j, v);
  }
  void add_linear(Index i, double v) {
    detail::require_finite(v, "linear coefficient");
    check_index(i);
    linear_[i] += v;
  }
  void add_offset(double v) {
    detail::require_finite(v, "offset");
    offset_ += v;
  }

  double quadratic_at(Index i, Index j) const {
    if (i > j) std::swap(i, j);
    return detail::term_at(quadratic_, i, j);
  }
  std::span<const QuadTerm> quadratic() const noexcept { return quadratic_; }
  std::span<const double> linear() const noexcept { return linear_; }
  double offset() const noexcept { return offset_; }

  friend bool operator==(const QuboProblem&, const QuboProblem&) = default;

  QuboProblem& operator+=(const QuboProblem& o) {
    if (o.n() != n()) throw DimensionError("adding QUBO problems of different sizes");
    for (const auto& t : o.quadratic_) add_quadratic(t.i, t.j, t.value);
    for (std::size_t i = 0; i < n(); ++i) linear_[i] += o.linear_[i];
    offset_ += o.offset_;
    return *this;
  }
  friend QuboProblem operator+(QuboProblem a, const QuboProblem& b) { return a += b; }

 private:
  void check_index(Index i) const {
    if (i >= n()) throw DimensionError("QUBO variable index out of range");
  }

  std::vector<QuadTerm> quadratic_;
  std::vector<double> linear_;
  double offset_ = 0.0;
};

/// E = sum_{i>j} J_ij s_i s_j + sum_i h_i s_i + offset.
class IsingProblem {
 public:
  explicit IsingProblem(std::size_t n = 0) : field_(n, 0.0) {}

  std::size_t n() const noexcept { return field_.size(); }

  /// Adds v to J between spins i and j; position is canonicalized to i > j.
  void add_coupling(Index i, Index j, double v) {
    detail::require_finite(v, "coupling");
    if (i == j) throw ProblemError("Ising self-coupling is not allowed");
    if (i < j) std::swap(i, j);
    check_index(i);
    detail::insert_term(couplings_, i, j, v);
  }
  void add_field(Index i, double v) {
    detail::require_finite(v, "field");
    check_index(i);
    field_[i] += v;
  }
  void add_offset(double v) {
    detail::require_finite(v, "offset");
    offset_ += v;
  }

  double coupling_at(Index i, Index j) const {
    if (i < j) std::swap(i, j);
    return detail::term_at(couplings_, i, j);
  }
  std::span<const QuadTerm> couplings() const noexcept { return couplings_; }
  std::span<const double> field() const noexcept { return field_; }
  double offset() const noexcept { return offset_; }

  friend bool operator==(const IsingProblem&, const IsingProblem&) = default;

  IsingProblem& operator+=(const IsingProblem& o) {
    if (o.n() != n()) throw DimensionError("adding Ising problems of different sizes");
    for (const auto& t : o.couplings_) add_coupling(t.i, t.j, t.value);
    for (std::size_t i = 0; i < n(); ++i) field_[i] += o.field_[i];
    offset_ += o.offset_;
    return *this;
  }
  friend IsingProblem operator+(IsingProblem a, const IsingProblem& b) { return a += b; }

 private:
  void check_index(Index i) const {
    if (i >= n()) throw DimensionError("Ising spin index out of range");
  }

  std::vector<QuadTerm> couplings_;
  std::vector<double> field_;
  double offset_ = 0.0;
};

inline double energy_qubo(const QuboProblem& p, const BitState& x) {
  if (x.size() != p.n()) throw DimensionError("bit state length does not match QUBO size");
  double e = 0.0;
  for (const auto& t : p.quadratic()) {
    if (t.i == t.j)
      e += t.value * x[t.i];
    else
      e += 2.0 * t.value * x[t.i] * x[t.j];
  }
  const auto h = p.linear();
  for (std::size_t i = 0; i < p.n(); ++i) e += h[i] * x[i];
  return e + p.offset();
}

inline double energy_ising(const IsingProblem& p, const SpinState& s) {
  if (s.size() != p.n()) throw DimensionError("spin state length does not match Ising size");
  double e = 0.0;
  for (const auto& t : p.couplings()) e += t.value * s[t.i] * s[t.j];
  const auto h = p.field();
  for (std::size_t i = 0; i < p.n(); ++i) e += h[i] * s[i];
  return e + p.offset();
}

/// Substitutes x = (1 + s)/2. Energies agree on every pair of corresponding states.
inline IsingProblem qubo_to_ising(const QuboProblem& p) {
  IsingProblem out(p.n());
  for (const auto& t : p.quadratic()) {
    if (t.i == t.j) {
      // q x = q (1 + s)/2
      out.add_field(t.i, 0.5 * t.value);
      out.add_offset(0.5 * t.value);
    } else {
      // 2q x_i x_j = (q/2)(1 + s_i + s_j + s_i s_j)
      const double q = 0.5 * t.value;
      out.add_coupling(t.j, t.i, q);
      out.add_field(t.i, q);
      out.add_field(t.j, q);
      out.add_offset(q);
    }
  }
  const auto h = p.linear();
  for (std::size_t i = 0; i < p.n(); ++i) {
    out.add_field(static_cast<Index>(i), 0.5 * h[i]);
    out.add_offset(0.5 * h[i]);
  }
  out.add_offset(p.offset());
  return out;
}

/// Substitutes s = 2x - 1; the returned QUBO carries the constant in its offset.
inline QuboProblem ising_to_qubo(const IsingProblem& p) {
  QuboProblem out(p.n());
  for (const auto& t : p.couplings()) {
    // J s_i s_j = 4J x_i x_j - 2J x_i - 2J x_j + J, and x^T Q x counts off-diagonals twice.
    out.add_quadratic(t.j, t.i, 2.0 * t.value);
    out.add_linear(t.i, -2.0 * t.value);
    out.add_linear(t.j, -2.0 * t.value);
    out.add_offset(t.value);
  }
  const auto h = p.field();
  for (std::size_t i = 0; i < p.n(); ++i) {
    out.add_linear(static_cast<Index>(i), 2.0 * h[i]);
    out.add_offset(-h[i]);
  }
  out.add_offset(p.offset());
  return out;
}

}  // namespace qdetect
