#pragma once

// Labeled feature datasets with ground-truth poison flags, their CSV / QDS1 encodings and a
// seeded Gaussian-cluster generator.
//
// QDS1 (little-endian): "QDS1", u32 n, u32 d, u32 classes, u8 has_flags, n*d f32 features
// row-major, n u16 labels, then n u8 flags when has_flags is 1.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "qdetect/domain_model.hpp"
#include "qdetect/errors.hpp"
#include "qdetect/matrix.hpp"
#include "qdetect/random.hpp"

namespace qdetect {

struct TriggerSpec {
  std::vector<std::size_t> positions;
  std::vector<double> values;
  double amplitude = 1.0;

  bool empty() const noexcept { return positions.empty(); }

  void validate(std::size_t n_features) const {
    if (positions.size() != values.size()) throw AttackError("trigger positions and values differ in length");
    for (std::size_t a = 0; a < positions.size(); ++a) {
      if (positions[a] >= n_features) throw AttackError("trigger position " + std::to_string(positions[a]) + " out of range");
      for (std::size_t b = 0; b < a; ++b)
        if (positions[a] == positions[b]) throw AttackError("duplicate trigger position");
      if (!(values[a] >= 0.0 && values[a] <= 1.0)) throw AttackError("trigger values must lie in [0, 1]");
    }
    if (!(amplitude >= 0.0 && amplitude <= 1.0)) throw AttackError("trigger amplitude must lie in [0, 1]");
  }

  friend bool operator==(const TriggerSpec&, const TriggerSpec&) = default;
};

struct AttackMeta {
  std::string type = "none";
  double ratio = 0.0;
  std::optional<Label> source_class;
  std::optional<Label> target_class;
  TriggerSpec trigger;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;

  friend bool operator==(const AttackMeta&, const AttackMeta&) = default;
};

struct PoisonedDataset {
  Matrix<float> features;  // n x d, values in [0, 1]
  std::vector<Label> labels;
  std::vector<std::uint8_t> flags;  // 1 = poisoned
  std::vector<Label> original_labels;
  std::size_t classes = 0;
  AttackMeta meta;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dims() const noexcept { return features.cols; }

  std::size_t poison_count() const noexcept {
    return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), std::uint8_t{1}));
  }

  LabeledBatch batch(std::span<const std::size_t> indices) const {
    LabeledBatch b;
    b.features = Matrix<double>(indices.size(), dims());
    b.labels.resize(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
      const auto src = features.row(indices[r]);
      std::copy(src.begin(), src.end(), b.features.row(r).begin());
      b.labels[r] = labels[indices[r]];
    }
    return b;
  }

  LabeledBatch all() const {
    std::vector<std::size_t> idx(size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return batch(idx);
  }

  PoisonedDataset subset(std::span<const std::size_t> indices) const {
    PoisonedDataset out;
    out.features = Matrix<float>(indices.size(), dims());
    out.classes = classes;
    out.meta = meta;
    for (std::size_t r = 0; r < indices.size(); ++r) {
      const auto src = features.row(indices[r]);
      std::copy(src.begin(), src.end(), out.features.row(r).begin());
      out.labels.push_back(labels[indices[r]]);
      out.flags.push_back(flags[indices[r]]);
      out.original_labels.push_back(original_labels[indices[r]]);
    }
    return out;
  }

  /// Structural invariants shared by every constructor path.
  void validate() const {
    const std::size_t n = labels.size();
    if (features.rows != n || flags.size() != n || original_labels.size() != n ||
        features.data.size() != features.rows * features.cols)
      throw DataError("dataset columns have inconsistent lengths");
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] >= classes || original_labels[i] >= classes) throw DataError("label outside class range at row " + std::to_string(i));
      if (flags[i] > 1) throw DataError("poison flag must be 0 or 1 at row " + std::to_string(i));
      if (!flags[i] && labels[i] != original_labels[i])
        throw DataError("unflagged sample with changed label at row " + std::to_string(i));
    }
    for (std::size_t k = 0; k < features.data.size(); ++k) {
      const float v = features.data[k];
      if (!(v >= 0.0f && v <= 1.0f))
        throw DataError("feature outside [0, 1] at row " + std::to_string(k / std::max<std::size_t>(1, features.cols)));
    }
  }
};

/// Features, labels and flags (meta and original labels are not part of either file format).
inline bool same_content(const PoisonedDataset& a, const PoisonedDataset& b) {
  return a.features == b.features && a.labels == b.labels && a.flags == b.flags && a.classes == b.classes;
}

enum class DatasetFormat { csv, qds1 };

inline DatasetFormat parse_format(std::string_view s) {
  if (s == "csv") return DatasetFormat::csv;
  if (s == "qds1") return DatasetFormat::qds1;
  throw ConfigError("unknown dataset format '" + std::string(s) + "' (expected csv or qds1)");
}

namespace detail {

static_assert(std::endian::native == std::endian::little, "QDS1 I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is, std::string_view what) {
  T v;
  const auto offset = static_cast<long long>(is.tellg());
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
    throw DataError("QDS1: truncated file reading " + std::string(what) + " at byte offset " + std::to_string(offset));
  return v;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string{} : f.substr(b, e - b + 1);
  }
  return out;
}

inline double parse_double(const std::string& s, std::size_t line, std::size_t col) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw DataError("CSV line " + std::to_string(line) + ", column " + std::to_string(col + 1) + ": not a number: '" + s + "'");
  return v;
}

inline long long parse_int(const std::string& s, std::size_t line, std::size_t col) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw DataError("CSV line " + std::to_string(line) + ", column " + std::to_string(col + 1) + ": not an integer: '" + s + "'");
  return v;
}

}  // namespace detail

inline void write_qds1(const PoisonedDataset& d, std::ostream& os) {
  if (d.classes > 65536) throw DataError("QDS1 stores labels as u16; too many classes");
  os.write("QDS1", 4);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(d.size()));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(d.dims()));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(d.classes));
  detail::put<std::uint8_t>(os, 1);
  for (float v : d.features.data) detail::put<float>(os, v);
  for (Label y : d.labels) detail::put<std::uint16_t>(os, static_cast<std::uint16_t>(y));
  for (auto f : d.flags) detail::put<std::uint8_t>(os, f);
}

inline PoisonedDataset read_qds1(std::istream& is) {
  char magic[4] = {};
  if (!is.read(magic, 4) || std::memcmp(magic, "QDS1", 4) != 0) throw DataError("QDS1: bad magic at byte offset 0");
  PoisonedDataset d;
  const auto n = detail::get<std::uint32_t>(is, "n");
  const auto dims = detail::get<std::uint32_t>(is, "d");
  d.classes = detail::get<std::uint32_t>(is, "classes");
  const auto has_flags = detail::get<std::uint8_t>(is, "has_flags");
  if (has_flags > 1) throw DataError("QDS1: has_flags must be 0 or 1 at byte offset 16");
  d.features = Matrix<float>(n, dims);
  for (auto& v : d.features.data) v = detail::get<float>(is, "features");
  d.labels.resize(n);
  for (auto& y : d.labels) y = detail::get<std::uint16_t>(is, "labels");
  d.flags.assign(n, 0);
  if (has_flags)
    for (auto& f : d.flags) f = detail::get<std::uint8_t>(is, "flags");
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("QDS1: trailing bytes after payload");
  d.original_labels = d.labels;
  d.validate();
  return d;
}

/// Header "f0,...,f{d-1},label,poison_flag"; floats printed with round-trip precision.
inline void write_csv(const PoisonedDataset& d, std::ostream& os) {
  for (std::size_t j = 0; j < d.dims(); ++j) os << 'f' << j << ',';
  os << "label,poison_flag\n";
  char buf[64];
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (float v : d.features.row(i)) {
      const auto res = std::to_chars(buf, buf + sizeof buf, v);
      os.write(buf, res.ptr - buf);
      os << ',';
    }
    os << d.labels[i] << ',' << static_cast<int>(d.flags[i]) << '\n';
  }
}

/// Feature columns, then `label`, then an optional `poison_flag`. Labels are re-indexed
/// densely in ascending order of their numeric value.
inline PoisonedDataset read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("CSV line 1: missing header");
  const auto header = detail::split_csv(line);
  std::size_t label_col = header.size();
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c] == "label") label_col = c;
  if (label_col == header.size()) throw DataError("CSV line 1: header has no 'label' column");
  const bool has_flags = label_col + 2 == header.size() && header.back() == "poison_flag";
  if (label_col + 1 != header.size() && !has_flags)
    throw DataError("CSV line 1: 'label' must be the last column, optionally followed by 'poison_flag'");
  const std::size_t dims = label_col;

  std::vector<float> feats;
  std::vector<long long> raw_labels;
  std::vector<std::uint8_t> flags;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = detail::split_csv(line);
    if (fields.size() != header.size())
      throw DataError("CSV line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    for (std::size_t c = 0; c < dims; ++c) {
      const double v = detail::parse_double(fields[c], line_no, c);
      if (!(v >= 0.0 && v <= 1.0))
        throw DataError("CSV line " + std::to_string(line_no) + ", column " + std::to_string(c + 1) + ": feature outside [0, 1]");
      feats.push_back(static_cast<float>(v));
    }
    raw_labels.push_back(detail::parse_int(fields[label_col], line_no, label_col));
    if (has_flags) {
      const auto f = detail::parse_int(fields[label_col + 1], line_no, label_col + 1);
      if (f != 0 && f != 1) throw DataError("CSV line " + std::to_string(line_no) + ": poison_flag must be 0 or 1");
      flags.push_back(static_cast<std::uint8_t>(f));
    } else {
      flags.push_back(0);
    }
  }
  std::map<long long, Label> dense;
  for (auto y : raw_labels) dense.emplace(y, 0);
  Label next = 0;
  for (auto& [raw, idx] : dense) idx = next++;

  PoisonedDataset d;
  d.features = Matrix<float>(raw_labels.size(), dims);
  d.features.data = std::move(feats);
  for (auto y : raw_labels) d.labels.push_back(dense.at(y));
  d.flags = std::move(flags);
  d.original_labels = d.labels;
  d.classes = dense.size();
  d.validate();
  return d;
}

inline PoisonedDataset ingest(const std::string& path, DatasetFormat fmt) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open dataset file '" + path + "'");
  return fmt == DatasetFormat::csv ? read_csv(is) : read_qds1(is);
}

inline void export_dataset(const PoisonedDataset& d, const std::string& path, DatasetFormat fmt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write dataset file '" + path + "'");
  if (fmt == DatasetFormat::csv)
    write_csv(d, os);
  else
    write_qds1(d, os);
  if (!os) throw DataError("write failed for '" + path + "'");
}

struct SynthSpec {
  std::size_t n = 600;
  std::size_t d = 16;
  std::size_t classes = 3;
  double spread = 0.05;  // per-coordinate standard deviation around the class mean
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 1 || d < 1 || classes < 1) throw ConfigError("synthetic spec needs n, d, classes >= 1");
    if (!(spread >= 0.0) || !std::isfinite(spread)) throw ConfigError("synthetic spread must be >= 0");
  }

  friend bool operator==(const SynthSpec&, const SynthSpec&) = default;
};

/// Class means uniform in [0.2, 0.8]^d (drawn from `seed`), balanced labels in a seeded
/// order, Gaussian samples clipped to [0, 1]. `stream` selects an independent sample draw
/// around the same means (0 = training set, 1 = held-out test set, ...).
inline PoisonedDataset synth(const SynthSpec& spec, std::uint64_t stream = 0) {
  spec.validate();
  Rng mean_rng(derive_seed(spec.seed, 0xC1A55));
  Matrix<double> means(spec.classes, spec.d);
  for (auto& m : means.data) m = uniform(mean_rng, 0.2, 0.8);

  PoisonedDataset ds;
  ds.classes = spec.classes;
  ds.features = Matrix<float>(spec.n, spec.d);
  ds.labels.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) ds.labels[i] = static_cast<Label>(i % spec.classes);
  Rng rng(derive_seed(spec.seed, 0x5A3B1E, stream));
  shuffle(std::span<Label>(ds.labels), rng);
  for (std::size_t i = 0; i < spec.n; ++i) {
    auto row = ds.features.row(i);
    for (std::size_t j = 0; j < spec.d; ++j) {
      const double v = means(ds.labels[i], j) + spec.spread * normal01(rng);
      row[j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  ds.flags.assign(spec.n, 0);
  ds.original_labels = ds.labels;
  return ds;
}

}  // namespace qdetect
