#pragma once

// Datasets, the synthetic blob generator, CSV loading and forget splits.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "ssd/error.hpp"
#include "ssd/rng.hpp"

namespace ssd {

/// Row-major sample matrix. The label-free estimator only ever sees this.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t i) const { return std::span<const double>(data).subspan(i * cols, cols); }
};

enum class LabelSource { fine, coarse };

inline const char* to_string(LabelSource s) { return s == LabelSource::fine ? "fine" : "coarse"; }

struct Dataset {
  FeatureMatrix features;
  std::vector<std::size_t> fine_labels;
  std::optional<std::vector<std::size_t>> coarse_labels;
  std::size_t fine_class_count = 0;
  std::size_t coarse_class_count = 0;

  std::size_t size() const { return features.rows; }

  const std::vector<std::size_t>& labels(LabelSource source) const {
    if (source == LabelSource::fine) return fine_labels;
    if (!coarse_labels) throw Error(Errc::schema, "dataset has no coarse labels");
    return *coarse_labels;
  }

  std::size_t class_count(LabelSource source) const {
    if (source == LabelSource::coarse && !coarse_labels) throw Error(Errc::schema, "dataset has no coarse labels");
    return source == LabelSource::fine ? fine_class_count : coarse_class_count;
  }

  void validate() const {
    if (features.data.size() != features.rows * features.cols || fine_labels.size() != features.rows ||
        (coarse_labels && coarse_labels->size() != features.rows))
      throw Error(Errc::length_mismatch, "dataset columns have unequal row counts");
    for (std::size_t y : fine_labels)
      if (y >= fine_class_count) throw Error(Errc::label_out_of_range, "fine label " + std::to_string(y) + " out of range");
    if (coarse_labels)
      for (std::size_t y : *coarse_labels)
        if (y >= coarse_class_count)
          throw Error(Errc::label_out_of_range, "coarse label " + std::to_string(y) + " out of range");
  }
};

// ---------------------------------------------------------------------------
// Synthetic Gaussian blobs.

struct BlobParams {
  std::size_t n_classes = 3;
  std::size_t n_per_class = 100;
  std::size_t n_features = 2;
  double separation = 8.0;
  std::uint64_t seed = 0;
  /// When set, each of the n_classes coarse classes is made of this many fine
  /// sub-clusters; n_per_class then counts samples per fine sub-cluster.
  std::optional<std::size_t> subclasses_per_class;
};

/// Cluster centres with pairwise distance >= `separation` that do not depend
/// on the seed, so train and test sets drawn with different seeds share them.
/// With at least as many features as clusters, centre k is
/// (separation / sqrt 2) * e_k, a regular simplex with every pair exactly
/// `separation` apart. Otherwise centres sit on an axis-aligned grid with
/// spacing `separation`: cluster k takes the base-b digits of k as
/// coordinates, b = ceil(n^(1/d)).
inline std::vector<std::vector<double>> blob_centres(std::size_t n_clusters, std::size_t n_features, double separation) {
  std::vector<std::vector<double>> centres(n_clusters, std::vector<double>(n_features, 0.0));
  if (n_clusters <= n_features) {
    for (std::size_t k = 0; k < n_clusters; ++k) centres[k][k] = separation / std::sqrt(2.0);
    return centres;
  }
  std::size_t base = 1;
  auto fits = [&](std::size_t b) {
    std::size_t cap = 1;
    for (std::size_t d = 0; d < n_features && cap < n_clusters; ++d) cap *= b;
    return cap >= n_clusters;
  };
  while (!fits(base)) ++base;
  for (std::size_t k = 0; k < n_clusters; ++k) {
    std::size_t rest = k;
    for (std::size_t d = 0; d < n_features; ++d) {
      centres[k][d] = separation * static_cast<double>(rest % base);
      rest /= base;
    }
  }
  return centres;
}

inline Dataset synthesize_blobs(const BlobParams& p) {
  if (p.n_classes == 0 || p.n_per_class == 0 || p.n_features == 0 || (p.subclasses_per_class && *p.subclasses_per_class == 0))
    throw Error(Errc::invalid_argument, "blob counts must be >= 1");
  if (!(p.separation > 0.0)) throw Error(Errc::invalid_argument, "blob separation must be positive");

  const std::size_t subs = p.subclasses_per_class.value_or(1);
  const std::size_t n_fine = p.n_classes * subs;
  const auto centres = blob_centres(n_fine, p.n_features, p.separation);

  Dataset ds;
  ds.features.rows = n_fine * p.n_per_class;
  ds.features.cols = p.n_features;
  ds.features.data.reserve(ds.features.rows * ds.features.cols);
  ds.fine_class_count = n_fine;
  if (p.subclasses_per_class) {
    ds.coarse_labels.emplace();
    ds.coarse_class_count = p.n_classes;
  }
  Rng rng(p.seed);
  for (std::size_t k = 0; k < n_fine; ++k) {
    for (std::size_t s = 0; s < p.n_per_class; ++s) {
      for (std::size_t d = 0; d < p.n_features; ++d) ds.features.data.push_back(centres[k][d] + rng.normal());
      ds.fine_labels.push_back(k);
      if (ds.coarse_labels) ds.coarse_labels->push_back(k / subs);
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// CSV.

struct CsvSchema {
  std::vector<std::string> feature_columns;
  std::string fine_label_column;
  std::optional<std::string> coarse_label_column;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string trim(std::string s) {
  auto issp = [](unsigned char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && issp(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && issp(static_cast<unsigned char>(s[i]))) ++i;
  return s.substr(i);
}

}  // namespace detail

/// Loads a comma-separated file with a header row. Class counts are taken as
/// max label + 1.
inline Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
  const std::string where = path.string();

  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty())
    throw Error(Errc::empty_input, where + ": empty file, header row expected");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  std::vector<std::string> header = detail::split_csv_line(line);
  for (auto& h : header) h = detail::trim(h);

  auto column = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(Errc::schema, where + ": missing column \"" + name + "\"");
    return static_cast<std::size_t>(it - header.begin());
  };
  if (schema.feature_columns.empty()) throw Error(Errc::schema, where + ": schema names no feature columns");
  std::vector<std::size_t> feat_cols;
  for (const auto& f : schema.feature_columns) feat_cols.push_back(column(f));
  const std::size_t fine_col = column(schema.fine_label_column);
  std::optional<std::size_t> coarse_col;
  if (schema.coarse_label_column) coarse_col = column(*schema.coarse_label_column);

  Dataset ds;
  ds.features.cols = feat_cols.size();
  if (coarse_col) ds.coarse_labels.emplace();

  std::size_t row_number = 1;  // header is row 1
  while (std::getline(in, line)) {
    ++row_number;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    auto cell = [&](std::size_t col) -> std::string {
      if (col >= cells.size())
        throw Error(Errc::parse, where + ": row " + std::to_string(row_number) + " has " +
                                     std::to_string(cells.size()) + " cells, column \"" + header[col] + "\" missing");
      return detail::trim(cells[col]);
    };
    auto parse_f64 = [&](std::size_t col) {
      const std::string text = cell(col);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (text.empty() || ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v))
        throw Error(Errc::parse, where + ": row " + std::to_string(row_number) + ", column \"" + header[col] +
                                     "\": \"" + text + "\" is not a finite number");
      return v;
    };
    auto parse_label = [&](std::size_t col) {
      const std::string text = cell(col);
      std::size_t v = 0;
      auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (text.empty() || ec != std::errc() || ptr != text.data() + text.size())
        throw Error(Errc::parse, where + ": row " + std::to_string(row_number) + ", column \"" + header[col] +
                                     "\": \"" + text + "\" is not a non-negative integer label");
      return v;
    };
    for (std::size_t c : feat_cols) ds.features.data.push_back(parse_f64(c));
    ds.fine_labels.push_back(parse_label(fine_col));
    if (coarse_col) ds.coarse_labels->push_back(parse_label(*coarse_col));
    ++ds.features.rows;
  }
  if (ds.features.rows == 0) throw Error(Errc::empty_input, where + ": no data rows");
  ds.fine_class_count = *std::max_element(ds.fine_labels.begin(), ds.fine_labels.end()) + 1;
  if (ds.coarse_labels) ds.coarse_class_count = *std::max_element(ds.coarse_labels->begin(), ds.coarse_labels->end()) + 1;
  return ds;
}

/// Writes a dataset in the format load_csv reads (features f0..fn, "label",
/// optional "coarse"). Doubles are printed with 17 significant digits.
inline void write_csv(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_failure, "cannot open " + path.string() + " for writing");
  out.precision(17);
  for (std::size_t c = 0; c < ds.features.cols; ++c) out << 'f' << c << ',';
  out << "label";
  if (ds.coarse_labels) out << ",coarse";
  out << '\n';
  for (std::size_t r = 0; r < ds.size(); ++r) {
    for (double v : ds.features.row(r)) out << v << ',';
    out << ds.fine_labels[r];
    if (ds.coarse_labels) out << ',' << (*ds.coarse_labels)[r];
    out << '\n';
  }
  if (!out) throw Error(Errc::io_failure, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Forget splits.

struct FullClass {
  std::size_t fine_class;
  bool operator==(const FullClass&) const = default;
};
/// Forget one fine class while the model trains on coarse labels.
struct SubClass {
  std::size_t fine_class;
  bool operator==(const SubClass&) const = default;
};
struct RandomFraction {
  double fraction;
  std::uint64_t seed;
  bool operator==(const RandomFraction&) const = default;
};

using SplitRule = std::variant<FullClass, SubClass, RandomFraction>;

/// Labels the model is trained and scored with under a given rule.
inline LabelSource training_labels(const SplitRule& rule) {
  return std::holds_alternative<SubClass>(rule) ? LabelSource::coarse : LabelSource::fine;
}

struct ForgetSplit {
  std::vector<std::size_t> forget_indices;
  std::vector<std::size_t> retain_indices;
  SplitRule rule;
};

inline ForgetSplit make_split(const Dataset& ds, const SplitRule& rule) {
  std::vector<char> forget(ds.size(), 0);
  if (const auto* fc = std::get_if<FullClass>(&rule)) {
    if (fc->fine_class >= ds.fine_class_count)
      throw Error(Errc::invalid_argument, "unknown class id " + std::to_string(fc->fine_class));
    for (std::size_t i = 0; i < ds.size(); ++i) forget[i] = ds.fine_labels[i] == fc->fine_class;
  } else if (const auto* sc = std::get_if<SubClass>(&rule)) {
    if (!ds.coarse_labels) throw Error(Errc::schema, "subclass split needs coarse labels");
    if (sc->fine_class >= ds.fine_class_count)
      throw Error(Errc::invalid_argument, "unknown class id " + std::to_string(sc->fine_class));
    for (std::size_t i = 0; i < ds.size(); ++i) forget[i] = ds.fine_labels[i] == sc->fine_class;
  } else {
    const auto& rf = std::get<RandomFraction>(rule);
    if (!(rf.fraction > 0.0 && rf.fraction < 1.0))
      throw Error(Errc::invalid_argument, "random forget fraction must lie in (0, 1)");
    const auto k = static_cast<std::size_t>(std::llround(rf.fraction * static_cast<double>(ds.size())));
    std::vector<std::size_t> pool(ds.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    Rng rng(rf.seed);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + rng.index(pool.size() - i);
      std::swap(pool[i], pool[j]);
      forget[pool[i]] = 1;
    }
  }
  ForgetSplit split{{}, {}, rule};
  for (std::size_t i = 0; i < ds.size(); ++i) (forget[i] ? split.forget_indices : split.retain_indices).push_back(i);
  return split;
}

inline std::vector<std::size_t> all_indices(const Dataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

}  // namespace ssd
