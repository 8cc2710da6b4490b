#pragma once

// Per-parameter importance estimates.
//
//   Fisher diagonal:   F_i     = 1/N sum_k (d CE(f(x_k), y_k) / d theta_i)^2
//   Output sensitivity: Omega_i = 1/N sum_k |d ||f(x_k)||^2 / d theta_i|
//
// Both are computed per sample: one forward and one backward pass each, then
// reduced in a fixed order. Callers may pass indices in any order; they are
// sorted first and the per-sample vectors are combined by bottom-up pairwise
// summation (adjacent pairs, then adjacent pairs of pair sums, ...), so the
// result does not depend on caller ordering and duplicating every index gives
// the same bits.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ssd/autodiff.hpp"
#include "ssd/binary_io.hpp"
#include "ssd/data.hpp"
#include "ssd/model.hpp"
#include "ssd/training.hpp"

namespace ssd {

enum class ImportanceSource : std::uint32_t { fisher_diagonal = 0, lfssd_sensitivity = 1 };
/// Which set the estimate was taken over.
enum class ImportanceScope : std::uint32_t { full_set = 0, forget_set = 1 };
/// Network output whose squared norm the label-free estimator differentiates.
enum class OutputSpace : std::uint32_t { logits = 0, softmax = 1 };

inline const char* to_string(ImportanceSource s) {
  return s == ImportanceSource::fisher_diagonal ? "fisher_diagonal" : "lfssd_sensitivity";
}
inline const char* to_string(ImportanceScope s) { return s == ImportanceScope::full_set ? "full" : "forget"; }
inline const char* to_string(OutputSpace s) { return s == OutputSpace::logits ? "logits" : "softmax"; }

struct ImportanceVector {
  std::vector<double> values;
  ImportanceSource source = ImportanceSource::fisher_diagonal;
  ImportanceScope over = ImportanceScope::full_set;
  std::uint64_t sample_count = 0;
  /// Only meaningful for lfssd_sensitivity.
  OutputSpace output_space = OutputSpace::logits;

  std::size_t size() const { return values.size(); }
  bool operator==(const ImportanceVector&) const = default;
};

/// Streaming form of bottom-up pairwise summation over equal-length vectors.
/// Partial sums sit on a stack tagged with their tree level; a push merges
/// equal-level neighbours (older + newer), and finish() folds what is left from
/// the newest entry backwards. This reproduces the level-by-level pairing of
/// the batch algorithm with O(log N) live vectors.
class PairwiseAccumulator {
 public:
  void push(std::vector<double> v) {
    std::size_t level = 0;
    while (!stack_.empty() && stack_.back().level == level) {
      auto& older = stack_.back().sum;
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = older[i] + v[i];
      stack_.pop_back();
      ++level;
    }
    stack_.push_back({level, std::move(v)});
    ++count_;
  }

  std::size_t count() const { return count_; }

  std::vector<double> finish() {
    if (stack_.empty()) return {};
    std::vector<double> acc = std::move(stack_.back().sum);
    stack_.pop_back();
    while (!stack_.empty()) {
      const auto& older = stack_.back().sum;
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = older[i] + acc[i];
      stack_.pop_back();
    }
    return acc;
  }

 private:
  struct Entry {
    std::size_t level;
    std::vector<double> sum;
  };
  std::vector<Entry> stack_;
  std::size_t count_ = 0;
};

/// Builds the scalar whose parameter gradient is reduced. Receives the tape,
/// the [1 x classes] logits and the dataset row index of the sample.
using SampleObjective = std::function<Var(Tape&, Var logits, std::size_t row)>;

/// Mean over samples of transform(d objective / d theta_i), one forward and
/// backward pass per sample, reduced in the fixed order described above.
template <typename Transform>
std::vector<double> mean_gradient_statistic(const ModelSpec& spec, const ParameterVector& theta,
                                            const FeatureMatrix& features, std::span<const std::size_t> indices,
                                            const SampleObjective& objective, Transform transform) {
  check_params(spec, theta);
  if (indices.empty()) throw Error(Errc::empty_input, "importance over an empty index list");
  for (std::size_t i : indices)
    if (i >= features.rows) throw Error(Errc::invalid_argument, "sample index " + std::to_string(i) + " out of range");

  std::vector<std::size_t> sorted(indices.begin(), indices.end());
  std::sort(sorted.begin(), sorted.end());

  PairwiseAccumulator acc;
  for (std::size_t row : sorted) {
    Tape tape;
    const auto params = bind_parameters(tape, theta);
    const Var logits = mlp_on_tape(tape, spec, params, tape.constant(Tensor::row(features.row(row))));
    tape.backward(objective(tape, logits, row));
    auto g = gather_gradient(tape, params, theta.layout);
    for (double& v : g) v = transform(v);
    acc.push(std::move(g));
  }
  auto mean = acc.finish();
  const auto n = static_cast<double>(sorted.size());
  for (double& v : mean) v /= n;
  return mean;
}

/// Diagonal Fisher estimate from per-sample squared cross-entropy gradients,
/// using the labels the model was trained with.
inline ImportanceVector fisher_diagonal(const ModelSpec& spec, const ParameterVector& theta, const Dataset& ds,
                                        std::span<const std::size_t> indices, LabelSource labels_used,
                                        ImportanceScope over) {
  check_label_count(spec, ds, labels_used);
  const auto& labels = ds.labels(labels_used);
  const SampleObjective ce = [&labels](Tape& t, Var logits, std::size_t row) { return t.cross_entropy(logits, labels[row]); };
  ImportanceVector out;
  out.values = mean_gradient_statistic(spec, theta, ds.features, indices, ce, [](double g) { return g * g; });
  out.source = ImportanceSource::fisher_diagonal;
  out.over = over;
  out.sample_count = indices.size();
  return out;
}

/// Label-free sensitivity: mean absolute gradient of the squared l2 norm of
/// the network output. Takes features only.
inline ImportanceVector lfssd_sensitivity(const ModelSpec& spec, const ParameterVector& theta,
                                          const FeatureMatrix& features, std::span<const std::size_t> indices,
                                          ImportanceScope over, OutputSpace space = OutputSpace::logits) {
  const SampleObjective norm = [space](Tape& t, Var logits, std::size_t) {
    return t.l2_squared_norm(space == OutputSpace::softmax ? t.softmax(logits) : logits);
  };
  ImportanceVector out;
  out.values = mean_gradient_statistic(spec, theta, features, indices, norm, [](double g) { return std::abs(g); });
  out.source = ImportanceSource::lfssd_sensitivity;
  out.over = over;
  out.sample_count = indices.size();
  out.output_space = space;
  return out;
}

// Importance file:
//   "DAMPIMPT" | version u32 | source u32 | over u32 | output space u32 |
//   sample count u64 | checkpoint hash u64 | |theta| u64 | values as f64...

inline constexpr std::string_view kImportanceMagic = "DAMPIMPT";
inline constexpr std::uint32_t kImportanceVersion = 1;

struct ImportanceFile {
  ImportanceVector importance;
  std::uint64_t checkpoint_hash = 0;
};

inline std::vector<char> encode_importance(const ImportanceVector& imp, std::uint64_t ckpt_hash) {
  binary::Writer w;
  w.raw(kImportanceMagic);
  w.u32(kImportanceVersion);
  w.u32(static_cast<std::uint32_t>(imp.source));
  w.u32(static_cast<std::uint32_t>(imp.over));
  w.u32(static_cast<std::uint32_t>(imp.output_space));
  w.u64(imp.sample_count);
  w.u64(ckpt_hash);
  w.u64(imp.values.size());
  w.f64s(imp.values);
  return w.bytes();
}

inline ImportanceFile decode_importance(std::span<const char> bytes, const std::string& what = "importance file") {
  binary::Reader r(bytes, what);
  r.expect_magic(kImportanceMagic);
  const auto version = r.u32("version");
  if (version != kImportanceVersion)
    throw Error(Errc::malformed_file, what + ": unsupported version " + std::to_string(version));
  ImportanceFile f;
  const auto source = r.u32("source");
  const auto over = r.u32("over");
  const auto space = r.u32("output space");
  if (source > 1 || over > 1 || space > 1) throw Error(Errc::malformed_file, what + ": unknown enum value in header");
  f.importance.source = static_cast<ImportanceSource>(source);
  f.importance.over = static_cast<ImportanceScope>(over);
  f.importance.output_space = static_cast<OutputSpace>(space);
  f.importance.sample_count = r.u64("sample count");
  f.checkpoint_hash = r.u64("checkpoint hash");
  f.importance.values = r.f64s(r.u64("parameter count"), "values");
  r.expect_end();
  for (double v : f.importance.values)
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error(Errc::malformed_file, what + ": negative or non-finite value");
  return f;
}

inline void save_importance(const std::filesystem::path& path, const ImportanceVector& imp, std::uint64_t ckpt_hash) {
  binary::write_file(path, encode_importance(imp, ckpt_hash));
}

inline ImportanceFile load_importance(const std::filesystem::path& path) {
  const auto bytes = binary::read_file(path);
  return decode_importance(bytes, path.string());
}

}  // namespace ssd
