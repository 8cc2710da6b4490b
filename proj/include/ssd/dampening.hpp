#pragma once

// Selective dampening. Parameter i is selected when its forget-set importance
// exceeds alpha times its full-set importance (strict), and a selected
// parameter is scaled by beta_i = min(lambda * full_i / forget_i, 1).
// Unselected parameters are copied bit-for-bit.

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "ssd/data.hpp"
#include "ssd/error.hpp"
#include "ssd/importance.hpp"
#include "ssd/model.hpp"

namespace ssd {

struct DampeningConfig {
  double alpha = 10.0;
  double lambda = 1.0;

  void validate() const {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw Error(Errc::invalid_argument, "alpha must be finite and positive");
    if (!(lambda > 0.0) || !std::isfinite(lambda))
      throw Error(Errc::invalid_argument, "lambda must be finite and positive");
  }
};

struct BlockSelection {
  std::size_t layer;
  ParamKind kind;
  std::size_t selected;
  std::size_t total;
};

struct SelectionReport {
  std::vector<std::size_t> selected_indices;
  /// Aligned with selected_indices.
  std::vector<double> betas;
  std::vector<BlockSelection> per_block;
};

struct DampeningResult {
  ParameterVector params;
  SelectionReport report;
};

/// Whether parameter i is selected; 0 vs 0 is not.
inline bool is_selected(double full, double forget, double alpha) { return forget > alpha * full; }

inline double dampening_factor(double full, double forget, double lambda) {
  return std::min(lambda * full / forget, 1.0);
}

inline DampeningResult apply_dampening(const ParameterVector& theta, const ImportanceVector& full,
                                       const ImportanceVector& forget, const DampeningConfig& cfg) {
  cfg.validate();
  if (full.size() != theta.size() || forget.size() != theta.size())
    throw Error(Errc::length_mismatch, "dampening: parameter vector has " + std::to_string(theta.size()) +
                                           " entries, importances have " + std::to_string(full.size()) + " and " +
                                           std::to_string(forget.size()));
  if (full.over != ImportanceScope::full_set || forget.over != ImportanceScope::forget_set)
    throw Error(Errc::source_mismatch, "dampening needs a full-set and a forget-set importance, in that order");
  if (full.source != forget.source)
    throw Error(Errc::source_mismatch, std::string("dampening: importance sources differ (") + to_string(full.source) +
                                           " vs " + to_string(forget.source) + ")");
  if (full.source == ImportanceSource::lfssd_sensitivity && full.output_space != forget.output_space)
    throw Error(Errc::source_mismatch, "dampening: sensitivities were taken over different output spaces");

  DampeningResult out{theta, {}};
  for (const ParamBlock& b : theta.layout.blocks()) out.report.per_block.push_back({b.layer, b.kind, 0, b.length});
  std::size_t block = 0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    while (i >= theta.layout.blocks()[block].offset + theta.layout.blocks()[block].length) ++block;
    if (!is_selected(full.values[i], forget.values[i], cfg.alpha)) continue;
    const double beta = dampening_factor(full.values[i], forget.values[i], cfg.lambda);
    out.params.values[i] = beta * theta.values[i];
    out.report.selected_indices.push_back(i);
    out.report.betas.push_back(beta);
    ++out.report.per_block[block].selected;
  }
  return out;
}

enum class Method { ssd, lfssd };

inline const char* to_string(Method m) { return m == Method::ssd ? "ssd" : "lfssd"; }

inline ImportanceSource importance_source(Method m) {
  return m == Method::ssd ? ImportanceSource::fisher_diagonal : ImportanceSource::lfssd_sensitivity;
}

struct UnlearnOptions {
  /// Labels for the Fisher estimator; ignored by lfssd.
  LabelSource label_source = LabelSource::fine;
  OutputSpace output_space = OutputSpace::logits;
  /// Full-set importance computed earlier for the same parameters. When absent
  /// it is computed here (|D| backward passes).
  std::optional<ImportanceVector> precomputed_full;
};

/// Importance of `method` over the given rows. The lfssd path only receives
/// the feature matrix.
inline ImportanceVector estimate_importance(Method method, const ModelSpec& spec, const ParameterVector& theta,
                                            const Dataset& ds, std::span<const std::size_t> indices,
                                            ImportanceScope over, const UnlearnOptions& opts) {
  if (method == Method::lfssd) return lfssd_sensitivity(spec, theta, ds.features, indices, over, opts.output_space);
  return fisher_diagonal(spec, theta, ds, indices, opts.label_source, over);
}

/// Full pipeline: importance over D and D_f, then dampening. An empty forget
/// set returns theta unchanged with an empty selection.
inline DampeningResult unlearn(const ModelSpec& spec, const ParameterVector& theta, const Dataset& ds,
                               const ForgetSplit& split, Method method, const DampeningConfig& cfg,
                               const UnlearnOptions& opts = {}) {
  cfg.validate();
  check_params(spec, theta);
  if (split.forget_indices.size() + split.retain_indices.size() != ds.size())
    throw Error(Errc::invalid_argument, "forget split does not partition the dataset");
  if (split.forget_indices.empty()) {
    DampeningResult out{theta, {}};
    for (const ParamBlock& b : theta.layout.blocks()) out.report.per_block.push_back({b.layer, b.kind, 0, b.length});
    return out;
  }
  ImportanceVector full;
  if (opts.precomputed_full) {
    full = *opts.precomputed_full;
    if (full.source != importance_source(method))
      throw Error(Errc::source_mismatch, "precomputed full-set importance was made by a different estimator");
  } else {
    full = estimate_importance(method, spec, theta, ds, all_indices(ds), ImportanceScope::full_set, opts);
  }
  const auto forget =
      estimate_importance(method, spec, theta, ds, split.forget_indices, ImportanceScope::forget_set, opts);
  return apply_dampening(theta, full, forget, cfg);
}

}  // namespace ssd
