#pragma once

// Output entropy and the entropy-based membership inference attack.
//
// The attack is a one-feature logistic regression trained to separate
// retained training rows ("seen", label 1) from held-out test rows ("unseen",
// label 0) by the entropy of the model's softmax output. The score is the
// percentage of forget-set rows the attack calls "seen" (p > 0.5).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "ssd/autodiff.hpp"
#include "ssd/data.hpp"
#include "ssd/error.hpp"
#include "ssd/model.hpp"
#include "ssd/rng.hpp"

namespace ssd {

/// -sum p ln p; zero-probability terms contribute nothing.
inline double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

inline double output_entropy(const ModelSpec& spec, const ParameterVector& theta, std::span<const double> x) {
  auto p = forward(spec, theta, x);
  Tape::softmax_row(p);
  return entropy(p);
}

struct MiaConfig {
  std::uint64_t attack_seed = 0;
  /// Rows drawn from each of the seen and unseen pools (capped by the
  /// smaller pool so the attack data stays balanced).
  std::uint32_t members_per_class = 500;
  double lr = 0.5;
  std::uint32_t iterations = 2000;

  void validate() const {
    if (members_per_class < 1) throw Error(Errc::invalid_argument, "mia members_per_class must be >= 1");
    if (iterations < 1) throw Error(Errc::invalid_argument, "mia iterations must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw Error(Errc::invalid_argument, "mia lr must be positive");
  }
};

/// p(seen | x) = sigmoid(weight * (x - centre) / scale + bias). The feature is
/// standardised with the training mean and spread before fitting; a constant
/// feature gets scale 1.
struct LogisticModel {
  double weight = 0.0;
  double bias = 0.0;
  double centre = 0.0;
  double scale = 1.0;

  double probability(double x) const {
    const double z = weight * (x - centre) / scale + bias;
    return 1.0 / (1.0 + std::exp(-z));
  }
  /// Feature value where p = 0.5, NaN when the weight is zero.
  double boundary() const {
    if (weight == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return centre - bias * scale / weight;
  }
};

/// Full-batch gradient descent on mean logistic loss from w = b = 0.
inline LogisticModel fit_logistic_1d(std::span<const double> x, std::span<const int> y, const MiaConfig& cfg) {
  cfg.validate();
  if (x.size() != y.size() || x.empty()) throw Error(Errc::length_mismatch, "logistic fit: features and labels differ");
  bool has0 = false, has1 = false;
  for (int v : y) {
    if (v != 0 && v != 1) throw Error(Errc::invalid_argument, "logistic fit: labels must be 0 or 1");
    (v ? has1 : has0) = true;
  }
  if (!has0 || !has1) throw Error(Errc::degenerate, "logistic fit needs both classes present");

  LogisticModel m;
  const auto n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  m.centre = mean;
  m.scale = sd > 0.0 ? sd : 1.0;

  std::vector<double> z(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) z[i] = (x[i] - m.centre) / m.scale;
  for (std::uint32_t it = 0; it < cfg.iterations; ++it) {
    double gw = 0.0, gb = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-(m.weight * z[i] + m.bias)));
      const double r = p - static_cast<double>(y[i]);
      gw += r * z[i];
      gb += r;
    }
    m.weight -= cfg.lr * gw / n;
    m.bias -= cfg.lr * gb / n;
  }
  return m;
}

struct MiaReport {
  double mia_score = 0.0;
  double attack_train_accuracy = 0.0;
  /// Entropy at which the attack switches between seen and unseen.
  double threshold_entropy = std::numeric_limits<double>::quiet_NaN();
  /// The attack found no usable signal (constant feature or zero weight).
  bool degenerate = false;
  std::size_t attack_members = 0;
};

/// Attack from precomputed entropies.
inline MiaReport mia_from_entropies(std::span<const double> seen, std::span<const double> unseen,
                                    std::span<const double> forget, const MiaConfig& cfg) {
  if (forget.empty()) throw Error(Errc::empty_input, "membership attack needs a non-empty forget set");
  if (seen.empty() || unseen.empty()) throw Error(Errc::degenerate, "membership attack needs seen and unseen samples");
  std::vector<double> x(seen.begin(), seen.end());
  x.insert(x.end(), unseen.begin(), unseen.end());
  std::vector<int> y(seen.size(), 1);
  y.resize(x.size(), 0);

  const LogisticModel m = fit_logistic_1d(x, y, cfg);
  MiaReport r;
  std::size_t right = 0;
  for (std::size_t i = 0; i < x.size(); ++i) right += (m.probability(x[i]) > 0.5) == (y[i] == 1);
  r.attack_train_accuracy = 100.0 * static_cast<double>(right) / static_cast<double>(x.size());
  std::size_t seen_count = 0;
  for (double h : forget) seen_count += m.probability(h) > 0.5;
  r.mia_score = 100.0 * static_cast<double>(seen_count) / static_cast<double>(forget.size());
  r.threshold_entropy = m.boundary();
  double lo = x[0], hi = x[0];
  for (double v : x) lo = std::min(lo, v), hi = std::max(hi, v);
  r.degenerate = lo == hi || m.weight == 0.0;
  r.attack_members = x.size();
  return r;
}

/// Draws min(members_per_class, |D_r|, |test|) rows from each pool without
/// replacement (seeded by attack_seed), fits the attack and scores D_f.
inline MiaReport mia(const ModelSpec& spec, const ParameterVector& theta, const Dataset& ds, const ForgetSplit& split,
                     const Dataset& test_set, const MiaConfig& cfg) {
  cfg.validate();
  if (split.forget_indices.empty()) throw Error(Errc::empty_input, "membership attack needs a non-empty forget set");
  if (split.retain_indices.empty() || test_set.size() == 0)
    throw Error(Errc::degenerate, "membership attack needs retained and test samples");

  const std::size_t k = std::min<std::size_t>({cfg.members_per_class, split.retain_indices.size(), test_set.size()});
  Rng rng(cfg.attack_seed);
  auto sample = [&](std::vector<std::size_t> pool) {
    for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.index(pool.size() - i)]);
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
  };
  const auto seen_rows = sample(split.retain_indices);
  const auto unseen_rows = sample(all_indices(test_set));

  std::vector<double> seen, unseen, forget;
  for (std::size_t i : seen_rows) seen.push_back(output_entropy(spec, theta, ds.features.row(i)));
  for (std::size_t i : unseen_rows) unseen.push_back(output_entropy(spec, theta, test_set.features.row(i)));
  for (std::size_t i : split.forget_indices) forget.push_back(output_entropy(spec, theta, ds.features.row(i)));
  return mia_from_entropies(seen, unseen, forget, cfg);
}

}  // namespace ssd
