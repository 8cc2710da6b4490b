#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ssd/autodiff.hpp"
#include "ssd/data.hpp"
#include "ssd/error.hpp"
#include "ssd/model.hpp"
#include "ssd/rng.hpp"

namespace ssd {

struct TrainConfig {
  std::uint32_t epochs = 20;
  std::uint32_t batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::uint64_t shuffle_seed = 0;
  LabelSource label_source = LabelSource::fine;

  void validate() const {
    if (epochs < 1) throw Error(Errc::invalid_argument, "epochs must be >= 1");
    if (batch_size < 1) throw Error(Errc::invalid_argument, "batch_size must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw Error(Errc::invalid_argument, "learning_rate must be finite and non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(Errc::invalid_argument, "momentum must lie in [0, 1)");
  }
};

struct TrainResult {
  ParameterVector params;
  /// Sample-weighted mean cross-entropy per epoch.
  std::vector<double> epoch_losses;
};

inline void check_indices(const Dataset& ds, std::span<const std::size_t> indices) {
  for (std::size_t i : indices)
    if (i >= ds.size())
      throw Error(Errc::invalid_argument, "sample index " + std::to_string(i) + " out of range for dataset of " +
                                              std::to_string(ds.size()));
}

inline void check_label_count(const ModelSpec& spec, const Dataset& ds, LabelSource source) {
  if (ds.class_count(source) > spec.class_count())
    throw Error(Errc::label_out_of_range, std::string(to_string(source)) + " labels span " +
                                              std::to_string(ds.class_count(source)) + " classes but model has " +
                                              std::to_string(spec.class_count()) + " outputs");
}

/// Builds the [n x cols] feature tensor for the given rows.
inline Tensor gather_rows(const FeatureMatrix& x, std::span<const std::size_t> rows) {
  Tensor t = Tensor::zeros({rows.size(), x.cols});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto src = x.row(rows[r]);
    std::copy(src.begin(), src.end(), t.data.begin() + static_cast<std::ptrdiff_t>(r * x.cols));
  }
  return t;
}

/// Mini-batch SGD with heavy-ball momentum on mean cross-entropy:
///   v <- momentum * v + g;  theta <- theta - lr * v
/// The visiting order is reshuffled every epoch by an Rng seeded once with
/// shuffle_seed. The last batch of an epoch may be short.
inline TrainResult train(const ModelSpec& spec, const ParameterVector& init, const Dataset& ds,
                         std::span<const std::size_t> indices, const TrainConfig& cfg) {
  cfg.validate();
  check_params(spec, init);
  check_indices(ds, indices);
  check_label_count(spec, ds, cfg.label_source);
  if (indices.empty()) throw Error(Errc::empty_input, "train: no samples");

  const auto& labels = ds.labels(cfg.label_source);
  TrainResult result{init, {}};
  std::vector<double> velocity(init.size(), 0.0);
  std::vector<std::size_t> order(indices.begin(), indices.end());
  Rng rng(cfg.shuffle_seed);

  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_no) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> batch(order.data() + start, end - start);
      std::vector<std::size_t> y(batch.size());
      for (std::size_t k = 0; k < batch.size(); ++k) y[k] = labels[batch[k]];

      Tape tape;
      const auto params = bind_parameters(tape, result.params);
      const Var logits = mlp_on_tape(tape, spec, params, tape.constant(gather_rows(ds.features, batch)));
      const Var loss = tape.cross_entropy(logits, y);
      const double loss_value = tape.value(loss).item();
      if (!std::isfinite(loss_value))
        throw Error(Errc::divergence, "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                          std::to_string(batch_no));
      tape.backward(loss);
      const auto grad = gather_gradient(tape, params, result.params.layout);
      for (std::size_t i = 0; i < grad.size(); ++i) {
        velocity[i] = cfg.momentum * velocity[i] + grad[i];
        result.params.values[i] -= cfg.learning_rate * velocity[i];
      }
      loss_sum += loss_value * static_cast<double>(batch.size());
    }
    result.epoch_losses.push_back(loss_sum / static_cast<double>(order.size()));
  }
  return result;
}

/// Fresh initialisation from spec.init_seed, trained on the retain set only.
inline TrainResult retrain_baseline(const ModelSpec& spec, const Dataset& ds, const ForgetSplit& split,
                                    const TrainConfig& cfg) {
  return train(spec, init_model(spec), ds, split.retain_indices, cfg);
}

/// Continues training on the retain set for cfg.epochs epochs; zero epochs
/// returns the input unchanged.
inline TrainResult finetune_baseline(const ModelSpec& spec, const ParameterVector& trained, const Dataset& ds,
                                     const ForgetSplit& split, const TrainConfig& cfg) {
  if (cfg.epochs == 0) {
    check_params(spec, trained);
    return {trained, {}};
  }
  return train(spec, trained, ds, split.retain_indices, cfg);
}

/// Index of the largest logit; ties go to the lowest class index.
inline std::size_t predict(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.size(); ++c)
    if (logits[c] > logits[best]) best = c;
  return best;
}

/// Percentage of rows whose argmax logit equals their label.
inline double accuracy(const ModelSpec& spec, const ParameterVector& theta, const Dataset& ds,
                       std::span<const std::size_t> indices, LabelSource source) {
  if (indices.empty()) throw Error(Errc::empty_input, "accuracy over an empty index list");
  check_indices(ds, indices);
  const auto& labels = ds.labels(source);
  std::size_t correct = 0;
  for (std::size_t i : indices) correct += predict(forward(spec, theta, ds.features.row(i))) == labels[i];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(indices.size());
}

}  // namespace ssd
