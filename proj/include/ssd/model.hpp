#pragma once

// Multilayer perceptron classifiers over a flat, stably indexed parameter
// vector, plus the binary checkpoint format.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ssd/autodiff.hpp"
#include "ssd/binary_io.hpp"
#include "ssd/error.hpp"
#include "ssd/rng.hpp"

namespace ssd {

enum class Activation : std::uint32_t { relu = 0 };

struct ModelSpec {
  /// Input dimension, hidden widths..., class count.
  std::vector<std::size_t> layer_sizes;
  Activation activation = Activation::relu;
  std::uint64_t init_seed = 0;

  void validate() const {
    if (layer_sizes.size() < 2)
      throw Error(Errc::invalid_argument, "model needs at least input and output sizes");
    for (std::size_t s : layer_sizes)
      if (s == 0) throw Error(Errc::invalid_argument, "model layer sizes must be positive");
  }

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t class_count() const { return layer_sizes.back(); }
  std::size_t layer_count() const { return layer_sizes.size() - 1; }

  bool operator==(const ModelSpec&) const = default;
};

enum class ParamKind : std::uint8_t { weight, bias };

inline const char* to_string(ParamKind k) { return k == ParamKind::weight ? "weight" : "bias"; }

/// One contiguous block of the flat vector. Weights are stored [rows=fan_in,
/// cols=fan_out] row-major so a layer computes x * W + b.
struct ParamBlock {
  std::size_t layer;
  ParamKind kind;
  std::size_t offset;
  std::size_t length;
  std::size_t rows;
  std::size_t cols;

  bool operator==(const ParamBlock&) const = default;
};

/// Block order is weight(0), bias(0), weight(1), bias(1), ... and depends
/// only on the layer sizes.
class ParameterLayout {
 public:
  ParameterLayout() = default;

  static ParameterLayout for_spec(const ModelSpec& spec) {
    spec.validate();
    ParameterLayout layout;
    std::size_t offset = 0;
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
      const std::size_t in = spec.layer_sizes[l], out = spec.layer_sizes[l + 1];
      layout.blocks_.push_back({l, ParamKind::weight, offset, in * out, in, out});
      offset += in * out;
      layout.blocks_.push_back({l, ParamKind::bias, offset, out, 1, out});
      offset += out;
    }
    layout.total_ = offset;
    return layout;
  }

  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  std::size_t total() const { return total_; }

  /// Block containing flat index i.
  const ParamBlock& block_of(std::size_t i) const {
    for (const ParamBlock& b : blocks_)
      if (i >= b.offset && i < b.offset + b.length) return b;
    throw Error(Errc::invalid_argument, "parameter index " + std::to_string(i) + " out of range");
  }

  bool operator==(const ParameterLayout&) const = default;

 private:
  std::vector<ParamBlock> blocks_;
  std::size_t total_ = 0;
};

struct ParameterVector {
  ParameterLayout layout;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }

  std::span<const double> block(const ParamBlock& b) const {
    return std::span<const double>(values).subspan(b.offset, b.length);
  }
  std::span<double> block(const ParamBlock& b) { return std::span<double>(values).subspan(b.offset, b.length); }
};

inline void check_params(const ModelSpec& spec, const ParameterVector& theta) {
  const auto expected = ParameterLayout::for_spec(spec);
  if (theta.layout != expected || theta.values.size() != expected.total())
    throw Error(Errc::length_mismatch, "parameter vector of length " + std::to_string(theta.values.size()) +
                                           " does not match model spec with " + std::to_string(expected.total()) +
                                           " parameters");
}

/// Glorot-uniform weights in (-s, s), s = sqrt(6 / (fan_in + fan_out)), zero
/// biases. Draws come from ssd::Rng(spec.init_seed) in flat index order.
inline ParameterVector init_model(const ModelSpec& spec) {
  ParameterVector theta{ParameterLayout::for_spec(spec), {}};
  theta.values.assign(theta.layout.total(), 0.0);
  Rng rng(spec.init_seed);
  for (const ParamBlock& b : theta.layout.blocks()) {
    if (b.kind != ParamKind::weight) continue;
    const double s = std::sqrt(6.0 / static_cast<double>(b.rows + b.cols));
    for (double& w : theta.block(b)) w = rng.uniform(-s, s);
  }
  return theta;
}

/// Plain evaluation without a tape. Performs the same arithmetic in the same
/// order as mlp_on_tape, so logits agree bitwise.
inline std::vector<double> forward(const ModelSpec& spec, const ParameterVector& theta, std::span<const double> x) {
  if (x.size() != spec.input_dim())
    throw Error(Errc::shape_mismatch, "forward: input has " + std::to_string(x.size()) + " features, model expects " +
                                          std::to_string(spec.input_dim()));
  check_params(spec, theta);
  std::vector<double> h(x.begin(), x.end());
  const auto& blocks = theta.layout.blocks();
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const ParamBlock& wb = blocks[2 * l];
    const ParamBlock& bb = blocks[2 * l + 1];
    const auto w = theta.block(wb);
    const auto b = theta.block(bb);
    std::vector<double> next(wb.cols, 0.0);
    for (std::size_t p = 0; p < wb.rows; ++p) {
      const double hv = h[p];
      for (std::size_t j = 0; j < wb.cols; ++j) next[j] += hv * w[p * wb.cols + j];
    }
    for (std::size_t j = 0; j < wb.cols; ++j) next[j] += b[j];
    if (l + 1 < spec.layer_count())
      for (double& v : next) v = v > 0.0 ? v : 0.0;
    h = std::move(next);
  }
  return h;
}

/// Parameters bound as tape leaves, one per layout block.
struct BoundParameters {
  std::vector<Var> blocks;
};

inline BoundParameters bind_parameters(Tape& tape, const ParameterVector& theta) {
  BoundParameters bound;
  for (const ParamBlock& b : theta.layout.blocks()) {
    auto vals = theta.block(b);
    Shape shape = b.kind == ParamKind::weight ? Shape{b.rows, b.cols} : Shape{b.cols};
    bound.blocks.push_back(tape.parameter(Tensor(std::move(shape), {vals.begin(), vals.end()})));
  }
  return bound;
}

/// Records the forward pass for a batch input [n x input_dim]; returns logits.
inline Var mlp_on_tape(Tape& tape, const ModelSpec& spec, const BoundParameters& params, Var input) {
  const Tensor& x = tape.value(input);
  if (x.rank() != 2 || x.shape[1] != spec.input_dim())
    throw Error(Errc::shape_mismatch, "forward: input " + shape_string(x.shape) + " but model expects " +
                                          std::to_string(spec.input_dim()) + " features");
  Var h = input;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    h = tape.add_bias(tape.matmul(h, params.blocks[2 * l]), params.blocks[2 * l + 1]);
    if (l + 1 < spec.layer_count()) h = tape.relu(h);
  }
  return h;
}

/// Copies the gradient of every bound block into flat layout order.
inline std::vector<double> gather_gradient(const Tape& tape, const BoundParameters& params,
                                           const ParameterLayout& layout) {
  std::vector<double> g(layout.total());
  for (std::size_t k = 0; k < params.blocks.size(); ++k) {
    auto src = tape.grad(params.blocks[k]);
    std::copy(src.begin(), src.end(), g.begin() + static_cast<std::ptrdiff_t>(layout.blocks()[k].offset));
  }
  return g;
}

// Checkpoint file:
//   "DAMPCKPT" | version u32 | layer count u32 | layer sizes u64... |
//   activation u32 | init seed u64 | |theta| u64 | theta as f64...
// All integers and floats little-endian.

inline constexpr std::string_view kCheckpointMagic = "DAMPCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelSpec spec;
  ParameterVector params;
};

inline std::vector<char> encode_checkpoint(const ModelSpec& spec, const ParameterVector& theta) {
  check_params(spec, theta);
  binary::Writer w;
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(spec.layer_sizes.size()));
  for (std::size_t s : spec.layer_sizes) w.u64(s);
  w.u32(static_cast<std::uint32_t>(spec.activation));
  w.u64(spec.init_seed);
  w.u64(theta.values.size());
  w.f64s(theta.values);
  return w.bytes();
}

inline Checkpoint decode_checkpoint(std::span<const char> bytes, const std::string& what = "checkpoint") {
  binary::Reader r(bytes, what);
  r.expect_magic(kCheckpointMagic);
  const auto version = r.u32("version");
  if (version != kCheckpointVersion)
    throw Error(Errc::malformed_file, what + ": unsupported version " + std::to_string(version));
  Checkpoint ck;
  const auto n_layers = r.u32("layer count");
  if (n_layers > r.remaining() / 8) throw Error(Errc::malformed_file, what + ": truncated layer sizes");
  for (std::uint32_t i = 0; i < n_layers; ++i) ck.spec.layer_sizes.push_back(static_cast<std::size_t>(r.u64("layer size")));
  const auto act = r.u32("activation");
  if (act != static_cast<std::uint32_t>(Activation::relu))
    throw Error(Errc::malformed_file, what + ": unknown activation id " + std::to_string(act));
  ck.spec.activation = Activation::relu;
  ck.spec.init_seed = r.u64("init seed");
  const auto count = r.u64("parameter count");
  try {
    ck.spec.validate();
  } catch (const Error& e) {
    throw Error(Errc::malformed_file, what + ": invalid model spec (" + e.what() + ")");
  }
  ck.params.layout = ParameterLayout::for_spec(ck.spec);
  if (count != ck.params.layout.total())
    throw Error(Errc::length_mismatch, what + ": stores " + std::to_string(count) + " parameters but its spec needs " +
                                           std::to_string(ck.params.layout.total()));
  ck.params.values = r.f64s(count, "parameters");
  r.expect_end();
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec, const ParameterVector& theta) {
  binary::write_file(path, encode_checkpoint(spec, theta));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = binary::read_file(path);
  return decode_checkpoint(bytes, path.string());
}

/// Content hash of the canonical checkpoint encoding; importance files record
/// it to tie themselves to the parameters they were computed from.
inline std::uint64_t checkpoint_hash(const ModelSpec& spec, const ParameterVector& theta) {
  return binary::fnv1a(encode_checkpoint(spec, theta));
}

}  // namespace ssd
