#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "cabin/losses.hpp"
#include "cabin/ops.hpp"
#include "cabin/rng.hpp"
#include "cabin/tensor.hpp"

namespace cabin {

enum class DecoderMode { MaxUnpool, Nearest };
enum class ModelKind { Autoencoder, Baseline };

std::string to_string(DecoderMode mode);
std::string to_string(ModelKind kind);
DecoderMode parse_decoder_mode(const std::string& text);
ModelKind parse_model_kind(const std::string& text);

struct ModelSpec {
  ModelKind kind = ModelKind::Autoencoder;
  int input_size = 64;
  int base_filters = 8;
  int blocks = 4;
  int latent_dim = 64;
  DecoderMode decoder_mode = DecoderMode::MaxUnpool;
  int heads = 3;
  int classes = 7;
  int head_hidden = 64;
  int fc_hidden = 512;

  void validate() const;
  // Channels produced by encoder block k.
  int filters(int block) const { return base_filters << block; }
  int bottleneck_side() const { return input_size >> blocks; }
  // Stable digest of every field; stored in checkpoints.
  std::uint64_t hash() const;
  bool has_decoder() const { return kind == ModelKind::Autoencoder; }
};

template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  bool decay = true;  // false for biases and batchnorm affine terms
};

template <typename Scalar>
struct BatchNormBuffer {
  std::string name;
  BatchNormStats<Scalar> stats;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Positions of a layer's tensors inside Model::parameters()/buffers(). A conv
// without batchnorm has kNoSlot for gamma, beta and stats.
inline constexpr std::size_t kNoSlot = static_cast<std::size_t>(-1);
struct ConvSlots {
  std::size_t weight = kNoSlot, bias = kNoSlot, gamma = kNoSlot, beta = kNoSlot, stats = kNoSlot;
};
struct DenseSlots {
  std::size_t weight = kNoSlot, bias = kNoSlot;
};

/// Encoder g, decoder h and the three-head seat classifier c, all sharing
/// one latent vector. Baseline models carry no decoder.
template <typename Scalar>
class Model {
 public:
  struct Encoded {
    Tensor<Scalar> latent;              // [N, latent_dim]
    std::vector<PoolIndices> indices;   // one per block; empty in Nearest mode
  };

  Model() = default;
  Model(const ModelSpec& spec, Rng& rng);

  const ModelSpec& spec() const { return spec_; }

  Encoded encode(const Tensor<Scalar>& images, BatchNormMode mode);
  Tensor<Scalar> decode(const Tensor<Scalar>& latent, const std::vector<PoolIndices>& indices, BatchNormMode mode);
  // Raw head outputs [N, heads * classes].
  Tensor<Scalar> logits(const Tensor<Scalar>& latent) const;
  // Softmax per head, each [N, classes].
  std::vector<Tensor<Scalar>> classify(const Tensor<Scalar>& latent) const;

  std::vector<Parameter<Scalar>>& parameters() { return params_; }
  const std::vector<Parameter<Scalar>>& parameters() const { return params_; }
  std::vector<BatchNormBuffer<Scalar>>& buffers() { return buffers_; }
  const std::vector<BatchNormBuffer<Scalar>>& buffers() const { return buffers_; }
  Index parameter_count() const;
  Tensor<Scalar>& parameter(const std::string& name);

  void zero_grad();
  // Independent copy of every parameter and buffer.
  Model clone() const;
  template <typename Other>
  Model<Other> cast() const;

  /// Binary checkpoint: "CABINCKP", u32 version, u64 spec hash, u32 length +
  /// spec JSON, u32 entry count, then per entry u32 name length, name, u8
  /// kind (0 parameter, 1 running mean, 2 running var), u32 rank, u32 dims,
  /// little-endian f32 values.
  void save(const std::filesystem::path& path) const;
  void save(std::ostream& os) const;
  // Loads into this model; its spec must match the file. Nothing is modified
  // unless the whole file validates.
  void load(const std::filesystem::path& path);
  void load(std::istream& is);
  static Model from_checkpoint(const std::filesystem::path& path);
  static ModelSpec read_spec(const std::filesystem::path& path);

 private:
  template <typename>
  friend class Model;

  std::size_t add_param(std::string name, Tensor<Scalar> value, bool decay);
  ConvSlots add_conv_bn(const std::string& prefix, Index in, Index out, Rng& rng, bool with_bn = true);
  DenseSlots add_dense(const std::string& prefix, Index in, Index out, Rng& rng);
  Tensor<Scalar> conv_bn_relu(const ConvSlots& layer, const Tensor<Scalar>& x, BatchNormMode mode);
  Tensor<Scalar> dense(const DenseSlots& layer, const Tensor<Scalar>& x) const;

  ModelSpec spec_;
  std::vector<Parameter<Scalar>> params_;
  std::vector<BatchNormBuffer<Scalar>> buffers_;
  std::vector<std::array<ConvSlots, 2>> encoder_;
  std::array<DenseSlots, 2> encoder_fc_{};
  std::array<DenseSlots, 2> decoder_fc_{};
  std::vector<std::array<ConvSlots, 2>> decoder_;  // in application order, deepest first
  std::array<DenseSlots, 2> head_{};
};

extern template class Model<float>;
extern template class Model<double>;

using ModelF = Model<float>;

// Stacks equally sized 2-d images (anything with rows(), cols() and (r, c))
// into [N, 1, H, W].
template <typename Scalar, typename ImageRange>
Tensor<Scalar> to_batch(const ImageRange& images) {
  if (std::empty(images)) throw ShapeError("to_batch: no images");
  const auto& first = *std::begin(images);
  const Index h = first.rows(), w = first.cols();
  std::vector<Scalar> values;
  values.reserve(static_cast<std::size_t>(std::size(images) * h * w));
  for (const auto& img : images) {
    if (img.rows() != h || img.cols() != w)
      throw ShapeError("to_batch: mixed image sizes");
    for (Index r = 0; r < h; ++r)
      for (Index c = 0; c < w; ++c) values.push_back(static_cast<Scalar>(img(r, c)));
  }
  return Tensor<Scalar>({static_cast<Index>(std::size(images)), 1, h, w}, std::move(values));
}

template <typename Scalar>
struct ForwardResult {
  ObjectiveTerms<Scalar> terms;
  Tensor<Scalar> reconstruction;  // empty for baseline models
  Tensor<Scalar> logits;
};

/// Training objective on one batch: reconstruction of the clean
/// images from the encoding of the augmented ones plus gamma times the
/// summed per-seat cross-entropies. Baseline models contribute only the
/// classification term. labels is row-major [N, 3].
template <typename Scalar>
ForwardResult<Scalar> combined_objective(Model<Scalar>& model, const Tensor<Scalar>& clean,
                                         const Tensor<Scalar>& augmented, std::span<const int> labels,
                                         const LossConfig& cfg, BatchNormMode mode,
                                         const FeatureStack<Scalar>* features = nullptr);

}  // namespace cabin
