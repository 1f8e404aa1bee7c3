#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cabin/ops.hpp"
#include "cabin/tensor.hpp"

namespace cabin {

enum class ReconstructionKind { MSE, SSIM, MS_SSIM, PERCEPTUAL };

std::string to_string(ReconstructionKind kind);
ReconstructionKind parse_reconstruction_kind(const std::string& name);

// Weight on the per-seat classification term: 75 with MSE, 1 otherwise.
double default_gamma(ReconstructionKind kind);

inline constexpr std::array<double, 5> kMsSsimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

// First `scales` canonical MS-SSIM weights, renormalized to sum to one.
std::vector<double> ms_ssim_weights(std::size_t scales);

struct LossConfig {
  ReconstructionKind kind = ReconstructionKind::MS_SSIM;
  double gamma = 1.0;
  int ssim_window = 11;
  double ssim_sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
  std::vector<double> msssim_weights = ms_ssim_weights(3);
  std::uint64_t feature_seed = 1234;
  std::vector<Index> feature_channels{16, 32, 64, 128};
  // Weight file (FeatureStack::save format) used instead of the seeded stack.
  std::string feature_weights;

  static LossConfig for_kind(ReconstructionKind kind);
  // Throws std::invalid_argument describing the first violated invariant.
  void validate() const;
};

// Normalized 1-d Gaussian taps.
std::vector<double> gaussian_window(int size, double sigma);

template <typename Scalar>
Tensor<Scalar> mse(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

// Per-image, per-channel windowed SSIM and contrast-structure means, each [N, C].
template <typename Scalar>
struct SsimTerms {
  Tensor<Scalar> ssim;
  Tensor<Scalar> contrast_structure;
};

template <typename Scalar>
SsimTerms<Scalar> ssim_terms(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const LossConfig& cfg);

// Batch mean of the windowed SSIM index.
template <typename Scalar>
Tensor<Scalar> ssim(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const LossConfig& cfg);

// Multi-scale SSIM with cfg.msssim_weights (finest scale first). Images must
// be at least ssim_window * 2^(scales-1) on each side.
template <typename Scalar>
Tensor<Scalar> ms_ssim(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const LossConfig& cfg);

/// Fixed convolutional pyramid used as the feature extractor of the
/// perceptual loss. Each block is two 3x3 conv + ReLU followed by a 2x2
/// average pool; its weights never receive gradients.
template <typename Scalar>
class FeatureStack {
 public:
  struct Conv {
    Tensor<Scalar> weight;
    Tensor<Scalar> bias;
  };

  FeatureStack() = default;
  FeatureStack(std::span<const Index> channels, std::uint64_t seed, Index in_channels = 1);

  // Block outputs, one per block.
  std::vector<Tensor<Scalar>> features(const Tensor<Scalar>& image) const;

  std::size_t blocks() const { return convs_.size() / 2; }
  const std::vector<Conv>& convs() const { return convs_; }

  // Flat weight file: "CBFS", u32 version, u32 tensor count, then per tensor
  // u32 rank, u32 dims[rank], little-endian f32 values.
  void save(const std::filesystem::path& path) const;
  static FeatureStack load(const std::filesystem::path& path);

  template <typename Other>
  FeatureStack<Other> cast() const;

 private:
  template <typename>
  friend class FeatureStack;
  std::vector<Conv> convs_;
};

// Sum over blocks of mse between block features of a and b.
template <typename Scalar>
Tensor<Scalar> perceptual(const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                          const FeatureStack<Scalar>& features);

// r(target, reconstruction) for the configured kind. `features` is required
// for the perceptual kind and ignored otherwise.
template <typename Scalar>
Tensor<Scalar> reconstruction_loss(const Tensor<Scalar>& target, const Tensor<Scalar>& reconstruction,
                                   const LossConfig& cfg, const FeatureStack<Scalar>* features = nullptr);

inline constexpr int kSeats = 3;
inline constexpr int kClasses = 7;

// Sum over the three seats of the mean cross-entropy of each 7-logit slice of
// `logits` [N, 21]. labels is row-major [N, 3].
template <typename Scalar>
Tensor<Scalar> seat_classification_loss(const Tensor<Scalar>& logits, std::span<const int> labels);

template <typename Scalar>
struct ObjectiveTerms {
  Tensor<Scalar> total;
  Tensor<Scalar> reconstruction;
  Tensor<Scalar> classification;
};

// r(clean, reconstruction) + gamma * classification.
template <typename Scalar>
ObjectiveTerms<Scalar> objective(const Tensor<Scalar>& clean, const Tensor<Scalar>& reconstruction,
                                 const Tensor<Scalar>& logits, std::span<const int> labels,
                                 const LossConfig& cfg, const FeatureStack<Scalar>* features = nullptr);

}  // namespace cabin
