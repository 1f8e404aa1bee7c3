#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "cabin/tensor.hpp"

namespace cabin {

/// Argmax positions recorded by maxpool2x2. Each entry is the flat offset
/// (row * input_width + col) inside the input plane of the pooled element.
struct PoolIndices {
  Shape input_shape;   // [N, C, H, W]
  Shape output_shape;  // [N, C, H/2, W/2]
  std::vector<std::int32_t> indices;
};

/// While alive, the branch taken by every piecewise-linear op on this thread
/// (ReLU signs, max-pool argmaxes) is folded into a digest. Two forward passes
/// with equal digests took the same branch everywhere.
class DecisionTrace {
 public:
  DecisionTrace();
  ~DecisionTrace();
  DecisionTrace(const DecisionTrace&) = delete;
  DecisionTrace& operator=(const DecisionTrace&) = delete;

  std::uint64_t digest() const { return digest_; }
  static bool active();
  static void record(std::uint64_t value);

 private:
  DecisionTrace* previous_;
  std::uint64_t digest_ = 0x9E3779B97F4A7C15ULL;
};

enum class BatchNormMode { Train, Eval };

template <typename Scalar>
struct BatchNormStats {
  std::vector<Scalar> running_mean;
  std::vector<Scalar> running_var;

  explicit BatchNormStats(Index channels = 0)
      : running_mean(static_cast<std::size_t>(channels), Scalar(0)),
        running_var(static_cast<std::size_t>(channels), Scalar(1)) {}
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// Layers.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias);

template <typename Scalar>
std::pair<Tensor<Scalar>, PoolIndices> maxpool2x2(const Tensor<Scalar>& input);

template <typename Scalar>
Tensor<Scalar> maxunpool2x2(const Tensor<Scalar>& input, const PoolIndices& indices);

template <typename Scalar>
Tensor<Scalar> upsample_nearest2x(const Tensor<Scalar>& input);

// Mean over each 2x2 window; a trailing odd row or column is dropped.
template <typename Scalar>
Tensor<Scalar> avgpool2x2(const Tensor<Scalar>& input);

template <typename Scalar>
Tensor<Scalar> batchnorm(const Tensor<Scalar>& input, const Tensor<Scalar>& gamma,
                         const Tensor<Scalar>& beta, BatchNormStats<Scalar>& stats,
                         BatchNormMode mode, double eps = kBatchNormEps,
                         double momentum = kBatchNormMomentum);

// input [N, in], weight [out, in], bias [out] -> [N, out]
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias);

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& input);

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& input);

inline constexpr int kIgnoreTarget = -1;

// Mean over rows of -log softmax(logits)[target]. Rows whose target is
// kIgnoreTarget are skipped and excluded from the mean; an all-ignored batch
// gives 0.
template <typename Scalar>
Tensor<Scalar> softmax_xent(const Tensor<Scalar>& logits, std::span<const int> targets);

// Row-wise softmax; not recorded on the tape.
template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& logits);

// Shape manipulation.
template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& input, Shape shape);

// Columns [start, start + count) of a 2-d tensor.
template <typename Scalar>
Tensor<Scalar> slice_columns(const Tensor<Scalar>& input, Index start, Index count);

// Elementwise arithmetic on equal shapes.
template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> operator/(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> add_scalar(const Tensor<Scalar>& a, Scalar value);
template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor);
template <typename Scalar>
Tensor<Scalar> square(const Tensor<Scalar>& a);
// x^p for x >= 0; the derivative at x == 0 is taken as 0.
template <typename Scalar>
Tensor<Scalar> pow_scalar(const Tensor<Scalar>& a, Scalar exponent);

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, Scalar value) { return add_scalar(a, value); }
template <typename Scalar>
Tensor<Scalar> operator*(Scalar factor, const Tensor<Scalar>& a) { return scale(a, factor); }

// Reductions.
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a);
// [N, C, H, W] -> [N, C]
template <typename Scalar>
Tensor<Scalar> mean_spatial(const Tensor<Scalar>& a);

// Depthwise separable filter with "valid" extent: the same 1-d kernel along
// rows and columns. [N, C, H, W] -> [N, C, H - k + 1, W - k + 1]
template <typename Scalar>
Tensor<Scalar> separable_filter_valid(const Tensor<Scalar>& input, std::span<const double> kernel);

}  // namespace cabin
