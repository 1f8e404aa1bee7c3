#include "cabin/losses.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "cabin/init.hpp"
#include "cabin/rng.hpp"

namespace cabin {

std::string to_string(ReconstructionKind kind) {
  switch (kind) {
    case ReconstructionKind::MSE: return "mse";
    case ReconstructionKind::SSIM: return "ssim";
    case ReconstructionKind::MS_SSIM: return "msssim";
    case ReconstructionKind::PERCEPTUAL: return "perceptual";
  }
  return "?";
}

ReconstructionKind parse_reconstruction_kind(const std::string& name) {
  if (name == "mse") return ReconstructionKind::MSE;
  if (name == "ssim") return ReconstructionKind::SSIM;
  if (name == "msssim" || name == "ms_ssim" || name == "ms-ssim") return ReconstructionKind::MS_SSIM;
  if (name == "perceptual" || name == "pc") return ReconstructionKind::PERCEPTUAL;
  throw std::invalid_argument("unknown reconstruction loss '" + name + "'");
}

double default_gamma(ReconstructionKind kind) { return kind == ReconstructionKind::MSE ? 75.0 : 1.0; }

std::vector<double> ms_ssim_weights(std::size_t scales) {
  if (scales == 0 || scales > kMsSsimWeights.size())
    throw std::invalid_argument("ms_ssim_weights: scales must be in [1, 5]");
  std::vector<double> w(kMsSsimWeights.begin(), kMsSsimWeights.begin() + static_cast<long>(scales));
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& v : w) v /= total;
  return w;
}

LossConfig LossConfig::for_kind(ReconstructionKind kind) {
  LossConfig cfg;
  cfg.kind = kind;
  cfg.gamma = default_gamma(kind);
  return cfg;
}

void LossConfig::validate() const {
  if (!(gamma >= 0.0)) throw std::invalid_argument("loss.gamma must be >= 0");
  if (ssim_window < 1 || ssim_window % 2 == 0) throw std::invalid_argument("loss.ssim_window must be odd");
  if (!(ssim_sigma > 0.0)) throw std::invalid_argument("loss.ssim_sigma must be > 0");
  if (!(data_range > 0.0)) throw std::invalid_argument("loss.data_range must be > 0");
  if (msssim_weights.empty()) throw std::invalid_argument("loss.msssim_weights must not be empty");
  const double total = std::accumulate(msssim_weights.begin(), msssim_weights.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-6) throw std::invalid_argument("loss.msssim_weights must sum to 1");
  if (feature_channels.size() < 3) throw std::invalid_argument("loss.feature_channels needs at least 3 blocks");
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> taps(static_cast<std::size_t>(size));
  const double center = (size - 1) / 2.0;
  double total = 0;
  for (int i = 0; i < size; ++i) {
    taps[static_cast<std::size_t>(i)] = std::exp(-(i - center) * (i - center) / (2.0 * sigma * sigma));
    total += taps[static_cast<std::size_t>(i)];
  }
  for (auto& t : taps) t /= total;
  return taps;
}

template <typename S>
Tensor<S> mse(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) throw ShapeError("mse: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  return mean(square(a - b));
}

template <typename S>
SsimTerms<S> ssim_terms(const Tensor<S>& a, const Tensor<S>& b, const LossConfig& cfg) {
  if (a.shape() != b.shape()) throw ShapeError("ssim: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  if (a.rank() != 4) throw ShapeError("ssim: expected [N,C,H,W], got " + to_string(a.shape()));
  if (a.dim(2) < cfg.ssim_window || a.dim(3) < cfg.ssim_window)
    throw ShapeError("ssim: image " + to_string(a.shape()) + " smaller than window " + std::to_string(cfg.ssim_window));
  const auto taps = gaussian_window(cfg.ssim_window, cfg.ssim_sigma);
  const S c1 = static_cast<S>((cfg.k1 * cfg.data_range) * (cfg.k1 * cfg.data_range));
  const S c2 = static_cast<S>((cfg.k2 * cfg.data_range) * (cfg.k2 * cfg.data_range));
  auto blur = [&](const Tensor<S>& t) { return separable_filter_valid(t, std::span<const double>(taps)); };

  const Tensor<S> mu_a = blur(a);
  const Tensor<S> mu_b = blur(b);
  const Tensor<S> mu_aa = square(mu_a);
  const Tensor<S> mu_bb = square(mu_b);
  const Tensor<S> mu_ab = mu_a * mu_b;
  const Tensor<S> var_a = blur(square(a)) - mu_aa;
  const Tensor<S> var_b = blur(square(b)) - mu_bb;
  const Tensor<S> cov = blur(a * b) - mu_ab;

  const Tensor<S> cs_map = add_scalar(scale(cov, S(2)), c2) / add_scalar(var_a + var_b, c2);
  const Tensor<S> lum_map = add_scalar(scale(mu_ab, S(2)), c1) / add_scalar(mu_aa + mu_bb, c1);
  return {mean_spatial(lum_map * cs_map), mean_spatial(cs_map)};
}

template <typename S>
Tensor<S> ssim(const Tensor<S>& a, const Tensor<S>& b, const LossConfig& cfg) {
  return mean(ssim_terms(a, b, cfg).ssim);
}

template <typename S>
Tensor<S> ms_ssim(const Tensor<S>& a, const Tensor<S>& b, const LossConfig& cfg) {
  const auto& weights = cfg.msssim_weights;
  if (weights.empty()) throw std::invalid_argument("ms_ssim: no scale weights");
  if (a.rank() != 4) throw ShapeError("ms_ssim: expected [N,C,H,W], got " + to_string(a.shape()));
  const Index needed = static_cast<Index>(cfg.ssim_window) << (weights.size() - 1);
  if (std::min(a.dim(2), a.dim(3)) < needed)
    throw ShapeError("ms_ssim: " + std::to_string(weights.size()) + " scales with window " +
                     std::to_string(cfg.ssim_window) + " need images of at least " + std::to_string(needed) +
                     " pixels, got " + to_string(a.shape()));

  Tensor<S> x = a, y = b;
  Tensor<S> product;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    const auto terms = ssim_terms(x, y, cfg);
    const bool last = j + 1 == weights.size();
    // Negative values are clamped so fractional powers stay real.
    Tensor<S> factor = pow_scalar(relu(last ? terms.ssim : terms.contrast_structure), static_cast<S>(weights[j]));
    product = j == 0 ? factor : product * factor;
    if (!last) {
      x = avgpool2x2(x);
      y = avgpool2x2(y);
    }
  }
  return mean(product);
}

template <typename S>
FeatureStack<S>::FeatureStack(std::span<const Index> channels, std::uint64_t seed, Index in_channels) {
  Rng rng(derive_seed(seed, 0xFEA7u));
  Index c = in_channels;
  for (Index f : channels) {
    for (int layer = 0; layer < 2; ++layer) {
      const Index cin = layer == 0 ? c : f;
      convs_.push_back({kaiming_uniform<S>({f, cin, 3, 3}, cin * 9, rng, false), Tensor<S>({f}, S(0))});
    }
    c = f;
  }
}

template <typename S>
std::vector<Tensor<S>> FeatureStack<S>::features(const Tensor<S>& image) const {
  std::vector<Tensor<S>> out;
  Tensor<S> x = image;
  for (std::size_t k = 0; k + 1 < convs_.size(); k += 2) {
    x = relu(conv2d(x, convs_[k].weight, convs_[k].bias));
    x = relu(conv2d(x, convs_[k + 1].weight, convs_[k + 1].bias));
    x = avgpool2x2(x);
    out.push_back(x);
  }
  return out;
}

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("feature stack file truncated");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

void write_tensor(std::ostream& os, std::span<const float> values, const Shape& shape) {
  write_u32(os, static_cast<std::uint32_t>(shape.size()));
  for (Index d : shape) write_u32(os, static_cast<std::uint32_t>(d));
  for (float v : values) write_u32(os, std::bit_cast<std::uint32_t>(v));
}

}  // namespace

template <typename S>
void FeatureStack<S>::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write("CBFS", 4);
  write_u32(os, 1);
  write_u32(os, static_cast<std::uint32_t>(convs_.size() * 2));
  for (const auto& conv : convs_) {
    for (const Tensor<S>* t : {&conv.weight, &conv.bias}) {
      std::vector<float> values(t->data().begin(), t->data().end());
      write_tensor(os, values, t->shape());
    }
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

template <typename S>
FeatureStack<S> FeatureStack<S>::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "CBFS")
    throw std::runtime_error(path.string() + ": not a feature stack file");
  if (read_u32(is) != 1) throw std::runtime_error(path.string() + ": unsupported version");
  const std::uint32_t count = read_u32(is);
  if (count == 0 || count % 4 != 0) throw std::runtime_error(path.string() + ": tensor count must be a multiple of 4");
  FeatureStack stack;
  std::vector<Tensor<S>> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t rank = read_u32(is);
    if (rank > 4) throw std::runtime_error(path.string() + ": bad tensor rank");
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(read_u32(is));
    std::vector<S> values(static_cast<std::size_t>(numel(shape)));
    for (auto& v : values) v = static_cast<S>(std::bit_cast<float>(read_u32(is)));
    tensors.emplace_back(shape, std::move(values));
  }
  for (std::size_t i = 0; i < tensors.size(); i += 2) {
    const auto& w = tensors[i];
    if (w.rank() != 4 || w.dim(2) != 3 || w.dim(3) != 3 || tensors[i + 1].shape() != Shape{w.dim(0)})
      throw std::runtime_error(path.string() + ": malformed conv layer " + std::to_string(i / 2));
    stack.convs_.push_back({w, tensors[i + 1]});
  }
  return stack;
}

template <typename S>
template <typename Other>
FeatureStack<Other> FeatureStack<S>::cast() const {
  FeatureStack<Other> out;
  for (const auto& conv : convs_)
    out.convs_.push_back({cabin::cast<Other>(conv.weight), cabin::cast<Other>(conv.bias)});
  return out;
}

template <typename S>
Tensor<S> perceptual(const Tensor<S>& a, const Tensor<S>& b, const FeatureStack<S>& features) {
  if (a.shape() != b.shape()) throw ShapeError("perceptual: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  const auto fa = features.features(a);
  const auto fb = features.features(b);
  Tensor<S> total = mse(fa[0], fb[0]);
  for (std::size_t k = 1; k < fa.size(); ++k) total = total + mse(fa[k], fb[k]);
  return total;
}

template <typename S>
Tensor<S> reconstruction_loss(const Tensor<S>& target, const Tensor<S>& reconstruction, const LossConfig& cfg,
                              const FeatureStack<S>* features) {
  switch (cfg.kind) {
    case ReconstructionKind::MSE: return mse(target, reconstruction);
    case ReconstructionKind::SSIM: return add_scalar(scale(ssim(target, reconstruction, cfg), S(-1)), S(1));
    case ReconstructionKind::MS_SSIM: return add_scalar(scale(ms_ssim(target, reconstruction, cfg), S(-1)), S(1));
    case ReconstructionKind::PERCEPTUAL:
      if (!features) throw std::invalid_argument("perceptual loss requires a feature stack");
      return perceptual(target, reconstruction, *features);
  }
  throw std::invalid_argument("unknown reconstruction kind");
}

template <typename S>
Tensor<S> seat_classification_loss(const Tensor<S>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(1) != kSeats * kClasses)
    throw ShapeError("seat_classification_loss: expected [N,21] logits, got " + to_string(logits.shape()));
  const Index n = logits.dim(0);
  if (static_cast<Index>(labels.size()) != n * kSeats)
    throw std::invalid_argument("seat_classification_loss: need 3 labels per sample, got " +
                                std::to_string(labels.size()) + " for " + std::to_string(n) + " samples");
  Tensor<S> total;
  std::vector<int> seat(static_cast<std::size_t>(n));
  for (int s = 0; s < kSeats; ++s) {
    for (Index i = 0; i < n; ++i) seat[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(i * kSeats + s)];
    Tensor<S> term = softmax_xent(slice_columns(logits, s * kClasses, kClasses), std::span<const int>(seat));
    total = s == 0 ? term : total + term;
  }
  return total;
}

template <typename S>
ObjectiveTerms<S> objective(const Tensor<S>& clean, const Tensor<S>& reconstruction, const Tensor<S>& logits,
                            std::span<const int> labels, const LossConfig& cfg, const FeatureStack<S>* features) {
  Tensor<S> recon = reconstruction_loss(clean, reconstruction, cfg, features);
  Tensor<S> cls = seat_classification_loss(logits, labels);
  Tensor<S> total = recon + scale(cls, static_cast<S>(cfg.gamma));
  return {total, recon, cls};
}

#define CABIN_INSTANTIATE_LOSSES(S)                                                                   \
  template Tensor<S> mse(const Tensor<S>&, const Tensor<S>&);                                         \
  template SsimTerms<S> ssim_terms(const Tensor<S>&, const Tensor<S>&, const LossConfig&);            \
  template Tensor<S> ssim(const Tensor<S>&, const Tensor<S>&, const LossConfig&);                     \
  template Tensor<S> ms_ssim(const Tensor<S>&, const Tensor<S>&, const LossConfig&);                  \
  template class FeatureStack<S>;                                                                     \
  template Tensor<S> perceptual(const Tensor<S>&, const Tensor<S>&, const FeatureStack<S>&);          \
  template Tensor<S> reconstruction_loss(const Tensor<S>&, const Tensor<S>&, const LossConfig&,       \
                                         const FeatureStack<S>*);                                     \
  template Tensor<S> seat_classification_loss(const Tensor<S>&, std::span<const int>);                \
  template ObjectiveTerms<S> objective(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,          \
                                       std::span<const int>, const LossConfig&, const FeatureStack<S>*);

CABIN_INSTANTIATE_LOSSES(float)
CABIN_INSTANTIATE_LOSSES(double)

template FeatureStack<double> FeatureStack<float>::cast<double>() const;
template FeatureStack<float> FeatureStack<double>::cast<float>() const;

#undef CABIN_INSTANTIATE_LOSSES

}  // namespace cabin
