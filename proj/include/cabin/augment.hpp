#pragma once

#include <array>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "cabin/data.hpp"
#include "cabin/rng.hpp"

namespace cabin {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  double draw(Rng& rng) const { return rng.uniform(lo, hi); }
};

struct AugmentConfig {
  double flip_prob = 0.5;
  double perspective_prob = 0.3;
  double perspective_jitter = 0.1;  // max corner displacement, fraction of side
  double emboss_prob = 0.3;
  Range emboss_strength{0.0, 0.5};
  Range emboss_alpha{0.0, 1.0};
  double invert_prob = 0.1;
  double contrast_prob = 0.3;
  Range contrast_gain{5.0, 10.0};
  Range contrast_cutoff{0.4, 0.6};
  double clahe_prob = 0.3;
  int clahe_tiles = 4;
  double clahe_clip = 2.0;
  double laplace_prob = 0.3;
  Range laplace_scale{0.0, 0.1};

  void validate() const;
  // Every probability set to zero.
  static AugmentConfig none();
};

// Mirror left-right; seat labels (l, m, r) become (r, m, l).
LabeledScene hflip_with_labels(const LabeledScene& scene);
Image hflip(const Image& image);

// Projective map on normalized [0,1]^2 coordinates.
using Homography = Eigen::Matrix3d;
using Quad = std::array<Eigen::Vector2d, 4>;  // images of (0,0), (1,0), (1,1), (0,1)

struct DegenerateQuad : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

bool is_convex(const Quad& quad);

// Closed-form projective map taking the unit square onto `quad`.
Homography square_to_quad(const Quad& quad);

// out(p) = in(H p) with bilinear sampling and edge replication.
Image warp_homography(const Image& image, const Homography& h);

// Resamples the region bounded by `corners` (normalized input coordinates)
// onto the full output frame. Throws DegenerateQuad for non-convex corners.
Image perspective_warp(const Image& image, const Quad& corners);

// Unit-square corners each displaced by up to `jitter` per axis; redrawn
// until convex.
Quad random_quad(double jitter, Rng& rng);

Image invert(const Image& image);
// 1 / (1 + exp(gain * (cutoff - x))), rescaled so 0 -> 0 and 1 -> 1.
Image sigmoid_contrast(const Image& image, double gain, double cutoff);
Image additive_laplace(const Image& image, double scale, Rng& rng);
// Blend of the image with its directional 3x3 emboss response.
Image emboss(const Image& image, double strength, double alpha);

inline constexpr int kClaheBins = 256;

struct ClaheTile {
  std::vector<int> raw;      // histogram of the tile
  std::vector<int> clipped;  // after clipping and redistribution
  int limit = 0;
};

// Per-tile histograms (row-major tile order) of the edge-padded image.
std::vector<ClaheTile> clahe_histograms(const Image& image, int tiles, double clip_limit);

// Contrast-limited adaptive histogram equalization on a tiles x tiles grid
// with bilinear interpolation between tile mappings.
Image clahe(const Image& image, int tiles, double clip_limit);

struct AppliedOps {
  bool flip = false;
  bool perspective = false;
  bool emboss = false;
  bool invert = false;
  bool contrast = false;
  bool clahe = false;
  bool laplace = false;
};

struct DenoisingPair {
  Image clean;
  Image augmented;
  SeatLabels labels{};
  int seat_count = kNumSeats;
  AppliedOps applied;
};

// Clean target plus corrupted input. A drawn flip is applied to both images
// and the labels; the corruptions only touch the input.
DenoisingPair make_denoising_pair(const LabeledScene& scene, const AugmentConfig& cfg, Rng& rng);

}  // namespace cabin
