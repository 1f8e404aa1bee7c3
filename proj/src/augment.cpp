#include "cabin/augment.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cabin {

namespace {

void require_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string("augment.") + name + " must be in [0,1]");
}

void require_range(const Range& r, const char* name) {
  if (!(r.lo <= r.hi)) throw std::invalid_argument(std::string("augment.") + name + " has lo > hi");
}

Image clamp01(Image image) { return image.cwiseMax(0.0f).cwiseMin(1.0f); }

float sample_clamped(const Image& image, double y, double x) {
  const double maxy = static_cast<double>(image.rows() - 1), maxx = static_cast<double>(image.cols() - 1);
  y = std::clamp(y, 0.0, maxy);
  x = std::clamp(x, 0.0, maxx);
  const Eigen::Index y0 = static_cast<Eigen::Index>(std::floor(y)), x0 = static_cast<Eigen::Index>(std::floor(x));
  const Eigen::Index y1 = std::min<Eigen::Index>(y0 + 1, image.rows() - 1);
  const Eigen::Index x1 = std::min<Eigen::Index>(x0 + 1, image.cols() - 1);
  const double wy = y - static_cast<double>(y0), wx = x - static_cast<double>(x0);
  const double top = (1 - wx) * image(y0, x0) + wx * image(y0, x1);
  const double bottom = (1 - wx) * image(y1, x0) + wx * image(y1, x1);
  return static_cast<float>((1 - wy) * top + wy * bottom);
}

}  // namespace

void AugmentConfig::validate() const {
  require_probability(flip_prob, "flip_prob");
  require_probability(perspective_prob, "perspective_prob");
  require_probability(emboss_prob, "emboss_prob");
  require_probability(invert_prob, "invert_prob");
  require_probability(contrast_prob, "contrast_prob");
  require_probability(clahe_prob, "clahe_prob");
  require_probability(laplace_prob, "laplace_prob");
  if (!(perspective_jitter >= 0.0 && perspective_jitter < 0.5))
    throw std::invalid_argument("augment.perspective_jitter must be in [0,0.5)");
  require_range(emboss_strength, "emboss_strength");
  require_range(emboss_alpha, "emboss_alpha");
  require_range(contrast_gain, "contrast_gain");
  require_range(contrast_cutoff, "contrast_cutoff");
  require_range(laplace_scale, "laplace_scale");
  if (laplace_scale.lo < 0) throw std::invalid_argument("augment.laplace_scale must be >= 0");
  if (clahe_tiles < 1) throw std::invalid_argument("augment.clahe_tiles must be >= 1");
  if (!(clahe_clip > 0)) throw std::invalid_argument("augment.clahe_clip must be > 0");
}

AugmentConfig AugmentConfig::none() {
  AugmentConfig cfg;
  cfg.flip_prob = cfg.perspective_prob = cfg.emboss_prob = cfg.invert_prob = 0.0;
  cfg.contrast_prob = cfg.clahe_prob = cfg.laplace_prob = 0.0;
  return cfg;
}

Image hflip(const Image& image) { return image.rowwise().reverse(); }

LabeledScene hflip_with_labels(const LabeledScene& scene) {
  LabeledScene out = scene;
  out.image = hflip(scene.image);
  std::swap(out.labels[0], out.labels[2]);
  std::swap(out.instance_ids[0], out.instance_ids[2]);
  return out;
}

bool is_convex(const Quad& q) {
  int sign = 0;
  for (int i = 0; i < 4; ++i) {
    const Eigen::Vector2d a = q[static_cast<std::size_t>((i + 1) % 4)] - q[static_cast<std::size_t>(i)];
    const Eigen::Vector2d b = q[static_cast<std::size_t>((i + 2) % 4)] - q[static_cast<std::size_t>((i + 1) % 4)];
    const double cross = a.x() * b.y() - a.y() * b.x();
    if (std::abs(cross) < 1e-12) return false;
    const int s = cross > 0 ? 1 : -1;
    if (sign == 0) sign = s;
    else if (s != sign) return false;
  }
  return true;
}

Homography square_to_quad(const Quad& quad) {
  const double x0 = quad[0].x(), x1 = quad[1].x(), x2 = quad[2].x(), x3 = quad[3].x();
  const double y0 = quad[0].y(), y1 = quad[1].y(), y2 = quad[2].y(), y3 = quad[3].y();
  const double sx = x0 - x1 + x2 - x3, sy = y0 - y1 + y2 - y3;
  Homography h;
  if (std::abs(sx) < 1e-15 && std::abs(sy) < 1e-15) {
    h << x1 - x0, x3 - x0, x0,
         y1 - y0, y3 - y0, y0,
         0, 0, 1;
    return h;
  }
  const double dx1 = x1 - x2, dx2 = x3 - x2, dy1 = y1 - y2, dy2 = y3 - y2;
  const double det = dx1 * dy2 - dx2 * dy1;
  if (std::abs(det) < 1e-15) throw DegenerateQuad("square_to_quad: degenerate corner set");
  const double g = (sx * dy2 - dx2 * sy) / det;
  const double hh = (dx1 * sy - sx * dy1) / det;
  h << x1 - x0 + g * x1, x3 - x0 + hh * x3, x0,
       y1 - y0 + g * y1, y3 - y0 + hh * y3, y0,
       g, hh, 1;
  return h;
}

Image warp_homography(const Image& image, const Homography& h) {
  const Eigen::Index rows = image.rows(), cols = image.cols();
  Image out(rows, cols);
  for (Eigen::Index y = 0; y < rows; ++y) {
    for (Eigen::Index x = 0; x < cols; ++x) {
      const Eigen::Vector3d p(static_cast<double>(x + 0.5) / static_cast<double>(cols),
                              static_cast<double>(y + 0.5) / static_cast<double>(rows), 1.0);
      const Eigen::Vector3d q = h * p;
      const double u = q.x() / q.z(), v = q.y() / q.z();
      out(y, x) = sample_clamped(image, v * static_cast<double>(rows) - 0.5, u * static_cast<double>(cols) - 0.5);
    }
  }
  return out;
}

Image perspective_warp(const Image& image, const Quad& corners) {
  if (!is_convex(corners)) throw DegenerateQuad("perspective_warp: corners are not a convex quadrilateral");
  return warp_homography(image, square_to_quad(corners));
}

Quad random_quad(double jitter, Rng& rng) {
  static const Quad unit{Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0), Eigen::Vector2d(1, 1), Eigen::Vector2d(0, 1)};
  for (;;) {
    Quad q = unit;
    for (auto& c : q) c += Eigen::Vector2d(rng.uniform(-jitter, jitter), rng.uniform(-jitter, jitter));
    if (is_convex(q)) return q;
  }
}

Image invert(const Image& image) { return 1.0f - image; }

Image sigmoid_contrast(const Image& image, double gain, double cutoff) {
  auto s = [&](double x) { return 1.0 / (1.0 + std::exp(gain * (cutoff - x))); };
  const double lo = s(0.0), hi = s(1.0);
  Image out(image.rows(), image.cols());
  for (Eigen::Index i = 0; i < image.size(); ++i)
    out.data()[i] = static_cast<float>((s(image.data()[i]) - lo) / (hi - lo));
  return clamp01(std::move(out));
}

Image additive_laplace(const Image& image, double scale, Rng& rng) {
  if (scale == 0.0) return image;
  Image out = image;
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] += static_cast<float>(rng.laplace(scale));
  return clamp01(std::move(out));
}

Image emboss(const Image& image, double strength, double alpha) {
  const double k[3][3] = {{-1 - strength, -strength, 0}, {-strength, 1, strength}, {0, strength, 1 + strength}};
  const Eigen::Index rows = image.rows(), cols = image.cols();
  Image out(rows, cols);
  for (Eigen::Index y = 0; y < rows; ++y)
    for (Eigen::Index x = 0; x < cols; ++x) {
      double acc = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const Eigen::Index yy = std::clamp<Eigen::Index>(y + dy, 0, rows - 1);
          const Eigen::Index xx = std::clamp<Eigen::Index>(x + dx, 0, cols - 1);
          acc += k[dy + 1][dx + 1] * image(yy, xx);
        }
      out(y, x) = static_cast<float>((1 - alpha) * image(y, x) + alpha * acc);
    }
  return clamp01(std::move(out));
}

namespace {

struct TileGrid {
  Image padded;
  int tiles = 0;
  Eigen::Index tile_h = 0, tile_w = 0;
};

TileGrid pad_to_tiles(const Image& image, int tiles) {
  TileGrid g;
  g.tiles = tiles;
  g.tile_h = (image.rows() + tiles - 1) / tiles;
  g.tile_w = (image.cols() + tiles - 1) / tiles;
  g.padded.resize(g.tile_h * tiles, g.tile_w * tiles);
  for (Eigen::Index y = 0; y < g.padded.rows(); ++y)
    for (Eigen::Index x = 0; x < g.padded.cols(); ++x)
      g.padded(y, x) = image(std::min(y, image.rows() - 1), std::min(x, image.cols() - 1));
  return g;
}

int bin_of(float v) { return static_cast<int>(std::lround(std::clamp(v, 0.0f, 1.0f) * (kClaheBins - 1))); }

std::vector<ClaheTile> histograms(const TileGrid& g, double clip_limit) {
  std::vector<ClaheTile> out;
  const Eigen::Index area = g.tile_h * g.tile_w;
  const int fair = static_cast<int>((area + kClaheBins - 1) / kClaheBins);
  const int limit = std::max(fair, static_cast<int>(clip_limit * static_cast<double>(area) / kClaheBins));
  for (int ty = 0; ty < g.tiles; ++ty)
    for (int tx = 0; tx < g.tiles; ++tx) {
      ClaheTile tile;
      tile.limit = limit;
      tile.raw.assign(kClaheBins, 0);
      for (Eigen::Index y = 0; y < g.tile_h; ++y)
        for (Eigen::Index x = 0; x < g.tile_w; ++x) ++tile.raw[static_cast<std::size_t>(bin_of(g.padded(ty * g.tile_h + y, tx * g.tile_w + x)))];
      tile.clipped = tile.raw;
      long excess = 0;
      for (auto& h : tile.clipped)
        if (h > limit) {
          excess += h - limit;
          h = limit;
        }
      // Hand the excess back to bins still below the limit, never past it.
      while (excess > 0) {
        const long open = std::count_if(tile.clipped.begin(), tile.clipped.end(), [&](int h) { return h < limit; });
        if (open == 0) break;
        const long share = std::max(1L, excess / open);
        for (auto& h : tile.clipped) {
          if (excess == 0) break;
          if (h >= limit) continue;
          const long add = std::min({share, static_cast<long>(limit - h), excess});
          h += static_cast<int>(add);
          excess -= add;
        }
      }
      out.push_back(std::move(tile));
    }
  return out;
}

}  // namespace

std::vector<ClaheTile> clahe_histograms(const Image& image, int tiles, double clip_limit) {
  if (tiles < 1) throw std::invalid_argument("clahe: tiles must be >= 1");
  return histograms(pad_to_tiles(image, tiles), clip_limit);
}

Image clahe(const Image& image, int tiles, double clip_limit) {
  if (tiles < 1) throw std::invalid_argument("clahe: tiles must be >= 1");
  const TileGrid g = pad_to_tiles(image, tiles);
  const auto hists = histograms(g, clip_limit);
  const double area = static_cast<double>(g.tile_h * g.tile_w);
  std::vector<std::array<float, kClaheBins>> luts(hists.size());
  for (std::size_t t = 0; t < hists.size(); ++t) {
    long cdf = 0;
    for (int b = 0; b < kClaheBins; ++b) {
      cdf += hists[t].clipped[static_cast<std::size_t>(b)];
      luts[t][static_cast<std::size_t>(b)] = static_cast<float>(static_cast<double>(cdf) / area);
    }
  }
  Image out(image.rows(), image.cols());
  for (Eigen::Index y = 0; y < image.rows(); ++y) {
    // Position relative to tile centres.
    const double fy = (static_cast<double>(y) + 0.5) / static_cast<double>(g.tile_h) - 0.5;
    const int ty0 = std::clamp(static_cast<int>(std::floor(fy)), 0, tiles - 1);
    const int ty1 = std::min(ty0 + 1, tiles - 1);
    const double wy = std::clamp(fy - ty0, 0.0, 1.0);
    for (Eigen::Index x = 0; x < image.cols(); ++x) {
      const double fx = (static_cast<double>(x) + 0.5) / static_cast<double>(g.tile_w) - 0.5;
      const int tx0 = std::clamp(static_cast<int>(std::floor(fx)), 0, tiles - 1);
      const int tx1 = std::min(tx0 + 1, tiles - 1);
      const double wx = std::clamp(fx - tx0, 0.0, 1.0);
      const auto b = static_cast<std::size_t>(bin_of(image(y, x)));
      auto lut = [&](int ty, int tx) { return luts[static_cast<std::size_t>(ty * tiles + tx)][b]; };
      const double top = (1 - wx) * lut(ty0, tx0) + wx * lut(ty0, tx1);
      const double bottom = (1 - wx) * lut(ty1, tx0) + wx * lut(ty1, tx1);
      out(y, x) = static_cast<float>((1 - wy) * top + wy * bottom);
    }
  }
  return clamp01(std::move(out));
}

DenoisingPair make_denoising_pair(const LabeledScene& scene, const AugmentConfig& cfg, Rng& rng) {
  DenoisingPair pair;
  pair.clean = scene.image;
  pair.labels = scene.labels;
  pair.seat_count = scene.seat_count;
  const bool flip = rng.bernoulli(cfg.flip_prob);
  if (flip) {
    pair.clean = hflip(pair.clean);
    std::swap(pair.labels[0], pair.labels[2]);
  }
  pair.applied.flip = flip;
  Image x = pair.clean;

  if ((pair.applied.perspective = rng.bernoulli(cfg.perspective_prob)))
    x = perspective_warp(x, random_quad(cfg.perspective_jitter, rng));
  if ((pair.applied.emboss = rng.bernoulli(cfg.emboss_prob))) {
    const double strength = cfg.emboss_strength.draw(rng);
    x = emboss(x, strength, cfg.emboss_alpha.draw(rng));
  }
  if ((pair.applied.invert = rng.bernoulli(cfg.invert_prob))) x = invert(x);
  if ((pair.applied.contrast = rng.bernoulli(cfg.contrast_prob))) {
    const double gain = cfg.contrast_gain.draw(rng);
    x = sigmoid_contrast(x, gain, cfg.contrast_cutoff.draw(rng));
  }
  if ((pair.applied.clahe = rng.bernoulli(cfg.clahe_prob))) x = clahe(x, cfg.clahe_tiles, cfg.clahe_clip);
  if ((pair.applied.laplace = rng.bernoulli(cfg.laplace_prob))) x = additive_laplace(x, cfg.laplace_scale.draw(rng), rng);
  pair.augmented = clamp01(std::move(x));
  return pair;
}

}  // namespace cabin
