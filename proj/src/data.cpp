#include "cabin/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "cabin/config.hpp"
#include "json.hpp"

namespace cabin {

namespace fs = std::filesystem;
using nlohmann::json;

const char* class_name(int label) {
  static constexpr const char* names[kNumClasses] = {
      "empty", "infant_seat_occupied", "infant_seat_empty", "child_seat_occupied",
      "child_seat_empty", "adult", "everyday_object"};
  if (label < 0 || label >= kNumClasses) return "none";
  return names[label];
}

const char* to_string(Split split) { return split == Split::Train ? "train" : "test"; }

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "test") return Split::Test;
  throw DataError("unknown split '" + text + "' (expected train or test)");
}

// ---------------------------------------------------------------------------
// PGM

namespace {

std::string next_token(std::istream& is, const fs::path& path) {
  std::string token;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(static_cast<char>(ch));
  }
  if (token.empty()) throw DataError(path.string() + ": truncated PGM header");
  return token;
}

int parse_positive(const std::string& token, const fs::path& path, const char* what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(token, &used);
    if (used != token.size() || v <= 0) throw std::invalid_argument(token);
    return v;
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed PGM " + what + " '" + token + "'");
  }
}

}  // namespace

Image read_pgm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open image " + path.string());
  if (next_token(is, path) != "P5") throw DataError(path.string() + ": not a binary PGM (P5)");
  const int width = parse_positive(next_token(is, path), path, "width");
  const int height = parse_positive(next_token(is, path), path, "height");
  const int maxval = parse_positive(next_token(is, path), path, "maxval");
  if (maxval > 65535) throw DataError(path.string() + ": maxval above 65535");
  // next_token consumed exactly one whitespace byte after maxval.
  const bool wide = maxval > 255;
  const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  std::vector<unsigned char> raw(count * (wide ? 2 : 1));
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw DataError(path.string() + ": truncated pixel data");
  Image image(height, width);
  const float inv = 1.0f / static_cast<float>(maxval);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned v = wide ? (static_cast<unsigned>(raw[2 * i]) << 8 | raw[2 * i + 1]) : raw[i];
    if (v > static_cast<unsigned>(maxval)) throw DataError(path.string() + ": pixel exceeds maxval");
    image.data()[i] = static_cast<float>(v) * inv;
  }
  return image;
}

namespace {

void write_pgm_impl(const fs::path& path, const Image& image, int maxval) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write image " + path.string());
  os << "P5\n" << image.cols() << ' ' << image.rows() << '\n' << maxval << '\n';
  std::vector<unsigned char> raw;
  raw.reserve(static_cast<std::size_t>(image.size()) * (maxval > 255 ? 2 : 1));
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    const float v = std::clamp(image.data()[i], 0.0f, 1.0f);
    const unsigned q = static_cast<unsigned>(std::lround(v * static_cast<float>(maxval)));
    if (maxval > 255) raw.push_back(static_cast<unsigned char>(q >> 8));
    raw.push_back(static_cast<unsigned char>(q & 0xFF));
  }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) throw DataError("write failed: " + path.string());
}

}  // namespace

void write_pgm(const fs::path& path, const Image& image) { write_pgm_impl(path, image, 255); }
void write_pgm16(const fs::path& path, const Image& image) { write_pgm_impl(path, image, 65535); }

// ---------------------------------------------------------------------------
// Manifest

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

DatasetManifest parse_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest " + path.string());
  DatasetManifest manifest;
  manifest.root = path.parent_path();
  std::string line;
  int line_no = 0;
  bool seen_record = false;
  auto fail = [&](const std::string& msg) {
    throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(is, line)) {
    ++line_no;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    if (!seen_record && split_csv(text).front() == "path") {
      seen_record = true;
      continue;
    }
    seen_record = true;
    const auto fields = split_csv(text);
    if (fields.size() != 6) fail("expected 6 fields (path,left,middle,right,domain,split), got " + std::to_string(fields.size()));
    ManifestRecord rec;
    if (fields[0].empty()) fail("empty image path");
    rec.image = fields[0];
    for (int s = 0; s < kNumSeats; ++s) {
      const std::string& f = fields[static_cast<std::size_t>(1 + s)];
      if (s == 1 && f == "-") {
        rec.labels[1] = kNoSeat;
        continue;
      }
      int v = -1;
      try {
        std::size_t used = 0;
        v = std::stoi(f, &used);
        if (used != f.size()) v = -1000;
      } catch (const std::exception&) {
        fail("label '" + f + "' is not an integer");
      }
      if (v < 0 || v >= kNumClasses) fail("label '" + f + "' outside [0,6]");
      rec.labels[static_cast<std::size_t>(s)] = v;
    }
    if (fields[4].empty()) fail("empty domain");
    rec.domain = fields[4];
    try {
      rec.split = parse_split(fields[5]);
    } catch (const DataError& e) {
      fail(e.what());
    }
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write manifest " + path.string());
  os << "path,left,middle,right,domain,split\n";
  for (const auto& r : manifest.records) {
    os << r.image.generic_string() << ',' << r.labels[0] << ',';
    if (r.labels[1] == kNoSeat)
      os << '-';
    else
      os << r.labels[1];
    os << ',' << r.labels[2] << ',' << r.domain << ',' << to_string(r.split) << '\n';
  }
  if (!os) throw DataError("write failed: " + path.string());
}

std::vector<LabeledScene> load_manifest(const fs::path& path) {
  const DatasetManifest manifest = parse_manifest(path);
  std::vector<LabeledScene> scenes;
  scenes.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    const fs::path file = r.image.is_absolute() ? r.image : manifest.root / r.image;
    if (!fs::exists(file)) throw DataError(path.string() + ": referenced image missing: " + file.string());
    LabeledScene scene;
    scene.image = read_pgm(file);
    scene.labels = r.labels;
    scene.domain = r.domain;
    scene.split = r.split;
    scene.seat_count = r.labels[1] == kNoSeat ? 2 : kNumSeats;
    scene.source = r.image.generic_string();
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

// ---------------------------------------------------------------------------
// Preprocessing

Image center_crop(const Image& image, int crop) {
  if (crop <= 0 || crop > image.rows() || crop > image.cols())
    throw DataError("center crop " + std::to_string(crop) + " larger than image " + std::to_string(image.rows()) +
                    "x" + std::to_string(image.cols()));
  const Eigen::Index top = (image.rows() - crop) / 2;
  const Eigen::Index left = (image.cols() - crop) / 2;
  return image.block(top, left, crop, crop);
}

Image resize_bilinear(const Image& image, int height, int width) {
  if (height == image.rows() && width == image.cols()) return image;
  Image out(height, width);
  const double sy = static_cast<double>(image.rows()) / height;
  const double sx = static_cast<double>(image.cols()) / width;
  const Eigen::Index maxy = image.rows() - 1, maxx = image.cols() - 1;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(maxy));
    const Eigen::Index y0 = static_cast<Eigen::Index>(std::floor(fy));
    const Eigen::Index y1 = std::min(y0 + 1, maxy);
    const double wy = fy - static_cast<double>(y0);
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(maxx));
      const Eigen::Index x0 = static_cast<Eigen::Index>(std::floor(fx));
      const Eigen::Index x1 = std::min(x0 + 1, maxx);
      const double wx = fx - static_cast<double>(x0);
      const double top = (1 - wx) * image(y0, x0) + wx * image(y0, x1);
      const double bottom = (1 - wx) * image(y1, x0) + wx * image(y1, x1);
      out(y, x) = static_cast<float>((1 - wy) * top + wy * bottom);
    }
  }
  return out;
}

LabeledScene preprocess(const LabeledScene& scene, int crop, int out_size) {
  LabeledScene out = scene;
  out.image = resize_bilinear(center_crop(scene.image, crop), out_size, out_size);
  return out;
}

std::pair<std::vector<LabeledScene>, std::vector<LabeledScene>> split_train_eval(
    const std::vector<LabeledScene>& scenes, double ratio, Rng& rng) {
  if (scenes.empty()) throw DataError("split_train_eval: no scenes");
  if (scenes.size() < 5) throw DataError("split_train_eval: need at least 5 scenes, got " + std::to_string(scenes.size()));
  if (!(ratio > 0.0 && ratio < 1.0)) throw DataError("split_train_eval: ratio must be in (0,1)");
  std::vector<std::size_t> order(scenes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(std::span<std::size_t>(order));
  const std::size_t n_first = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(scenes.size())));
  std::pair<std::vector<LabeledScene>, std::vector<LabeledScene>> parts;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_first ? parts.first : parts.second).push_back(scenes[order[i]]);
  return parts;
}

std::vector<LabeledScene> filter_domain(const std::vector<LabeledScene>& scenes, const std::string& domain,
                                        std::optional<Split> split) {
  std::vector<LabeledScene> out;
  for (const auto& s : scenes)
    if (s.domain == domain && (!split || s.split == *split)) out.push_back(s);
  return out;
}

std::vector<std::string> domains_of(const std::vector<LabeledScene>& scenes) {
  std::vector<std::string> out;
  for (const auto& s : scenes)
    if (std::find(out.begin(), out.end(), s.domain) == out.end()) out.push_back(s.domain);
  return out;
}

// ---------------------------------------------------------------------------
// Toy world

void ToyWorldConfig::validate() const {
  if (num_vehicles < 1) throw std::invalid_argument("world.num_vehicles must be >= 1");
  if (two_seat_vehicles < 0 || two_seat_vehicles >= num_vehicles)
    throw std::invalid_argument("world.two_seat_vehicles must leave at least one three-seat vehicle");
  if (image_size < 16 || image_size % 16 != 0) throw std::invalid_argument("world.image_size must be a multiple of 16");
  if (seats != kNumSeats) throw std::invalid_argument("world.seats must be 3");
  if (class_count != kNumClasses) throw std::invalid_argument("world.class_count must be 7");
  if (train_per_vehicle < 0 || test_per_vehicle < 0) throw std::invalid_argument("world split sizes must be >= 0");
  if (train_instances_per_class < 1 || test_instances_per_class < 1)
    throw std::invalid_argument("world instance counts must be >= 1");
  if (!(empty_bias >= 0.0 && empty_bias <= 1.0)) throw std::invalid_argument("world.empty_bias must be in [0,1]");
  std::set<std::uint64_t> seen;
  for (int c = 1; c < kNumClasses; ++c)
    for (Split s : {Split::Train, Split::Test})
      for (auto seed : instance_seeds(c, s))
        if (!seen.insert(seed).second) throw std::invalid_argument("world: instance seed collision");
}

std::string ToyWorldConfig::vehicle_name(int index) const { return "vehicle" + std::to_string(index); }

VehicleParams ToyWorldConfig::vehicle(int index) const {
  if (index < 0 || index >= num_vehicles)
    throw std::out_of_range("vehicle " + std::to_string(index) + " outside [0," + std::to_string(num_vehicles) + ")");
  Rng rng(derive_seed(seed, 0x7E41C1Eu, static_cast<std::uint64_t>(index)));
  VehicleParams p;
  p.name = vehicle_name(index);
  p.seat_count = index >= num_vehicles - two_seat_vehicles ? 2 : kNumSeats;
  p.wall_level = rng.uniform(0.12, 0.5);
  p.wall_gradient = rng.uniform(-0.12, 0.12);
  p.bench_level = rng.uniform(0.18, 0.5);
  p.floor_level = rng.uniform(0.04, 0.3);
  p.bench_top = rng.uniform(0.2, 0.34);
  p.cushion_top = rng.uniform(0.66, 0.76);
  p.texture_freq = rng.uniform(3.0, 12.0);
  p.texture_angle = rng.uniform(0.0, 3.14159265358979323846);
  p.texture_amp = rng.uniform(0.02, 0.08);
  p.skew = rng.uniform(-0.15, 0.15);
  p.seam_depth = rng.uniform(0.05, 0.15);
  for (auto& o : p.seat_offsets) o = rng.uniform(-1.5, 1.5);
  return p;
}

std::vector<std::uint64_t> ToyWorldConfig::instance_seeds(int label, Split split) const {
  if (label == kEmptySeat || label == kNoSeat) return {};
  const int count = split == Split::Train ? train_instances_per_class : test_instances_per_class;
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < count; ++i)
    seeds.push_back(derive_seed(seed, 0x1257A4CEu, static_cast<std::uint64_t>(label),
                                split == Split::Train ? 0u : 1u, static_cast<std::uint64_t>(i)));
  return seeds;
}

namespace {

constexpr double kPi = 3.14159265358979323846;

float quantize(double v) { return static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0f; }

// Seat centre (pixels) for seat s in a vehicle.
double seat_center_x(const VehicleParams& v, int s, int size) {
  const double unit = size / 64.0;
  double frac;
  if (v.seat_count == 2)
    frac = s == 0 ? 0.25 : 0.75;
  else
    frac = (s + 0.5) / 3.0;
  return frac * size + v.seat_offsets[static_cast<std::size_t>(s)] * unit;
}

// Rasterizer for filled primitives in 64-pixel reference units.
class Canvas {
 public:
  Canvas(Image& image, Mask& mask, double unit) : image_(image), mask_(mask), unit_(unit) {}

  template <typename Inside>
  void fill(double value, Inside inside) {
    for (Eigen::Index y = 0; y < image_.rows(); ++y)
      for (Eigen::Index x = 0; x < image_.cols(); ++x) {
        const double px = (x + 0.5) / unit_, py = (y + 0.5) / unit_;
        if (inside(px, py)) {
          image_(y, x) = static_cast<float>(value);
          mask_(y, x) = true;
        }
      }
  }

  void ellipse(double cx, double cy, double rx, double ry, double value, double angle = 0.0) {
    const double c = std::cos(angle), s = std::sin(angle);
    fill(value, [=](double x, double y) {
      const double dx = x - cx, dy = y - cy;
      const double u = (c * dx + s * dy) / rx, v = (-s * dx + c * dy) / ry;
      return u * u + v * v <= 1.0;
    });
  }

  // Lower half of an ellipse (bowl opening upward).
  void bowl(double cx, double cy, double rx, double ry, double value) {
    fill(value, [=](double x, double y) {
      const double u = (x - cx) / rx, v = (y - cy) / ry;
      return y >= cy && u * u + v * v <= 1.0;
    });
  }

  void arc(double cx, double cy, double rx, double ry, double thickness, double value) {
    fill(value, [=](double x, double y) {
      if (y > cy) return false;
      const double u = (x - cx) / rx, v = (y - cy) / ry;
      const double r = std::sqrt(u * u + v * v);
      return std::abs(r - 1.0) * std::min(rx, ry) <= thickness / 2;
    });
  }

  void rect(double cx, double cy, double w, double h, double value, double angle = 0.0, double corner = 0.0) {
    const double c = std::cos(angle), s = std::sin(angle);
    fill(value, [=](double x, double y) {
      const double dx = x - cx, dy = y - cy;
      const double u = std::abs(c * dx + s * dy) - (w / 2 - corner);
      const double v = std::abs(-s * dx + c * dy) - (h / 2 - corner);
      const double ou = std::max(u, 0.0), ov = std::max(v, 0.0);
      return std::sqrt(ou * ou + ov * ov) + std::min(std::max(u, v), 0.0) <= corner;
    });
  }

  void trapezoid(double cx, double top, double bottom, double top_w, double bottom_w, double value) {
    fill(value, [=](double x, double y) {
      if (y < top || y > bottom) return false;
      const double t = (y - top) / (bottom - top);
      return std::abs(x - cx) <= (top_w + t * (bottom_w - top_w)) / 2;
    });
  }

 private:
  Image& image_;
  Mask& mask_;
  double unit_;
};

// Draws one seat object; every shape parameter comes from the instance seed.
void draw_object(Canvas& canvas, int label, std::uint64_t instance_seed, double cx) {
  Rng rng(instance_seed);
  const double size = rng.uniform(0.85, 1.15);
  const double shift = rng.uniform(-1.0, 1.0);
  const double bright = rng.uniform(0.68, 0.92);
  const double dark = rng.uniform(0.04, 0.16);
  const double aux = rng.uniform(0.0, 1.0);
  cx += shift;
  switch (label) {
    case kOccupiedInfantSeat:
    case kEmptyInfantSeat: {
      const double cy = 42.0;
      canvas.arc(cx, cy + 1, 8.5 * size, 11.0 * size, 1.6, bright);
      canvas.bowl(cx, cy, 9.0 * size, 10.0 * size, bright);
      if (label == kOccupiedInfantSeat) canvas.ellipse(cx, cy + 1.5, 4.0 * size, 3.5 * size, dark);
      break;
    }
    case kOccupiedChildSeat:
    case kEmptyChildSeat: {
      const double w = (11.0 + 3.0 * aux) * size;
      canvas.rect(cx, 38.0, w, 30.0 * size, bright, 0.0, 2.5);
      canvas.rect(cx, 21.0, w + 4.0, 7.0 * size, bright, 0.0, 1.5);
      if (label == kOccupiedChildSeat) {
        canvas.ellipse(cx, 25.0, 3.8 * size, 4.2 * size, dark);
        canvas.ellipse(cx, 37.0, 4.5 * size, 7.0 * size, dark);
      }
      break;
    }
    case kAdult: {
      const double shoulders = (15.0 + 3.0 * aux) * size;
      canvas.trapezoid(cx, 27.0, 55.0, shoulders, shoulders * 0.75, bright);
      canvas.ellipse(cx, 19.5, 4.6 * size, 5.6 * size, bright);
      break;
    }
    case kEverydayObject: {
      const double angle = rng.uniform(-0.35, 0.35);
      const double w = rng.uniform(9.0, 14.0) * size, h = rng.uniform(7.0, 11.0) * size;
      const double cy = 50.0 - h / 2;
      canvas.rect(cx, cy, w, h, bright * 0.9 + 0.08, angle, aux > 0.5 ? 2.0 : 0.0);
      if (aux > 0.5) canvas.arc(cx, cy - h / 2 + 0.5, w * 0.3, h * 0.45, 1.4, bright * 0.9 + 0.08);
      break;
    }
    default:
      break;
  }
}

}  // namespace

Image render_background(const ToyWorldConfig& cfg, int vehicle) {
  const VehicleParams v = cfg.vehicle(vehicle);
  const int n = cfg.image_size;
  Image image(n, n);
  std::vector<double> seams;
  if (v.seat_count == 2)
    seams = {0.5};
  else
    seams = {1.0 / 3.0, 2.0 / 3.0};
  const double ca = std::cos(v.texture_angle), sa = std::sin(v.texture_angle);
  for (int y = 0; y < n; ++y) {
    const double fv = (y + 0.5) / n;
    for (int x = 0; x < n; ++x) {
      const double fu = (x + 0.5) / n;
      // Keystone: the interior narrows towards the top by `skew`.
      const double us = 0.5 + (fu - 0.5) * (1.0 + v.skew * (fv - 0.5) * 2.0);
      const double texture = v.texture_amp * std::sin(2.0 * kPi * v.texture_freq * (us * ca + fv * sa));
      double value;
      if (fv < v.bench_top) {
        value = v.wall_level + v.wall_gradient * (fv / v.bench_top);
      } else if (fv < v.cushion_top) {
        value = v.bench_level + texture;
        for (double s : seams)
          if (std::abs(us - s) < 0.014) value -= v.seam_depth;
      } else if (fv < v.cushion_top + 0.12) {
        value = v.bench_level * 0.85 + texture;
      } else {
        value = v.floor_level;
      }
      // Headrests straddle the top edge of the backrest at each seat.
      for (int s = 0; s < v.seat_count; ++s) {
        const double hx = seat_center_x(v, s, n) / n;
        if (std::abs(us - hx) < 0.07 && fv > v.bench_top - 0.07 && fv < v.bench_top + 0.03)
          value = v.bench_level + 0.1;
      }
      image(y, x) = quantize(value);
    }
  }
  return image;
}

ToyRender generate_toy_scene(const ToyWorldConfig& cfg, int vehicle, const SeatLabels& labels,
                             const std::array<std::uint64_t, kNumSeats>& instance_seeds) {
  const VehicleParams v = cfg.vehicle(vehicle);
  ToyRender render;
  render.vehicle = vehicle;
  render.scene.image = render_background(cfg, vehicle);
  render.object_mask = Mask::Constant(cfg.image_size, cfg.image_size, false);
  render.scene.domain = v.name;
  render.scene.seat_count = v.seat_count;
  render.scene.labels = labels;
  render.instance_seeds = instance_seeds;
  if (v.seat_count == 2) render.scene.labels[1] = kNoSeat;

  Image objects = render.scene.image;
  Canvas canvas(objects, render.object_mask, cfg.image_size / 64.0);
  for (int s = 0; s < kNumSeats; ++s) {
    const int label = render.scene.labels[static_cast<std::size_t>(s)];
    if (label == kNoSeat) continue;
    if (label < 0 || label >= kNumClasses)
      throw std::out_of_range("generate_toy_scene: label " + std::to_string(label) + " outside [0,6]");
    if (label == kEmptySeat) continue;
    const int seat_slot = v.seat_count == 2 ? (s == 0 ? 0 : 1) : s;
    draw_object(canvas, label, instance_seeds[static_cast<std::size_t>(s)], seat_center_x(v, seat_slot, cfg.image_size) *
                                                                              64.0 / cfg.image_size);
    render.scene.instance_ids[static_cast<std::size_t>(s)] =
        static_cast<std::int64_t>(instance_seeds[static_cast<std::size_t>(s)]);
  }
  for (Eigen::Index i = 0; i < objects.size(); ++i) objects.data()[i] = quantize(objects.data()[i]);
  render.scene.image = std::move(objects);
  return render;
}

ToyRender generate_indexed_scene(const ToyWorldConfig& cfg, int vehicle, Split split, int index) {
  const VehicleParams v = cfg.vehicle(vehicle);
  Rng rng(derive_seed(cfg.seed, 0x5CE9Eu, static_cast<std::uint64_t>(vehicle), split == Split::Train ? 0u : 1u,
                      static_cast<std::uint64_t>(index)));
  SeatLabels labels{};
  std::array<std::uint64_t, kNumSeats> seeds{};
  for (int s = 0; s < kNumSeats; ++s) {
    int label = kEmptySeat;
    if (!rng.bernoulli(cfg.empty_bias)) label = 1 + static_cast<int>(rng.below(kNumClasses - 1));
    const auto pool = cfg.instance_seeds(label, split);
    const std::uint64_t pick = rng.below(std::max<std::uint64_t>(pool.size(), 1));
    labels[static_cast<std::size_t>(s)] = label;
    seeds[static_cast<std::size_t>(s)] = pool.empty() ? 0 : pool[pick];
  }
  if (v.seat_count == 2) {
    labels[1] = kEmptySeat;
    seeds[1] = 0;
  }
  ToyRender render = generate_toy_scene(cfg, vehicle, labels, seeds);
  render.scene.split = split;
  render.index = index;
  return render;
}

std::vector<ToyRender> generate_toy_split(const ToyWorldConfig& cfg, int vehicle, Split split) {
  const int count = split == Split::Train ? cfg.train_per_vehicle : cfg.test_per_vehicle;
  std::vector<ToyRender> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(generate_indexed_scene(cfg, vehicle, split, i));
  return out;
}

DatasetManifest generate_toy_dataset(const ToyWorldConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());
  DatasetManifest manifest;
  manifest.root = out_dir;
  for (int v = 0; v < cfg.num_vehicles; ++v) {
    const VehicleParams params = cfg.vehicle(v);
    for (Split split : {Split::Train, Split::Test}) {
      const fs::path rel_dir = fs::path(params.name) / to_string(split);
      fs::create_directories(out_dir / rel_dir, ec);
      if (ec) throw DataError("cannot create " + (out_dir / rel_dir).string() + ": " + ec.message());
      for (const ToyRender& r : generate_toy_split(cfg, v, split)) {
        char name[16];
        std::snprintf(name, sizeof name, "%04d", r.index);
        const fs::path rel = rel_dir / (std::string(name) + ".pgm");
        write_pgm(out_dir / rel, r.scene.image);
        json sidecar = {
            {"vehicle", v},
            {"domain", params.name},
            {"split", to_string(split)},
            {"index", r.index},
            {"labels", r.scene.labels},
            {"instance_seeds", r.instance_seeds},
            {"vehicle_params", to_json(params)},
        };
        std::ofstream(out_dir / rel_dir / (std::string(name) + ".json")) << sidecar.dump(2) << '\n';
        manifest.records.push_back({rel, r.scene.labels, params.name, split});
      }
    }
  }
  write_manifest(out_dir / "manifest.csv", manifest);
  std::ofstream(out_dir / "world.json") << to_json(cfg).dump(2) << '\n';
  return manifest;
}

}  // namespace cabin
