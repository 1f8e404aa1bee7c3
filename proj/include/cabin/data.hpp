#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "cabin/rng.hpp"

namespace cabin {

// Grayscale image, row-major, values in [0, 1].
using Image = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Seat classes, in label order.
enum SeatClass : int {
  kEmptySeat = 0,
  kOccupiedInfantSeat = 1,
  kEmptyInfantSeat = 2,
  kOccupiedChildSeat = 3,
  kEmptyChildSeat = 4,
  kAdult = 5,
  kEverydayObject = 6,
};

inline constexpr int kNumClasses = 7;
inline constexpr int kNumSeats = 3;
// Label of the middle seat in two-seat vehicles.
inline constexpr int kNoSeat = -1;

const char* class_name(int label);

enum class Split { Train, Test };
const char* to_string(Split split);
Split parse_split(const std::string& text);

// (left, middle, right)
using SeatLabels = std::array<int, kNumSeats>;

struct LabeledScene {
  Image image;
  SeatLabels labels{};
  std::string domain;
  // Object identity per seat; -1 where the seat is empty.
  std::array<std::int64_t, kNumSeats> instance_ids{-1, -1, -1};
  int seat_count = kNumSeats;
  Split split = Split::Train;
  std::string source;  // manifest-relative image path when loaded from disk
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Binary PGM (P5), 8- or 16-bit. Values are scaled by 1/maxval.
Image read_pgm(const std::filesystem::path& path);
// 8-bit P5; values are clamped to [0,1] and rounded to the nearest level.
void write_pgm(const std::filesystem::path& path, const Image& image);
void write_pgm16(const std::filesystem::path& path, const Image& image);

struct ManifestRecord {
  std::filesystem::path image;  // relative to the manifest directory
  SeatLabels labels{};
  std::string domain;
  Split split = Split::Train;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestRecord> records;
};

/// CSV manifest, one record per line: `path,left,middle,right,domain,split`.
/// Lines starting with '#' and blank lines are ignored, as is an optional
/// header line beginning with "path". A middle label of "-" marks a
/// two-seat vehicle.
DatasetManifest parse_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

// Parses the manifest and loads every image, in listed order.
std::vector<LabeledScene> load_manifest(const std::filesystem::path& path);

// Center crop to crop x crop, then bilinear resize to out_size x out_size.
LabeledScene preprocess(const LabeledScene& scene, int crop, int out_size);
Image center_crop(const Image& image, int crop);
Image resize_bilinear(const Image& image, int height, int width);

// Seeded shuffle, then the first round(ratio * n) scenes go to the first part.
std::pair<std::vector<LabeledScene>, std::vector<LabeledScene>> split_train_eval(
    const std::vector<LabeledScene>& scenes, double ratio, Rng& rng);

std::vector<LabeledScene> filter_domain(const std::vector<LabeledScene>& scenes, const std::string& domain,
                                        std::optional<Split> split = std::nullopt);
std::vector<std::string> domains_of(const std::vector<LabeledScene>& scenes);

// ---------------------------------------------------------------------------
// Procedural toy world

struct VehicleParams {
  std::string name;
  int seat_count = kNumSeats;
  double wall_level = 0.3;
  double wall_gradient = 0.1;
  double bench_level = 0.4;
  double floor_level = 0.15;
  double bench_top = 0.28;    // fraction of height where the backrest starts
  double cushion_top = 0.72;  // fraction of height where the cushion starts
  double texture_freq = 6.0;
  double texture_angle = 0.0;
  double texture_amp = 0.06;
  double skew = 0.0;          // horizontal keystone of the background
  double seam_depth = 0.1;
  std::array<double, kNumSeats> seat_offsets{};  // pixels
};

struct ToyWorldConfig {
  int num_vehicles = 4;
  int two_seat_vehicles = 0;  // the last vehicles get two seats
  int image_size = 64;
  int seats = kNumSeats;
  int class_count = kNumClasses;
  int train_per_vehicle = 400;
  int test_per_vehicle = 100;
  int train_instances_per_class = 6;
  int test_instances_per_class = 3;
  double empty_bias = 0.3;
  std::uint64_t seed = 7;

  void validate() const;
  VehicleParams vehicle(int index) const;
  std::string vehicle_name(int index) const;
  // Object seeds per class; train and test sets are disjoint.
  std::vector<std::uint64_t> instance_seeds(int label, Split split) const;
};

struct ToyRender {
  LabeledScene scene;
  Mask object_mask;  // pixels covered by seat objects
  std::array<std::uint64_t, kNumSeats> instance_seeds{};
  int vehicle = 0;
  int index = 0;
};

// Vehicle interior without any objects.
Image render_background(const ToyWorldConfig& cfg, int vehicle);

// Deterministic scene; the same instance seed renders the same object in
// every vehicle. Seats labelled empty (or kNoSeat) draw nothing.
ToyRender generate_toy_scene(const ToyWorldConfig& cfg, int vehicle, const SeatLabels& labels,
                             const std::array<std::uint64_t, kNumSeats>& instance_seeds);

// The index-th scene of a vehicle split: labels and instances drawn from a
// stream derived from (seed, vehicle, split, index).
ToyRender generate_indexed_scene(const ToyWorldConfig& cfg, int vehicle, Split split, int index);

std::vector<ToyRender> generate_toy_split(const ToyWorldConfig& cfg, int vehicle, Split split);

/// Writes <out>/<vehicle>/<split>/NNNN.pgm with a JSON provenance sidecar per
/// image, <out>/manifest.csv and <out>/world.json. Returns the manifest.
DatasetManifest generate_toy_dataset(const ToyWorldConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace cabin
