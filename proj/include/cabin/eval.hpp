#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cabin/data.hpp"
#include "cabin/model.hpp"
#include "json.hpp"

namespace cabin {

// Argmax per head in eval mode, batched and without recording a graph.
std::vector<SeatLabels> predict(ModelF& model, std::span<const Image> images, int batch_size = 32);

// Clean-image estimates h(g(x)) in eval mode. Throws for baseline models.
std::vector<Image> reconstruct(ModelF& model, std::span<const Image> images, int batch_size = 32);

struct AccuracyReport {
  std::int64_t correct = 0;
  std::int64_t total = 0;
  std::array<std::int64_t, kNumSeats> seat_correct{};
  std::array<std::int64_t, kNumSeats> seat_total{};
  // A scene counts as correct when every one of its seats is.
  std::int64_t scenes = 0;
  std::int64_t scenes_correct = 0;

  double accuracy() const;
  double scene_accuracy() const;
  double seat_accuracy(int seat) const;
};

// Seats whose true label is kNoSeat are left out of every count.
AccuracyReport accuracy(std::span<const SeatLabels> predicted, std::span<const SeatLabels> truth);

// counts[true][predicted], same exclusions as accuracy().
using Confusion = std::array<std::array<std::int64_t, kNumClasses>, kNumClasses>;
Confusion confusion(std::span<const SeatLabels> predicted, std::span<const SeatLabels> truth);

/// Unweighted mean of per-domain accuracies. Throws on an empty input.
double benchmark_score(std::span<const double> domain_accuracies);
double benchmark_score(const std::map<std::string, double>& domain_accuracies);

struct DomainResult {
  std::string domain;
  AccuracyReport report;
  Confusion confusion{};
  bool seen = false;  // the checkpoint was trained on this domain
};

struct CheckpointResult {
  std::string checkpoint;
  std::string train_domain;  // empty if unknown
  std::vector<DomainResult> domains;
  // Benchmark score over the domains that were not seen in training.
  double score = 0.0;
};

struct PredictionRow {
  std::string checkpoint;
  std::string domain;
  std::string path;
  SeatLabels truth{};
  SeatLabels predicted{};
};

/// Evaluates every scene of the given split in every domain. Rows of the
/// prediction cache are appended to `rows` when given.
CheckpointResult evaluate_checkpoint(ModelF& model, const std::string& name, const std::string& train_domain,
                                     const std::vector<LabeledScene>& scenes,
                                     std::vector<PredictionRow>* rows = nullptr, Split split = Split::Test);

void write_predictions_csv(const std::filesystem::path& path, std::span<const PredictionRow> rows);
std::vector<PredictionRow> read_predictions_csv(const std::filesystem::path& path);

// Rebuilds per-checkpoint results from cached predictions; `train_domains`
// maps checkpoint names to the domain they were trained on.
std::vector<CheckpointResult> results_from_predictions(std::span<const PredictionRow> rows,
                                                       const std::map<std::string, std::string>& train_domains);

// checkpoint,train_domain,domain,seen,accuracy,left,middle,right,seats,scenes,scene_accuracy
void write_report_csv(const std::filesystem::path& path, std::span<const CheckpointResult> results);
// One row per checkpoint, one column per test domain.
void write_cross_matrix_csv(const std::filesystem::path& path, std::span<const CheckpointResult> results);
// checkpoint,domain,true_class,pred_0..pred_6
void write_confusion_csv(const std::filesystem::path& path, std::span<const CheckpointResult> results);
nlohmann::json summary_json(std::span<const CheckpointResult> results);
// report.csv, cross_matrix.csv, confusion.csv and summary.json under dir.
void write_eval_outputs(const std::filesystem::path& dir, std::span<const CheckpointResult> results);

// Background-masked mean squared error between a and b over pixels where
// mask is false.
double masked_mse(const Image& a, const Image& b, const Mask& object_mask);

// Side-by-side grid: each row holds an input and its reconstruction.
Image montage(std::span<const Image> inputs, std::span<const Image> outputs);

}  // namespace cabin
