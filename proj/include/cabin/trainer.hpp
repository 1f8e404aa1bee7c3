#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cabin/augment.hpp"
#include "cabin/data.hpp"
#include "cabin/losses.hpp"
#include "cabin/model.hpp"

namespace cabin {

enum class OptimizerKind { Adam, AdamW };
std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& text);

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  // AdamW: shrink the weights directly instead of adding wd * theta to the gradient.
  bool decoupled = true;
};

/// One Adam/AdamW update of a single parameter buffer. `step` is the 1-based
/// update count used for bias correction.
template <typename Scalar>
void adam_update(std::span<Scalar> param, std::span<const Scalar> grad, std::span<double> m, std::span<double> v,
                 std::int64_t step, const AdamOptions& options, bool apply_decay);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t step = 0;
};

/// Applies one update to every parameter from its accumulated grad. Biases
/// and batchnorm affine terms (Parameter::decay == false) are never decayed.
/// Throws NumericError naming the first parameter with a non-finite gradient.
template <typename Scalar>
void optimizer_step(std::vector<Parameter<Scalar>>& params, AdamState& state, const AdamOptions& options);

struct TrainConfig {
  int epochs = 60;
  int batch_size = 16;
  double lr = 1e-4;
  double weight_decay = 0.01;
  OptimizerKind optimizer = OptimizerKind::AdamW;
  double train_fraction = 0.8;  // of the vehicle's train split; the rest drives early stopping
  std::uint64_t seed = 0;
  LossConfig loss;
  ModelSpec spec;
  AugmentConfig augment;

  void validate() const;
  AdamOptions adam() const;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double reconstruction = 0.0;
  double classification = 0.0;
  double eval_accuracy = 0.0;
  double seconds = 0.0;
  bool best = false;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_accuracy = -1.0;

  // Deterministic columns only; wall time is excluded.
  std::string to_csv() const;
};

// Fraction of correctly predicted seats over `pairs` using the augmented
// images; the middle seat of two-seat scenes is skipped.
double augmented_accuracy(ModelF& model, const std::vector<DenoisingPair>& pairs);

/// Epoch-at-a-time optimizer loop with early stopping on the accuracy of a
/// fixed, augmented evaluation set. All randomness derives from cfg.seed.
class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<LabeledScene> train_set, std::vector<LabeledScene> eval_set);

  void run_epoch();
  bool done() const { return epoch_ >= cfg_.epochs; }
  int epoch() const { return epoch_; }

  const TrainConfig& config() const { return cfg_; }
  ModelF& model() { return model_; }
  const ModelF& best_model() const { return best_; }
  const TrainLog& log() const { return log_; }
  const AdamState& optimizer_state() const { return adam_; }
  const ModelF& last_good() const { return last_good_; }

  // Full resumable state: model, best model, optimizer moments, log.
  void save_state(const std::filesystem::path& path) const;
  void load_state(const std::filesystem::path& path);

 private:
  TrainConfig cfg_;
  std::vector<LabeledScene> train_;
  std::vector<DenoisingPair> eval_pairs_;
  ModelF model_;
  ModelF best_;
  ModelF last_good_;
  FeatureStack<float> features_;
  AdamState adam_;
  TrainLog log_;
  int epoch_ = 0;
};

struct TrainResult {
  ModelF best;
  TrainLog log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Runs every epoch. If the loss diverges and `dump_on_divergence` is set, the
// last model that finished an epoch is written there before rethrowing.
TrainResult train(const std::vector<LabeledScene>& train_set, const std::vector<LabeledScene>& eval_set,
                  const TrainConfig& cfg, const std::optional<std::filesystem::path>& dump_on_divergence = {},
                  const EpochCallback& on_epoch = {});

// Seeded split of one vehicle's train scenes by cfg.train_fraction into the
// optimized part and the early-stopping part.
std::pair<std::vector<LabeledScene>, std::vector<LabeledScene>> vehicle_split(
    const std::vector<LabeledScene>& vehicle_train_scenes, const TrainConfig& cfg);

TrainResult train_on_vehicle(const std::vector<LabeledScene>& vehicle_train_scenes, const TrainConfig& cfg,
                             const std::optional<std::filesystem::path>& dump_on_divergence = {},
                             const EpochCallback& on_epoch = {});

}  // namespace cabin
