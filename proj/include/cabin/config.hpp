#pragma once

#include <filesystem>

#include "cabin/augment.hpp"
#include "cabin/data.hpp"
#include "cabin/losses.hpp"
#include "cabin/model.hpp"
#include "cabin/trainer.hpp"
#include "json.hpp"

namespace cabin {

// JSON views of every configuration type. Readers start from the defaults,
// override the keys present and reject unknown keys.
nlohmann::json to_json(const ToyWorldConfig& cfg);
nlohmann::json to_json(const VehicleParams& params);
nlohmann::json to_json(const LossConfig& cfg);
nlohmann::json to_json(const AugmentConfig& cfg);
nlohmann::json to_json(const ModelSpec& spec);
nlohmann::json to_json(const TrainConfig& cfg);

ToyWorldConfig world_from_json(const nlohmann::json& j, ToyWorldConfig base = {});
LossConfig loss_from_json(const nlohmann::json& j, LossConfig base = {});
AugmentConfig augment_from_json(const nlohmann::json& j, AugmentConfig base = {});
ModelSpec spec_from_json(const nlohmann::json& j, ModelSpec base = {});
TrainConfig train_from_json(const nlohmann::json& j, TrainConfig base = {});

/// Run configuration file:
///   { "seed": int, "world": {...}, "train": {...},
///     "preprocess": {"crop": int, "out_size": int} }
struct RunConfig {
  std::uint64_t seed = 0;
  ToyWorldConfig world;
  TrainConfig train;
  int crop = 64;
  int out_size = 64;
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace cabin
