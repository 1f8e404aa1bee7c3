#include "cabin/config.hpp"

#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <string>

namespace cabin {

using nlohmann::json;

namespace {

void check_keys(const json& j, const char* section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw std::invalid_argument(std::string(section) + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw std::invalid_argument(std::string(section) + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->template get<T>();
}

json range_json(const Range& r) { return json::array({r.lo, r.hi}); }

void read_range(const json& j, const char* key, Range& r) {
  if (auto it = j.find(key); it != j.end()) {
    if (!it->is_array() || it->size() != 2) throw std::invalid_argument(std::string("augment.") + key + ": expected [lo, hi]");
    r.lo = (*it)[0].get<double>();
    r.hi = (*it)[1].get<double>();
  }
}

}  // namespace

json to_json(const ToyWorldConfig& cfg) {
  return {{"num_vehicles", cfg.num_vehicles},
          {"two_seat_vehicles", cfg.two_seat_vehicles},
          {"image_size", cfg.image_size},
          {"seats", cfg.seats},
          {"class_count", cfg.class_count},
          {"train_per_vehicle", cfg.train_per_vehicle},
          {"test_per_vehicle", cfg.test_per_vehicle},
          {"train_instances_per_class", cfg.train_instances_per_class},
          {"test_instances_per_class", cfg.test_instances_per_class},
          {"empty_bias", cfg.empty_bias},
          {"seed", cfg.seed}};
}

json to_json(const VehicleParams& p) {
  return {{"name", p.name},
          {"seat_count", p.seat_count},
          {"wall_level", p.wall_level},
          {"wall_gradient", p.wall_gradient},
          {"bench_level", p.bench_level},
          {"floor_level", p.floor_level},
          {"bench_top", p.bench_top},
          {"cushion_top", p.cushion_top},
          {"texture_freq", p.texture_freq},
          {"texture_angle", p.texture_angle},
          {"texture_amp", p.texture_amp},
          {"skew", p.skew},
          {"seam_depth", p.seam_depth},
          {"seat_offsets", p.seat_offsets}};
}

json to_json(const LossConfig& cfg) {
  return {{"kind", to_string(cfg.kind)},
          {"gamma", cfg.gamma},
          {"ssim_window", cfg.ssim_window},
          {"ssim_sigma", cfg.ssim_sigma},
          {"k1", cfg.k1},
          {"k2", cfg.k2},
          {"data_range", cfg.data_range},
          {"msssim_weights", cfg.msssim_weights},
          {"feature_seed", cfg.feature_seed},
          {"feature_channels", cfg.feature_channels},
          {"feature_weights", cfg.feature_weights}};
}

json to_json(const AugmentConfig& cfg) {
  return {{"flip_prob", cfg.flip_prob},
          {"perspective_prob", cfg.perspective_prob},
          {"perspective_jitter", cfg.perspective_jitter},
          {"emboss_prob", cfg.emboss_prob},
          {"emboss_strength", range_json(cfg.emboss_strength)},
          {"emboss_alpha", range_json(cfg.emboss_alpha)},
          {"invert_prob", cfg.invert_prob},
          {"contrast_prob", cfg.contrast_prob},
          {"contrast_gain", range_json(cfg.contrast_gain)},
          {"contrast_cutoff", range_json(cfg.contrast_cutoff)},
          {"clahe_prob", cfg.clahe_prob},
          {"clahe_tiles", cfg.clahe_tiles},
          {"clahe_clip", cfg.clahe_clip},
          {"laplace_prob", cfg.laplace_prob},
          {"laplace_scale", range_json(cfg.laplace_scale)}};
}

json to_json(const ModelSpec& spec) {
  return {{"kind", to_string(spec.kind)},
          {"input_size", spec.input_size},
          {"base_filters", spec.base_filters},
          {"blocks", spec.blocks},
          {"latent_dim", spec.latent_dim},
          {"decoder", to_string(spec.decoder_mode)},
          {"heads", spec.heads},
          {"classes", spec.classes},
          {"head_hidden", spec.head_hidden},
          {"fc_hidden", spec.fc_hidden}};
}

json to_json(const TrainConfig& cfg) {
  return {{"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"lr", cfg.lr},
          {"weight_decay", cfg.weight_decay},
          {"optimizer", to_string(cfg.optimizer)},
          {"train_fraction", cfg.train_fraction},
          {"seed", cfg.seed},
          {"loss", to_json(cfg.loss)},
          {"model", to_json(cfg.spec)},
          {"augment", to_json(cfg.augment)}};
}

ToyWorldConfig world_from_json(const json& j, ToyWorldConfig cfg) {
  check_keys(j, "world",
             {"num_vehicles", "two_seat_vehicles", "image_size", "seats", "class_count", "train_per_vehicle",
              "test_per_vehicle", "train_instances_per_class", "test_instances_per_class", "empty_bias", "seed"});
  read(j, "num_vehicles", cfg.num_vehicles);
  read(j, "two_seat_vehicles", cfg.two_seat_vehicles);
  read(j, "image_size", cfg.image_size);
  read(j, "seats", cfg.seats);
  read(j, "class_count", cfg.class_count);
  read(j, "train_per_vehicle", cfg.train_per_vehicle);
  read(j, "test_per_vehicle", cfg.test_per_vehicle);
  read(j, "train_instances_per_class", cfg.train_instances_per_class);
  read(j, "test_instances_per_class", cfg.test_instances_per_class);
  read(j, "empty_bias", cfg.empty_bias);
  read(j, "seed", cfg.seed);
  return cfg;
}

LossConfig loss_from_json(const json& j, LossConfig cfg) {
  check_keys(j, "loss",
             {"kind", "gamma", "ssim_window", "ssim_sigma", "k1", "k2", "data_range", "msssim_weights",
              "feature_seed", "feature_channels", "feature_weights"});
  if (auto it = j.find("kind"); it != j.end()) {
    cfg.kind = parse_reconstruction_kind(it->get<std::string>());
    if (!j.contains("gamma")) cfg.gamma = default_gamma(cfg.kind);
  }
  read(j, "gamma", cfg.gamma);
  read(j, "ssim_window", cfg.ssim_window);
  read(j, "ssim_sigma", cfg.ssim_sigma);
  read(j, "k1", cfg.k1);
  read(j, "k2", cfg.k2);
  read(j, "data_range", cfg.data_range);
  read(j, "msssim_weights", cfg.msssim_weights);
  read(j, "feature_seed", cfg.feature_seed);
  read(j, "feature_channels", cfg.feature_channels);
  read(j, "feature_weights", cfg.feature_weights);
  return cfg;
}

AugmentConfig augment_from_json(const json& j, AugmentConfig cfg) {
  check_keys(j, "augment",
             {"flip_prob", "perspective_prob", "perspective_jitter", "emboss_prob", "emboss_strength", "emboss_alpha",
              "invert_prob", "contrast_prob", "contrast_gain", "contrast_cutoff", "clahe_prob", "clahe_tiles",
              "clahe_clip", "laplace_prob", "laplace_scale"});
  read(j, "flip_prob", cfg.flip_prob);
  read(j, "perspective_prob", cfg.perspective_prob);
  read(j, "perspective_jitter", cfg.perspective_jitter);
  read(j, "emboss_prob", cfg.emboss_prob);
  read_range(j, "emboss_strength", cfg.emboss_strength);
  read_range(j, "emboss_alpha", cfg.emboss_alpha);
  read(j, "invert_prob", cfg.invert_prob);
  read(j, "contrast_prob", cfg.contrast_prob);
  read_range(j, "contrast_gain", cfg.contrast_gain);
  read_range(j, "contrast_cutoff", cfg.contrast_cutoff);
  read(j, "clahe_prob", cfg.clahe_prob);
  read(j, "clahe_tiles", cfg.clahe_tiles);
  read(j, "clahe_clip", cfg.clahe_clip);
  read(j, "laplace_prob", cfg.laplace_prob);
  read_range(j, "laplace_scale", cfg.laplace_scale);
  return cfg;
}

ModelSpec spec_from_json(const json& j, ModelSpec spec) {
  check_keys(j, "model",
             {"kind", "input_size", "base_filters", "blocks", "latent_dim", "decoder", "heads", "classes",
              "head_hidden", "fc_hidden"});
  if (auto it = j.find("kind"); it != j.end()) spec.kind = parse_model_kind(it->get<std::string>());
  if (auto it = j.find("decoder"); it != j.end()) spec.decoder_mode = parse_decoder_mode(it->get<std::string>());
  read(j, "input_size", spec.input_size);
  read(j, "base_filters", spec.base_filters);
  read(j, "blocks", spec.blocks);
  read(j, "latent_dim", spec.latent_dim);
  read(j, "heads", spec.heads);
  read(j, "classes", spec.classes);
  read(j, "head_hidden", spec.head_hidden);
  read(j, "fc_hidden", spec.fc_hidden);
  return spec;
}

TrainConfig train_from_json(const json& j, TrainConfig cfg) {
  check_keys(j, "train",
             {"epochs", "batch_size", "lr", "weight_decay", "optimizer", "train_fraction", "seed", "loss", "model",
              "augment"});
  read(j, "epochs", cfg.epochs);
  read(j, "batch_size", cfg.batch_size);
  read(j, "lr", cfg.lr);
  read(j, "weight_decay", cfg.weight_decay);
  if (auto it = j.find("optimizer"); it != j.end()) cfg.optimizer = parse_optimizer(it->get<std::string>());
  read(j, "train_fraction", cfg.train_fraction);
  read(j, "seed", cfg.seed);
  if (auto it = j.find("loss"); it != j.end()) cfg.loss = loss_from_json(*it, cfg.loss);
  if (auto it = j.find("model"); it != j.end()) cfg.spec = spec_from_json(*it, cfg.spec);
  if (auto it = j.find("augment"); it != j.end()) cfg.augment = augment_from_json(*it, cfg.augment);
  return cfg;
}

json to_json(const RunConfig& cfg) {
  return {{"seed", cfg.seed},
          {"world", to_json(cfg.world)},
          {"train", to_json(cfg.train)},
          {"preprocess", {{"crop", cfg.crop}, {"out_size", cfg.out_size}}}};
}

RunConfig run_config_from_json(const json& j) {
  check_keys(j, "config", {"seed", "world", "train", "preprocess"});
  RunConfig cfg;
  read(j, "seed", cfg.seed);
  // The global seed feeds both sections unless they pin their own.
  cfg.world.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  if (auto it = j.find("world"); it != j.end()) cfg.world = world_from_json(*it, cfg.world);
  if (auto it = j.find("train"); it != j.end()) cfg.train = train_from_json(*it, cfg.train);
  if (auto it = j.find("preprocess"); it != j.end()) {
    check_keys(*it, "preprocess", {"crop", "out_size"});
    read(*it, "crop", cfg.crop);
    read(*it, "out_size", cfg.out_size);
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace cabin
