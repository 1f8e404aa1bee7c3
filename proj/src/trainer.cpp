#include "cabin/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "binary_io.hpp"
#include "cabin/config.hpp"
#include "cabin/eval.hpp"

namespace cabin {

static_assert(kNoSeat == kIgnoreTarget, "absent seats must be ignored by the cross-entropy");

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "adamw"; }

OptimizerKind parse_optimizer(const std::string& text) {
  if (text == "adam") return OptimizerKind::Adam;
  if (text == "adamw") return OptimizerKind::AdamW;
  throw std::invalid_argument("unknown optimizer '" + text + "' (expected adam or adamw)");
}

template <typename S>
void adam_update(std::span<S> param, std::span<const S> grad, std::span<double> m, std::span<double> v,
                 std::int64_t step, const AdamOptions& o, bool apply_decay) {
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(step));
  const double wd = apply_decay ? o.weight_decay : 0.0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    double theta = param[i];
    double g = grad[i];
    if (o.decoupled)
      theta -= o.lr * wd * theta;
    else
      g += wd * theta;
    m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g;
    v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g * g;
    const double mhat = m[i] / bc1, vhat = v[i] / bc2;
    theta -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
    param[i] = static_cast<S>(theta);
  }
}

template <typename S>
void optimizer_step(std::vector<Parameter<S>>& params, AdamState& state, const AdamOptions& options) {
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(static_cast<std::size_t>(params[i].value.numel()), 0.0);
      state.v[i].assign(static_cast<std::size_t>(params[i].value.numel()), 0.0);
    }
  }
  for (const auto& p : params)
    if (const auto g_opt = p.value.grad())
      for (S g : *g_opt)
        if (!std::isfinite(static_cast<double>(g))) throw NumericError("non-finite gradient in parameter " + p.name);
  ++state.step;
  std::vector<S> zeros;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    std::span<const S> grad;
    if (p.value.has_grad()) {
      grad = *p.value.grad();
    } else {
      zeros.assign(static_cast<std::size_t>(p.value.numel()), S(0));
      grad = zeros;
    }
    adam_update<S>(p.value.data(), grad, state.m[i], state.v[i], state.step, options, p.decay);
  }
}

template void adam_update<float>(std::span<float>, std::span<const float>, std::span<double>, std::span<double>,
                                 std::int64_t, const AdamOptions&, bool);
template void adam_update<double>(std::span<double>, std::span<const double>, std::span<double>, std::span<double>,
                                  std::int64_t, const AdamOptions&, bool);
template void optimizer_step<float>(std::vector<Parameter<float>>&, AdamState&, const AdamOptions&);
template void optimizer_step<double>(std::vector<Parameter<double>>&, AdamState&, const AdamOptions&);

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
  if (epochs < 0) fail("epochs must be >= 0");
  if (batch_size < 2) fail("batch_size must be >= 2 (batchnorm needs two samples)");
  if (!(lr > 0) || !std::isfinite(lr)) fail("lr must be positive");
  if (!(weight_decay >= 0)) fail("weight_decay must be >= 0");
  if (!(train_fraction > 0 && train_fraction < 1)) fail("train_fraction must lie in (0, 1)");
  loss.validate();
  spec.validate();
  augment.validate();
}

AdamOptions TrainConfig::adam() const {
  AdamOptions o;
  o.lr = lr;
  o.weight_decay = weight_decay;
  o.decoupled = optimizer == OptimizerKind::AdamW;
  return o;
}

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os << "epoch,loss,reconstruction,classification,eval_accuracy,best\n";
  os << std::setprecision(9);
  for (const auto& e : epochs)
    os << e.epoch << ',' << e.loss << ',' << e.reconstruction << ',' << e.classification << ',' << e.eval_accuracy
       << ',' << (e.best ? 1 : 0) << '\n';
  return os.str();
}

double augmented_accuracy(ModelF& model, const std::vector<DenoisingPair>& pairs) {
  std::vector<Image> images;
  std::vector<SeatLabels> truth;
  for (const auto& p : pairs) {
    images.push_back(p.augmented);
    truth.push_back(p.labels);
  }
  return accuracy(predict(model, images), truth).accuracy();
}

namespace {

enum : std::uint64_t { kInitStream = 0x1A17, kEvalStream = 0xE7A1, kShuffleStream = 0x5EED, kPairStream = 0xA06 };

void check_sizes(const std::vector<LabeledScene>& scenes, int size, const char* what) {
  for (const auto& s : scenes)
    if (s.image.rows() != size || s.image.cols() != size)
      throw DataError(std::string(what) + " image is " + std::to_string(s.image.rows()) + "x" +
                      std::to_string(s.image.cols()) + ", model expects " + std::to_string(size));
}

ModelF build_model(const TrainConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, kInitStream));
  return ModelF(cfg.spec, rng);
}

}  // namespace

Trainer::Trainer(TrainConfig cfg, std::vector<LabeledScene> train_set, std::vector<LabeledScene> eval_set)
    : cfg_(std::move(cfg)), train_(std::move(train_set)) {
  cfg_.validate();
  if (train_.size() < 2) throw DataError("training needs at least two scenes");
  if (eval_set.empty()) throw DataError("early stopping needs a non-empty evaluation set");
  check_sizes(train_, cfg_.spec.input_size, "training");
  check_sizes(eval_set, cfg_.spec.input_size, "evaluation");
  model_ = build_model(cfg_);
  best_ = model_.clone();
  last_good_ = model_.clone();
  if (cfg_.loss.kind == ReconstructionKind::PERCEPTUAL)
    features_ = cfg_.loss.feature_weights.empty()
                    ? FeatureStack<float>(cfg_.loss.feature_channels, cfg_.loss.feature_seed)
                    : FeatureStack<float>::load(cfg_.loss.feature_weights);
  for (std::size_t i = 0; i < eval_set.size(); ++i) {
    Rng rng(derive_seed(cfg_.seed, kEvalStream, i));
    eval_pairs_.push_back(make_denoising_pair(eval_set[i], cfg_.augment, rng));
  }
}

void Trainer::run_epoch() {
  if (done()) return;
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(train_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(derive_seed(cfg_.seed, kShuffleStream, epoch_));
  shuffle_rng.shuffle(std::span<std::size_t>(order));

  const AdamOptions options = cfg_.adam();
  const FeatureStack<float>* features = cfg_.loss.kind == ReconstructionKind::PERCEPTUAL ? &features_ : nullptr;
  double loss_sum = 0, recon_sum = 0, cls_sum = 0;
  std::size_t seen = 0;
  const std::size_t batch = static_cast<std::size_t>(cfg_.batch_size);
  for (std::size_t begin = 0; begin + 2 <= order.size(); begin += batch) {
    const std::size_t count = std::min(batch, order.size() - begin);
    if (count < 2) break;
    std::vector<Image> clean, augmented;
    std::vector<int> labels;
    for (std::size_t j = begin; j < begin + count; ++j) {
      Rng rng(derive_seed(cfg_.seed, kPairStream, epoch_, order[j]));
      DenoisingPair pair = make_denoising_pair(train_[order[j]], cfg_.augment, rng);
      clean.push_back(std::move(pair.clean));
      augmented.push_back(std::move(pair.augmented));
      labels.insert(labels.end(), pair.labels.begin(), pair.labels.end());
    }
    model_.zero_grad();
    auto result = combined_objective(model_, to_batch<float>(clean), to_batch<float>(augmented),
                                     std::span<const int>(labels), cfg_.loss, BatchNormMode::Train, features);
    const double loss = result.terms.total.item();
    if (!std::isfinite(loss))
      throw NumericError("loss diverged (" + std::to_string(loss) + ") in epoch " + std::to_string(epoch_ + 1));
    result.terms.total.backward();
    optimizer_step(model_.parameters(), adam_, options);
    loss_sum += loss * static_cast<double>(count);
    recon_sum += static_cast<double>(result.terms.reconstruction.item()) * static_cast<double>(count);
    cls_sum += static_cast<double>(result.terms.classification.item()) * static_cast<double>(count);
    seen += count;
  }
  model_.zero_grad();

  EpochRecord record;
  record.epoch = ++epoch_;
  const double denom = seen ? static_cast<double>(seen) : 1.0;
  record.loss = loss_sum / denom;
  record.reconstruction = recon_sum / denom;
  record.classification = cls_sum / denom;
  record.eval_accuracy = augmented_accuracy(model_, eval_pairs_);
  if (record.eval_accuracy > log_.best_accuracy) {
    log_.best_accuracy = record.eval_accuracy;
    log_.best_epoch = record.epoch;
    record.best = true;
    best_ = model_.clone();
  }
  last_good_ = model_.clone();
  record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log_.epochs.push_back(record);
}

namespace {

constexpr char kStateMagic[8] = {'C', 'A', 'B', 'I', 'N', 'T', 'R', 'S'};
constexpr std::uint32_t kStateVersion = 1;

}  // namespace

void Trainer::save_state(const std::filesystem::path& path) const {
  using namespace detail;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  os.write(kStateMagic, 8);
  put_u32(os, kStateVersion);
  put_string(os, to_json(cfg_).dump());
  put_u32(os, static_cast<std::uint32_t>(epoch_));
  put_u64(os, static_cast<std::uint64_t>(adam_.step));
  put_u32(os, static_cast<std::uint32_t>(log_.best_epoch + 1));
  put_f64(os, log_.best_accuracy);
  put_u32(os, static_cast<std::uint32_t>(log_.epochs.size()));
  for (const auto& e : log_.epochs) {
    put_u32(os, static_cast<std::uint32_t>(e.epoch));
    for (double v : {e.loss, e.reconstruction, e.classification, e.eval_accuracy, e.seconds}) put_f64(os, v);
    os.put(e.best ? 1 : 0);
  }
  model_.save(os);
  best_.save(os);
  last_good_.save(os);
  put_u32(os, static_cast<std::uint32_t>(adam_.m.size()));
  for (std::size_t i = 0; i < adam_.m.size(); ++i) {
    put_u64(os, adam_.m[i].size());
    for (double v : adam_.m[i]) put_f64(os, v);
    for (double v : adam_.v[i]) put_f64(os, v);
  }
  if (!os) throw CheckpointError("write failed for " + path.string());
}

void Trainer::load_state(const std::filesystem::path& path) {
  using namespace detail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path.string());
  Reader r{is};
  try {
    char magic[8];
    r.raw(magic, 8);
    if (!std::equal(magic, magic + 8, kStateMagic)) throw CheckpointError("not a training state file");
    if (r.u32() != kStateVersion) throw CheckpointError("unsupported training state version");
    if (r.string(1 << 20) != to_json(cfg_).dump())
      throw CheckpointError("training state was written with a different configuration");
    const int epoch = static_cast<int>(r.u32());
    const auto step = static_cast<std::int64_t>(r.u64());
    TrainLog log;
    log.best_epoch = static_cast<int>(r.u32()) - 1;
    log.best_accuracy = get_f64(r);
    const std::uint32_t records = r.u32();
    if (records > 1u << 20) throw CheckpointError("implausible epoch count");
    for (std::uint32_t i = 0; i < records; ++i) {
      EpochRecord e;
      e.epoch = static_cast<int>(r.u32());
      e.loss = get_f64(r);
      e.reconstruction = get_f64(r);
      e.classification = get_f64(r);
      e.eval_accuracy = get_f64(r);
      e.seconds = get_f64(r);
      char b;
      r.raw(&b, 1);
      e.best = b != 0;
      log.epochs.push_back(e);
    }
    ModelF model = model_.clone(), best = best_.clone(), last = last_good_.clone();
    model.load(is);
    best.load(is);
    last.load(is);
    AdamState adam;
    adam.step = step;
    const std::uint32_t count = r.u32();
    if (count != 0 && count != model.parameters().size()) throw CheckpointError("optimizer state size mismatch");
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::uint64_t n = r.u64();
      if (n != static_cast<std::uint64_t>(model.parameters()[i].value.numel()))
        throw CheckpointError("optimizer moment size mismatch");
      std::vector<double> m(n), v(n);
      for (auto& x : m) x = get_f64(r);
      for (auto& x : v) x = get_f64(r);
      adam.m.push_back(std::move(m));
      adam.v.push_back(std::move(v));
    }
    model_ = std::move(model);
    best_ = std::move(best);
    last_good_ = std::move(last);
    adam_ = std::move(adam);
    log_ = std::move(log);
    epoch_ = epoch;
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

TrainResult train(const std::vector<LabeledScene>& train_set, const std::vector<LabeledScene>& eval_set,
                  const TrainConfig& cfg, const std::optional<std::filesystem::path>& dump_on_divergence,
                  const EpochCallback& on_epoch) {
  Trainer trainer(cfg, train_set, eval_set);
  while (!trainer.done()) {
    try {
      trainer.run_epoch();
    } catch (const NumericError&) {
      if (dump_on_divergence) trainer.last_good().save(*dump_on_divergence);
      throw;
    }
    if (on_epoch) on_epoch(trainer.log().epochs.back());
  }
  return {trainer.best_model().clone(), trainer.log()};
}

std::pair<std::vector<LabeledScene>, std::vector<LabeledScene>> vehicle_split(
    const std::vector<LabeledScene>& vehicle_train_scenes, const TrainConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, 0x5B117));
  return split_train_eval(vehicle_train_scenes, cfg.train_fraction, rng);
}

TrainResult train_on_vehicle(const std::vector<LabeledScene>& vehicle_train_scenes, const TrainConfig& cfg,
                             const std::optional<std::filesystem::path>& dump_on_divergence,
                             const EpochCallback& on_epoch) {
  auto [train_set, eval_set] = vehicle_split(vehicle_train_scenes, cfg);
  return train(train_set, eval_set, cfg, dump_on_divergence, on_epoch);
}

}  // namespace cabin
