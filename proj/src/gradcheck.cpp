#include "cabin/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cabin/losses.hpp"
#include "cabin/model.hpp"
#include "cabin/ops.hpp"
#include "cabin/rng.hpp"

namespace cabin {

double gradient_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

GradCheckResult check_gradients(std::string name, const std::function<TensorD()>& loss, std::vector<TensorD> inputs,
                                const GradCheckOptions& options) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.clear_grad();
  }
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs) {
    auto g = t.grad();
    analytic.emplace_back(g ? std::vector<double>(g->begin(), g->end())
                            : std::vector<double>(static_cast<std::size_t>(t.numel()), 0.0));
  }

  std::vector<std::pair<std::size_t, std::size_t>> positions;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    for (std::size_t j = 0; j < static_cast<std::size_t>(inputs[i].numel()); ++j) positions.emplace_back(i, j);
  const bool sampled = options.max_checks > 0 && positions.size() > options.max_checks;
  if (sampled) {
    Rng rng(options.seed);
    rng.shuffle(std::span<std::pair<std::size_t, std::size_t>>(positions));
  }

  GradCheckResult result{std::move(name), 0.0, 0, 0, true};
  NoGradGuard guard;
  auto evaluate = [&loss](std::uint64_t& digest) {
    DecisionTrace trace;
    const double value = loss().item();
    digest = trace.digest();
    return value;
  };
  std::uint64_t center = 0, up_digest = 0, down_digest = 0;
  evaluate(center);
  for (auto [i, j] : positions) {
    if (sampled && result.checked == options.max_checks) break;
    double& x = inputs[i].data()[j];
    const double saved = x;
    x = saved + options.epsilon;
    const double up = evaluate(up_digest);
    x = saved - options.epsilon;
    const double down = evaluate(down_digest);
    x = saved;
    if (options.skip_nonsmooth && (up_digest != center || down_digest != center)) {
      ++result.skipped;
      continue;
    }
    const double numeric = (up - down) / (2.0 * options.epsilon);
    result.max_error = std::max(result.max_error, gradient_error(analytic[i][j], numeric, options.floor));
    ++result.checked;
  }
  const std::size_t wanted = sampled ? options.max_checks : std::size_t{1};
  result.passed = result.max_error < options.tolerance && result.checked >= wanted;
  for (auto& t : inputs) t.clear_grad();
  return result;
}

namespace {

TensorD random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TensorD(std::move(shape), std::move(v));
}

// Weighted sum with fixed random weights so every output element reaches the
// loss with a distinct coefficient.
TensorD probe(const TensorD& t, const TensorD& weights) { return sum(t * weights); }

struct Suite {
  std::vector<GradCheckResult>& out;
  GradCheckOptions options;

  void run(const std::string& name, const std::function<TensorD()>& loss, std::vector<TensorD> inputs,
           std::size_t max_checks = 0) {
    GradCheckOptions o = options;
    o.max_checks = max_checks;
    o.seed = derive_seed(options.seed, out.size());
    out.push_back(check_gradients(name, loss, std::move(inputs), o));
  }
};

void op_suites(Suite& s, Rng& rng) {
  {
    TensorD x = random_tensor({2, 2, 5, 5}, rng), w = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
    TensorD r = random_tensor({2, 3, 5, 5}, rng);
    s.run("conv2d", [=] { return probe(conv2d(x, w, b), r); }, {x, w, b});
  }
  {
    TensorD x = random_tensor({2, 2, 4, 6}, rng), r = random_tensor({2, 2, 2, 3}, rng);
    s.run("maxpool2x2", [=] { return probe(maxpool2x2(x).first, r); }, {x});
  }
  {
    TensorD src = random_tensor({1, 2, 4, 4}, rng);
    const PoolIndices idx = maxpool2x2(src).second;
    TensorD y = random_tensor({1, 2, 2, 2}, rng), r = random_tensor({1, 2, 4, 4}, rng);
    s.run("maxunpool2x2", [=] { return probe(maxunpool2x2(y, idx), r); }, {y});
  }
  {
    TensorD x = random_tensor({1, 2, 3, 3}, rng), r = random_tensor({1, 2, 6, 6}, rng);
    s.run("upsample_nearest2x", [=] { return probe(upsample_nearest2x(x), r); }, {x});
  }
  {
    TensorD x = random_tensor({1, 2, 5, 5}, rng), r = random_tensor({1, 2, 2, 2}, rng);
    s.run("avgpool2x2", [=] { return probe(avgpool2x2(x), r); }, {x});
  }
  {
    TensorD x = random_tensor({4, 3, 2, 2}, rng), g = random_tensor({3}, rng, 0.5, 1.5), b = random_tensor({3}, rng);
    TensorD r = random_tensor({4, 3, 2, 2}, rng);
    s.run("batchnorm_train", [=] {
      BatchNormStats<double> stats(3);
      return probe(batchnorm(x, g, b, stats, BatchNormMode::Train), r);
    }, {x, g, b});
    s.run("batchnorm_eval", [=] {
      BatchNormStats<double> stats(3);
      stats.running_mean = {0.1, -0.2, 0.3};
      stats.running_var = {0.5, 1.5, 2.0};
      return probe(batchnorm(x, g, b, stats, BatchNormMode::Eval), r);
    }, {x, g, b});
  }
  {
    TensorD x = random_tensor({3, 4}, rng), w = random_tensor({5, 4}, rng), b = random_tensor({5}, rng);
    TensorD r = random_tensor({3, 5}, rng);
    s.run("linear", [=] { return probe(linear(x, w, b), r); }, {x, w, b});
  }
  {
    TensorD x = random_tensor({4, 5}, rng), r = random_tensor({4, 5}, rng);
    s.run("relu", [=] { return probe(relu(x), r); }, {x});
    s.run("sigmoid", [=] { return probe(sigmoid(x), r); }, {x});
    s.run("square", [=] { return probe(square(x), r); }, {x});
    s.run("scale_add_scalar", [=] { return probe(add_scalar(scale(x, 1.7), 0.3), r); }, {x});
    s.run("mean", [=] { return mean(x * r); }, {x});
  }
  {
    TensorD x = random_tensor({4, 5}, rng, 0.2, 2.0), r = random_tensor({4, 5}, rng);
    s.run("pow_scalar", [=] { return probe(pow_scalar(x, 0.3), r); }, {x});
  }
  {
    TensorD a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng, 0.5, 2.0), r = random_tensor({3, 4}, rng);
    s.run("add_sub_mul_div", [=] { return probe((a + b) * (a - b) / b, r); }, {a, b});
  }
  {
    TensorD z = random_tensor({5, 7}, rng, -2.0, 2.0);
    const std::vector<int> targets{0, 6, kIgnoreTarget, 3, 2};
    s.run("softmax_xent", [=] { return softmax_xent(z, std::span<const int>(targets)); }, {z});
  }
  {
    TensorD x = random_tensor({2, 3, 2, 2}, rng), r = random_tensor({6, 2}, rng);
    s.run("reshape_slice", [=] { return probe(slice_columns(reshape(x, {6, 4}), 1, 2), r); }, {x});
  }
  {
    TensorD x = random_tensor({2, 3, 3, 4}, rng), r = random_tensor({2, 3}, rng);
    s.run("mean_spatial", [=] { return probe(mean_spatial(x), r); }, {x});
  }
  {
    TensorD x = random_tensor({1, 2, 7, 8}, rng), r = random_tensor({1, 2, 3, 4}, rng);
    const std::vector<double> kernel = gaussian_window(5, 1.5);
    s.run("separable_filter_valid", [=] { return probe(separable_filter_valid(x, kernel), r); }, {x});
  }
}

void loss_suites(Suite& s, Rng& rng) {
  {
    TensorD a = random_tensor({2, 1, 6, 6}, rng, 0, 1), b = random_tensor({2, 1, 6, 6}, rng, 0, 1);
    s.run("mse", [=] { return mse(a, b); }, {a, b});
  }
  {
    LossConfig cfg = LossConfig::for_kind(ReconstructionKind::SSIM);
    TensorD a = random_tensor({2, 1, 14, 14}, rng, 0, 1), b = random_tensor({2, 1, 14, 14}, rng, 0, 1);
    s.run("ssim", [=] { return ssim(a, b, cfg); }, {a, b}, 120);
  }
  {
    LossConfig cfg = LossConfig::for_kind(ReconstructionKind::MS_SSIM);
    TensorD a = random_tensor({1, 1, 44, 44}, rng, 0, 1);
    // Correlated pair keeps every contrast-structure term positive.
    TensorD b = add_scalar(scale(a, 0.7), 0.1) + random_tensor({1, 1, 44, 44}, rng, -0.05, 0.05);
    b = b.detach();
    s.run("ms_ssim", [=] { return ms_ssim(a, b, cfg); }, {a, b}, 120);
  }
  {
    const std::vector<Index> channels{2, 3};
    FeatureStack<double> features(channels, 99);
    TensorD a = random_tensor({2, 1, 8, 8}, rng, 0, 1), b = random_tensor({2, 1, 8, 8}, rng, 0, 1);
    s.run("perceptual", [=] { return perceptual(a, b, features); }, {a, b}, 120);
  }
  {
    TensorD z = random_tensor({4, 21}, rng, -2, 2);
    const std::vector<int> labels{0, 1, 2, 3, 4, 5, 6, kIgnoreTarget, 0, 5, 2, 1};
    s.run("seat_classification", [=] { return seat_classification_loss(z, std::span<const int>(labels)); }, {z});
  }
  {
    LossConfig cfg = LossConfig::for_kind(ReconstructionKind::MSE);
    TensorD clean = random_tensor({2, 1, 4, 4}, rng, 0, 1), recon = random_tensor({2, 1, 4, 4}, rng, 0, 1);
    TensorD z = random_tensor({2, 21}, rng, -2, 2);
    const std::vector<int> labels{1, 0, 5, 6, 3, 2};
    s.run("objective", [=] { return objective(clean, recon, z, std::span<const int>(labels), cfg).total; },
          {recon, z});
  }
}

void model_suites(Suite& s, std::uint64_t seed) {
  ModelSpec spec;
  spec.input_size = 16;
  spec.base_filters = 2;
  spec.blocks = 2;
  spec.latent_dim = 8;
  spec.fc_hidden = 16;
  spec.head_hidden = 8;

  struct Variant {
    const char* name;
    ModelKind kind;
    DecoderMode decoder;
    ReconstructionKind loss;
  };
  const Variant variants[] = {
      {"model_unpool_mse", ModelKind::Autoencoder, DecoderMode::MaxUnpool, ReconstructionKind::MSE},
      {"model_nearest_ssim", ModelKind::Autoencoder, DecoderMode::Nearest, ReconstructionKind::SSIM},
      {"model_baseline", ModelKind::Baseline, DecoderMode::MaxUnpool, ReconstructionKind::MSE},
  };
  for (std::size_t v = 0; v < std::size(variants); ++v) {
    const Variant& var = variants[v];
    ModelSpec sp = spec;
    sp.kind = var.kind;
    sp.decoder_mode = var.decoder;
    Rng rng(derive_seed(seed, 0x30DE1, v));
    auto model = std::make_shared<Model<double>>(sp, rng);
    LossConfig cfg = LossConfig::for_kind(var.loss);
    cfg.ssim_window = 7;
    TensorD clean = random_tensor({2, 1, 16, 16}, rng, 0, 1);
    TensorD augmented = random_tensor({2, 1, 16, 16}, rng, 0, 1);
    const std::vector<int> labels{0, 3, 5, 6, 1, 2};
    std::vector<TensorD> inputs;
    for (auto& p : model->parameters()) inputs.push_back(p.value);
    s.run(var.name, [=] {
      return combined_objective(*model, clean, augmented, std::span<const int>(labels), cfg, BatchNormMode::Train)
          .terms.total;
    }, inputs, 50);
  }
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suites(std::uint64_t seed) {
  std::vector<GradCheckResult> results;
  Suite suite{results, {}};
  suite.options.seed = seed;
  Rng rng(derive_seed(seed, 0x9C4));
  op_suites(suite, rng);
  loss_suites(suite, rng);
  model_suites(suite, seed);
  return results;
}

}  // namespace cabin
