#include "cabin/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "cabin/config.hpp"
#include "cabin/data.hpp"
#include "cabin/eval.hpp"
#include "cabin/gradcheck.hpp"
#include "cabin/model.hpp"
#include "cabin/trainer.hpp"

namespace cabin {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

bool non_empty_dir(const fs::path& dir) { return fs::is_directory(dir) && !fs::is_empty(dir); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create " + dir.string());
}

RunConfig base_config(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

std::vector<LabeledScene> load_scenes(const fs::path& manifest, const RunConfig& cfg) {
  auto scenes = load_manifest(manifest);
  for (auto& s : scenes)
    if (s.image.rows() != cfg.out_size || s.image.cols() != cfg.out_size) s = preprocess(s, cfg.crop, cfg.out_size);
  return scenes;
}

// ---- gen-toy -----------------------------------------------------------------

struct GenToyArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> vehicles, two_seat, train_per_vehicle, test_per_vehicle, size;
  bool force = false;
};

int run_gen_toy(const GenToyArgs& a, std::ostream& out) {
  RunConfig cfg = base_config(a.config);
  if (a.seed) cfg.world.seed = *a.seed;
  if (a.vehicles) cfg.world.num_vehicles = *a.vehicles;
  if (a.two_seat) cfg.world.two_seat_vehicles = *a.two_seat;
  if (a.train_per_vehicle) cfg.world.train_per_vehicle = *a.train_per_vehicle;
  if (a.test_per_vehicle) cfg.world.test_per_vehicle = *a.test_per_vehicle;
  if (a.size) cfg.world.image_size = *a.size;
  cfg.world.validate();
  const fs::path dir(a.out);
  if (non_empty_dir(dir)) {
    if (!a.force) throw DataError(dir.string() + " exists and is not empty; pass --force to overwrite");
    fs::remove_all(dir);
  }
  ensure_dir(dir);
  const DatasetManifest manifest = generate_toy_dataset(cfg.world, dir);
  write_json(dir / "config.json", to_json(cfg));
  out << "wrote " << manifest.records.size() << " images for " << cfg.world.num_vehicles << " vehicles to "
      << dir.string() << '\n';
  return kExitOk;
}

// ---- train -------------------------------------------------------------------

struct TrainArgs {
  std::string config, data, vehicle, out, loss, decoder, model, optimizer, resume_state;
  std::optional<double> gamma, lr, weight_decay;
  std::optional<int> epochs, batch_size;
  std::optional<std::uint64_t> seed;
  bool resume = false, quiet = false;
};

TrainConfig resolve_train_config(const TrainArgs& a, RunConfig& run) {
  TrainConfig cfg = run.train;
  if (a.seed) {
    cfg.seed = *a.seed;
    run.seed = *a.seed;
  }
  if (!a.model.empty()) {
    const std::string m = a.model == "ae" ? "autoencoder" : a.model;
    cfg.spec.kind = parse_model_kind(m);
    if (cfg.spec.kind == ModelKind::Baseline && a.optimizer.empty()) {
      cfg.optimizer = OptimizerKind::Adam;
      cfg.weight_decay = 0.0;
    }
  }
  if (!a.decoder.empty()) cfg.spec.decoder_mode = parse_decoder_mode(a.decoder);
  if (!a.loss.empty()) cfg.loss = LossConfig::for_kind(parse_reconstruction_kind(a.loss));
  if (a.gamma) cfg.loss.gamma = *a.gamma;
  if (!a.optimizer.empty()) cfg.optimizer = parse_optimizer(a.optimizer);
  if (a.lr) cfg.lr = *a.lr;
  if (a.weight_decay) cfg.weight_decay = *a.weight_decay;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  cfg.spec.input_size = run.out_size;
  cfg.validate();
  run.train = cfg;
  return cfg;
}

int run_train(const TrainArgs& a, std::ostream& out) {
  RunConfig run = base_config(a.config);
  const TrainConfig cfg = resolve_train_config(a, run);
  const auto scenes = load_scenes(a.data, run);
  const auto domains = domains_of(scenes);
  if (std::find(domains.begin(), domains.end(), a.vehicle) == domains.end())
    throw DataError("vehicle '" + a.vehicle + "' not in manifest " + a.data);
  const auto vehicle_scenes = filter_domain(scenes, a.vehicle, Split::Train);
  if (vehicle_scenes.empty()) throw DataError("vehicle '" + a.vehicle + "' has no train-split scenes");

  const fs::path dir(a.out);
  ensure_dir(dir);
  json resolved = to_json(run);
  resolved["vehicle"] = a.vehicle;
  resolved["data"] = a.data;
  write_json(dir / "config.json", resolved);

  auto [train_set, eval_set] = vehicle_split(vehicle_scenes, cfg);
  Trainer trainer(cfg, std::move(train_set), std::move(eval_set));
  const fs::path state = dir / "state.bin";
  if (a.resume && fs::exists(state)) {
    trainer.load_state(state);
    if (!a.quiet) out << "resumed at epoch " << trainer.epoch() << '\n';
  }
  std::ofstream timing(dir / "timing.csv", a.resume ? std::ios::app : std::ios::trunc);
  if (!a.resume || trainer.epoch() == 0) timing << "epoch,seconds\n";
  while (!trainer.done()) {
    try {
      trainer.run_epoch();
    } catch (const NumericError&) {
      trainer.last_good().save(dir / "last_good.ckpt");
      throw;
    }
    const EpochRecord& e = trainer.log().epochs.back();
    timing << e.epoch << ',' << e.seconds << '\n';
    trainer.save_state(state);
    if (!a.quiet)
      out << "epoch " << std::setw(3) << e.epoch << "  loss " << std::fixed << std::setprecision(5) << e.loss
          << "  recon " << e.reconstruction << "  cls " << e.classification << "  eval " << std::setprecision(4)
          << e.eval_accuracy << (e.best ? "  *" : "") << "  (" << std::setprecision(1) << e.seconds << "s)\n"
          << std::defaultfloat << std::setprecision(6);
  }
  trainer.best_model().save(dir / "model.ckpt");
  {
    std::ofstream log(dir / "train_log.csv");
    log << trainer.log().to_csv();
  }
  write_json(dir / "model.json", {{"checkpoint", "model.ckpt"},
                                  {"vehicle", a.vehicle},
                                  {"best_epoch", trainer.log().best_epoch},
                                  {"best_eval_accuracy", trainer.log().best_accuracy},
                                  {"parameters", trainer.best_model().parameter_count()}});
  if (!a.quiet)
    out << "best epoch " << trainer.log().best_epoch << " eval accuracy " << trainer.log().best_accuracy << '\n';
  return kExitOk;
}

// ---- eval --------------------------------------------------------------------

struct EvalArgs {
  std::string config, data, out;
  std::vector<std::string> checkpoints;
  std::string from_predictions;
  std::string split = "test";
};

struct CheckpointRef {
  std::string name;
  fs::path path;
  std::string vehicle;
};

std::vector<CheckpointRef> find_checkpoints(const std::vector<std::string>& roots) {
  std::vector<fs::path> files;
  for (const auto& r : roots) {
    const fs::path p(r);
    if (fs::is_regular_file(p)) {
      files.push_back(p);
    } else if (fs::is_directory(p)) {
      for (const auto& e : fs::recursive_directory_iterator(p))
        if (e.is_regular_file() && e.path().extension() == ".ckpt" && e.path().filename() != "last_good.ckpt")
          files.push_back(e.path());
    } else {
      throw DataError("checkpoint path not found: " + r);
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no checkpoints found");
  std::vector<CheckpointRef> refs;
  for (const auto& f : files) {
    CheckpointRef ref{f.parent_path().filename().string() + "/" + f.stem().string(), f, ""};
    const fs::path meta = f.parent_path() / (f.stem().string() + ".json");
    if (fs::exists(meta)) ref.vehicle = read_json(meta).value("vehicle", "");
    refs.push_back(std::move(ref));
  }
  return refs;
}

int run_eval(const EvalArgs& a, std::ostream& out) {
  const fs::path dir(a.out);
  std::vector<CheckpointResult> results;
  std::map<std::string, std::string> vehicles;
  if (!a.from_predictions.empty()) {
    const fs::path cache(a.from_predictions);
    const fs::path meta = cache.parent_path() / "checkpoints.json";
    if (fs::exists(meta)) {
      const json names = read_json(meta);
      for (const auto& [name, v] : names.items()) vehicles[name] = v.get<std::string>();
    }
    results = results_from_predictions(read_predictions_csv(cache), vehicles);
    ensure_dir(dir);
  } else {
    if (a.checkpoints.empty()) throw UsageError("eval needs --checkpoints or --from-predictions");
    if (a.data.empty()) throw UsageError("eval needs --data");
    const RunConfig run = base_config(a.config);
    const Split split = parse_split(a.split);
    const auto scenes = load_scenes(a.data, run);
    std::vector<PredictionRow> rows;
    for (const auto& ref : find_checkpoints(a.checkpoints)) {
      ModelF model = ModelF::from_checkpoint(ref.path);
      results.push_back(evaluate_checkpoint(model, ref.name, ref.vehicle, scenes, &rows, split));
      vehicles[ref.name] = ref.vehicle;
      out << ref.name << "  benchmark " << std::fixed << std::setprecision(4) << results.back().score << '\n'
          << std::defaultfloat << std::setprecision(6);
    }
    ensure_dir(dir);
    write_predictions_csv(dir / "predictions.csv", rows);
    write_json(dir / "checkpoints.json", vehicles);
    write_json(dir / "config.json",
               {{"data", a.data}, {"checkpoints", a.checkpoints}, {"split", a.split}, {"run", to_json(run)}});
  }
  write_eval_outputs(dir, results);
  return kExitOk;
}

// ---- transform ---------------------------------------------------------------

struct TransformArgs {
  std::string config, checkpoint, data, out, domain;
  int limit = 8;
};

int run_transform(const TransformArgs& a, std::ostream& out) {
  ModelF model = ModelF::from_checkpoint(a.checkpoint);
  if (!model.spec().has_decoder())
    throw UsageError("checkpoint " + a.checkpoint + " is a baseline classifier: no decoder to transform with");
  const RunConfig run = base_config(a.config);
  const auto scenes = load_scenes(a.data, run);
  const fs::path dir(a.out);
  ensure_dir(dir);
  for (const auto& domain : domains_of(scenes)) {
    if (!a.domain.empty() && domain != a.domain) continue;
    auto subset = filter_domain(scenes, domain, Split::Test);
    if (subset.size() > static_cast<std::size_t>(a.limit)) subset.resize(static_cast<std::size_t>(a.limit));
    if (subset.empty()) continue;
    std::vector<Image> inputs;
    for (const auto& s : subset) inputs.push_back(s.image);
    const auto outputs = reconstruct(model, inputs);
    write_pgm(dir / (domain + ".pgm"), montage(inputs, outputs));
    out << "wrote " << (dir / (domain + ".pgm")).string() << '\n';
  }
  return kExitOk;
}

// ---- gradcheck ---------------------------------------------------------------

int run_gradcheck(std::uint64_t seed, std::ostream& out) {
  bool ok = true;
  for (const auto& r : run_gradcheck_suites(seed)) {
    out << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(24) << r.name << " max_rel_err "
        << std::scientific << std::setprecision(3) << r.max_error << std::defaultfloat << "  (" << r.checked
        << " checks, " << r.skipped << " non-smooth skipped)\n";
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitNumeric;
}

// ---- info --------------------------------------------------------------------

int run_info(const std::string& checkpoint, std::ostream& out) {
  ModelF model = ModelF::from_checkpoint(checkpoint);
  out << to_json(model.spec()).dump(2) << "\nparameters " << model.parameter_count() << '\n';
  return kExitOk;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Denoising autoencoder for cabin occupant classification across vehicle interiors", "cabin"};
  app.require_subcommand(1);

  GenToyArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-toy", "Render the procedural toy dataset");
  gen_cmd->add_option("--config", gen.config, "JSON run configuration")->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "World seed");
  gen_cmd->add_option("--vehicles", gen.vehicles, "Number of vehicles");
  gen_cmd->add_option("--two-seat", gen.two_seat, "Number of trailing two-seat vehicles");
  gen_cmd->add_option("--train-per-vehicle", gen.train_per_vehicle, "Train images per vehicle");
  gen_cmd->add_option("--test-per-vehicle", gen.test_per_vehicle, "Test images per vehicle");
  gen_cmd->add_option("--size", gen.size, "Image side in pixels");
  gen_cmd->add_flag("--force", gen.force, "Overwrite a non-empty output directory");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train on the train split of a single vehicle");
  train_cmd->add_option("--config", tr.config, "JSON run configuration")->check(CLI::ExistingFile);
  train_cmd->add_option("--data", tr.data, "Dataset manifest")->required();
  train_cmd->add_option("--vehicle", tr.vehicle, "Training domain")->required();
  train_cmd->add_option("--out", tr.out, "Run directory")->required();
  train_cmd->add_option("--loss", tr.loss, "Reconstruction loss")
      ->check(CLI::IsMember({"mse", "ssim", "msssim", "ms-ssim", "ms_ssim", "perceptual", "pc"}));
  train_cmd->add_option("--gamma", tr.gamma, "Classification weight (default 75 for mse, else 1)");
  train_cmd->add_option("--decoder", tr.decoder, "Decoder upsampling")->check(CLI::IsMember({"unpool", "nearest"}));
  train_cmd->add_option("--model", tr.model, "Model kind")->check(CLI::IsMember({"ae", "autoencoder", "baseline"}));
  train_cmd->add_option("--optimizer", tr.optimizer, "Optimizer")->check(CLI::IsMember({"adam", "adamw"}));
  train_cmd->add_option("--lr", tr.lr, "Learning rate");
  train_cmd->add_option("--weight-decay", tr.weight_decay, "Weight decay");
  train_cmd->add_option("--epochs", tr.epochs, "Epochs");
  train_cmd->add_option("--batch-size", tr.batch_size, "Batch size");
  train_cmd->add_option("--seed", tr.seed, "Run seed");
  train_cmd->add_flag("--resume", tr.resume, "Continue from <out>/state.bin if present");
  train_cmd->add_flag("--quiet", tr.quiet, "No per-epoch output");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Cross-vehicle accuracy matrix and benchmark scores");
  eval_cmd->add_option("--config", ev.config, "JSON run configuration")->check(CLI::ExistingFile);
  eval_cmd->add_option("--checkpoints", ev.checkpoints, "Checkpoint files or directories searched for *.ckpt");
  eval_cmd->add_option("--data", ev.data, "Dataset manifest");
  eval_cmd->add_option("--out", ev.out, "Report directory")->required();
  eval_cmd->add_option("--from-predictions", ev.from_predictions, "Rebuild reports from a predictions.csv cache")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", ev.split, "Scenes to score: test (benchmark) or train (known instances)")
      ->check(CLI::IsMember({"test", "train"}));

  TransformArgs tf;
  auto* transform_cmd = app.add_subcommand("transform", "Write input | reconstruction grids per vehicle");
  transform_cmd->add_option("--config", tf.config, "JSON run configuration")->check(CLI::ExistingFile);
  transform_cmd->add_option("--checkpoint", tf.checkpoint, "Autoencoder checkpoint")->required();
  transform_cmd->add_option("--data", tf.data, "Dataset manifest")->required();
  transform_cmd->add_option("--out", tf.out, "Output directory")->required();
  transform_cmd->add_option("--domain", tf.domain, "Only this vehicle");
  transform_cmd->add_option("--limit", tf.limit, "Images per vehicle")->check(CLI::PositiveNumber);

  std::uint64_t gc_seed = 2021;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference checks of every differentiable op");
  gc_cmd->add_option("--seed", gc_seed, "Seed for the random inputs");

  std::string info_ckpt;
  auto* info_cmd = app.add_subcommand("info", "Print a checkpoint's model spec");
  info_cmd->add_option("checkpoint", info_ckpt, "Checkpoint file")->required();

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  if (!argv_rev.empty()) argv_rev.pop_back();  // program name
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*gen_cmd) return run_gen_toy(gen, out);
    if (*train_cmd) return run_train(tr, out);
    if (*eval_cmd) return run_eval(ev, out);
    if (*transform_cmd) return run_transform(tf, out);
    if (*gc_cmd) return run_gradcheck(gc_seed, out);
    if (*info_cmd) return run_info(info_ckpt, out);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const CheckpointError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  return cli_main(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace cabin
