#include <fstream>
#include <sstream>

#include "cabin/cli.hpp"
#include "cabin/data.hpp"
#include "doctest.h"
#include "json.hpp"
#include "test_util.hpp"

using namespace cabin;
using cabin::test::slurp;
using cabin::test::TempDir;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run cabin_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "cabin");
  std::ostringstream out, err;
  Run r;
  r.code = cli_main(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// 16-pixel world and network so every command finishes in well under a second.
const char* kTinyConfig = R"({
  "seed": 1,
  "world": {"image_size": 16, "train_per_vehicle": 20, "test_per_vehicle": 6},
  "preprocess": {"crop": 16, "out_size": 16},
  "train": {
    "epochs": 2, "batch_size": 4, "lr": 0.001,
    "loss": {"kind": "mse"},
    "model": {"base_filters": 2, "blocks": 2, "latent_dim": 8, "fc_hidden": 16, "head_hidden": 8}
  }
})";

struct TinyWorld {
  TempDir dir{"cli"};
  fs::path config = dir / "tiny.json";
  fs::path data = dir / "toy";
  TinyWorld() {
    std::ofstream(config) << kTinyConfig;
    const auto r = cabin_cli({"gen-toy", "--config", config.string(), "--out", data.string()});
    REQUIRE(r.code == 0);
  }
  std::string manifest() const { return (data / "manifest.csv").string(); }
  Run train(const std::string& vehicle, const fs::path& out, std::vector<std::string> extra = {}) const {
    std::vector<std::string> args{"train", "--config", config.string(), "--data", manifest(), "--vehicle", vehicle,
                                  "--out", out.string(), "--quiet"};
    args.insert(args.end(), extra.begin(), extra.end());
    return cabin_cli(args);
  }
};

std::size_t count_files(const fs::path& dir, const std::string& ext) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) n += e.path().extension() == ext;
  return n;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit 1") {
    CHECK(cabin_cli({}).code == kExitUsage);
    CHECK(cabin_cli({"fly"}).code == kExitUsage);
    CHECK(cabin_cli({"train", "--data", "x.csv"}).code == kExitUsage);
    CHECK(cabin_cli({"train", "--data", "x", "--vehicle", "v", "--out", "o", "--loss", "l1"}).code == kExitUsage);
    CHECK(cabin_cli({"eval", "--out", "o"}).code == kExitUsage);
    const auto help = cabin_cli({"--help"});
    CHECK(help.code == kExitOk);
    CHECK(help.out.find("gen-toy") != std::string::npos);
  }

  TEST_CASE("gen-toy default world has 4 vehicles with 400/100 splits") {
    TempDir dir("gen");
    const auto r = cabin_cli({"gen-toy", "--out", (dir / "toy").string()});
    REQUIRE(r.code == kExitOk);
    for (int v = 0; v < 4; ++v) {
      const fs::path vd = dir / ("toy/vehicle" + std::to_string(v));
      CHECK(count_files(vd / "train", ".pgm") == 400);
      CHECK(count_files(vd / "test", ".pgm") == 100);
    }
    CHECK(count_files(dir / "toy", ".pgm") == 2000);
    CHECK(parse_manifest(dir / "toy/manifest.csv").records.size() == 2000);
    CHECK(fs::exists(dir / "toy/config.json"));
    CHECK(read_pgm(dir / "toy/vehicle3/test/0099.pgm").rows() == 64);
  }

  TEST_CASE("gen-toy refuses a non-empty directory without --force") {
    TempDir dir("genforce");
    const std::string out = (dir / "toy").string();
    const std::vector<std::string> base{"gen-toy", "--out", out, "--size", "16", "--train-per-vehicle", "3",
                                        "--test-per-vehicle", "2"};
    REQUIRE(cabin_cli(base).code == kExitOk);
    const auto again = cabin_cli(base);
    CHECK(again.code == kExitData);
    CHECK(again.err.find("--force") != std::string::npos);
    auto forced = base;
    forced.push_back("--force");
    CHECK(cabin_cli(forced).code == kExitOk);
  }

  TEST_CASE("gen-toy bytes depend on the seed only") {
    TempDir dir("genseed");
    auto gen = [&](const std::string& name, const std::string& seed) {
      return cabin_cli({"gen-toy", "--out", (dir / name).string(), "--size", "16", "--train-per-vehicle", "4",
                        "--test-per-vehicle", "2", "--seed", seed})
          .code;
    };
    REQUIRE(gen("a", "5") == 0);
    REQUIRE(gen("b", "5") == 0);
    REQUIRE(gen("c", "6") == 0);
    for (const char* f : {"manifest.csv", "config.json", "vehicle1/train/0002.pgm", "vehicle1/train/0002.json"})
      CHECK(slurp(dir / (std::string("a/") + f)) == slurp(dir / (std::string("b/") + f)));
    CHECK(slurp(dir / "a/vehicle1/train/0002.pgm") != slurp(dir / "c/vehicle1/train/0002.pgm"));
  }

  TEST_CASE("gen-toy rejects an invalid world") {
    TempDir dir("genbad");
    CHECK(cabin_cli({"gen-toy", "--out", (dir / "t").string(), "--size", "20"}).code == kExitUsage);
  }

  TEST_CASE("train, eval, transform and info on a tiny world") {
    TinyWorld w;
    const fs::path runs = w.dir / "runs";

    SUBCASE("train writes its artifacts and resolved config") {
      const auto r = w.train("vehicle1", runs / "ae", {"--loss", "mse"});
      REQUIRE(r.code == kExitOk);
      for (const char* f : {"config.json", "model.ckpt", "model.json", "train_log.csv", "timing.csv", "state.bin"})
        CHECK_MESSAGE(fs::exists(runs / "ae" / f), f);
      const auto cfg = nlohmann::json::parse(slurp(runs / "ae/config.json"));
      CHECK(cfg["vehicle"] == "vehicle1");
      CHECK(cfg["train"]["loss"]["gamma"] == 75.0);
      CHECK(cfg["train"]["epochs"] == 2);
      const auto meta = nlohmann::json::parse(slurp(runs / "ae/model.json"));
      CHECK(meta["vehicle"] == "vehicle1");

      CHECK(w.train("vehicle1", runs / "ssim", {"--loss", "ssim", "--epochs", "1"}).code == kExitOk);
      const auto ssim_cfg = nlohmann::json::parse(slurp(runs / "ssim/config.json"));
      CHECK(ssim_cfg["train"]["loss"]["gamma"] == 1.0);
      CHECK(ssim_cfg["train"]["epochs"] == 1);
    }

    SUBCASE("unknown vehicle is a data error") {
      const auto r = w.train("vehicle9", runs / "x");
      CHECK(r.code == kExitData);
      CHECK(r.err.find("vehicle9") != std::string::npos);
    }

    SUBCASE("missing manifest is a data error") {
      CHECK(cabin_cli({"train", "--data", (w.dir / "none.csv").string(), "--vehicle", "vehicle0", "--out",
                       (runs / "x").string()})
                .code == kExitData);
    }

    SUBCASE("divergence exits 3 and keeps the last good model") {
      const auto r = w.train("vehicle0", runs / "nan", {"--lr", "1e30", "--optimizer", "adam"});
      CHECK(r.code == kExitNumeric);
      CHECK(fs::exists(runs / "nan/last_good.ckpt"));
      CHECK_FALSE(fs::exists(runs / "nan/model.ckpt"));
    }

    SUBCASE("baseline ignores the reconstruction loss") {
      REQUIRE(w.train("vehicle0", runs / "b1", {"--model", "baseline", "--loss", "mse"}).code == kExitOk);
      REQUIRE(w.train("vehicle0", runs / "b2", {"--model", "baseline", "--loss", "ssim"}).code == kExitOk);
      CHECK(slurp(runs / "b1/model.ckpt") == slurp(runs / "b2/model.ckpt"));
      const auto cfg = nlohmann::json::parse(slurp(runs / "b1/config.json"));
      CHECK(cfg["train"]["optimizer"] == "adam");
      CHECK(cfg["train"]["weight_decay"] == 0.0);
      const std::string log = slurp(runs / "b1/train_log.csv");
      CHECK(log.find(",0,") != std::string::npos);  // zero reconstruction column

      const auto t = cabin_cli({"transform", "--checkpoint", (runs / "b1/model.ckpt").string(), "--config",
                                w.config.string(), "--data", w.manifest(), "--out", (w.dir / "grids").string()});
      CHECK(t.code == kExitUsage);
      CHECK(t.err.find("no decoder") != std::string::npos);
    }

    SUBCASE("eval over four checkpoints gives a 4x4 matrix") {
      for (int v = 0; v < 4; ++v) {
        const std::string name = "vehicle" + std::to_string(v);
        REQUIRE(w.train(name, runs / name, {"--epochs", "1"}).code == kExitOk);
      }
      const fs::path out = w.dir / "eval";
      const auto r = cabin_cli({"eval", "--checkpoints", runs.string(), "--config", w.config.string(), "--data",
                                w.manifest(), "--out", out.string()});
      REQUIRE(r.code == kExitOk);
      std::istringstream matrix(slurp(out / "cross_matrix.csv"));
      std::string line;
      std::vector<std::string> lines;
      while (std::getline(matrix, line)) lines.push_back(line);
      REQUIRE(lines.size() == 5);
      CHECK(lines[0] == "checkpoint,train_domain,vehicle0,vehicle1,vehicle2,vehicle3");
      for (std::size_t i = 1; i < 5; ++i) {
        CHECK(std::count(lines[i].begin(), lines[i].end(), ',') == 5);
        CHECK(lines[i].find(",vehicle" + std::to_string(i - 1) + ",") != std::string::npos);
      }
      for (const char* f : {"report.csv", "confusion.csv", "summary.json", "predictions.csv", "config.json"})
        CHECK_MESSAGE(fs::exists(out / f), f);

      // Reports rebuilt from the prediction cache are identical.
      const fs::path again = w.dir / "eval2";
      REQUIRE(cabin_cli({"eval", "--from-predictions", (out / "predictions.csv").string(), "--out", again.string()})
                  .code == kExitOk);
      for (const char* f : {"report.csv", "cross_matrix.csv", "confusion.csv", "summary.json"})
        CHECK_MESSAGE(slurp(out / f) == slurp(again / f), f);

      // Repeated evaluation is byte-identical.
      const fs::path third = w.dir / "eval3";
      REQUIRE(cabin_cli({"eval", "--checkpoints", runs.string(), "--config", w.config.string(), "--data",
                         w.manifest(), "--out", third.string()})
                  .code == kExitOk);
      for (const char* f : {"report.csv", "cross_matrix.csv", "confusion.csv", "summary.json", "predictions.csv"})
        CHECK_MESSAGE(slurp(out / f) == slurp(third / f), f);

      // Known instances in unknown vehicles: the train split of every domain.
      const fs::path on_train = w.dir / "eval_train";
      REQUIRE(cabin_cli({"eval", "--checkpoints", runs.string(), "--config", w.config.string(), "--data",
                         w.manifest(), "--out", on_train.string(), "--split", "train"})
                  .code == kExitOk);
      const auto summary = nlohmann::json::parse(slurp(on_train / "summary.json"));
      CHECK(summary["checkpoints"][0]["domains"]["vehicle1"]["scenes"] == 20);
      CHECK(nlohmann::json::parse(slurp(out / "summary.json"))["checkpoints"][0]["domains"]["vehicle1"]["scenes"] == 6);
      CHECK(cabin_cli({"eval", "--checkpoints", runs.string(), "--data", w.manifest(), "--out", on_train.string(),
                       "--split", "val"})
                .code == kExitUsage);

      const auto t = cabin_cli({"transform", "--checkpoint", (runs / "vehicle0/model.ckpt").string(), "--config",
                                w.config.string(), "--data", w.manifest(), "--out", (w.dir / "grids").string(),
                                "--limit", "3"});
      REQUIRE(t.code == kExitOk);
      const Image grid = read_pgm(w.dir / "grids/vehicle2.pgm");
      CHECK(grid.rows() == 3 * 16 + 2 * 2);
      CHECK(grid.cols() == 2 * 16 + 2);

      const auto info = cabin_cli({"info", (runs / "vehicle0/model.ckpt").string()});
      CHECK(info.code == kExitOk);
      CHECK(info.out.find("\"latent_dim\": 8") != std::string::npos);
    }

    SUBCASE("missing checkpoints are a data error") {
      CHECK(cabin_cli({"eval", "--checkpoints", (w.dir / "nothing").string(), "--data", w.manifest(), "--out",
                       (w.dir / "e").string()})
                .code == kExitData);
      CHECK(cabin_cli({"info", (w.dir / "nothing.ckpt").string()}).code == kExitData);
    }

    SUBCASE("training twice gives identical bytes") {
      REQUIRE(w.train("vehicle2", runs / "a", {"--decoder", "nearest"}).code == kExitOk);
      REQUIRE(w.train("vehicle2", runs / "b", {"--decoder", "nearest"}).code == kExitOk);
      // state.bin and timing.csv also hold wall-clock times
      for (const char* f : {"model.ckpt", "train_log.csv", "model.json"})
        CHECK_MESSAGE(slurp(runs / "a" / f) == slurp(runs / "b" / f), f);
      CHECK(slurp(runs / "a/config.json") == slurp(runs / "b/config.json"));

      // Resuming a finished run changes nothing.
      REQUIRE(w.train("vehicle2", runs / "a", {"--decoder", "nearest", "--resume"}).code == kExitOk);
      CHECK(slurp(runs / "a/model.ckpt") == slurp(runs / "b/model.ckpt"));
      CHECK(slurp(runs / "a/train_log.csv") == slurp(runs / "b/train_log.csv"));
    }
  }

  TEST_CASE("gradcheck command passes") {
    const auto r = cabin_cli({"gradcheck"});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("FAIL") == std::string::npos);
    CHECK(r.out.find("PASS model_unpool_mse") != std::string::npos);
  }
}
