#include <cmath>
#include <sstream>
#include <fstream>

#include "cabin/eval.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace cabin;
using cabin::test::TempDir;

namespace {

std::vector<PredictionRow> fixture_rows() {
  // ckA trained on car1: car1 3/3 seats, car2 2/3 + 1/2 (two-seat scene), car3 1/3.
  return {
      {"ckA", "car1", "a.pgm", {0, 1, 2}, {0, 1, 2}},
      {"ckA", "car2", "b.pgm", {0, 1, 2}, {0, 1, 5}},
      {"ckA", "car2", "c.pgm", {3, kNoSeat, 4}, {3, 0, 6}},
      {"ckA", "car3", "d.pgm", {5, 5, 5}, {5, 0, 0}},
      {"ckB", "car1", "a.pgm", {0, 1, 2}, {6, 6, 6}},
      {"ckB", "car2", "b.pgm", {0, 1, 2}, {0, 1, 2}},
  };
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("benchmark score is the plain mean") {
    const std::vector<double> two{0.5, 0.7};
    CHECK(benchmark_score(two) == 0.6);
    const std::vector<double> three{0.25, 0.5, 1.0};
    CHECK(benchmark_score(three) == 1.75 / 3);
    CHECK(benchmark_score(std::map<std::string, double>{{"x", 0.5}, {"y", 1.0}}) == 0.75);
    CHECK_THROWS(benchmark_score(std::vector<double>{}));
  }

  TEST_CASE("accuracy skips absent seats") {
    const std::vector<SeatLabels> truth{{0, 1, 2}, {3, kNoSeat, 4}};
    const std::vector<SeatLabels> pred{{0, 0, 2}, {3, 6, 5}};
    const auto r = accuracy(pred, truth);
    CHECK(r.total == 5);
    CHECK(r.correct == 3);
    CHECK(r.accuracy() == 0.6);
    CHECK(r.seat_total[1] == 1);
    CHECK(r.seat_accuracy(0) == 1.0);
    CHECK(r.seat_accuracy(1) == 0.0);
    CHECK(r.seat_accuracy(2) == 0.5);
    CHECK(r.scenes == 2);
    CHECK(r.scenes_correct == 0);
    const std::vector<SeatLabels> fixed{{0, 1, 2}, {3, 6, 4}};
    const auto all = accuracy(fixed, truth);
    CHECK(all.scene_accuracy() == 1.0);
    CHECK(all.accuracy() == 1.0);
    CHECK_THROWS(accuracy(pred, std::vector<SeatLabels>(1)));
  }

  TEST_CASE("accuracy equals confusion trace over sum") {
    Rng rng(3);
    std::vector<SeatLabels> truth(200), pred(200);
    for (int i = 0; i < 200; ++i)
      for (int s = 0; s < 3; ++s) {
        truth[i][s] = (s == 1 && i % 7 == 0) ? kNoSeat : static_cast<int>(rng.below(7));
        pred[i][s] = rng.bernoulli(0.6) && truth[i][s] != kNoSeat ? truth[i][s] : static_cast<int>(rng.below(7));
      }
    const auto c = confusion(pred, truth);
    std::int64_t trace = 0, total = 0;
    for (int t = 0; t < 7; ++t)
      for (int p = 0; p < 7; ++p) {
        total += c[t][p];
        if (t == p) trace += c[t][p];
      }
    const auto r = accuracy(pred, truth);
    CHECK(total == r.total);
    CHECK(trace == r.correct);
    CHECK(static_cast<double>(trace) / static_cast<double>(total) == r.accuracy());
  }

  TEST_CASE("results from hand-built predictions") {
    const auto rows = fixture_rows();
    const auto results = results_from_predictions(rows, {{"ckA", "car1"}, {"ckB", "car2"}});
    REQUIRE(results.size() == 2);
    const auto& a = results[0];
    CHECK(a.checkpoint == "ckA");
    REQUIRE(a.domains.size() == 3);
    CHECK(a.domains[0].seen);
    CHECK(a.domains[0].report.accuracy() == 1.0);
    CHECK(a.domains[1].report.total == 5);
    CHECK(a.domains[1].report.correct == 3);
    CHECK(a.domains[2].report.correct == 1);
    // Unseen domains only: (3/5 + 1/3) / 2
    CHECK(a.score == (0.6 + 1.0 / 3) / 2);
    CHECK(results[1].score == 0.0);  // car1 is its only unseen domain, with 0/3
  }

  TEST_CASE("prediction cache round trip") {
    TempDir dir("pred");
    const auto rows = fixture_rows();
    write_predictions_csv(dir / "p.csv", rows);
    const auto back = read_predictions_csv(dir / "p.csv");
    REQUIRE(back.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      CHECK(back[i].checkpoint == rows[i].checkpoint);
      CHECK(back[i].path == rows[i].path);
      CHECK(back[i].truth == rows[i].truth);
      CHECK(back[i].predicted == rows[i].predicted);
    }
    std::ofstream(dir / "bad.csv") << "header\nckA,car1,a.pgm,0,1\n";
    CHECK_THROWS_AS(read_predictions_csv(dir / "bad.csv"), DataError);
  }

  TEST_CASE("report files") {
    TempDir dir("reports");
    const auto results = results_from_predictions(fixture_rows(), {{"ckA", "car1"}, {"ckB", "car2"}});
    write_eval_outputs(dir / "out", results);
    const std::string matrix = cabin::test::slurp(dir / "out/cross_matrix.csv");
    CHECK(matrix ==
          "checkpoint,train_domain,car1,car2,car3\n"
          "ckA,car1,1.000000,0.600000,0.333333\n"
          "ckB,car2,0.000000,1.000000,\n");
    const std::string report = cabin::test::slurp(dir / "out/report.csv");
    CHECK(report.find("ckA,car1,car2,0,0.600000,1.000000,1.000000,0.000000,5,2,0.000000\n") != std::string::npos);
    const auto summary = nlohmann::json::parse(cabin::test::slurp(dir / "out/summary.json"));
    CHECK(summary["checkpoints"][0]["benchmark_score"].get<double>() == (0.6 + 1.0 / 3) / 2);
    const std::string conf = cabin::test::slurp(dir / "out/confusion.csv");
    CHECK(conf.rfind("checkpoint,domain,true_class,pred_0", 0) == 0);
    // 2 checkpoints x domains x 7 classes + header
    CHECK(std::count(conf.begin(), conf.end(), '\n') == 1 + (3 + 2) * 7);
  }

  TEST_CASE("masked mse ignores object pixels") {
    Image a = Image::Zero(2, 2), b = Image::Zero(2, 2);
    b(0, 0) = 1.0f;
    b(1, 1) = 0.5f;
    Mask m = Mask::Constant(2, 2, false);
    CHECK(masked_mse(a, b, m) == doctest::Approx(1.25 / 4));
    m(0, 0) = true;
    CHECK(masked_mse(a, b, m) == doctest::Approx(0.25 / 3));
    CHECK_THROWS(masked_mse(a, b, Mask::Constant(2, 2, true)));
    CHECK_THROWS(masked_mse(a, Image::Zero(3, 2), m));
  }

  TEST_CASE("montage layout") {
    std::vector<Image> in(2, Image::Constant(3, 4, 0.2f)), out(2, Image::Constant(3, 4, 0.7f));
    const Image g = montage(in, out);
    CHECK(g.rows() == 3 * 2 + 2);
    CHECK(g.cols() == 4 * 2 + 2);
    CHECK(g(0, 0) == 0.2f);
    CHECK(g(0, 6) == 0.7f);
    CHECK(g(3, 0) == 1.0f);
    CHECK(g(5, 9) == 0.7f);
  }

  TEST_CASE("predict and reconstruct") {
    ModelSpec spec;
    spec.input_size = 16;
    spec.base_filters = 2;
    spec.blocks = 2;
    spec.latent_dim = 8;
    spec.fc_hidden = 16;
    spec.head_hidden = 8;
    Rng rng(1);
    ModelF m(spec, rng);
    std::vector<Image> imgs;
    for (int i = 0; i < 37; ++i) imgs.push_back(Image::Constant(16, 16, static_cast<float>(i) / 40.0f));
    const auto p = predict(m, imgs, 8);
    const auto q = predict(m, imgs, 32);
    CHECK(p == q);
    for (const auto& l : p)
      for (int v : l) CHECK((v >= 0 && v < 7));
    const auto r = reconstruct(m, imgs);
    REQUIRE(r.size() == 37);
    CHECK(r[0].rows() == 16);
    spec.kind = ModelKind::Baseline;
    ModelF b(spec, rng);
    CHECK_THROWS(reconstruct(b, imgs));
  }

  TEST_CASE("uniform random predictions score about one in seven") {
    Rng rng(8);
    const int n = 20000;
    std::vector<SeatLabels> truth(n), pred(n);
    for (int i = 0; i < n; ++i)
      for (int s = 0; s < 3; ++s) {
        truth[i][s] = static_cast<int>(rng.below(7));
        pred[i][s] = static_cast<int>(rng.below(7));
      }
    const double p = 1.0 / 7, sd = std::sqrt(p * (1 - p) / (3.0 * n));
    CHECK(std::abs(accuracy(pred, truth).accuracy() - p) < 4 * sd);
  }

  TEST_CASE("benchmark score recomputed from the report csv") {
    TempDir dir("recompute");
    const auto results = results_from_predictions(fixture_rows(), {{"ckA", "car1"}, {"ckB", "car2"}});
    write_eval_outputs(dir / "out", results);
    std::ifstream is(dir / "out/report.csv");
    std::string line;
    std::getline(is, line);
    std::map<std::string, std::pair<double, int>> sums;
    while (std::getline(is, line)) {
      std::vector<std::string> f;
      std::stringstream ss(line);
      for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
      REQUIRE(f.size() == 11);
      if (f[3] == "1") continue;
      sums[f[0]].first += std::stod(f[4]);
      sums[f[0]].second += 1;
    }
    const auto summary = nlohmann::json::parse(cabin::test::slurp(dir / "out/summary.json"));
    for (const auto& ck : summary["checkpoints"]) {
      const auto& [total, count] = sums.at(ck["checkpoint"].get<std::string>());
      CHECK(ck["benchmark_score"].get<double>() == doctest::Approx(total / count).epsilon(1e-6));
    }
  }
}
