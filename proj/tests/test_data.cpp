#include <algorithm>
#include <fstream>
#include <set>

#include "cabin/data.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace cabin;
using cabin::test::TempDir;

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path);
  os << text;
}

ToyWorldConfig small_world() {
  ToyWorldConfig cfg;
  cfg.num_vehicles = 3;
  cfg.two_seat_vehicles = 1;
  cfg.train_per_vehicle = 12;
  cfg.test_per_vehicle = 5;
  cfg.image_size = 32;
  return cfg;
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("pgm round trip at 8 and 16 bits") {
    TempDir dir("pgm");
    Image img(3, 5);
    for (int i = 0; i < 15; ++i) img(i / 5, i % 5) = static_cast<float>(i) / 14.0f;
    write_pgm(dir / "a.pgm", img);
    const Image back = read_pgm(dir / "a.pgm");
    REQUIRE(back.rows() == 3);
    REQUIRE(back.cols() == 5);
    CHECK((back - img).abs().maxCoeff() <= 0.5f / 255.0f + 1e-7f);
    write_pgm16(dir / "b.pgm", img);
    CHECK((read_pgm(dir / "b.pgm") - img).abs().maxCoeff() <= 0.5f / 65535.0f + 1e-7f);

    // 8-bit write clamps and rounds to the nearest level.
    Image out_of_range(1, 2);
    out_of_range << -0.5f, 2.0f;
    write_pgm(dir / "c.pgm", out_of_range);
    const Image c = read_pgm(dir / "c.pgm");
    CHECK(c(0, 0) == 0.0f);
    CHECK(c(0, 1) == 1.0f);
    // Header + pixel bytes only.
    CHECK(cabin::test::slurp(dir / "a.pgm") .size() == std::string("P5\n5 3\n255\n").size() + 15);
  }

  TEST_CASE("pgm reader rejects malformed files") {
    TempDir dir("pgmbad");
    write_text(dir / "p2.pgm", "P2\n2 2\n255\n0 0 0 0\n");
    CHECK_THROWS_AS(read_pgm(dir / "p2.pgm"), DataError);
    write_text(dir / "short.pgm", "P5\n4 4\n255\nab");
    CHECK_THROWS_AS(read_pgm(dir / "short.pgm"), DataError);
    write_text(dir / "head.pgm", "P5\n4");
    CHECK_THROWS_AS(read_pgm(dir / "head.pgm"), DataError);
    CHECK_THROWS_AS(read_pgm(dir / "missing.pgm"), DataError);
  }

  TEST_CASE("pgm reader skips header comments") {
    TempDir dir("pgmc");
    write_text(dir / "c.pgm", std::string("P5\n# made by hand\n2 1\n255\n") + '\x00' + '\xff');
    const Image img = read_pgm(dir / "c.pgm");
    CHECK(img(0, 0) == 0.0f);
    CHECK(img(0, 1) == 1.0f);
  }

  TEST_CASE("manifest parsing") {
    TempDir dir("man");
    write_text(dir / "m.csv",
               "# comment\n"
               "path,left,middle,right,domain,split\n"
               "\n"
               "a/0.pgm,0,1,2,carA,train\n"
               "b/1.pgm,6,-,5,carB,test\n");
    const auto m = parse_manifest(dir / "m.csv");
    REQUIRE(m.records.size() == 2);
    CHECK(m.root == dir.path());
    CHECK(m.records[0].labels == SeatLabels{0, 1, 2});
    CHECK(m.records[1].labels == SeatLabels{6, kNoSeat, 5});
    CHECK(m.records[1].domain == "carB");
    CHECK(m.records[1].split == Split::Test);

    write_manifest(dir / "n.csv", m);
    const auto again = parse_manifest(dir / "n.csv");
    REQUIRE(again.records.size() == 2);
    CHECK(again.records[1].labels == m.records[1].labels);
    CHECK(again.records[0].image == m.records[0].image);
  }

  TEST_CASE("manifest errors name the line") {
    TempDir dir("manbad");
    auto expect_error = [&](const std::string& body, const std::string& needle) {
      write_text(dir / "m.csv", body);
      try {
        parse_manifest(dir / "m.csv");
        FAIL("no error for: " << body);
      } catch (const DataError& e) {
        CHECK(std::string(e.what()).find(needle) != std::string::npos);
      }
    };
    expect_error("a.pgm,0,1,2,car\n", ":1: expected 6 fields");
    expect_error("path,left,middle,right,domain,split\na.pgm,0,7,2,car,train\n", ":2: label '7'");
    expect_error("a.pgm,0,x,2,car,train\n", "not an integer");
    expect_error("a.pgm,-,1,2,car,train\n", "not an integer");
    expect_error("a.pgm,0,1,2,car,validation\n", "unknown split");
    expect_error("a.pgm,0,1,2,,train\n", "empty domain");
    CHECK_THROWS_AS(parse_manifest(dir / "nope.csv"), DataError);
  }

  TEST_CASE("load_manifest reports missing images") {
    TempDir dir("manmiss");
    write_text(dir / "m.csv", "gone.pgm,0,0,0,car,train\n");
    CHECK_THROWS_AS(load_manifest(dir / "m.csv"), DataError);
  }

  TEST_CASE("center crop and resize") {
    Image img(6, 8);
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 8; ++x) img(y, x) = static_cast<float>(10 * y + x);
    const Image c = center_crop(img, 4);
    CHECK(c.rows() == 4);
    CHECK(c(0, 0) == img(1, 2));
    CHECK(c(3, 3) == img(4, 5));
    CHECK_THROWS_AS(center_crop(img, 7), DataError);
    // Identity size leaves the image unchanged; a linear ramp stays linear.
    CHECK((resize_bilinear(img, 6, 8) - img).abs().maxCoeff() < 1e-6f);
    const Image half = resize_bilinear(img, 3, 4);
    CHECK(half(0, 0) == doctest::Approx(5.5f));
  }

  TEST_CASE("split_train_eval is a seeded partition") {
    std::vector<LabeledScene> scenes(50);
    for (int i = 0; i < 50; ++i) scenes[i].source = std::to_string(i);
    Rng a(3), b(3), c(4);
    const auto p = split_train_eval(scenes, 0.8, a);
    const auto q = split_train_eval(scenes, 0.8, b);
    const auto r = split_train_eval(scenes, 0.8, c);
    CHECK(p.first.size() == 40);
    CHECK(p.second.size() == 10);
    std::set<std::string> all;
    for (const auto& s : p.first) all.insert(s.source);
    for (const auto& s : p.second) all.insert(s.source);
    CHECK(all.size() == 50);
    CHECK(p.first[0].source == q.first[0].source);
    bool differs = false;
    for (std::size_t i = 0; i < 10; ++i) differs |= p.second[i].source != r.second[i].source;
    CHECK(differs);
    Rng d(0);
    CHECK_THROWS_AS(split_train_eval(std::vector<LabeledScene>(3), 0.8, d), DataError);
  }

  TEST_CASE("toy instances are disjoint between train and test") {
    const ToyWorldConfig cfg;
    for (int label = 1; label < kNumClasses; ++label) {
      const auto train = cfg.instance_seeds(label, Split::Train);
      const auto test = cfg.instance_seeds(label, Split::Test);
      CHECK(train.size() == static_cast<std::size_t>(cfg.train_instances_per_class));
      CHECK(test.size() == static_cast<std::size_t>(cfg.test_instances_per_class));
      for (auto s : train) CHECK(std::find(test.begin(), test.end(), s) == test.end());
    }
  }

  TEST_CASE("toy scene rendering") {
    const ToyWorldConfig cfg = small_world();
    const Image bg = render_background(cfg, 0);
    const auto empty = generate_toy_scene(cfg, 0, {kEmptySeat, kEmptySeat, kEmptySeat}, {1, 2, 3});
    CHECK((empty.scene.image - bg).abs().maxCoeff() == 0.0f);
    CHECK_FALSE(empty.object_mask.any());

    const auto full = generate_toy_scene(cfg, 0, {kAdult, kEverydayObject, kOccupiedChildSeat}, {11, 12, 13});
    CHECK(full.object_mask.any());
    CHECK(full.scene.image.minCoeff() >= 0.0f);
    CHECK(full.scene.image.maxCoeff() <= 1.0f);
    // Outside the mask the background is untouched.
    for (int y = 0; y < bg.rows(); ++y)
      for (int x = 0; x < bg.cols(); ++x)
        if (!full.object_mask(y, x)) CHECK(full.scene.image(y, x) == bg(y, x));
    // Deterministic.
    const auto again = generate_toy_scene(cfg, 0, {kAdult, kEverydayObject, kOccupiedChildSeat}, {11, 12, 13});
    CHECK((again.scene.image - full.scene.image).abs().maxCoeff() == 0.0f);
    // Vehicles differ in background.
    CHECK((render_background(cfg, 1) - bg).abs().maxCoeff() > 0.05f);
  }

  TEST_CASE("two-seat vehicles carry no middle seat") {
    const ToyWorldConfig cfg = small_world();
    CHECK(cfg.vehicle(2).seat_count == 2);
    CHECK(cfg.vehicle(0).seat_count == 3);
    for (const auto& r : generate_toy_split(cfg, 2, Split::Train)) {
      CHECK(r.scene.labels[1] == kNoSeat);
      CHECK(r.scene.seat_count == 2);
    }
  }

  TEST_CASE("toy dataset on disk") {
    TempDir dir("toy");
    const ToyWorldConfig cfg = small_world();
    const auto m = generate_toy_dataset(cfg, dir.path());
    CHECK(m.records.size() == 3u * (12 + 5));
    std::size_t pgm = 0, json = 0;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir.path())) {
      pgm += e.path().extension() == ".pgm";
      json += e.path().extension() == ".json";
    }
    CHECK(pgm == 51);
    CHECK(json == 51 + 1);  // sidecars + world.json
    CHECK(std::filesystem::exists(dir / "manifest.csv"));
    const auto scenes = load_manifest(dir / "manifest.csv");
    REQUIRE(scenes.size() == 51);
    CHECK(domains_of(scenes) == std::vector<std::string>{"vehicle0", "vehicle1", "vehicle2"});
    CHECK(filter_domain(scenes, "vehicle1", Split::Test).size() == 5);
    CHECK(filter_domain(scenes, "vehicle1").size() == 17);
    // Disk images equal the in-memory renders up to 8-bit quantization.
    const auto r = generate_indexed_scene(cfg, 1, Split::Test, 3);
    const auto& s = filter_domain(scenes, "vehicle1", Split::Test)[3];
    CHECK(s.labels == r.scene.labels);
    CHECK((s.image - r.scene.image).abs().maxCoeff() <= 0.5f / 255.0f + 1e-6f);

    // Regeneration is byte-identical.
    TempDir other("toy2");
    generate_toy_dataset(cfg, other.path());
    CHECK(cabin::test::slurp(dir / "manifest.csv") == cabin::test::slurp(other / "manifest.csv"));
    CHECK(cabin::test::slurp(dir.path() / "vehicle2/train/0007.pgm") ==
          cabin::test::slurp(other.path() / "vehicle2/train/0007.pgm"));
  }

  TEST_CASE("world config validation") {
    ToyWorldConfig cfg;
    cfg.two_seat_vehicles = 5;
    CHECK_THROWS(cfg.validate());
    cfg = ToyWorldConfig{};
    cfg.image_size = 8;
    CHECK_THROWS(cfg.validate());
    CHECK_NOTHROW(ToyWorldConfig{}.validate());
  }

  TEST_CASE("split names") {
    CHECK(parse_split("train") == Split::Train);
    CHECK(std::string(to_string(Split::Test)) == "test");
    CHECK_THROWS_AS(parse_split("dev"), DataError);
    CHECK(std::string(class_name(kAdult)).size() > 0);
  }

  TEST_CASE("preprocess crops the centre square and resizes") {
    LabeledScene s;
    s.image = Image::Zero(640, 960);
    s.image.block(0, 160, 640, 640).setConstant(0.5f);
    const auto p = preprocess(s, 640, 128);
    CHECK(p.image.rows() == 128);
    CHECK(p.image.cols() == 128);
    CHECK((p.image - 0.5f).abs().maxCoeff() < 1e-6f);
  }

  TEST_CASE("100 scenes split 80/20") {
    std::vector<LabeledScene> scenes(100);
    for (int i = 0; i < 100; ++i) scenes[i].domain = std::to_string(i);
    Rng rng(1);
    const auto [train, held] = split_train_eval(scenes, 0.8, rng);
    CHECK(train.size() == 80);
    CHECK(held.size() == 20);
  }

  TEST_CASE("the same instances occupy the same region in every vehicle") {
    ToyWorldConfig cfg;
    int compared = 0;
    for (int i = 0; i < 20; ++i) {
      const auto a = generate_indexed_scene(cfg, 0, Split::Train, i);
      const auto b = generate_toy_scene(cfg, 1, a.scene.labels, a.instance_seeds);
      const auto both = (a.object_mask && b.object_mask).count();
      const auto either = (a.object_mask || b.object_mask).count();
      if (either == 0) continue;
      ++compared;
      INFO("scene " << i);
      CHECK(static_cast<double>(both) / static_cast<double>(either) > 0.5);
      // Outside the objects only the vehicle differs.
      const Mask background = !(a.object_mask || b.object_mask);
      const Image bg0 = render_background(cfg, 0), bg1 = render_background(cfg, 1);
      for (Eigen::Index y = 0; y < background.rows(); ++y)
        for (Eigen::Index x = 0; x < background.cols(); ++x)
          if (background(y, x)) {
            CHECK(a.scene.image(y, x) == bg0(y, x));
            CHECK(b.scene.image(y, x) == bg1(y, x));
          }
    }
    CHECK(compared > 10);
  }
}
