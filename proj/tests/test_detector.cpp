#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "risksets/detector.hpp"

using namespace risksets;

namespace {
struct Bench {
  Graph g;
  NodeSplit split;
};

Bench make_bench(double shift, double heterophily, std::uint64_t seed, std::size_t n = 500) {
  SynthConfig cfg;
  cfg.n = n;
  cfg.feature_shift = shift;
  cfg.heterophily = heterophily;
  Graph g = generate_synthetic(cfg, seed);
  NodeSplit s = split_nodes(g, {0.4, 0.35, 0.25}, seed);
  return {std::move(g), std::move(s)};
}
}  // namespace

TEST_CASE("separable features produce a strong detector", "[detector]") {
  const Bench b = make_bench(4.0, 0.9, 13);
  DetectorConfig cfg;
  cfg.epochs = 120;
  const DetectorResult r = train_detector(b.g, b.split, cfg, 13);
  CHECK(oracles::auc(r.table, Split::test) > 0.9);
  CHECK(r.loss_curve.front() > r.loss_curve.back());
}

TEST_CASE("uninformative features leave the detector at chance", "[detector]") {
  const Bench b = make_bench(0.0, 0.5, 14);
  DetectorConfig cfg;
  cfg.epochs = 80;
  const DetectorResult r = train_detector(b.g, b.split, cfg, 14);
  // the test split is small, so chance-level AUC still swings a fair bit
  const double auc = oracles::auc(r.table, Split::test);
  CHECK(auc > 0.3);
  CHECK(auc < 0.7);
}

TEST_CASE("training is deterministic in the seed", "[detector]") {
  const Bench b = make_bench(2.0, 0.9, 15, 300);
  DetectorConfig cfg;
  cfg.epochs = 30;
  const DetectorResult r1 = train_detector(b.g, b.split, cfg, 15);
  const DetectorResult r2 = train_detector(b.g, b.split, cfg, 15);
  REQUIRE(r1.table.size() == r2.table.size());
  for (std::size_t i = 0; i < r1.table.size(); ++i) {
    CHECK(r1.table.rows[i].p_anomaly == r2.table.rows[i].p_anomaly);
    CHECK(r1.table.rows[i].p_normal == r2.table.rows[i].p_normal);
  }
  const DetectorResult r3 = train_detector(b.g, b.split, cfg, 16);
  bool any_diff = false;
  for (std::size_t i = 0; i < r1.table.size(); ++i)
    any_diff |= r1.table.rows[i].p_anomaly != r3.table.rows[i].p_anomaly;
  CHECK(any_diff);
}

TEST_CASE("poisoning calib and test labels cannot move the parameters", "[detector]") {
  Bench b = make_bench(2.0, 0.9, 17, 300);
  DetectorConfig cfg;
  cfg.epochs = 25;
  const DetectorResult clean = train_detector(b.g, b.split, cfg, 17);

  // rebuild the graph with every non-Train label flipped
  std::vector<int> poisoned = b.g.labels();
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  for (std::size_t i = 0; i < b.g.num_nodes(); ++i) {
    if (b.split.assignment[i] != Split::train) poisoned[i] = 1 - poisoned[i];
    for (std::uint32_t j : b.g.neighbors(i))
      if (j > i) edges.emplace_back(static_cast<std::uint32_t>(i), j);
  }
  const Graph evil = Graph::build(edges, b.g.num_nodes(), b.g.features(), poisoned);
  const DetectorResult dirty = train_detector(evil, b.split, cfg, 17);

  REQUIRE(clean.params.size() == dirty.params.size());
  for (std::size_t k = 0; k < clean.params.size(); ++k)
    CHECK(clean.params[k].a == dirty.params[k].a);
}

TEST_CASE("score table covers the node set with valid probabilities", "[detector]") {
  const Bench b = make_bench(2.0, 0.9, 18, 200);
  DetectorConfig cfg;
  cfg.epochs = 10;
  const DetectorResult r = train_detector(b.g, b.split, cfg, 18);
  REQUIRE(r.table.size() == b.g.num_nodes());
  for (std::size_t i = 0; i < r.table.size(); ++i) {
    const auto& row = r.table.rows[i];
    CHECK(row.node_id == i);
    CHECK(row.p_anomaly >= 0.0);
    CHECK(row.p_anomaly <= 1.0);
    CHECK(std::abs(row.p_normal + row.p_anomaly - 1.0) < 1e-9);
    CHECK(row.label == b.g.labels()[i]);
    CHECK(row.split == b.split.assignment[i]);
  }
}

TEST_CASE("single-class train split is rejected", "[detector]") {
  Matrix x(6, 2);
  const Graph g = Graph::build({{0, 1}, {2, 3}, {4, 5}}, 6, x, {0, 0, 0, 0, 1, 1});
  NodeSplit s;
  s.assignment = {Split::train, Split::train, Split::calib, Split::calib, Split::test,
                  Split::calib};
  CHECK_THROWS_AS(train_detector(g, s, DetectorConfig{}, 1), InsufficientCalibration);
}

TEST_CASE("score csv export and import round-trip bit-exactly", "[detector]") {
  const Bench b = make_bench(1.5, 0.9, 19, 200);
  DetectorConfig cfg;
  cfg.epochs = 15;
  const DetectorResult r = train_detector(b.g, b.split, cfg, 19);

  const auto path = std::filesystem::temp_directory_path() / "risksets_scores_rt.csv";
  export_scores(r.table, path);
  const ScoreTable back = import_scores(path);
  REQUIRE(back.size() == r.table.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back.rows[i].node_id == r.table.rows[i].node_id);
    CHECK(back.rows[i].p_normal == r.table.rows[i].p_normal);    // bit exact
    CHECK(back.rows[i].p_anomaly == r.table.rows[i].p_anomaly);  // bit exact
    CHECK(back.rows[i].label == r.table.rows[i].label);
    CHECK(back.rows[i].split == r.table.rows[i].split);
  }

  SECTION("header-only file for an empty table") {
    const auto p2 = std::filesystem::temp_directory_path() / "risksets_scores_empty.csv";
    export_scores(ScoreTable{}, p2);
    std::ifstream in(p2);
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line == "node_id,p_normal,p_anomaly,label,split");
    CHECK(!std::getline(in, line));
    CHECK(import_scores(p2).size() == 0);
  }
}

TEST_CASE("score import validation", "[detector]") {
  const auto dir = std::filesystem::temp_directory_path() / "risksets_scores_bad";
  std::filesystem::create_directories(dir);
  const auto write = [&](const char* name, const std::string& body) {
    std::ofstream f(dir / name);
    f << "node_id,p_normal,p_anomaly,label,split\n" << body;
    return dir / name;
  };

  CHECK(import_scores(write("ok.csv", "3,0.2,0.8,1,Calib\n")).size() == 1);
  CHECK_THROWS_AS(import_scores(write("sum.csv", "3,0.2,0.9,1,Calib\n")), ConfigError);
  CHECK_THROWS_AS(import_scores(write("dup.csv", "3,0.2,0.8,1,Calib\n3,0.5,0.5,0,Test\n")),
                  ConfigError);
  CHECK_THROWS_AS(import_scores(write("neg.csv", "3,1.2,-0.2,1,Calib\n")), ConfigError);
  CHECK_THROWS_AS(import_scores(write("split.csv", "3,0.2,0.8,1,Valid\n")), ConfigError);
  CHECK_THROWS_AS(import_scores(write("short.csv", "3,0.2,0.8,1\n")), ConfigError);

  // near-one sums inside the 1e-6 tolerance are renormalized
  const ScoreTable renorm = import_scores(write("renorm.csv", "0,0.2000004,0.8,0,Test\n"));
  CHECK(renorm.rows[0].p_normal + renorm.rows[0].p_anomaly == Catch::Approx(1.0).margin(1e-12));
}
