// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdint>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "framehop/bench.hpp"
#include "framehop/io.hpp"
#include "framehop/synth.hpp"
#include "test_support.hpp"

using namespace framehop;

namespace {

// A small exported dataset the scripted oracle can solve from task sidecars.
std::string export_small_dataset(const std::string& dir, int n, int k,
                                 std::uint64_t seed0 = 500) {
  std::vector<SyntheticTask> tasks;
  for (int i = 0; i < n; ++i) {
    tasks.push_back(generate_task(seed0 + static_cast<std::uint64_t>(i), 48, k, 4));
  }
  return export_dataset(tasks, dir);
}

Trajectory stub_traj(const std::string& category, EpisodeStatus status, bool correct,
                     int tau, long long frames, long long tokens, double wall) {
  Trajectory traj;
  traj.id = "stub";
  traj.category = category;
  traj.options = OptionSet({"a", "b", "c"});
  traj.truth_index = 1;
  traj.status = status;
  traj.tau = tau;
  traj.frames_used = frames;
  traj.prompt_tokens = tokens;
  traj.wall_ms = wall;
  if (status == EpisodeStatus::Answered || status == EpisodeStatus::ForcedAnswer) {
    traj.answer_index = correct ? 1 : 0;
  }
  return traj;
}

}  // namespace

TEST_CASE("manifests load rows, resolve paths, and accept answer labels") {
  test::TempDir dir;
  const std::string path = dir.file("manifest.jsonl");
  {
    std::ofstream out(path);
    out << R"({"id":"a","video_path":"items/a","question":"Q1?","options":["x","y"],"answer_index":1,"category":"recall","task_json":"items/a/task.json"})"
        << "\n\n"
        << R"({"id":"b","video_path":"/abs/b","question":"Q2?","options":["left","right","middle"],"answer":"middle"})"
        << "\n";
  }
  DatasetManifest manifest = load_manifest(path);
  CHECK(manifest.path == path);
  REQUIRE(manifest.items.size() == 2);

  const ManifestItem& a = manifest.items[0];
  CHECK(a.id == "a");
  CHECK(a.video_path == dir.path() + "/items/a");  // resolved against the manifest dir
  CHECK(a.question == "Q1?");
  CHECK(a.options == std::vector<std::string>{"x", "y"});
  CHECK(a.answer_index == 1);
  CHECK(a.category == "recall");
  CHECK(a.task_json == dir.path() + "/items/a/task.json");

  const ManifestItem& b = manifest.items[1];
  CHECK(b.video_path == "/abs/b");  // absolute paths pass through
  CHECK(b.answer_index == 2);       // resolved from the label
  CHECK(b.category.empty());
  CHECK(b.task_json.empty());
}

TEST_CASE("bad manifest rows are rejected with their line number") {
  test::TempDir dir;
  auto write_manifest = [&](const std::string& body) {
    const std::string path = dir.file("m.jsonl");
    std::ofstream out(path);
    out << body;
    out.close();
    return path;
  };

  CHECK_THROWS_WITH_AS(load_manifest(dir.file("none.jsonl")),
                       doctest::Contains("cannot read"), std::runtime_error);
  CHECK_THROWS_WITH_AS(load_manifest(write_manifest("{oops\n")),
                       doctest::Contains("manifest line 1"), std::runtime_error);
  CHECK_THROWS_WITH_AS(
      load_manifest(write_manifest(
          "\n" R"({"id":"x","video_path":"v","question":"q","options":["only"],"answer_index":0})" "\n")),
      doctest::Contains("line 2"), std::runtime_error);
  CHECK_THROWS_WITH_AS(
      load_manifest(write_manifest(
          R"({"id":"x","video_path":"v","question":"q","options":["a","b"]})" "\n")),
      doctest::Contains("needs answer_index or answer"), std::runtime_error);
  CHECK_THROWS_WITH_AS(
      load_manifest(write_manifest(
          R"({"id":"x","video_path":"v","question":"q","options":["a","b"],"answer":"c"})" "\n")),
      doctest::Contains("not among the options"), std::runtime_error);
  CHECK_THROWS_WITH_AS(
      load_manifest(write_manifest(
          R"({"id":"x","video_path":"v","question":"q","options":["a","b"],"answer_index":2})" "\n")),
      doctest::Contains("out of range"), std::runtime_error);
  CHECK_THROWS_WITH_AS(
      load_manifest(write_manifest(R"({"video_path":"v"})" "\n")),
      doctest::Contains("line 1"), std::runtime_error);
}

TEST_CASE("metric aggregation matches a hand-computed example and is pure") {
  std::vector<Trajectory> trajs = {
      stub_traj("x", EpisodeStatus::Answered, true, 2, 5, 100, 10.0),
      stub_traj("x", EpisodeStatus::ForcedAnswer, false, 4, 3, 50, 30.0),
      stub_traj("y", EpisodeStatus::Unanswered, false, 4, 6, 80, 20.0),
      stub_traj("", EpisodeStatus::BackendFailure, false, 0, 0, 0, 0.0),
  };
  EpisodeConfig config;  // max_rounds 4

  MetricsReport r = aggregate_metrics(trajs, config);
  CHECK(r.n_items == 4);
  CHECK(r.n_errors == 2);  // the unanswered and the failed episode
  CHECK(r.accuracy == 25.0);
  CHECK(r.mean_frames == 3.5);
  CHECK(r.mean_rounds == 2.5);
  CHECK(r.mean_prompt_tokens == 57.5);
  CHECK(r.mean_wall_ms == 15.0);
  CHECK(r.median_wall_ms == 15.0);  // even count: midpoint of 10 and 20
  CHECK(r.early_stop_rate == 0.5);  // tau 2 and tau 0 beat max_rounds 4
  REQUIRE(r.per_category.size() == 3);
  CHECK(r.per_category[0].category.empty());  // sorted by name, "" first
  CHECK(r.per_category[0].n == 1);
  CHECK(r.per_category[0].accuracy == 0.0);
  CHECK(r.per_category[1].category == "x");
  CHECK(r.per_category[1].n == 2);
  CHECK(r.per_category[1].accuracy == 50.0);
  CHECK(r.per_category[2].category == "y");
  CHECK(r.per_category[2].accuracy == 0.0);

  // Pure: same input, same report, bit for bit.
  CHECK(metrics_report_to_json(aggregate_metrics(trajs, config)) ==
        metrics_report_to_json(r));

  MetricsReport empty = aggregate_metrics({}, config);
  CHECK(empty.n_items == 0);
  CHECK(empty.accuracy == 0.0);
  CHECK(empty.per_category.empty());

  // Odd count: the median is the middle element.
  trajs.pop_back();
  CHECK(aggregate_metrics(trajs, config).median_wall_ms == 20.0);
}

TEST_CASE("evaluate runs an exported dataset end to end with the oracle") {
  test::TempDir dir;
  const std::string manifest_path = export_small_dataset(dir.path(), 5, 4);
  DatasetManifest manifest = load_manifest(manifest_path);
  REQUIRE(manifest.items.size() == 5);

  EpisodeConfig config;
  EvalResult result = evaluate(manifest, oracle_backend_factory(), config, 2);
  CHECK(result.report.n_items == 5);
  CHECK(result.report.n_errors == 0);
  CHECK(result.report.accuracy == 100.0);  // the oracle finds all the evidence
  CHECK(result.report.mean_frames > 3.0);  // it had to look beyond the first sample
  REQUIRE(result.trajectories.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(result.trajectories[i].id == manifest.items[i].id);  // manifest order
    CHECK(result.trajectories[i].correct());
  }

  // Parallelism does not change the outcome.
  EvalResult serial = evaluate(manifest, oracle_backend_factory(), config, 1);
  CHECK(serial.report.accuracy == result.report.accuracy);
  CHECK(serial.report.mean_frames == result.report.mean_frames);
  CHECK(serial.report.mean_rounds == result.report.mean_rounds);

  // A custom video factory can bypass the on-disk frame dirs entirely.
  VideoFactory from_sidecar = [](const ManifestItem& item) -> std::shared_ptr<VideoSource> {
    return make_video_source(load_task_json(item.task_json));
  };
  EvalResult in_memory = evaluate(manifest, oracle_backend_factory(), config, 2, from_sidecar);
  CHECK(in_memory.report.accuracy == result.report.accuracy);
  CHECK(in_memory.report.mean_frames == result.report.mean_frames);
}

TEST_CASE("item setup failures become error rows instead of aborting") {
  test::TempDir dir;
  const std::string manifest_path = export_small_dataset(dir.path(), 2, 4);

  // Append a row whose video directory does not exist.
  {
    std::ofstream out(manifest_path, std::ios::app);
    out << R"({"id":"ghost","video_path":"items/ghost","question":"Q?","options":["a","b"],"answer_index":0})"
        << "\n";
  }
  DatasetManifest manifest = load_manifest(manifest_path);
  REQUIRE(manifest.items.size() == 3);

  EpisodeConfig config;
  EvalResult result = evaluate(manifest, oracle_backend_factory(), config, 2);
  CHECK(result.report.n_items == 3);
  CHECK(result.report.n_errors == 1);
  REQUIRE(result.trajectories.size() == 3);
  CHECK(result.trajectories[0].correct());
  CHECK(result.trajectories[1].correct());
  const Trajectory& ghost = result.trajectories[2];
  CHECK(ghost.id == "ghost");
  CHECK(ghost.status == EpisodeStatus::BackendFailure);
  CHECK(ghost.error.find("setup failed") == 0);
  CHECK_FALSE(ghost.answered());

  DatasetManifest empty;
  empty.path = "nowhere";
  CHECK_THROWS_AS(evaluate(empty, oracle_backend_factory(), config, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(evaluate(manifest, BackendFactory{}, config, 1), std::invalid_argument);
}

TEST_CASE("a shared backend factory hands every item the same instance") {
  SyntheticTask task = generate_task(501, 48, 4, 4);
  auto backend = std::make_shared<OracleBackend>(task);
  BackendFactory factory = shared_backend_factory(backend);
  ManifestItem item;
  CHECK(factory(item) == backend);
  item.id = "other";
  CHECK(factory(item) == backend);
}

TEST_CASE("sweeps cover the grid and tighter caps cost rounds") {
  test::TempDir dir;
  DatasetManifest manifest = load_manifest(export_small_dataset(dir.path(), 4, 4));
  EpisodeConfig base;

  std::vector<SweepCell> cells = sweep(manifest, oracle_backend_factory(), base,
                                       {{1, 3}, {4, 1}, {4, 3}, {4, 6}}, 2);
  REQUIRE(cells.size() == 4);
  CHECK(cells[0].name == "1_3");
  CHECK(cells[1].name == "4_1");
  CHECK(cells[2].name == "4_3");
  CHECK(cells[3].name == "4_6");
  CHECK(cells[0].max_rounds == 1);
  CHECK(cells[3].max_frames_per_round == 6);

  // One round means answering from the initial sample alone.
  CHECK(cells[0].report.mean_rounds == 1.0);
  CHECK(cells[0].report.mean_frames == 3.0);

  // With four rounds and a 3-frame cap the oracle collects all the evidence.
  CHECK(cells[2].report.accuracy == 100.0);
  CHECK(cells[2].report.n_errors == 0);

  // A 1-frame cap slows evidence gathering: more rounds, fewer frames/round.
  CHECK(cells[1].report.mean_rounds > cells[2].report.mean_rounds);
  CHECK(cells[1].report.mean_frames < cells[2].report.mean_frames);

  // The oracle requests three frames per round, so a cap of 6 changes nothing.
  CHECK(cells[3].report.accuracy == cells[2].report.accuracy);
  CHECK(cells[3].report.mean_frames == cells[2].report.mean_frames);
  CHECK(cells[3].report.mean_rounds == cells[2].report.mean_rounds);

  CHECK_THROWS_AS(sweep(manifest, oracle_backend_factory(), base, {}, 1),
                  std::invalid_argument);
}

TEST_CASE("the frontier csv lists one row per cell") {
  SweepCell a;
  a.name = "2_3";
  a.report.accuracy = 75.0;
  a.report.mean_frames = 6.5;
  a.report.mean_rounds = 2.0;
  a.report.mean_wall_ms = 1.25;
  SweepCell b;
  b.name = "4_3";
  b.report.accuracy = 100.0;

  const std::string csv = frontier_csv({a, b});
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "config,accuracy,mean_frames,mean_rounds,runtime_ms");
  std::getline(in, line);
  CHECK(line == "2_3,75,6.5,2,1.25");
  std::getline(in, line);
  CHECK(line.find("4_3,100,") == 0);
  CHECK_FALSE(std::getline(in, line));
}

TEST_CASE("the ablation matrix toggles carry and structure as advertised") {
  test::TempDir dir;
  DatasetManifest manifest = load_manifest(export_small_dataset(dir.path(), 6, 4, 900));
  EpisodeConfig base;

  std::vector<AblationRow> rows = ablate_components(manifest, oracle_backend_factory(), base, 2);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].name == "full");
  CHECK(rows[1].name == "no_state_carryover");
  CHECK(rows[2].name == "no_structured_fields");
  CHECK(rows[3].name == "neither");
  CHECK(rows[0].variant == AblationVariant::Full);
  CHECK(rows[3].variant == AblationVariant::Neither);

  // The full protocol solves everything; ablations can only hurt the oracle.
  CHECK(rows[0].report.accuracy == 100.0);
  CHECK(rows[1].report.accuracy <= rows[0].report.accuracy);
  CHECK(rows[2].report.accuracy <= rows[0].report.accuracy);
  CHECK(rows[3].report.accuracy <= rows[0].report.accuracy);
  // Dropping the cross-round memory is what breaks evidence accumulation.
  CHECK(rows[1].report.accuracy < 100.0);
  CHECK(rows[3].report.accuracy < 100.0);

  // Deterministic: a second pass reproduces the numbers exactly.
  std::vector<AblationRow> again =
      ablate_components(manifest, oracle_backend_factory(), base, 1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(again[i].report.accuracy == rows[i].report.accuracy);
    CHECK(again[i].report.mean_frames == rows[i].report.mean_frames);
    CHECK(again[i].report.mean_rounds == rows[i].report.mean_rounds);
  }
}
