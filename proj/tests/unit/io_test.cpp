// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "framehop/grpo.hpp"
#include "framehop/io.hpp"
#include "framehop/reward.hpp"
#include "framehop/synth.hpp"
#include "framehop/util.hpp"
#include "test_support.hpp"

using namespace framehop;

namespace {

// A trajectory that exercises every field worth round-tripping: multi-round,
// cached scores, summaries, rejections, awkward doubles.
Trajectory rich_trajectory() {
  SyntheticTask task = generate_task(77, 48, 6, 4);
  OracleBackend backend(task);
  auto video = make_video_source(task);
  EpisodeInputs inputs;
  inputs.id = task.id;
  inputs.question = task.question();
  inputs.options = task.options;
  inputs.truth_index = task.correct_index;
  inputs.category = task.category;
  EpisodeConfig config;
  Trajectory traj = run_episode(*video, inputs, backend, config);
  REQUIRE(traj.rounds.size() >= 2);
  REQUIRE(traj.answered());
  traj.rounds[0].rejected.push_back({99, RejectReason::OutOfRange});
  traj.rounds[0].rejected.push_back({3, RejectReason::OverBudget});
  traj.wall_ms = 0.1 + 0.2;  // not representable exactly in decimal
  return traj;
}

Trajectory sparse_trajectory() {
  Trajectory traj;
  traj.id = "sparse";
  traj.options = OptionSet({"yes", "no"});
  traj.status = EpisodeStatus::ProtocolFailure;
  traj.tau = 1;
  traj.error = "unusable response after 1 attempts (MissingSummary: x)";
  RoundRecord rec;
  rec.round = 1;
  rec.action = "invalid";
  traj.rounds.push_back(rec);
  return traj;
}

}  // namespace

TEST_CASE("trajectory json round-trips bit for bit") {
  Trajectory traj = rich_trajectory();
  const std::string line = trajectory_to_json(traj);
  LoggedTrajectory back = trajectory_from_json(line);
  CHECK_FALSE(back.reward.has_value());
  CHECK(trajectory_to_json(back.trajectory) == line);

  const Trajectory& t2 = back.trajectory;
  CHECK(t2.id == traj.id);
  CHECK(t2.question == traj.question);
  CHECK(t2.category == traj.category);
  CHECK(t2.options.texts() == traj.options.texts());
  CHECK(t2.truth_index == traj.truth_index);
  CHECK(t2.answer_index == traj.answer_index);
  CHECK(t2.tau == traj.tau);
  CHECK(t2.status == traj.status);
  CHECK(t2.frames_used == traj.frames_used);
  CHECK(t2.prompt_tokens == traj.prompt_tokens);
  CHECK(t2.wall_ms == traj.wall_ms);  // exact double round-trip
  REQUIRE(t2.rounds.size() == traj.rounds.size());
  for (std::size_t i = 0; i < traj.rounds.size(); ++i) {
    const RoundRecord& a = traj.rounds[i];
    const RoundRecord& b = t2.rounds[i];
    CHECK(a.round == b.round);
    CHECK(a.forced_round == b.forced_round);
    CHECK(a.prompt == b.prompt);
    CHECK(a.prompt_hash == b.prompt_hash);
    CHECK(a.prompt_text_cost == b.prompt_text_cost);
    CHECK(a.shown_frames == b.shown_frames);
    CHECK(a.raw_response == b.raw_response);
    CHECK(a.retries == b.retries);
    CHECK(a.parse_ok == b.parse_ok);
    CHECK(a.action == b.action);
    CHECK(a.requested == b.requested);
    CHECK(a.admitted == b.admitted);
    REQUIRE(a.rejected.size() == b.rejected.size());
    for (std::size_t r = 0; r < a.rejected.size(); ++r) {
      CHECK(a.rejected[r].index == b.rejected[r].index);
      CHECK(a.rejected[r].reason == b.rejected[r].reason);
    }
    CHECK(a.visual_cost_after == b.visual_cost_after);
    CHECK(a.format_valid == b.format_valid);
    CHECK(a.summary.has_value() == b.summary.has_value());
    if (a.summary) {
      CHECK(a.summary->previously_seen == b.summary->previously_seen);
      CHECK(a.summary->observations == b.summary->observations);
      CHECK(a.summary->hypotheses == b.summary->hypotheses);
      CHECK(a.summary->uncertainties == b.summary->uncertainties);
      CHECK(a.summary->reasons == b.summary->reasons);
    }
    CHECK(a.decision_scores.has_value() == b.decision_scores.has_value());
    if (a.decision_scores) {
      CHECK(a.decision_scores->logprobs == b.decision_scores->logprobs);
      CHECK(a.decision_scores->source == b.decision_scores->source);
    }
  }
  REQUIRE(t2.summary_only_scores.has_value() == traj.summary_only_scores.has_value());
  if (traj.summary_only_scores) {
    CHECK(t2.summary_only_scores->logprobs == traj.summary_only_scores->logprobs);
  }
}

TEST_CASE("absent optional fields serialize as nulls and come back absent") {
  Trajectory traj = sparse_trajectory();
  const std::string line = trajectory_to_json(traj);
  const nlohmann::json j = nlohmann::json::parse(line);
  CHECK(j.at("truth_index").is_null());
  CHECK(j.at("answer").is_null());
  CHECK(j.at("summary_only_scores").is_null());
  CHECK(j.at("rounds").at(0).at("summary").is_null());
  CHECK(j.at("status").get<std::string>() == "protocol_failure");
  CHECK_FALSE(j.contains("reward"));

  LoggedTrajectory back = trajectory_from_json(line);
  CHECK_FALSE(back.trajectory.truth_index.has_value());
  CHECK_FALSE(back.trajectory.answer_index.has_value());
  CHECK_FALSE(back.trajectory.summary_only_scores.has_value());
  CHECK_FALSE(back.trajectory.rounds[0].summary.has_value());
  CHECK_FALSE(back.reward.has_value());
  CHECK(trajectory_to_json(back.trajectory) == line);
}

TEST_CASE("an embedded reward trace survives the round trip") {
  Trajectory traj = rich_trajectory();
  RewardWeights weights;
  RewardTrace trace = score_trajectory(traj, nullptr, weights);
  const std::string line = trajectory_to_json(traj, &trace);

  LoggedTrajectory back = trajectory_from_json(line);
  REQUIRE(back.reward.has_value());
  CHECK(back.reward->episode_return == trace.episode_return);
  REQUIRE(back.reward->steps.size() == trace.steps.size());
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const StepReward& a = trace.steps[i];
    const StepReward& b = back.reward->steps[i];
    CHECK(a.round == b.round);
    CHECK(a.forced == b.forced);
    CHECK(a.action == b.action);
    CHECK(a.m_before == b.m_before);
    CHECK(a.m_after == b.m_after);
    CHECK(a.r_conf == b.r_conf);
    CHECK(a.r_sum == b.r_sum);
    CHECK(a.r_stop == b.r_stop);
    CHECK(a.r_format == b.r_format);
    CHECK(a.r_total == b.r_total);
  }
  CHECK(trajectory_to_json(back.trajectory, &*back.reward) == line);

  const std::string trace_line = reward_trace_to_json(trace);
  RewardTrace trace2 = reward_trace_from_json(trace_line);
  CHECK(reward_trace_to_json(trace2) == trace_line);
}

TEST_CASE("malformed trajectory json is rejected with context") {
  CHECK_THROWS_WITH_AS(trajectory_from_json("not json"),
                       doctest::Contains("trajectory json"), std::runtime_error);
  CHECK_THROWS_AS(trajectory_from_json(R"({"id":"x"})"), std::runtime_error);
  CHECK_THROWS_WITH_AS(
      trajectory_from_json(
          R"({"id":"x","options":[],"rounds":[],"status":"daydreaming"})"),
      doctest::Contains("unknown episode status"), std::runtime_error);
  CHECK_THROWS_WITH_AS(
      reward_trace_from_json("[[["), doctest::Contains("reward trace json"),
      std::runtime_error);
}

TEST_CASE("jsonl files hold one trajectory per line with aligned rewards") {
  test::TempDir dir;
  const std::string path = dir.file("log.jsonl");

  std::vector<Trajectory> trajs = {rich_trajectory(), sparse_trajectory()};
  RewardWeights weights;
  // The sparse row gets an empty trace; traces ride along by position.
  std::vector<RewardTrace> rewards = {score_trajectory(trajs[0], nullptr, weights),
                                      RewardTrace{}};
  write_trajectories_jsonl(path, trajs, &rewards);

  std::vector<LoggedTrajectory> back = read_trajectories_jsonl(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].trajectory.id == trajs[0].id);
  CHECK(back[1].trajectory.id == "sparse");
  REQUIRE(back[0].reward.has_value());
  CHECK(back[0].reward->episode_return == rewards[0].episode_return);
  REQUIRE(back[1].reward.has_value());
  CHECK(back[1].reward->steps.size() == rewards[1].steps.size());

  // Blank lines are tolerated; garbage lines are rejected with the line number.
  write_text_file(path, read_text_file(path) + "\n\n");
  CHECK(read_trajectories_jsonl(path).size() == 2);
  write_text_file(path, read_text_file(path) + "{broken\n");
  CHECK_THROWS_WITH_AS(read_trajectories_jsonl(path), doctest::Contains("line 5"),
                       std::runtime_error);

  std::vector<RewardTrace> short_rewards = {rewards[0]};
  CHECK_THROWS_AS(write_trajectories_jsonl(path, trajs, &short_rewards),
                  std::invalid_argument);
  CHECK_THROWS_AS(read_trajectories_jsonl(dir.file("missing.jsonl")), std::runtime_error);
}

TEST_CASE("metrics reports serialize every aggregate") {
  MetricsReport report;
  report.n_items = 7;
  report.n_errors = 1;
  report.accuracy = 100.0 * 5 / 7;
  report.mean_frames = 4.25;
  report.mean_rounds = 2.5;
  report.mean_prompt_tokens = 812.125;
  report.mean_wall_ms = 3.5;
  report.median_wall_ms = 2.25;
  report.early_stop_rate = 3.0 / 7.0;
  report.per_category = {{"compare", 3, 100.0 * 2 / 3}, {"recall", 4, 75.0}};

  const nlohmann::json j = nlohmann::json::parse(metrics_report_to_json(report));
  CHECK(j.at("n_items").get<int>() == 7);
  CHECK(j.at("n_errors").get<int>() == 1);
  CHECK(j.at("accuracy").get<double>() == report.accuracy);
  CHECK(j.at("mean_frames").get<double>() == 4.25);
  CHECK(j.at("mean_rounds").get<double>() == 2.5);
  CHECK(j.at("mean_prompt_tokens").get<double>() == 812.125);
  CHECK(j.at("mean_wall_ms").get<double>() == 3.5);
  CHECK(j.at("median_wall_ms").get<double>() == 2.25);
  CHECK(j.at("early_stop_rate").get<double>() == report.early_stop_rate);
  REQUIRE(j.at("per_category").size() == 2);
  CHECK(j.at("per_category").at(0).at("category").get<std::string>() == "compare");
  CHECK(j.at("per_category").at(1).at("n").get<int>() == 4);
  CHECK(j.at("per_category").at(1).at("accuracy").get<double>() == 75.0);
}

TEST_CASE("the report table lines up its columns") {
  MetricsReport a;
  a.n_items = 12;
  a.accuracy = 33.333333;
  a.mean_frames = 4.5;
  a.mean_rounds = 2.0;
  a.mean_prompt_tokens = 900.05;
  a.mean_wall_ms = 1.234;
  a.early_stop_rate = 0.5;
  MetricsReport b;
  b.n_items = 3;
  b.accuracy = 100.0;

  const std::string table =
      render_report_table({{"full", a}, {"no_state_carryover", b}});
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < table.size()) {
    std::size_t end = table.find('\n', start);
    lines.push_back(table.substr(start, end - start));
    start = end + 1;
  }
  REQUIRE(lines.size() == 4);
  CHECK(lines[0].find("config") == 0);
  CHECK(lines[0].find("acc%") != std::string::npos);
  CHECK(lines[0].find("early%") != std::string::npos);
  CHECK(lines[1].find_first_not_of("- ") == std::string::npos);
  CHECK(lines[2].find("full") == 0);
  CHECK(lines[2].find("33.33") != std::string::npos);
  CHECK(lines[2].find("50.00") != std::string::npos);  // early% scaled to percent
  CHECK(lines[3].find("no_state_carryover") == 0);
  CHECK(lines[3].find("100.00") != std::string::npos);
  // Aligned columns make all rows equally wide.
  CHECK(lines[1].size() == lines[0].size());
  CHECK(lines[2].size() == lines[0].size());
  CHECK(lines[3].size() == lines[0].size());
}

TEST_CASE("learning curves render exact csv values") {
  std::vector<LearningPoint> curve = {{0, 1.0 / 3.0, 2.952, 5.25, 0.25},
                                      {50, -0.125, 4.0, 6.0, 1.0}};
  const std::string csv = learning_curve_csv(curve);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "iteration,mean_return,mean_tau,mean_frames,accuracy");
  std::getline(in, line);
  CHECK(line == "0," + nlohmann::json(1.0 / 3.0).dump() + ",2.952,5.25,0.25");
  std::getline(in, line);
  CHECK(line == "50,-0.125,4.0,6.0,1.0");
  CHECK_FALSE(std::getline(in, line));
}

TEST_CASE("toy policy checkpoints round-trip exactly") {
  SyntheticEnv env = make_toy_env(5);
  ToyPolicy policy = make_toy_policy(env);
  Rng rng(99);
  for (double& p : policy.params) {
    p = (rng.below(2) ? 1.0 : -1.0) * std::exp(10.0 * (static_cast<double>(rng.below(1000)) / 1000.0 - 0.5));
  }
  policy.params[0] = 0.0;
  policy.params[1] = -1.5e-300;  // subnormal-adjacent magnitudes survive too

  const std::string text = toy_policy_to_text(policy);
  CHECK(text.find("framehop-toy-policy v1\n") == 0);
  ToyPolicy back = toy_policy_from_text(text);
  CHECK(back.bins == policy.bins);
  CHECK(back.options == policy.options);
  CHECK(back.max_rounds == policy.max_rounds);
  REQUIRE(back.params.size() == policy.params.size());
  for (std::size_t i = 0; i < policy.params.size(); ++i) {
    CHECK(back.params[i] == policy.params[i]);
  }
  CHECK(toy_policy_to_text(back) == text);
}

TEST_CASE("corrupt checkpoints are rejected") {
  SyntheticEnv env = make_toy_env(5);
  const std::string good = toy_policy_to_text(make_toy_policy(env));

  CHECK_THROWS_WITH_AS(toy_policy_from_text("nonsense\n"),
                       doctest::Contains("unrecognized header"), std::runtime_error);
  CHECK_THROWS_WITH_AS(toy_policy_from_text("framehop-toy-policy v1\nbins x\n"),
                       doctest::Contains("bad integer"), std::runtime_error);

  // Truncate away the last parameter line.
  std::string truncated = good;
  truncated.pop_back();  // trailing newline
  truncated.erase(truncated.rfind('\n') + 1);
  CHECK_THROWS_WITH_AS(toy_policy_from_text(truncated), doctest::Contains("missing"),
                       std::runtime_error);

  // Claim a parameter count that disagrees with the layout.
  std::string miscounted = good;
  const std::size_t at = miscounted.find("params ");
  miscounted.replace(at, miscounted.find('\n', at) - at, "params 3");
  CHECK_THROWS_WITH_AS(toy_policy_from_text(miscounted),
                       doctest::Contains("inconsistent layout"), std::runtime_error);

  // Poison one parameter value.
  std::string poisoned = good;
  poisoned.replace(poisoned.rfind("0\n"), 2, "0x\n");
  CHECK_THROWS_WITH_AS(toy_policy_from_text(poisoned),
                       doctest::Contains("bad parameter value"), std::runtime_error);
}

TEST_CASE("run directories are unique and slug-sanitized") {
  test::TempDir dir;
  const std::string a = make_run_dir(dir.path(), "eval run/7");
  const std::string b = make_run_dir(dir.path(), "eval run/7");
  CHECK(a != b);
  CHECK(std::filesystem::is_directory(a));
  CHECK(std::filesystem::is_directory(b));
  CHECK(a.find("eval-run-7") != std::string::npos);
  CHECK(a.find('/') != std::string::npos);
  const std::string c = make_run_dir(dir.path(), "");
  CHECK(c.find("-run") != std::string::npos);
}

TEST_CASE("text files round-trip and create parents") {
  test::TempDir dir;
  const std::string path = dir.file("a/b/c.txt");
  const std::string content("line 1\nline 2\n\xff\x01 high bytes\x00 and a NUL", 38);
  write_text_file(path, content);
  CHECK(read_text_file(path) == content);
  CHECK_THROWS_WITH_AS(read_text_file(dir.file("nope.txt")),
                       doctest::Contains("cannot open"), std::runtime_error);
}
