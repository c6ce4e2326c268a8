// SPDX-License-Identifier: Apache-2.0
#include "framehop/io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "framehop/util.hpp"

namespace framehop {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

[[noreturn]] void fail(const std::string& context, const std::string& what) {
  throw std::runtime_error(context + ": " + what);
}

std::string source_name(ScoreSource source) {
  switch (source) {
    case ScoreSource::Scripted: return "scripted";
    case ScoreSource::TokenLogprobs: return "token_logprobs";
    case ScoreSource::SampledFrequency: return "sampled_frequency";
  }
  return "scripted";
}

ScoreSource source_of(const std::string& name) {
  if (name == "scripted") return ScoreSource::Scripted;
  if (name == "token_logprobs") return ScoreSource::TokenLogprobs;
  if (name == "sampled_frequency") return ScoreSource::SampledFrequency;
  throw std::runtime_error("unknown score source '" + name + "'");
}

EpisodeStatus status_of(const std::string& name) {
  if (name == "answered") return EpisodeStatus::Answered;
  if (name == "forced_answer") return EpisodeStatus::ForcedAnswer;
  if (name == "unanswered") return EpisodeStatus::Unanswered;
  if (name == "protocol_failure") return EpisodeStatus::ProtocolFailure;
  if (name == "backend_failure") return EpisodeStatus::BackendFailure;
  throw std::runtime_error("unknown episode status '" + name + "'");
}

RejectReason reason_of(const std::string& name) {
  for (RejectReason r : {RejectReason::OutOfRange, RejectReason::AlreadyAdmitted,
                         RejectReason::DuplicateInRequest, RejectReason::OverRoundCap,
                         RejectReason::OverBudget}) {
    if (name == to_string(r)) return r;
  }
  throw std::runtime_error("unknown rejection reason '" + name + "'");
}

json scores_json(const OptionScores& scores) {
  return json{{"logprobs", scores.logprobs}, {"source", source_name(scores.source)}};
}

OptionScores scores_of(const json& j) {
  OptionScores scores;
  scores.logprobs = j.at("logprobs").get<std::vector<double>>();
  scores.source = source_of(j.at("source").get<std::string>());
  return scores;
}

json summary_json(const SummaryState& s) {
  return json{{"previously_seen", s.previously_seen},
              {"observations", s.observations},
              {"hypotheses", s.hypotheses},
              {"uncertainties", s.uncertainties},
              {"reasons", s.reasons}};
}

SummaryState summary_of(const json& j) {
  SummaryState s;
  s.previously_seen = j.value("previously_seen", std::string());
  s.observations = j.value("observations", std::string());
  s.hypotheses = j.value("hypotheses", std::string());
  s.uncertainties = j.value("uncertainties", std::string());
  s.reasons = j.value("reasons", std::string());
  return s;
}

json round_json(const RoundRecord& rec) {
  json rejected = json::array();
  for (const RejectedFrame& rf : rec.rejected) {
    rejected.push_back(json{{"index", rf.index}, {"reason", std::string(to_string(rf.reason))}});
  }
  json j{{"t", rec.round},
         {"forced", rec.forced_round},
         {"prompt", rec.prompt},
         {"prompt_hash", rec.prompt_hash},
         {"prompt_text_cost", rec.prompt_text_cost},
         {"frames", rec.shown_frames},
         {"raw_response", rec.raw_response},
         {"retries", rec.retries},
         {"parse_ok", rec.parse_ok},
         {"parse_error", rec.parse_error},
         {"action", rec.action},
         {"requested", rec.requested},
         {"admitted", rec.admitted},
         {"rejected", std::move(rejected)},
         {"visual_cost_after", rec.visual_cost_after},
         {"format_valid", rec.format_valid}};
  j["summary"] = rec.summary ? summary_json(*rec.summary) : json();
  j["decision_scores"] = rec.decision_scores ? scores_json(*rec.decision_scores) : json();
  return j;
}

RoundRecord round_of(const json& j) {
  RoundRecord rec;
  rec.round = j.at("t").get<int>();
  rec.forced_round = j.value("forced", false);
  rec.prompt = j.value("prompt", std::string());
  rec.prompt_hash = j.value("prompt_hash", std::string());
  rec.prompt_text_cost = j.value("prompt_text_cost", 0LL);
  rec.shown_frames = j.value("frames", std::vector<int>());
  rec.raw_response = j.value("raw_response", std::string());
  rec.retries = j.value("retries", 0);
  rec.parse_ok = j.value("parse_ok", false);
  rec.parse_error = j.value("parse_error", std::string());
  rec.action = j.value("action", std::string());
  rec.requested = j.value("requested", std::vector<int>());
  rec.admitted = j.value("admitted", std::vector<int>());
  if (j.contains("rejected")) {
    for (const json& rj : j.at("rejected")) {
      rec.rejected.push_back(
          {rj.at("index").get<int>(), reason_of(rj.at("reason").get<std::string>())});
    }
  }
  rec.visual_cost_after = j.value("visual_cost_after", 0LL);
  rec.format_valid = j.value("format_valid", false);
  if (j.contains("summary") && !j.at("summary").is_null()) {
    rec.summary = summary_of(j.at("summary"));
  }
  if (j.contains("decision_scores") && !j.at("decision_scores").is_null()) {
    rec.decision_scores = scores_of(j.at("decision_scores"));
  }
  return rec;
}

json step_json(const StepReward& s) {
  return json{{"round", s.round},       {"forced", s.forced},   {"action", s.action},
              {"m_before", s.m_before}, {"m_after", s.m_after}, {"r_conf", s.r_conf},
              {"r_sum", s.r_sum},       {"r_stop", s.r_stop},   {"r_format", s.r_format},
              {"r_total", s.r_total}};
}

StepReward step_of(const json& j) {
  StepReward s;
  s.round = j.value("round", 0);
  s.forced = j.value("forced", false);
  s.action = j.value("action", std::string());
  s.m_before = j.value("m_before", 0.0);
  s.m_after = j.value("m_after", 0.0);
  s.r_conf = j.value("r_conf", 0.0);
  s.r_sum = j.value("r_sum", 0.0);
  s.r_stop = j.value("r_stop", 0.0);
  s.r_format = j.value("r_format", 0.0);
  s.r_total = j.value("r_total", 0.0);
  return s;
}

json trace_json(const RewardTrace& trace) {
  json steps = json::array();
  for (const StepReward& s : trace.steps) steps.push_back(step_json(s));
  return json{{"episode_return", trace.episode_return}, {"steps", std::move(steps)}};
}

RewardTrace trace_of(const json& j) {
  RewardTrace trace;
  trace.episode_return = j.at("episode_return").get<double>();
  if (j.contains("steps")) {
    for (const json& sj : j.at("steps")) trace.steps.push_back(step_of(sj));
  }
  return trace;
}

json trajectory_json(const Trajectory& traj, const RewardTrace* reward) {
  json rounds = json::array();
  for (const RoundRecord& rec : traj.rounds) rounds.push_back(round_json(rec));
  json j{{"id", traj.id},
         {"question", traj.question},
         {"category", traj.category},
         {"options", traj.options.texts()},
         {"rounds", std::move(rounds)},
         {"tau", traj.tau},
         {"status", std::string(to_string(traj.status))},
         {"correct", traj.correct()},
         {"frames_used", traj.frames_used},
         {"prompt_tokens", traj.prompt_tokens},
         {"wall_ms", traj.wall_ms},
         {"error", traj.error}};
  j["truth_index"] = traj.truth_index ? json(*traj.truth_index) : json();
  j["answer"] = traj.answer_index ? json(*traj.answer_index) : json();
  j["summary_only_scores"] =
      traj.summary_only_scores ? scores_json(*traj.summary_only_scores) : json();
  if (reward) j["reward"] = trace_json(*reward);
  return j;
}

LoggedTrajectory trajectory_of(const json& j) {
  LoggedTrajectory logged;
  Trajectory& traj = logged.trajectory;
  traj.id = j.value("id", std::string());
  traj.question = j.value("question", std::string());
  traj.category = j.value("category", std::string());
  traj.options = OptionSet(j.value("options", std::vector<std::string>()));
  for (const json& rj : j.at("rounds")) traj.rounds.push_back(round_of(rj));
  traj.tau = j.value("tau", 0);
  traj.status = status_of(j.at("status").get<std::string>());
  if (j.contains("truth_index") && !j.at("truth_index").is_null()) {
    traj.truth_index = j.at("truth_index").get<int>();
  }
  if (j.contains("answer") && !j.at("answer").is_null()) {
    traj.answer_index = j.at("answer").get<int>();
  }
  if (j.contains("summary_only_scores") && !j.at("summary_only_scores").is_null()) {
    traj.summary_only_scores = scores_of(j.at("summary_only_scores"));
  }
  traj.frames_used = j.value("frames_used", 0LL);
  traj.prompt_tokens = j.value("prompt_tokens", 0LL);
  traj.wall_ms = j.value("wall_ms", 0.0);
  traj.error = j.value("error", std::string());
  if (j.contains("reward") && !j.at("reward").is_null()) {
    logged.reward = trace_of(j.at("reward"));
  }
  return logged;
}

json parse_or_fail(const std::string& text, const std::string& context) {
  try {
    return json::parse(text);
  } catch (const std::exception& e) {
    fail(context, e.what());
  }
}

// Shortest round-trip rendering for CSV and checkpoint values.
std::string exact(double x) { return json(x).dump(); }

std::string fixed(double x, int places) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", places, x);
  return buf;
}

std::string pad(const std::string& s, std::size_t width, bool left) {
  if (s.size() >= width) return s;
  std::string fill(width - s.size(), ' ');
  return left ? s + fill : fill + s;
}

}  // namespace

std::string trajectory_to_json(const Trajectory& trajectory, const RewardTrace* reward) {
  return trajectory_json(trajectory, reward).dump();
}

LoggedTrajectory trajectory_from_json(const std::string& text) {
  json j = parse_or_fail(text, "trajectory json");
  try {
    return trajectory_of(j);
  } catch (const std::exception& e) {
    fail("trajectory json", e.what());
  }
}

void write_trajectories_jsonl(const std::string& path,
                              const std::vector<Trajectory>& trajectories,
                              const std::vector<RewardTrace>* rewards) {
  if (rewards && rewards->size() != trajectories.size()) {
    throw std::invalid_argument("reward traces do not align with trajectories");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(path, "cannot open for writing");
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const RewardTrace* trace = rewards ? &(*rewards)[i] : nullptr;
    out << trajectory_to_json(trajectories[i], trace) << '\n';
  }
  out.flush();
  if (!out) fail(path, "write failed");
}

std::vector<LoggedTrajectory> read_trajectories_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open for reading");
  std::vector<LoggedTrajectory> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(trajectory_from_json(line));
    } catch (const std::exception& e) {
      fail(path + " line " + std::to_string(line_no), e.what());
    }
  }
  return out;
}

std::string reward_trace_to_json(const RewardTrace& trace) { return trace_json(trace).dump(); }

RewardTrace reward_trace_from_json(const std::string& text) {
  json j = parse_or_fail(text, "reward trace json");
  try {
    return trace_of(j);
  } catch (const std::exception& e) {
    fail("reward trace json", e.what());
  }
}

std::string metrics_report_to_json(const MetricsReport& report) {
  json per = json::array();
  for (const CategoryAccuracy& c : report.per_category) {
    per.push_back(json{{"category", c.category}, {"n", c.n}, {"accuracy", c.accuracy}});
  }
  json j{{"n_items", report.n_items},
         {"n_errors", report.n_errors},
         {"accuracy", report.accuracy},
         {"mean_frames", report.mean_frames},
         {"mean_rounds", report.mean_rounds},
         {"mean_prompt_tokens", report.mean_prompt_tokens},
         {"mean_wall_ms", report.mean_wall_ms},
         {"median_wall_ms", report.median_wall_ms},
         {"early_stop_rate", report.early_stop_rate},
         {"per_category", std::move(per)}};
  return j.dump();
}

std::string render_report_table(
    const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  const std::vector<std::string> headers = {"config", "items", "errors",   "acc%", "frames",
                                            "rounds", "tokens", "wall_ms", "early%"};
  std::vector<std::vector<std::string>> cells;
  cells.push_back(headers);
  for (const auto& [name, r] : rows) {
    cells.push_back({name, std::to_string(r.n_items), std::to_string(r.n_errors),
                     fixed(r.accuracy, 2), fixed(r.mean_frames, 2), fixed(r.mean_rounds, 2),
                     fixed(r.mean_prompt_tokens, 1), fixed(r.mean_wall_ms, 2),
                     fixed(100.0 * r.early_stop_rate, 2)});
  }
  std::vector<std::size_t> width(headers.size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      if (c) out << "  ";
      out << pad(cells[r][c], width[c], /*left=*/c == 0);
    }
    out << '\n';
    if (r == 0) {
      for (std::size_t c = 0; c < width.size(); ++c) {
        if (c) out << "  ";
        out << std::string(width[c], '-');
      }
      out << '\n';
    }
  }
  return out.str();
}

std::string learning_curve_csv(const std::vector<LearningPoint>& curve) {
  std::ostringstream out;
  out << "iteration,mean_return,mean_tau,mean_frames,accuracy\n";
  for (const LearningPoint& p : curve) {
    out << p.iteration << ',' << exact(p.mean_return) << ',' << exact(p.mean_tau) << ','
        << exact(p.mean_frames) << ',' << exact(p.accuracy) << '\n';
  }
  return out.str();
}

std::string toy_policy_to_text(const ToyPolicy& policy) {
  std::ostringstream out;
  out << "framehop-toy-policy v1\n";
  out << "bins " << policy.bins << '\n';
  out << "options " << policy.options << '\n';
  out << "max_rounds " << policy.max_rounds << '\n';
  out << "params " << policy.params.size() << '\n';
  for (double p : policy.params) out << exact(p) << '\n';
  return out.str();
}

ToyPolicy toy_policy_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  auto next_line = [&](const std::string& what) {
    if (!std::getline(in, line)) fail("toy policy checkpoint", "missing " + what);
    return std::string(trim(line));
  };
  if (next_line("header") != "framehop-toy-policy v1") {
    fail("toy policy checkpoint", "unrecognized header");
  }
  auto read_int = [&](const std::string& key) {
    std::string got = next_line(key + " line");
    const std::string prefix = key + " ";
    if (got.rfind(prefix, 0) != 0) fail("toy policy checkpoint", "expected '" + key + " <n>'");
    try {
      return std::stoi(got.substr(prefix.size()));
    } catch (const std::exception&) {
      fail("toy policy checkpoint", "bad integer on '" + key + "' line");
    }
  };
  ToyPolicy policy;
  policy.bins = read_int("bins");
  policy.options = read_int("options");
  policy.max_rounds = read_int("max_rounds");
  const int n = read_int("params");
  if (policy.bins < 1 || policy.options < 2 || policy.max_rounds < 1 ||
      n != policy.n_states() * policy.n_actions()) {
    fail("toy policy checkpoint", "inconsistent layout");
  }
  policy.params.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::string value = next_line("parameter " + std::to_string(i));
    std::size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(value, &used);
    } catch (const std::exception&) {
      fail("toy policy checkpoint", "bad parameter value '" + value + "'");
    }
    if (used != value.size()) fail("toy policy checkpoint", "bad parameter value '" + value + "'");
    policy.params.push_back(x);
  }
  return policy;
}

std::string make_run_dir(const std::string& base, const std::string& slug) {
  std::string clean;
  for (char ch : slug) {
    const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') ||
                    (ch >= '0' && ch <= '9') || ch == '-' || ch == '_' || ch == '.';
    clean.push_back(ok ? ch : '-');
  }
  if (clean.empty()) clean = "run";
  fs::path root(base.empty() ? std::string(".") : base);
  fs::create_directories(root);
  const std::string stem = utc_run_stamp() + "-" + clean;
  for (int i = 1; i < 10000; ++i) {
    fs::path candidate = root / (i == 1 ? stem : stem + "-" + std::to_string(i));
    std::error_code ec;
    if (fs::create_directory(candidate, ec)) return candidate.string();
    if (ec && ec != std::errc::file_exists) fail(candidate.string(), ec.message());
  }
  fail(base, "could not find a free run directory name");
}

void write_text_file(const std::string& path, const std::string& content) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) fail(path, "cannot open for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.flush();
  if (!out) fail(path, "write failed");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace framehop
