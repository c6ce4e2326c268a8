// SPDX-License-Identifier: Apache-2.0
#pragma once

// Serialization and filesystem helpers: trajectory JSONL logs that replay
// bit-for-bit, reward traces stored alongside them, CSV/JSON/text reports,
// toy-policy checkpoints, and timestamped run directories. All errors are
// reported as std::runtime_error with the offending path or line attached.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "framehop/bench.hpp"
#include "framehop/controller.hpp"
#include "framehop/grpo.hpp"
#include "framehop/reward.hpp"

namespace framehop {

// One trajectory as a single-line JSON object. Doubles use shortest
// round-trip formatting, so parsing the line back reproduces every numeric
// field exactly. A reward trace, when given, is embedded under "reward".
std::string trajectory_to_json(const Trajectory& trajectory,
                               const RewardTrace* reward = nullptr);

struct LoggedTrajectory {
  Trajectory trajectory;
  std::optional<RewardTrace> reward;  // present iff the line carried one
};

LoggedTrajectory trajectory_from_json(const std::string& text);

// JSONL, one trajectory per line. `rewards`, when given, must align with
// `trajectories` by position.
void write_trajectories_jsonl(const std::string& path,
                              const std::vector<Trajectory>& trajectories,
                              const std::vector<RewardTrace>* rewards = nullptr);
std::vector<LoggedTrajectory> read_trajectories_jsonl(const std::string& path);

std::string reward_trace_to_json(const RewardTrace& trace);
RewardTrace reward_trace_from_json(const std::string& text);

std::string metrics_report_to_json(const MetricsReport& report);

// Fixed-width text table comparing named reports (sweep cells, ablation
// variants, or a single run). Display-only: values are rounded for reading.
std::string render_report_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);

// "iteration,mean_return,mean_tau,mean_frames,accuracy" plus one row per
// point, values in shortest round-trip form.
std::string learning_curve_csv(const std::vector<LearningPoint>& curve);

// Versioned flat checkpoint of the toy policy: layout line, then one
// parameter per line in shortest round-trip form.
std::string toy_policy_to_text(const ToyPolicy& policy);
ToyPolicy toy_policy_from_text(const std::string& text);

// Creates `<base>/<UTC stamp>-<slug>` (parents included) and returns the
// path. A numeric suffix keeps same-second runs distinct.
std::string make_run_dir(const std::string& base, const std::string& slug);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace framehop
