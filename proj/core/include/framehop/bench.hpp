// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "framehop/controller.hpp"
#include "framehop/synth.hpp"

namespace framehop {

// One dataset row. Paths are resolved against the manifest's directory at
// load time, so items are usable from any working directory.
struct ManifestItem {
  std::string id;
  std::string video_path;
  std::string question;
  std::vector<std::string> options;
  int answer_index = -1;
  std::string category;
  std::string task_json;  // optional: scripted-task sidecar for oracle runs
};

struct DatasetManifest {
  std::string path;
  std::vector<ManifestItem> items;
};

// Reads a JSONL manifest. Each record needs id, video_path, question, options
// (at least two), and the ground truth as either `answer_index` or an
// `answer` label matching one option; `category` and `task_json` are
// optional. Throws std::runtime_error naming the offending line on invalid
// records.
DatasetManifest load_manifest(const std::string& path);

struct CategoryAccuracy {
  std::string category;
  int n = 0;
  double accuracy = 0.0;  // percent
};

struct MetricsReport {
  int n_items = 0;
  int n_errors = 0;  // episodes that ended without a usable answer
  double accuracy = 0.0;  // percent, exact match on the answer index
  double mean_frames = 0.0;
  double mean_rounds = 0.0;
  double mean_prompt_tokens = 0.0;
  double mean_wall_ms = 0.0;
  double median_wall_ms = 0.0;
  double early_stop_rate = 0.0;  // fraction of episodes with tau < max_rounds
  std::vector<CategoryAccuracy> per_category;  // sorted by category name
};

// Pure aggregation over a trajectory log: feeding the same trajectories back
// in reproduces the report bit-for-bit. `config` supplies max_rounds for the
// early-stop definition.
MetricsReport aggregate_metrics(const std::vector<Trajectory>& trajectories,
                                const EpisodeConfig& config);

// Supplies the model for one dataset item (shared or per-item).
using BackendFactory =
    std::function<std::shared_ptr<ModelBackend>(const ManifestItem&)>;
// Opens the item's video; the default reads a frame directory at video_path.
using VideoFactory =
    std::function<std::shared_ptr<VideoSource>(const ManifestItem&)>;

// Factory that rebuilds the scripted oracle from each item's task sidecar.
BackendFactory oracle_backend_factory(OracleRules rules = {});
// Factory handing every item the same backend instance.
BackendFactory shared_backend_factory(std::shared_ptr<ModelBackend> backend);

struct EvalResult {
  MetricsReport report;
  std::vector<Trajectory> trajectories;  // manifest order
};

// Runs every item and aggregates. Item setup failures (unreadable video,
// missing sidecar) become error trajectories — counted as incorrect and in
// n_errors — rather than aborting the run. Throws std::invalid_argument on an
// empty manifest.
EvalResult evaluate(const DatasetManifest& manifest, const BackendFactory& backend_for,
                    const EpisodeConfig& config, int parallelism = 1,
                    const VideoFactory& video_for = {});

struct SweepCell {
  int max_rounds = 0;
  int max_frames_per_round = 0;
  std::string name;  // "{max_rounds}_{max_frames_per_round}"
  MetricsReport report;
};

// Evaluates the manifest once per (max_rounds, max_frames_per_round) cell.
// The base config's other settings apply unchanged, except the initial frame
// count is clamped to the cell's per-round cap.
std::vector<SweepCell> sweep(const DatasetManifest& manifest, const BackendFactory& backend_for,
                             const EpisodeConfig& base_config,
                             const std::vector<std::pair<int, int>>& grid, int parallelism = 1,
                             const VideoFactory& video_for = {});

// CSV rows (config, accuracy, mean_frames, mean_rounds, runtime_ms) for
// plotting the accuracy-frames frontier.
std::string frontier_csv(const std::vector<SweepCell>& cells);

enum class AblationVariant { Full, NoStateCarryover, NoStructuredFields, Neither };

const char* to_string(AblationVariant variant);

struct AblationRow {
  AblationVariant variant = AblationVariant::Full;
  std::string name;
  MetricsReport report;
};

// Evaluates the four summary-handling variants: carrying state across rounds
// and structured summary fields toggled independently via controller flags.
std::vector<AblationRow> ablate_components(const DatasetManifest& manifest,
                                           const BackendFactory& backend_for,
                                           const EpisodeConfig& base_config, int parallelism = 1,
                                           const VideoFactory& video_for = {});

}  // namespace framehop
