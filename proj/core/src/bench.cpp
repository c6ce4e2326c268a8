// SPDX-License-Identifier: Apache-2.0
#include "framehop/bench.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace framehop {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string resolve_against(const fs::path& base_dir, const std::string& raw) {
  if (raw.empty()) return raw;
  fs::path p(raw);
  if (p.is_absolute()) return p.lexically_normal().string();
  return (base_dir / p).lexically_normal().string();
}

ManifestItem parse_item(const json& row, const fs::path& base_dir, int line_no) {
  auto fail = [line_no](const std::string& why) {
    throw std::runtime_error("manifest line " + std::to_string(line_no) + ": " + why);
  };
  ManifestItem item;
  try {
    item.id = row.at("id").get<std::string>();
    item.video_path = resolve_against(base_dir, row.at("video_path").get<std::string>());
    item.question = row.at("question").get<std::string>();
    item.options = row.at("options").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(e.what());
  }
  if (item.options.size() < 2) fail("needs at least two options");

  if (row.contains("answer_index")) {
    item.answer_index = row.at("answer_index").get<int>();
  } else if (row.contains("answer")) {
    const std::string label = row.at("answer").get<std::string>();
    auto hit = std::find(item.options.begin(), item.options.end(), label);
    if (hit == item.options.end()) fail("answer label not among the options");
    item.answer_index = static_cast<int>(hit - item.options.begin());
  } else {
    fail("needs answer_index or answer");
  }
  if (item.answer_index < 0 || item.answer_index >= static_cast<int>(item.options.size())) {
    fail("answer index out of range");
  }
  if (row.contains("category")) item.category = row.at("category").get<std::string>();
  if (row.contains("task_json")) {
    item.task_json = resolve_against(base_dir, row.at("task_json").get<std::string>());
  }
  return item;
}

Trajectory setup_failure(const ManifestItem& item, const std::string& message) {
  Trajectory traj;
  traj.id = item.id;
  traj.question = item.question;
  traj.category = item.category;
  traj.options = OptionSet(item.options);
  traj.truth_index = item.answer_index;
  traj.status = EpisodeStatus::BackendFailure;
  traj.error = message;
  return traj;
}

EpisodeConfig variant_config(EpisodeConfig config, AblationVariant variant) {
  switch (variant) {
    case AblationVariant::Full:
      config.carry_state = true;
      config.structured_summary = true;
      break;
    case AblationVariant::NoStateCarryover:
      config.carry_state = false;
      config.structured_summary = true;
      break;
    case AblationVariant::NoStructuredFields:
      config.carry_state = true;
      config.structured_summary = false;
      break;
    case AblationVariant::Neither:
      config.carry_state = false;
      config.structured_summary = false;
      break;
  }
  return config;
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read manifest " + path);
  DatasetManifest manifest;
  manifest.path = path;
  const fs::path base_dir = fs::path(path).parent_path();

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
    if (blank) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    manifest.items.push_back(parse_item(row, base_dir, line_no));
  }
  return manifest;
}

MetricsReport aggregate_metrics(const std::vector<Trajectory>& trajectories,
                                const EpisodeConfig& config) {
  MetricsReport report;
  report.n_items = static_cast<int>(trajectories.size());
  if (trajectories.empty()) return report;

  int correct = 0;
  int early = 0;
  long long frames = 0;
  long long rounds = 0;
  long long tokens = 0;
  double wall = 0.0;
  std::vector<double> walls;
  walls.reserve(trajectories.size());
  std::map<std::string, std::pair<int, int>> categories;  // name -> (n, correct)

  for (const Trajectory& traj : trajectories) {
    if (traj.correct()) ++correct;
    if (!traj.answered()) ++report.n_errors;
    if (traj.tau < config.max_rounds) ++early;
    frames += traj.frames_used;
    rounds += traj.tau;
    tokens += traj.prompt_tokens;
    wall += traj.wall_ms;
    walls.push_back(traj.wall_ms);
    auto& bucket = categories[traj.category];
    bucket.first += 1;
    if (traj.correct()) bucket.second += 1;
  }

  const double n = static_cast<double>(trajectories.size());
  report.accuracy = 100.0 * static_cast<double>(correct) / n;
  report.mean_frames = static_cast<double>(frames) / n;
  report.mean_rounds = static_cast<double>(rounds) / n;
  report.mean_prompt_tokens = static_cast<double>(tokens) / n;
  report.mean_wall_ms = wall / n;
  report.early_stop_rate = static_cast<double>(early) / n;

  std::sort(walls.begin(), walls.end());
  const std::size_t mid = walls.size() / 2;
  report.median_wall_ms =
      walls.size() % 2 == 1 ? walls[mid] : 0.5 * (walls[mid - 1] + walls[mid]);

  for (const auto& [name, bucket] : categories) {
    CategoryAccuracy row;
    row.category = name;
    row.n = bucket.first;
    row.accuracy = 100.0 * static_cast<double>(bucket.second) / static_cast<double>(bucket.first);
    report.per_category.push_back(std::move(row));
  }
  return report;
}

BackendFactory oracle_backend_factory(OracleRules rules) {
  return [rules](const ManifestItem& item) -> std::shared_ptr<ModelBackend> {
    if (item.task_json.empty()) {
      throw std::runtime_error("item " + item.id + " has no task sidecar for the oracle");
    }
    return std::make_shared<OracleBackend>(load_task_json(item.task_json), rules);
  };
}

BackendFactory shared_backend_factory(std::shared_ptr<ModelBackend> backend) {
  return [backend](const ManifestItem&) { return backend; };
}

EvalResult evaluate(const DatasetManifest& manifest, const BackendFactory& backend_for,
                    const EpisodeConfig& config, int parallelism,
                    const VideoFactory& video_for) {
  if (manifest.items.empty()) {
    throw std::invalid_argument("empty dataset: " + manifest.path);
  }
  if (!backend_for) throw std::invalid_argument("backend factory is required");

  const std::size_t n = manifest.items.size();
  std::vector<QaItem> batch;
  batch.reserve(n);
  // Position of each successfully built batch entry in the manifest.
  std::vector<std::size_t> batch_pos;
  std::vector<std::optional<Trajectory>> failed(n);

  for (std::size_t i = 0; i < n; ++i) {
    const ManifestItem& item = manifest.items[i];
    try {
      QaItem qa;
      qa.inputs.id = item.id;
      qa.inputs.question = item.question;
      qa.inputs.options = OptionSet(item.options);
      qa.inputs.truth_index = item.answer_index;
      qa.inputs.category = item.category;
      qa.video = video_for ? video_for(item)
                           : std::shared_ptr<VideoSource>(FrameDirSource::open(item.video_path));
      qa.backend = backend_for(item);
      if (!qa.video || !qa.backend) throw std::runtime_error("factory returned null");
      batch.push_back(std::move(qa));
      batch_pos.push_back(i);
    } catch (const std::exception& e) {
      failed[i] = setup_failure(item, std::string("setup failed: ") + e.what());
    }
  }

  std::vector<Trajectory> ran = run_batch(batch, config, parallelism);

  EvalResult result;
  result.trajectories.resize(n);
  for (std::size_t b = 0; b < ran.size(); ++b) {
    result.trajectories[batch_pos[b]] = std::move(ran[b]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (failed[i]) result.trajectories[i] = std::move(*failed[i]);
  }
  result.report = aggregate_metrics(result.trajectories, config);
  return result;
}

std::vector<SweepCell> sweep(const DatasetManifest& manifest, const BackendFactory& backend_for,
                             const EpisodeConfig& base_config,
                             const std::vector<std::pair<int, int>>& grid, int parallelism,
                             const VideoFactory& video_for) {
  if (grid.empty()) throw std::invalid_argument("sweep grid is empty");
  std::vector<SweepCell> cells;
  cells.reserve(grid.size());
  for (const auto& [max_rounds, cap] : grid) {
    EpisodeConfig config = base_config;
    config.max_rounds = max_rounds;
    config.max_frames_per_round = cap;
    config.initial_frame_count = std::min(config.initial_frame_count, cap);
    SweepCell cell;
    cell.max_rounds = max_rounds;
    cell.max_frames_per_round = cap;
    cell.name = std::to_string(max_rounds) + "_" + std::to_string(cap);
    cell.report = evaluate(manifest, backend_for, config, parallelism, video_for).report;
    cells.push_back(std::move(cell));
  }
  return cells;
}

std::string frontier_csv(const std::vector<SweepCell>& cells) {
  std::ostringstream out;
  out << "config,accuracy,mean_frames,mean_rounds,runtime_ms\n";
  for (const SweepCell& cell : cells) {
    out << cell.name << ',' << cell.report.accuracy << ',' << cell.report.mean_frames << ','
        << cell.report.mean_rounds << ',' << cell.report.mean_wall_ms << '\n';
  }
  return out.str();
}

const char* to_string(AblationVariant variant) {
  switch (variant) {
    case AblationVariant::Full:
      return "full";
    case AblationVariant::NoStateCarryover:
      return "no_state_carryover";
    case AblationVariant::NoStructuredFields:
      return "no_structured_fields";
    case AblationVariant::Neither:
      return "neither";
  }
  return "unknown";
}

std::vector<AblationRow> ablate_components(const DatasetManifest& manifest,
                                           const BackendFactory& backend_for,
                                           const EpisodeConfig& base_config, int parallelism,
                                           const VideoFactory& video_for) {
  const AblationVariant variants[] = {AblationVariant::Full, AblationVariant::NoStateCarryover,
                                      AblationVariant::NoStructuredFields,
                                      AblationVariant::Neither};
  std::vector<AblationRow> rows;
  for (AblationVariant variant : variants) {
    AblationRow row;
    row.variant = variant;
    row.name = to_string(variant);
    row.report = evaluate(manifest, backend_for, variant_config(base_config, variant),
                          parallelism, video_for)
                     .report;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace framehop
