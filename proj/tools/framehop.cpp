// SPDX-License-Identifier: Apache-2.0
//
// framehop: multi-round sparse video QA from the command line.
//
//   run          one episode against a dataset item, logged and scored
//   evaluate     a whole manifest -> trajectories + metrics report
//   sweep        accuracy/frames frontier over (rounds, frames-per-round)
//   ablate       summary-handling variants (state carryover, structure)
//   reward-score rescore logged trajectories offline from their caches
//   train-toy    policy-gradient training on the built-in toy environment
//   synth-gen    deterministic synthetic dataset generator
//
// Configuration precedence: flags (--set key=value) over FRAMEHOP_* env vars
// over --config file over built-in defaults. Every run writes a timestamped
// directory under out_dir with the effective config beside the outputs. API
// keys are read only from the environment variable named by api_key_env.
//
// Exit codes: 0 done (a wrong answer is still 0), 2 usage or configuration
// error, 3 backend failure, 4 protocol failure (run only), 5 unreadable or
// inconsistent data, 1 anything else.

#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"

#include "framehop/bench.hpp"
#include "framehop/config.hpp"
#include "framehop/controller.hpp"
#include "framehop/grpo.hpp"
#include "framehop/http_backend.hpp"
#include "framehop/io.hpp"
#include "framehop/reward.hpp"
#include "framehop/synth.hpp"

using namespace framehop;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kBackend = 3;
constexpr int kProtocol = 4;
constexpr int kData = 5;

struct CommonOpts {
  std::string config_file;
  std::vector<std::string> sets;  // raw key=value pairs, parse order
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_file, "flat key=value configuration file");
  cmd->add_option("--set", opts.sets, "override one config key (key=value, repeatable)")
      ->take_all();
  auto sugar = [cmd, &opts](const char* flag, const char* key, const char* desc) {
    cmd->add_option_function<std::string>(
        flag,
        [&opts, key](const std::string& v) { opts.sets.push_back(std::string(key) + "=" + v); },
        desc);
  };
  sugar("--backend", "backend", "model backend: oracle or http");
  sugar("--seed", "seed", "run seed");
  sugar("--parallelism", "parallelism", "worker threads for batch runs");
  sugar("--out-dir", "out_dir", "parent directory for run outputs");
}

RunConfig resolve_config(const CommonOpts& opts) {
  std::vector<KeyValues> layers;
  if (!opts.config_file.empty()) layers.push_back(load_kv_file(opts.config_file));
  layers.push_back(env_key_values());
  KeyValues flags;
  for (const std::string& raw : opts.sets) {
    for (const auto& [k, v] : parse_kv_text(raw, "--set")) flags[k] = v;
  }
  layers.push_back(flags);
  return merge_config(layers);
}

std::shared_ptr<ModelBackend> make_http_backend(const RunConfig& run) {
  HttpBackendConfig http = run.http;
  if (!run.api_key_env.empty()) {
    if (const char* key = std::getenv(run.api_key_env.c_str())) http.api_key = key;
  }
  return std::make_shared<HttpBackend>(http);
}

BackendFactory make_factory(const RunConfig& run) {
  if (run.backend == "http") return shared_backend_factory(make_http_backend(run));
  return oracle_backend_factory(run.oracle);
}

// Creates the timestamped run directory and drops the effective config in it.
std::string new_run_dir(const RunConfig& run, const std::string& slug) {
  std::string dir = make_run_dir(run.out_dir, slug);
  write_text_file(dir + "/config.txt", effective_config_text(run));
  return dir;
}

std::optional<RewardTrace> try_score(const Trajectory& traj, const RewardWeights& weights) {
  if (!traj.truth_index || traj.rounds.empty()) return std::nullopt;
  try {
    return score_trajectory(traj, nullptr, weights);
  } catch (const BackendError&) {
    return std::nullopt;  // caches missing; rescoring needs a live backend
  } catch (const std::invalid_argument&) {
    return std::nullopt;
  }
}

// Trajectory log with reward traces embedded where the caches allow it.
int write_scored_log(const std::string& path, const std::vector<Trajectory>& trajectories,
                     const RewardWeights& weights) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  int scored = 0;
  for (const Trajectory& traj : trajectories) {
    std::optional<RewardTrace> trace = try_score(traj, weights);
    if (trace) ++scored;
    out << trajectory_to_json(traj, trace ? &*trace : nullptr) << '\n';
  }
  out.flush();
  if (!out) throw std::runtime_error(path + ": write failed");
  return scored;
}

std::string describe_answer(const Trajectory& traj) {
  if (!traj.answer_index) return "(none)";
  const int i = *traj.answer_index;
  std::string text = i >= 0 && i < traj.options.size() ? traj.options.text(i) : "?";
  return traj.options.label(i) + " (" + text + ")";
}

// ---- run --------------------------------------------------------------------

struct RunOpts {
  CommonOpts common;
  std::string manifest_path;
  std::string item_id;
  int index = 0;
};

int cmd_run(const RunOpts& opts) {
  const RunConfig run = resolve_config(opts.common);
  DatasetManifest manifest = load_manifest(opts.manifest_path);
  std::size_t pick = static_cast<std::size_t>(opts.index);
  if (!opts.item_id.empty()) {
    pick = manifest.items.size();
    for (std::size_t i = 0; i < manifest.items.size(); ++i) {
      if (manifest.items[i].id == opts.item_id) pick = i;
    }
    if (pick == manifest.items.size()) {
      throw std::runtime_error(opts.manifest_path + ": no item with id '" + opts.item_id + "'");
    }
  } else if (pick >= manifest.items.size()) {
    throw std::runtime_error(opts.manifest_path + ": item index " + std::to_string(opts.index) +
                             " out of range (" + std::to_string(manifest.items.size()) +
                             " items)");
  }
  DatasetManifest one{manifest.path, {manifest.items[pick]}};
  EvalResult result = evaluate(one, make_factory(run), run.episode, 1);
  const Trajectory& traj = result.trajectories.front();

  const std::string dir = new_run_dir(run, "run-" + traj.id);
  write_scored_log(dir + "/trajectory.jsonl", result.trajectories, run.reward);

  std::cout << "item:    " << traj.id << '\n'
            << "status:  " << to_string(traj.status) << '\n'
            << "answer:  " << describe_answer(traj) << '\n';
  if (traj.truth_index) {
    std::cout << "truth:   " << traj.options.label(*traj.truth_index) << "  ->  "
              << (traj.correct() ? "correct" : "wrong") << '\n';
  }
  std::cout << "rounds:  " << traj.tau << '\n'
            << "frames:  " << traj.frames_used << '\n'
            << "tokens:  " << traj.prompt_tokens << '\n';
  if (!traj.error.empty()) std::cout << "error:   " << traj.error << '\n';
  std::cout << "run dir: " << dir << '\n';

  if (traj.status == EpisodeStatus::BackendFailure) return kBackend;
  if (!traj.answered()) return kProtocol;
  return kOk;
}

// ---- evaluate ---------------------------------------------------------------

struct EvaluateOpts {
  CommonOpts common;
  std::string manifest_path;
};

int cmd_evaluate(const EvaluateOpts& opts) {
  const RunConfig run = resolve_config(opts.common);
  DatasetManifest manifest = load_manifest(opts.manifest_path);
  EvalResult result = evaluate(manifest, make_factory(run), run.episode, run.parallelism);

  const std::string dir = new_run_dir(run, "evaluate");
  const int scored =
      write_scored_log(dir + "/trajectories.jsonl", result.trajectories, run.reward);
  write_text_file(dir + "/report.json", metrics_report_to_json(result.report));
  const std::string table = render_report_table({{"all", result.report}});
  write_text_file(dir + "/report.txt", table);

  std::cout << table;
  for (const CategoryAccuracy& c : result.report.per_category) {
    std::cout << "  " << c.category << ": " << c.accuracy << "% of " << c.n << '\n';
  }
  std::cout << "reward traces embedded for " << scored << "/" << result.report.n_items
            << " episodes\n";
  std::cout << "run dir: " << dir << '\n';
  return kOk;
}

// ---- sweep ------------------------------------------------------------------

struct SweepOpts {
  CommonOpts common;
  std::string manifest_path;
  std::string grid = "1:6,2:4,3:6,4:4";
};

std::vector<std::pair<int, int>> parse_grid(const std::string& text) {
  std::vector<std::pair<int, int>> grid;
  for (const std::string& cell : split(text, ',')) {
    const auto parts = split(cell, ':');
    if (parts.size() != 2) {
      throw std::invalid_argument("bad grid cell '" + cell + "' (want rounds:frames)");
    }
    try {
      grid.emplace_back(std::stoi(parts[0]), std::stoi(parts[1]));
    } catch (const std::exception&) {
      throw std::invalid_argument("bad grid cell '" + cell + "' (want rounds:frames)");
    }
  }
  return grid;
}

int cmd_sweep(const SweepOpts& opts) {
  const RunConfig run = resolve_config(opts.common);
  DatasetManifest manifest = load_manifest(opts.manifest_path);
  std::vector<SweepCell> cells =
      sweep(manifest, make_factory(run), run.episode, parse_grid(opts.grid), run.parallelism);

  std::vector<std::pair<std::string, MetricsReport>> rows;
  for (const SweepCell& cell : cells) rows.emplace_back(cell.name, cell.report);
  const std::string table = render_report_table(rows);

  const std::string dir = new_run_dir(run, "sweep");
  write_text_file(dir + "/frontier.csv", frontier_csv(cells));
  write_text_file(dir + "/report.txt", table);

  std::cout << table << "run dir: " << dir << '\n';
  return kOk;
}

// ---- ablate -----------------------------------------------------------------

struct AblateOpts {
  CommonOpts common;
  std::string manifest_path;
};

int cmd_ablate(const AblateOpts& opts) {
  const RunConfig run = resolve_config(opts.common);
  DatasetManifest manifest = load_manifest(opts.manifest_path);
  std::vector<AblationRow> variants =
      ablate_components(manifest, make_factory(run), run.episode, run.parallelism);

  std::vector<std::pair<std::string, MetricsReport>> rows;
  std::ostringstream csv;
  csv << "variant,accuracy,mean_frames,mean_rounds,early_stop_rate\n";
  for (const AblationRow& row : variants) {
    rows.emplace_back(row.name, row.report);
    csv << row.name << ',' << row.report.accuracy << ',' << row.report.mean_frames << ','
        << row.report.mean_rounds << ',' << row.report.early_stop_rate << '\n';
  }
  const std::string table = render_report_table(rows);

  const std::string dir = new_run_dir(run, "ablate");
  write_text_file(dir + "/ablation.csv", csv.str());
  write_text_file(dir + "/report.txt", table);

  std::cout << table << "run dir: " << dir << '\n';
  return kOk;
}

// ---- reward-score -----------------------------------------------------------

struct RewardScoreOpts {
  CommonOpts common;
  std::string in_path;
  bool check = false;
};

bool traces_equal(const RewardTrace& a, const RewardTrace& b) {
  if (a.episode_return != b.episode_return || a.steps.size() != b.steps.size()) return false;
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    const StepReward& x = a.steps[i];
    const StepReward& y = b.steps[i];
    if (x.round != y.round || x.forced != y.forced || x.action != y.action ||
        x.m_before != y.m_before || x.m_after != y.m_after || x.r_conf != y.r_conf ||
        x.r_sum != y.r_sum || x.r_stop != y.r_stop || x.r_format != y.r_format ||
        x.r_total != y.r_total) {
      return false;
    }
  }
  return true;
}

int cmd_reward_score(const RewardScoreOpts& opts) {
  const RunConfig run = resolve_config(opts.common);
  std::vector<LoggedTrajectory> logged = read_trajectories_jsonl(opts.in_path);
  if (logged.empty()) throw std::runtime_error(opts.in_path + ": no trajectories");

  const std::string dir = new_run_dir(run, "reward-score");
  std::ofstream out(dir + "/scored.jsonl", std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(dir + "/scored.jsonl: cannot open for writing");

  int scored = 0;
  int mismatches = 0;
  double total = 0.0;
  for (const LoggedTrajectory& entry : logged) {
    std::optional<RewardTrace> trace = try_score(entry.trajectory, run.reward);
    if (trace) {
      ++scored;
      total += trace->episode_return;
      if (entry.reward && !traces_equal(*entry.reward, *trace)) {
        ++mismatches;
        std::cerr << "mismatch: " << entry.trajectory.id << " stored return "
                  << entry.reward->episode_return << " recomputed " << trace->episode_return
                  << '\n';
      }
    }
    out << trajectory_to_json(entry.trajectory, trace ? &*trace : nullptr) << '\n';
  }
  out.flush();
  if (!out) throw std::runtime_error(dir + "/scored.jsonl: write failed");

  std::cout << "episodes:    " << logged.size() << '\n'
            << "scored:      " << scored << '\n'
            << "mean return: " << (scored ? total / scored : 0.0) << '\n';
  if (opts.check) std::cout << "mismatches:  " << mismatches << '\n';
  std::cout << "run dir: " << dir << '\n';
  return opts.check && mismatches > 0 ? kData : kOk;
}

// ---- train-toy --------------------------------------------------------------

struct TrainToyOpts {
  CommonOpts common;
};

int cmd_train_toy(const TrainToyOpts& opts) {
  const RunConfig run = resolve_config(opts.common);
  const SyntheticEnv env = make_toy_env(run.seed);
  TrainResult result = train_toy(env, run.grpo, run.reward, run.seed);

  const std::string dir = new_run_dir(run, "train-toy");
  write_text_file(dir + "/curve.csv", learning_curve_csv(result.curve));
  write_text_file(dir + "/policy.txt", toy_policy_to_text(result.policy));

  if (!result.curve.empty()) {
    const LearningPoint& first = result.curve.front();
    const LearningPoint& last = result.curve.back();
    std::cout << "iterations:  " << run.grpo.iterations << '\n'
              << "return:      " << first.mean_return << " -> " << last.mean_return << '\n'
              << "mean rounds: " << first.mean_tau << " -> " << last.mean_tau << '\n'
              << "mean frames: " << first.mean_frames << " -> " << last.mean_frames << '\n'
              << "accuracy:    " << first.accuracy << " -> " << last.accuracy << '\n';
  }
  std::cout << "run dir: " << dir << '\n';
  if (result.diverged) {
    std::cerr << "training diverged: " << result.diagnostics << '\n';
    return 1;
  }
  return kOk;
}

// ---- synth-gen --------------------------------------------------------------

struct SynthGenOpts {
  CommonOpts common;
  std::string out_dir;
  int count = 20;
  int length = 64;
  int evidence = 6;
  int options = 4;
  int cluster_width = 0;  // 0: uniform evidence
};

int cmd_synth_gen(const SynthGenOpts& opts) {
  const RunConfig run = resolve_config(opts.common);
  if (opts.count < 1) throw std::invalid_argument("--count must be at least 1");
  std::vector<SyntheticTask> tasks;
  tasks.reserve(static_cast<std::size_t>(opts.count));
  for (int i = 0; i < opts.count; ++i) {
    const std::uint64_t seed = run.seed + static_cast<std::uint64_t>(i);
    tasks.push_back(opts.cluster_width > 0
                        ? generate_task_clustered(seed, opts.length, opts.evidence, opts.options,
                                                  opts.cluster_width)
                        : generate_task(seed, opts.length, opts.evidence, opts.options));
  }
  const std::string manifest = export_dataset(tasks, opts.out_dir);
  std::cout << "items:    " << tasks.size() << '\n' << "manifest: " << manifest << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-round sparse video question answering"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "framehop 0.1.0");

  RunOpts run_opts;
  CLI::App* run_cmd = app.add_subcommand("run", "run one episode from a manifest");
  add_common(run_cmd, run_opts.common);
  run_cmd->add_option("--manifest", run_opts.manifest_path, "dataset manifest (jsonl)")
      ->required();
  run_cmd->add_option("--item", run_opts.item_id, "item id (default: first item)");
  run_cmd->add_option("--index", run_opts.index, "item position when no --item is given");

  EvaluateOpts eval_opts;
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "run a whole manifest and report metrics");
  add_common(eval_cmd, eval_opts.common);
  eval_cmd->add_option("--manifest", eval_opts.manifest_path, "dataset manifest (jsonl)")
      ->required();

  SweepOpts sweep_opts;
  CLI::App* sweep_cmd =
      app.add_subcommand("sweep", "evaluate over a (rounds, frames-per-round) grid");
  add_common(sweep_cmd, sweep_opts.common);
  sweep_cmd->add_option("--manifest", sweep_opts.manifest_path, "dataset manifest (jsonl)")
      ->required();
  sweep_cmd->add_option("--grid", sweep_opts.grid,
                        "comma-separated rounds:frames cells (default 1:6,2:4,3:6,4:4)");

  AblateOpts ablate_opts;
  CLI::App* ablate_cmd =
      app.add_subcommand("ablate", "compare summary-handling variants on a manifest");
  add_common(ablate_cmd, ablate_opts.common);
  ablate_cmd->add_option("--manifest", ablate_opts.manifest_path, "dataset manifest (jsonl)")
      ->required();

  RewardScoreOpts score_opts;
  CLI::App* score_cmd =
      app.add_subcommand("reward-score", "rescore logged trajectories from their caches");
  add_common(score_cmd, score_opts.common);
  score_cmd->add_option("--in", score_opts.in_path, "trajectory log (jsonl)")->required();
  score_cmd->add_flag("--check", score_opts.check,
                      "fail if recomputed traces differ from stored ones");

  TrainToyOpts train_opts;
  CLI::App* train_cmd =
      app.add_subcommand("train-toy", "policy-gradient training on the toy environment");
  add_common(train_cmd, train_opts.common);

  SynthGenOpts synth_opts;
  CLI::App* synth_cmd = app.add_subcommand("synth-gen", "generate a synthetic dataset");
  add_common(synth_cmd, synth_opts.common);
  synth_cmd->add_option("--out", synth_opts.out_dir, "output dataset directory")->required();
  synth_cmd->add_option("--count", synth_opts.count, "number of items (default 20)");
  synth_cmd->add_option("--length", synth_opts.length, "frames per clip (default 64)");
  synth_cmd->add_option("--evidence", synth_opts.evidence, "evidence frames per clip (default 6)");
  synth_cmd->add_option("--options", synth_opts.options, "answer options per item (default 4)");
  synth_cmd->add_option("--cluster-width", synth_opts.cluster_width,
                        "confine evidence to a window this wide (0: uniform)");

  int code = kOk;
  run_cmd->callback([&] { code = cmd_run(run_opts); });
  eval_cmd->callback([&] { code = cmd_evaluate(eval_opts); });
  sweep_cmd->callback([&] { code = cmd_sweep(sweep_opts); });
  ablate_cmd->callback([&] { code = cmd_ablate(ablate_opts); });
  score_cmd->callback([&] { code = cmd_reward_score(score_opts); });
  train_cmd->callback([&] { code = cmd_train_toy(train_opts); });
  synth_cmd->callback([&] { code = cmd_synth_gen(synth_opts); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int cli_code = app.exit(e);
    return cli_code == 0 ? kOk : kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const BackendError& e) {
    std::cerr << "backend error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return kBackend;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return code;
}
