// SPDX-License-Identifier: Apache-2.0
#pragma once

// The multi-round episode loop. Each round the controller shows the model the
// question, the latest summary, and the newly admitted frames; the model
// either requests more frames or answers. The summary is the only memory that
// crosses rounds, every admission is filtered and budget-checked, and the
// whole exchange is recorded in a Trajectory that replays deterministically.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "framehop/backend.hpp"
#include "framehop/state.hpp"
#include "framehop/video.hpp"

namespace framehop {

// Prompt fragments other components key off (the scripted oracle detects the
// forced-answer round and the summary block through these).
inline constexpr std::string_view kSummaryHeaderLine = "Current summary state:";
inline constexpr std::string_view kForcedAnswerNotice =
    "You must now answer; frame requests are not permitted.";
inline constexpr std::string_view kNoNewFramesLine = "(no new frames this round)";

struct EpisodeConfig {
  int max_rounds = 4;            // T
  int max_frames_per_round = 3;  // request cap
  int initial_frame_count = 3;   // uniform sample size at round 1 (<= cap)
  long long token_budget = 8192; // K, inclusive
  int retry_on_invalid = 1;      // format-reminder reprompts before giving up
  bool force_answer_at_end = true;
  SamplingParams sampling{0.2, 0.9, 256, 0};
  CostModel cost;
  bool lenient_parsing = false;    // use the lenient tier for action extraction
  bool carry_state = true;         // off: the prompt shows an empty summary each round
  bool structured_summary = true;  // off: single free-text summary field
  bool collect_option_scores = true;
  std::optional<std::string> prompt_template;  // overrides the built-in template
};

struct PromptContext {
  int round = 1;  // 1-based
  bool forced_answer = false;
  std::string rejection_notice;  // set on no-progress rounds
};

// Uniformly spaced initial sample: floor(j * (L-1) / (n-1)) for j in [0, n),
// the middle frame for n == 1. Deterministic given (L, n); `seed` is accepted
// for samplers that may want it and is unused here. Throws std::invalid_argument
// unless 1 <= n <= video_length.
std::vector<int> sample_initial_frames(int video_length, int n, std::uint64_t seed = 0);

// Deterministic prompt assembly. Conditions only on state.latest_summary(),
// never on older summaries, so "latest summary only" equals "full history".
std::string build_prompt(const std::string& question, const OptionSet& options,
                         const EpisodeState& state, const std::vector<int>& shown_frames,
                         const VideoMeta& meta, const EpisodeConfig& config,
                         const PromptContext& ctx);

// Frames-free re-ask used by the summary-sufficiency reward: question,
// options, and the final summary, nothing else.
std::string build_summary_only_prompt(const std::string& question, const OptionSet& options,
                                      const SummaryState& summary, bool structured_summary);

enum class EpisodeStatus {
  Answered,         // the model committed to an option on its own
  ForcedAnswer,     // answered only after the forced final prompt
  Unanswered,       // hit round T still selecting and forcing is disabled
  ProtocolFailure,  // unparseable responses beyond the retry allowance
  BackendFailure,   // BackendError; partial rounds retained
};

std::string_view to_string(EpisodeStatus status);

struct RoundRecord {
  int round = 0;             // 1-based; the forced exchange repeats round T
  bool forced_round = false;
  std::string prompt;
  std::string prompt_hash;   // fnv1a64 of the prompt text
  long long prompt_text_cost = 0;
  std::vector<int> shown_frames;
  std::string raw_response;  // final attempt
  int retries = 0;
  bool parse_ok = false;
  std::string parse_error;   // "Kind: message" when parse failed
  std::string action;        // "select" | "answer" | "invalid"
  std::vector<int> requested;
  std::vector<int> admitted;
  std::vector<RejectedFrame> rejected;
  long long visual_cost_after = 0;  // C(S_t) after this round's admissions
  std::optional<SummaryState> summary;
  std::optional<OptionScores> decision_scores;  // cached for offline reward replay
  bool format_valid = false;  // strict-tier verdict, the format-reward referee
};

struct Trajectory {
  std::string id;
  std::string question;
  std::string category;
  OptionSet options;
  std::optional<int> truth_index;
  std::vector<RoundRecord> rounds;
  int tau = 0;  // stopping round, 1-based
  EpisodeStatus status = EpisodeStatus::Unanswered;
  std::optional<int> answer_index;
  std::optional<OptionScores> summary_only_scores;  // cached for the sufficiency reward
  long long frames_used = 0;
  long long prompt_tokens = 0;  // sum of text costs plus per-frame cost of shown frames
  double wall_ms = 0.0;         // excluded from determinism comparisons
  std::string error;            // backend failure message

  bool answered() const {
    return status == EpisodeStatus::Answered || status == EpisodeStatus::ForcedAnswer;
  }
  bool correct() const {
    return answered() && truth_index && answer_index && *answer_index == *truth_index;
  }
  // The summary carried by the final parsed response (z_tau), if any.
  const SummaryState* final_summary() const;
};

struct EpisodeInputs {
  std::string id;
  std::string question;
  OptionSet options;
  std::optional<int> truth_index;
  std::string category;
};

// Runs one episode. Backend errors are captured in the returned trajectory
// (status BackendFailure) rather than thrown, so batch runs keep going.
Trajectory run_episode(VideoSource& video, const EpisodeInputs& inputs,
                       ModelBackend& backend, const EpisodeConfig& config);

// One work item for run_batch: inputs plus the item's video and backend.
struct QaItem {
  EpisodeInputs inputs;
  std::shared_ptr<VideoSource> video;
  std::shared_ptr<ModelBackend> backend;
};

// Order-preserving parallel map over items. Results are independent of
// `parallelism` because episodes never share mutable state.
std::vector<Trajectory> run_batch(const std::vector<QaItem>& items,
                                  const EpisodeConfig& config, int parallelism);

}  // namespace framehop
