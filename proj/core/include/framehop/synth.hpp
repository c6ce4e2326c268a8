// SPDX-License-Identifier: Apache-2.0
#pragma once

// Deterministic synthetic video-QA tasks plus a scripted oracle backend.
//
// A task hides k evidence frames at seeded indices of an L-frame clip. The
// oracle knows where the evidence is (it is the scripted expert used to
// exercise the controller), but it only *answers* from evidence it has seen
// according to its own summary ledger plus the frames in front of it. Its
// confidence in the correct option follows logit(correct) = b0 + b1 * f,
// where f is the fraction of evidence seen; distractor logits sit at 0. That
// makes margins monotone in f and makes memory (the summary ledger) the thing
// the ablation fixtures measure.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "framehop/backend.hpp"
#include "framehop/video.hpp"

namespace framehop {

struct SyntheticTask {
  std::string id;
  std::uint64_t seed = 0;
  int video_length = 0;       // L
  std::vector<int> evidence;  // ascending, distinct, the k hidden frames
  OptionSet options;
  int correct_index = 0;
  std::string subject;  // the word the evidence frames reveal
  double fps = 2.0;
  std::string category;

  int k() const { return static_cast<int>(evidence.size()); }
  bool is_evidence(int frame) const;
  std::string frame_label(int frame) const;
  std::string question() const;
};

// Evidence indices drawn uniformly without replacement.
SyntheticTask generate_task(std::uint64_t seed, int video_length, int k, int n_options);

// Evidence confined to a window of `cluster_width` consecutive indices
// (temporal locality), for fixtures where one targeted request can cover it.
SyntheticTask generate_task_clustered(std::uint64_t seed, int video_length, int k,
                                      int n_options, int cluster_width);

// In-memory source whose payloads encode each frame's label via the
// synthetic codec in video.hpp.
std::unique_ptr<MemoryVideoSource> make_video_source(const SyntheticTask& task);

struct OracleRules {
  double answer_threshold = 1.0;  // answer once f >= threshold
  double logit_intercept = -1.0;  // b0
  double logit_slope = 3.0;       // b1
  int request_size = 3;           // indices per <frames> request
  int blob_ledger_capacity = 4;   // unstructured summaries keep only this many
                                  // ledger entries (structured: unbounded)
};

struct OracleReply {
  std::string text;      // protocol-shaped response
  OptionScores scores;   // log-softmax of the logit curve at the oracle's f
};

// One oracle turn. The oracle recovers its ledger ("probed=", "found=") from
// the summary embedded in the prompt, merges in the frames shown this round,
// then either answers (f >= threshold, or the prompt forbids requests) or
// requests the next unseen evidence indices. `round` is only echoed into the
// summary text. Pure: no state outside the prompt.
OracleReply oracle_respond(const SyntheticTask& task, const OracleRules& rules,
                           const std::string& prompt,
                           const std::vector<int>& shown_frames, int round);

// Option scores at a decision state (same ledger recovery, no action taken).
OptionScores oracle_assess(const SyntheticTask& task, const OracleRules& rules,
                           const std::string& prompt,
                           const std::vector<int>& shown_frames);

// ModelBackend adapter around oracle_respond. Stateless across calls.
class OracleBackend : public ModelBackend {
 public:
  explicit OracleBackend(SyntheticTask task, OracleRules rules = {});

  std::string generate(const GenerateRequest& request) override;
  OptionScores score_options(const GenerateRequest& request,
                             const OptionSet& options) override;

  const SyntheticTask& task() const { return task_; }

 private:
  SyntheticTask task_;
  OracleRules rules_;
};

// ---- Dataset export ---------------------------------------------------------

// Writes manifest.jsonl plus one frame directory per task under
// out_dir/items/<id>/ (%06d.ppm, meta.txt, labels.txt, task.json). Returns
// the manifest path. task.json lets the oracle backend be reconstructed when
// evaluating an exported dataset.
std::string export_dataset(const std::vector<SyntheticTask>& tasks,
                           const std::string& out_dir);

// Reads a task.json written by export_dataset.
SyntheticTask load_task_json(const std::string& path);

// ---- Toy training environment ----------------------------------------------
// Coarse MDP over a task for the tabular policy: actions are "request a bin
// of frames" or "answer option y"; the observation is (round, evidence seen).

struct SyntheticEnv {
  SyntheticTask task;
  int bins = 8;
  int max_rounds = 4;        // T
  int frames_per_request = 3;
  int initial_frames = 3;
  double logit_intercept = -1.0;
  double logit_slope = 3.0;

  int bin_count() const { return bins; }
  // Frames belonging to bin b (contiguous ranges covering [0, L)).
  std::vector<int> bin_members(int b) const;
};

// Environment with evidence clustered inside a single bin, so the optimal
// policy is short: one targeted request, then answer.
SyntheticEnv make_toy_env(std::uint64_t seed);

}  // namespace framehop
