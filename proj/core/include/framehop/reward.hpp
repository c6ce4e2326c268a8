// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "framehop/backend.hpp"
#include "framehop/controller.hpp"
#include "framehop/protocol.hpp"

namespace framehop {

// Weights and knobs for the shaped episode reward. The per-step reward is
//   lambda1 * r_conf + lambda2 * r_sum + lambda3 * r_stop + r_format
// and the episode return discounts steps by gamma^(t-1).
struct RewardWeights {
  double lambda1 = 1.0;  // confidence-gain weight
  double lambda2 = 1.0;  // summary-sufficiency weight
  double lambda3 = 0.5;  // correct-and-early stop weight
  double alpha = 0.1;    // per-step bonus for a well-formed reply
  double beta = 1.0;     // slope of the early-stop bonus below t_stop
  int t_stop = 2;        // round budget the stop bonus rewards staying within
  double gamma = 1.0;    // per-step discount, in [0, 1]
  double margin_temperature = 1.0;  // divides log-probs before the margin
};

// Per-step breakdown. Component fields hold the raw (unweighted) quantities;
// r_format already includes alpha; r_total is the weighted per-step reward.
struct StepReward {
  int round = 0;
  bool forced = false;
  std::string action;     // "select", "answer", or "invalid"
  double m_before = 0.0;  // margin at this step's decision state
  double m_after = 0.0;   // margin at the next decision state (select steps)
  double r_conf = 0.0;    // positive part of the margin gain, select steps only
  double r_sum = 0.0;     // 1 iff the final summary alone picks the right option
  double r_stop = 0.0;    // early-stop bonus, final step only
  double r_format = 0.0;  // alpha * 1[reply matched the protocol]
  double r_total = 0.0;
};

struct RewardTrace {
  std::vector<StepReward> steps;
  double episode_return = 0.0;
};

// Temperature-calibrated log-odds margin of the correct option:
//   (logp[correct] - max_{y != correct} logp[y]) / temperature.
// Throws std::invalid_argument with fewer than two options, an out-of-range
// correct index, or a non-positive temperature.
double margin(const OptionScores& scores, int correct_index, double temperature = 1.0);

// Positive part of the margin change across a frame selection.
double confidence_gain(double m_before, double m_after);

// 1 iff the scores' strict argmax equals the correct option; ties give 0.
int summary_sufficiency(const OptionScores& scores, int correct_index);

// Re-asks the question from the summary alone (no frames) and applies the
// strict-argmax test above. Backend scoring failures propagate as BackendError.
int summary_sufficiency(ModelBackend& backend, const std::string& question,
                        const OptionSet& options, const SummaryState& summary,
                        int correct_index, bool structured_summary = true);

// 1 + beta * max(t_stop - tau, 0) when the episode answered correctly within
// t_stop rounds; otherwise 0. Throws std::invalid_argument when tau < 1.
double stop_reward(bool answered_correctly, int tau, const RewardWeights& weights);

// Scores a finished trajectory. Option scores cached on the trajectory are
// used as-is; missing ones are recomputed from the stored prompts through
// `backend` when one is given, else BackendError{ScoringUnavailable} is
// thrown. The trajectory must carry a ground-truth label. A final summary
// that was never produced scores r_sum = 0. Steps are discounted by record
// position: the i-th record (1-based) contributes gamma^(i-1) * r_total.
RewardTrace score_trajectory(const Trajectory& traj, ModelBackend* backend,
                             const RewardWeights& weights);

}  // namespace framehop
