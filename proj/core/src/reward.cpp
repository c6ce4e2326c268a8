// SPDX-License-Identifier: Apache-2.0
#include "framehop/reward.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace framehop {

namespace {

void check_weights(const RewardWeights& w) {
  if (w.lambda1 < 0 || w.lambda2 < 0 || w.lambda3 < 0) {
    throw std::invalid_argument("reward weights must be non-negative");
  }
  if (w.t_stop < 1) throw std::invalid_argument("t_stop must be at least 1");
  if (!(w.gamma >= 0.0 && w.gamma <= 1.0)) {
    throw std::invalid_argument("gamma must lie in [0, 1]");
  }
  if (!(w.margin_temperature > 0.0)) {
    throw std::invalid_argument("margin temperature must be positive");
  }
}

}  // namespace

double margin(const OptionScores& scores, int correct_index, double temperature) {
  if (scores.size() < 2) {
    throw std::invalid_argument("margin needs at least two options");
  }
  if (correct_index < 0 || correct_index >= scores.size()) {
    throw std::invalid_argument("correct option index out of range");
  }
  if (!(temperature > 0.0)) {
    throw std::invalid_argument("margin temperature must be positive");
  }
  double best_other = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < scores.size(); ++i) {
    if (i == correct_index) continue;
    best_other = std::max(best_other, scores.at(i));
  }
  return (scores.at(correct_index) - best_other) / temperature;
}

double confidence_gain(double m_before, double m_after) {
  return std::max(m_after - m_before, 0.0);
}

int summary_sufficiency(const OptionScores& scores, int correct_index) {
  std::optional<int> best = scores.strict_argmax();
  return (best && *best == correct_index) ? 1 : 0;
}

int summary_sufficiency(ModelBackend& backend, const std::string& question,
                        const OptionSet& options, const SummaryState& summary,
                        int correct_index, bool structured_summary) {
  GenerateRequest request;
  request.prompt = build_summary_only_prompt(question, options, summary, structured_summary);
  OptionScores scores = backend.score_options(request, options);
  return summary_sufficiency(scores, correct_index);
}

double stop_reward(bool answered_correctly, int tau, const RewardWeights& weights) {
  if (tau < 1) throw std::invalid_argument("tau must be at least 1");
  if (!answered_correctly || tau > weights.t_stop) return 0.0;
  return 1.0 + weights.beta * static_cast<double>(weights.t_stop - tau);
}

RewardTrace score_trajectory(const Trajectory& traj, ModelBackend* backend,
                             const RewardWeights& weights) {
  check_weights(weights);
  RewardTrace trace;
  if (traj.rounds.empty()) return trace;
  if (!traj.truth_index) {
    throw std::invalid_argument("trajectory lacks a ground-truth label");
  }
  const int truth = *traj.truth_index;
  const std::size_t n = traj.rounds.size();

  // Margins are only evaluated where a select step needs them, so an episode
  // logged without scores still scores its format/stop components as long as
  // no select step exists.
  std::vector<std::optional<double>> margins(n);
  auto margin_at = [&](std::size_t i) -> double {
    if (margins[i]) return *margins[i];
    const RoundRecord& rec = traj.rounds[i];
    OptionScores scores;
    if (rec.decision_scores) {
      scores = *rec.decision_scores;
    } else if (backend != nullptr) {
      GenerateRequest request;
      request.prompt = rec.prompt;
      scores = backend->score_options(request, traj.options);
    } else {
      throw BackendError(BackendErrorKind::ScoringUnavailable,
                         "no cached option scores for round " + std::to_string(rec.round) +
                             " and no backend to recompute them");
    }
    margins[i] = margin(scores, truth, weights.margin_temperature);
    return *margins[i];
  };

  double episode_return = 0.0;
  double discount = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const RoundRecord& rec = traj.rounds[i];
    StepReward step;
    step.round = rec.round;
    step.forced = rec.forced_round;
    step.action = rec.action;
    step.r_format = weights.alpha * (rec.format_valid ? 1.0 : 0.0);

    if (rec.action == "select") {
      step.m_before = margin_at(i);
      step.m_after = (i + 1 < n) ? margin_at(i + 1) : step.m_before;
      step.r_conf = confidence_gain(step.m_before, step.m_after);
    } else if (rec.decision_scores) {
      step.m_before = margin(*rec.decision_scores, truth, weights.margin_temperature);
      step.m_after = step.m_before;
    }

    if (i + 1 == n) {
      if (traj.correct()) step.r_stop = stop_reward(true, traj.tau, weights);
      if (traj.answered()) {
        const SummaryState* summary = traj.final_summary();
        if (traj.summary_only_scores) {
          step.r_sum = summary_sufficiency(*traj.summary_only_scores, truth);
        } else if (summary == nullptr) {
          step.r_sum = 0.0;  // nothing was ever committed to re-ask from
        } else if (backend != nullptr) {
          // A summary parsed from a free-text reply carries observations only;
          // render it the way it was produced.
          bool structured = !summary->previously_seen.empty() || !summary->hypotheses.empty() ||
                            !summary->uncertainties.empty() || !summary->reasons.empty();
          step.r_sum = summary_sufficiency(*backend, traj.question, traj.options, *summary,
                                           truth, structured);
        } else {
          throw BackendError(BackendErrorKind::ScoringUnavailable,
                             "no cached summary-only scores and no backend to "
                             "recompute them");
        }
      }
    }

    step.r_total = weights.lambda1 * step.r_conf + weights.lambda2 * step.r_sum +
                   weights.lambda3 * step.r_stop + step.r_format;
    episode_return += discount * step.r_total;
    discount *= weights.gamma;
    trace.steps.push_back(std::move(step));
  }
  trace.episode_return = episode_return;
  return trace;
}

}  // namespace framehop
