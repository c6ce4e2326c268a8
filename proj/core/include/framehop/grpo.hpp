// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "framehop/controller.hpp"
#include "framehop/reward.hpp"
#include "framehop/synth.hpp"
#include "framehop/util.hpp"

namespace framehop {

// A group of trajectories sampled from the same task instance, carrying what
// the clipped surrogate objective needs: per-trajectory returns and aligned
// per-token log-probabilities under the sampling-time and current policies.
struct TrajectoryGroup {
  std::vector<double> returns;
  std::vector<std::vector<double>> logp_old;
  std::vector<std::vector<double>> logp_new;

  int size() const { return static_cast<int>(returns.size()); }
};

struct GrpoConfig {
  double clip_epsilon = 0.2;  // ratio clip; a documented default, in (0, 1)
  int group_size = 16;        // trajectories per group
  double learning_rate = 0.3;  // step size at toy-policy scale (full-scale
                               // training uses rates near 1e-6)
  double kl_coeff = 0.001;     // weight of the KL penalty toward the old policy
  int iterations = 600;  // enough for the toy policy to leave the slow-stop
                         // plateau (answer choice only pays off at early taus)
};

// Standardized, group-relative advantages: (R_i - mean) / (pop_std + 1e-8).
// Constant returns give all zeros. Throws with fewer than two returns.
std::vector<double> group_advantages(const std::vector<double>& returns);

// Clipped token-level surrogate:
//   (1/G) sum_i (1/N_i) sum_n min(rho * A_i, clip(rho, 1-eps, 1+eps) * A_i)
// with rho = exp(logp_new - logp_old) and the trajectory's advantage shared
// across its tokens. Throws on misaligned or empty token lists, a group
// smaller than two, non-finite log-probs, or epsilon outside (0, 1).
double grpo_objective(const TrajectoryGroup& group, const std::vector<double>& advantages,
                      double epsilon);

// --- Toy policy ------------------------------------------------------------
// A tabular softmax policy over the synthetic environment's discrete actions:
// request one of `bins` frame bins, or commit to one of `options` answers.
// State is (round, evidence-found flag); the final round masks to answers.
struct ToyPolicy {
  int bins = 16;
  int options = 4;
  int max_rounds = 4;
  std::vector<double> params;  // row-major [state][action], zero-initialized

  int n_actions() const { return bins + options; }
  int n_states() const { return max_rounds * 2; }
  int state_index(int round, bool found) const { return (round - 1) * 2 + (found ? 1 : 0); }
  int round_of_state(int state) const { return state / 2 + 1; }
  bool action_allowed(int state, int action) const {
    return action >= bins || round_of_state(state) < max_rounds;
  }
  // Log-probabilities over all actions; masked actions get -infinity.
  std::vector<double> action_log_probs(int state) const;
  int sample_action(int state, Rng& rng) const;
};

ToyPolicy make_toy_policy(const SyntheticEnv& env);

struct ToyStep {
  int state = 0;
  int action = 0;
  double logp_old = 0.0;  // log-prob at sampling time
};

struct ToyRollout {
  std::vector<ToyStep> steps;
  Trajectory trajectory;
  double episode_return = 0.0;
};

// Plays one episode of the synthetic environment under the policy, building a
// trajectory with cached option scores so the reward pipeline scores it
// offline. Frame-bin requests admit each bin's frames once; the correct-option
// logit follows the environment's evidence-fraction curve.
ToyRollout rollout_toy(const SyntheticEnv& env, const ToyPolicy& policy,
                       const RewardWeights& weights, Rng& rng);

struct ToyGroup {
  ToyPolicy old_policy;  // snapshot the rollouts were sampled from
  std::vector<ToyRollout> rollouts;
  std::vector<double> advantages;
};

ToyGroup sample_toy_group(const SyntheticEnv& env, const ToyPolicy& policy, int group_size,
                          const RewardWeights& weights, Rng& rng);

// Views a toy group as a generic token group, filling logp_new from `current`.
TrajectoryGroup token_view(const ToyGroup& group, const ToyPolicy& current);

// Clipped surrogate minus the KL penalty toward the group's old policy,
// averaged with the same (1/G)(1/N_i) weights as the objective.
double toy_objective(const ToyPolicy& policy, const ToyGroup& group, const GrpoConfig& config);

// Exact gradient of toy_objective with respect to the policy parameters.
// Zero advantages zero the surrogate component; kl_coeff = 0 leaves the pure
// clipped-objective gradient.
std::vector<double> toy_policy_gradient(const ToyPolicy& policy, const ToyGroup& group,
                                        const GrpoConfig& config);

// Exact on-policy expectations for the toy environment, enumerated over all
// action sequences (the environment is deterministic and small): the same
// quantities the sampled groups estimate, with no Monte-Carlo noise.
struct PolicyEval {
  double mean_return = 0.0;
  double mean_tau = 0.0;
  double mean_frames = 0.0;
  double accuracy = 0.0;
};

PolicyEval evaluate_policy_exact(const SyntheticEnv& env, const ToyPolicy& policy,
                                 const RewardWeights& weights);

struct LearningPoint {
  int iteration = 0;
  double mean_return = 0.0;
  double mean_tau = 0.0;
  double mean_frames = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  std::vector<LearningPoint> curve;  // exact evaluation before each update,
                                     // plus one final post-update point
  ToyPolicy policy;
  bool diverged = false;
  std::string diagnostics;
};

// Iterates sample-group -> score -> standardize -> ascend. The curve rows are
// exact policy evaluations, so a zero learning rate yields a literally flat
// curve. Non-finite parameters or objective values abort with diagnostics.
TrainResult train_toy(const SyntheticEnv& env, const GrpoConfig& config,
                      const RewardWeights& weights, std::uint64_t seed);

}  // namespace framehop
