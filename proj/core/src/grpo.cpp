// SPDX-License-Identifier: Apache-2.0
#include "framehop/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_map>

namespace framehop {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + (salt + 1) * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void check_epsilon(double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) {
    throw std::invalid_argument("clip epsilon must lie in (0, 1)");
  }
}

// Log-softmax over {correct: intercept + slope * fraction, others: 0}.
OptionScores evidence_scores(int correct_index, int n_options, double intercept, double slope,
                             double fraction) {
  std::vector<double> logits(static_cast<std::size_t>(n_options), 0.0);
  logits[static_cast<std::size_t>(correct_index)] = intercept + slope * fraction;
  double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - top);
  double lse = top + std::log(sum);
  OptionScores scores;
  scores.source = ScoreSource::Scripted;
  scores.logprobs.reserve(logits.size());
  for (double z : logits) scores.logprobs.push_back(z - lse);
  return scores;
}

// Static facts about one environment instance, shared by the sampler and the
// exact evaluator so both walk the identical MDP.
struct EnvFacts {
  std::vector<int> initial;              // initial frame sample, ascending
  std::vector<std::vector<int>> fresh;   // per bin: members not in the initial set
  std::vector<int> fresh_evidence;       // per bin: evidence count among `fresh`
  int evidence_seen_initially = 0;
  int k = 0;

  double fraction(std::uint32_t mask) const {
    int seen = evidence_seen_initially;
    for (int b = 0; b < static_cast<int>(fresh.size()); ++b) {
      if (mask & (1u << b)) seen += fresh_evidence[static_cast<std::size_t>(b)];
    }
    return k > 0 ? static_cast<double>(seen) / static_cast<double>(k) : 0.0;
  }
};

EnvFacts make_facts(const SyntheticEnv& env) {
  if (env.bins < 1 || env.bins > 31) {
    throw std::invalid_argument("toy environment needs between 1 and 31 bins");
  }
  if (env.max_rounds < 1 || env.max_rounds > 500) {
    throw std::invalid_argument("max_rounds must lie in [1, 500]");
  }
  EnvFacts facts;
  const int length = env.task.video_length;
  facts.initial = sample_initial_frames(length, std::min(env.initial_frames, length));
  facts.k = env.task.k();
  for (int frame : facts.initial) {
    if (env.task.is_evidence(frame)) ++facts.evidence_seen_initially;
  }
  facts.fresh.resize(static_cast<std::size_t>(env.bins));
  facts.fresh_evidence.assign(static_cast<std::size_t>(env.bins), 0);
  for (int b = 0; b < env.bins; ++b) {
    for (int frame : env.bin_members(b)) {
      if (std::binary_search(facts.initial.begin(), facts.initial.end(), frame)) continue;
      facts.fresh[static_cast<std::size_t>(b)].push_back(frame);
      if (env.task.is_evidence(frame)) ++facts.fresh_evidence[static_cast<std::size_t>(b)];
    }
  }
  return facts;
}

double margin_at(const SyntheticEnv& env, const RewardWeights& weights, double fraction) {
  return (env.logit_intercept + env.logit_slope * fraction) / weights.margin_temperature;
}

}  // namespace

std::vector<double> group_advantages(const std::vector<double>& returns) {
  const std::size_t g = returns.size();
  if (g < 2) throw std::invalid_argument("advantage standardization needs at least two returns");
  double mean = 0.0;
  for (double r : returns) {
    if (!std::isfinite(r)) throw std::invalid_argument("returns must be finite");
    mean += r;
  }
  mean /= static_cast<double>(g);
  double var = 0.0;
  for (double r : returns) var += (r - mean) * (r - mean);
  var /= static_cast<double>(g);
  const double denom = std::sqrt(var) + 1e-8;
  std::vector<double> advantages(g);
  for (std::size_t i = 0; i < g; ++i) advantages[i] = (returns[i] - mean) / denom;
  return advantages;
}

double grpo_objective(const TrajectoryGroup& group, const std::vector<double>& advantages,
                      double epsilon) {
  check_epsilon(epsilon);
  const std::size_t g = group.returns.size();
  if (g < 2) throw std::invalid_argument("a trajectory group needs at least two members");
  if (group.logp_old.size() != g || group.logp_new.size() != g || advantages.size() != g) {
    throw std::invalid_argument("group fields and advantages must have one entry per trajectory");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < g; ++i) {
    const std::vector<double>& old_lp = group.logp_old[i];
    const std::vector<double>& new_lp = group.logp_new[i];
    if (old_lp.size() != new_lp.size()) {
      throw std::invalid_argument("per-token log-probs are misaligned");
    }
    if (old_lp.empty()) throw std::invalid_argument("trajectories must have at least one token");
    double inner = 0.0;
    for (std::size_t n = 0; n < old_lp.size(); ++n) {
      if (!std::isfinite(old_lp[n]) || !std::isfinite(new_lp[n])) {
        throw std::invalid_argument("log-probs must be finite");
      }
      const double rho = std::exp(new_lp[n] - old_lp[n]);
      const double clipped = std::clamp(rho, 1.0 - epsilon, 1.0 + epsilon);
      inner += std::min(rho * advantages[i], clipped * advantages[i]);
    }
    total += inner / static_cast<double>(old_lp.size());
  }
  return total / static_cast<double>(g);
}

std::vector<double> ToyPolicy::action_log_probs(int state) const {
  const int acts = n_actions();
  if (state < 0 || state >= n_states()) throw std::invalid_argument("state out of range");
  std::vector<double> lp(static_cast<std::size_t>(acts), kNegInf);
  double top = kNegInf;
  for (int a = 0; a < acts; ++a) {
    if (!action_allowed(state, a)) continue;
    top = std::max(top, params[static_cast<std::size_t>(state * acts + a)]);
  }
  double sum = 0.0;
  for (int a = 0; a < acts; ++a) {
    if (!action_allowed(state, a)) continue;
    sum += std::exp(params[static_cast<std::size_t>(state * acts + a)] - top);
  }
  const double lse = top + std::log(sum);
  for (int a = 0; a < acts; ++a) {
    if (!action_allowed(state, a)) continue;
    lp[static_cast<std::size_t>(a)] = params[static_cast<std::size_t>(state * acts + a)] - lse;
  }
  return lp;
}

int ToyPolicy::sample_action(int state, Rng& rng) const {
  const std::vector<double> lp = action_log_probs(state);
  const double u = rng.real01();
  double cum = 0.0;
  int last_allowed = -1;
  for (int a = 0; a < n_actions(); ++a) {
    if (lp[static_cast<std::size_t>(a)] == kNegInf) continue;
    last_allowed = a;
    cum += std::exp(lp[static_cast<std::size_t>(a)]);
    if (u < cum) return a;
  }
  return last_allowed;  // rounding left a sliver at the top of the CDF
}

ToyPolicy make_toy_policy(const SyntheticEnv& env) {
  ToyPolicy policy;
  policy.bins = env.bins;
  policy.options = env.task.options.size();
  policy.max_rounds = env.max_rounds;
  policy.params.assign(static_cast<std::size_t>(policy.n_states() * policy.n_actions()), 0.0);
  return policy;
}

ToyRollout rollout_toy(const SyntheticEnv& env, const ToyPolicy& policy,
                       const RewardWeights& weights, Rng& rng) {
  const EnvFacts facts = make_facts(env);
  const SyntheticTask& task = env.task;
  const int n_options = task.options.size();

  ToyRollout out;
  Trajectory& traj = out.trajectory;
  traj.id = task.id;
  traj.question = task.question();
  traj.category = task.category;
  traj.options = task.options;
  traj.truth_index = task.correct_index;

  std::uint32_t mask = 0;
  std::vector<int> shown = facts.initial;  // frames arriving for the current round
  long long frames_used = static_cast<long long>(facts.initial.size());

  for (int t = 1; t <= env.max_rounds; ++t) {
    const double f = facts.fraction(mask);
    const int state = policy.state_index(t, f > 0.0);

    RoundRecord rec;
    rec.round = t;
    rec.shown_frames = shown;
    rec.format_valid = true;
    rec.parse_ok = true;
    rec.decision_scores =
        evidence_scores(task.correct_index, n_options, env.logit_intercept, env.logit_slope, f);

    const int action = policy.sample_action(state, rng);
    ToyStep step;
    step.state = state;
    step.action = action;
    step.logp_old = policy.action_log_probs(state)[static_cast<std::size_t>(action)];
    out.steps.push_back(step);

    if (action >= policy.bins) {
      const int choice = action - policy.bins;
      rec.action = "answer";
      traj.rounds.push_back(std::move(rec));
      traj.status = EpisodeStatus::Answered;
      traj.tau = t;
      traj.answer_index = choice;
      traj.summary_only_scores =
          evidence_scores(task.correct_index, n_options, env.logit_intercept, env.logit_slope, f);
      break;
    }

    rec.action = "select";
    rec.requested = env.bin_members(action);
    std::vector<int> admitted;
    if ((mask & (1u << action)) == 0) {
      admitted = facts.fresh[static_cast<std::size_t>(action)];
      mask |= 1u << action;
    }
    rec.admitted = admitted;
    frames_used += static_cast<long long>(admitted.size());
    traj.rounds.push_back(std::move(rec));
    shown = std::move(admitted);
  }

  traj.frames_used = frames_used;
  out.episode_return = score_trajectory(traj, nullptr, weights).episode_return;
  return out;
}

ToyGroup sample_toy_group(const SyntheticEnv& env, const ToyPolicy& policy, int group_size,
                          const RewardWeights& weights, Rng& rng) {
  if (group_size < 2) throw std::invalid_argument("a trajectory group needs at least two members");
  ToyGroup group;
  group.old_policy = policy;
  group.rollouts.reserve(static_cast<std::size_t>(group_size));
  std::vector<double> returns;
  returns.reserve(static_cast<std::size_t>(group_size));
  for (int i = 0; i < group_size; ++i) {
    group.rollouts.push_back(rollout_toy(env, policy, weights, rng));
    returns.push_back(group.rollouts.back().episode_return);
  }
  group.advantages = group_advantages(returns);
  return group;
}

TrajectoryGroup token_view(const ToyGroup& group, const ToyPolicy& current) {
  TrajectoryGroup view;
  for (const ToyRollout& rollout : group.rollouts) {
    std::vector<double> old_lp;
    std::vector<double> new_lp;
    old_lp.reserve(rollout.steps.size());
    new_lp.reserve(rollout.steps.size());
    for (const ToyStep& step : rollout.steps) {
      old_lp.push_back(step.logp_old);
      new_lp.push_back(
          current.action_log_probs(step.state)[static_cast<std::size_t>(step.action)]);
    }
    view.returns.push_back(rollout.episode_return);
    view.logp_old.push_back(std::move(old_lp));
    view.logp_new.push_back(std::move(new_lp));
  }
  return view;
}

namespace {

// KL(current || old) averaged over group tokens with the objective's weights.
double group_kl(const ToyPolicy& policy, const ToyGroup& group) {
  double total = 0.0;
  for (const ToyRollout& rollout : group.rollouts) {
    if (rollout.steps.empty()) continue;
    double inner = 0.0;
    for (const ToyStep& step : rollout.steps) {
      const std::vector<double> lp_new = policy.action_log_probs(step.state);
      const std::vector<double> lp_old = group.old_policy.action_log_probs(step.state);
      double kl = 0.0;
      for (std::size_t a = 0; a < lp_new.size(); ++a) {
        if (lp_new[a] == kNegInf) continue;
        kl += std::exp(lp_new[a]) * (lp_new[a] - lp_old[a]);
      }
      inner += kl;
    }
    total += inner / static_cast<double>(rollout.steps.size());
  }
  return total / static_cast<double>(group.rollouts.size());
}

}  // namespace

double toy_objective(const ToyPolicy& policy, const ToyGroup& group, const GrpoConfig& config) {
  double objective =
      grpo_objective(token_view(group, policy), group.advantages, config.clip_epsilon);
  if (config.kl_coeff != 0.0) objective -= config.kl_coeff * group_kl(policy, group);
  return objective;
}

std::vector<double> toy_policy_gradient(const ToyPolicy& policy, const ToyGroup& group,
                                        const GrpoConfig& config) {
  check_epsilon(config.clip_epsilon);
  const std::size_t g = group.rollouts.size();
  if (g < 2) throw std::invalid_argument("a trajectory group needs at least two members");
  if (group.advantages.size() != g) {
    throw std::invalid_argument("group advantages must have one entry per trajectory");
  }
  const int acts = policy.n_actions();
  std::vector<double> grad(policy.params.size(), 0.0);

  for (std::size_t i = 0; i < g; ++i) {
    const ToyRollout& rollout = group.rollouts[i];
    if (rollout.steps.empty()) throw std::invalid_argument("rollout has no steps");
    const double weight = 1.0 / (static_cast<double>(g) * static_cast<double>(rollout.steps.size()));
    const double advantage = group.advantages[i];

    for (const ToyStep& step : rollout.steps) {
      const std::vector<double> lp_new = policy.action_log_probs(step.state);
      const double rho = std::exp(lp_new[static_cast<std::size_t>(step.action)] - step.logp_old);
      const bool active = advantage >= 0.0 ? rho <= 1.0 + config.clip_epsilon
                                           : rho >= 1.0 - config.clip_epsilon;
      const std::size_t base = static_cast<std::size_t>(step.state * acts);

      if (active && advantage != 0.0) {
        const double coeff = weight * rho * advantage;
        for (int a = 0; a < acts; ++a) {
          if (lp_new[static_cast<std::size_t>(a)] == kNegInf) continue;
          const double p = std::exp(lp_new[static_cast<std::size_t>(a)]);
          const double indicator = (a == step.action) ? 1.0 : 0.0;
          grad[base + static_cast<std::size_t>(a)] += coeff * (indicator - p);
        }
      }

      if (config.kl_coeff != 0.0) {
        const std::vector<double> lp_old = group.old_policy.action_log_probs(step.state);
        double kl = 0.0;
        for (int a = 0; a < acts; ++a) {
          if (lp_new[static_cast<std::size_t>(a)] == kNegInf) continue;
          kl += std::exp(lp_new[static_cast<std::size_t>(a)]) *
                (lp_new[static_cast<std::size_t>(a)] - lp_old[static_cast<std::size_t>(a)]);
        }
        for (int a = 0; a < acts; ++a) {
          if (lp_new[static_cast<std::size_t>(a)] == kNegInf) continue;
          const double p = std::exp(lp_new[static_cast<std::size_t>(a)]);
          const double diff = lp_new[static_cast<std::size_t>(a)] -
                              lp_old[static_cast<std::size_t>(a)];
          grad[base + static_cast<std::size_t>(a)] -= config.kl_coeff * weight * p * (diff - kl);
        }
      }
    }
  }
  return grad;
}

PolicyEval evaluate_policy_exact(const SyntheticEnv& env, const ToyPolicy& policy,
                                 const RewardWeights& weights) {
  const EnvFacts facts = make_facts(env);
  const SyntheticTask& task = env.task;
  const double alpha = weights.alpha;  // every toy step is well-formed

  struct Comp {
    double ret = 0.0;
    double tau = 0.0;
    double frames = 0.0;
    double acc = 0.0;
  };
  std::unordered_map<std::uint64_t, Comp> memo;

  // Expected future components from round t with `mask` bins already admitted.
  auto visit = [&](auto&& self, int t, std::uint32_t mask) -> Comp {
    const std::uint64_t key =
        (static_cast<std::uint64_t>(mask) << 9) | static_cast<std::uint64_t>(t);
    auto hit = memo.find(key);
    if (hit != memo.end()) return hit->second;

    const double f = facts.fraction(mask);
    const double discount = std::pow(weights.gamma, t - 1);
    const int state = policy.state_index(t, f > 0.0);
    const std::vector<double> lp = policy.action_log_probs(state);

    Comp total;
    for (int a = 0; a < policy.n_actions(); ++a) {
      if (lp[static_cast<std::size_t>(a)] == kNegInf) continue;
      const double p = std::exp(lp[static_cast<std::size_t>(a)]);
      if (a >= policy.bins) {
        const int choice = a - policy.bins;
        const bool correct = choice == task.correct_index;
        const double suff =
            (env.logit_intercept + env.logit_slope * f) > 0.0 ? 1.0 : 0.0;
        const double stop =
            (correct && t <= weights.t_stop)
                ? 1.0 + weights.beta * static_cast<double>(weights.t_stop - t)
                : 0.0;
        const double reward =
            weights.lambda2 * suff + weights.lambda3 * stop + alpha;
        total.ret += p * discount * reward;
        total.tau += p * static_cast<double>(t);
        total.acc += p * (correct ? 1.0 : 0.0);
      } else {
        const std::uint32_t next_mask = mask | (1u << a);
        const double f_next = facts.fraction(next_mask);
        const double gain = std::max(margin_at(env, weights, f_next) -
                                         margin_at(env, weights, f), 0.0);
        const double reward = weights.lambda1 * gain + alpha;
        const double fresh =
            (mask & (1u << a)) ? 0.0
                               : static_cast<double>(facts.fresh[static_cast<std::size_t>(a)].size());
        const Comp next = self(self, t + 1, next_mask);
        total.ret += p * (discount * reward + next.ret);
        total.tau += p * next.tau;
        total.frames += p * (fresh + next.frames);
        total.acc += p * next.acc;
      }
    }
    memo.emplace(key, total);
    return total;
  };

  const Comp root = visit(visit, 1, 0);
  PolicyEval eval;
  eval.mean_return = root.ret;
  eval.mean_tau = root.tau;
  eval.mean_frames = static_cast<double>(facts.initial.size()) + root.frames;
  eval.accuracy = root.acc;
  return eval;
}

TrainResult train_toy(const SyntheticEnv& env, const GrpoConfig& config,
                      const RewardWeights& weights, std::uint64_t seed) {
  check_epsilon(config.clip_epsilon);
  if (config.group_size < 2) {
    throw std::invalid_argument("a trajectory group needs at least two members");
  }
  if (config.iterations < 0) throw std::invalid_argument("iterations must be non-negative");
  if (!std::isfinite(config.learning_rate) || !std::isfinite(config.kl_coeff)) {
    throw std::invalid_argument("learning rate and kl coefficient must be finite");
  }

  TrainResult result;
  result.policy = make_toy_policy(env);

  auto record = [&](int iteration) {
    const PolicyEval eval = evaluate_policy_exact(env, result.policy, weights);
    LearningPoint point;
    point.iteration = iteration;
    point.mean_return = eval.mean_return;
    point.mean_tau = eval.mean_tau;
    point.mean_frames = eval.mean_frames;
    point.accuracy = eval.accuracy;
    result.curve.push_back(point);
  };

  for (int iter = 0; iter < config.iterations; ++iter) {
    record(iter);
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(iter)));
    const ToyGroup group =
        sample_toy_group(env, result.policy, config.group_size, weights, rng);
    const std::vector<double> grad = toy_policy_gradient(result.policy, group, config);
    for (std::size_t i = 0; i < result.policy.params.size(); ++i) {
      result.policy.params[i] += config.learning_rate * grad[i];
      if (!std::isfinite(result.policy.params[i])) {
        result.diverged = true;
        result.diagnostics = "iteration " + std::to_string(iter) +
                             ": non-finite parameter at index " + std::to_string(i) +
                             " after update (learning_rate=" +
                             std::to_string(config.learning_rate) + ")";
        return result;
      }
    }
  }
  record(config.iterations);
  return result;
}

}  // namespace framehop
