// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "framehop/grpo.hpp"
#include "framehop/reward.hpp"
#include "framehop/synth.hpp"
#include "framehop/util.hpp"

using namespace framehop;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

TrajectoryGroup two_member_group(double lp_old_a, double lp_new_a, double lp_old_b,
                                 double lp_new_b) {
  TrajectoryGroup g;
  g.returns = {1.0, 0.0};
  g.logp_old = {{lp_old_a}, {lp_old_b}};
  g.logp_new = {{lp_new_a}, {lp_new_b}};
  return g;
}

}  // namespace

TEST_CASE("group advantages standardize with the population deviation") {
  std::vector<double> a = group_advantages({1.0, 2.0, 3.0});
  // population std of {1,2,3} is sqrt(2/3).
  CHECK(a[0] == doctest::Approx(-1.224744871391589));
  CHECK(a[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(a[2] == doctest::Approx(1.224744871391589));
  CHECK(a[0] == -a[2]);

  std::vector<double> zeros = group_advantages({2.5, 2.5, 2.5, 2.5});
  for (double z : zeros) CHECK(z == 0.0);

  CHECK_THROWS_AS(group_advantages({1.0}), std::invalid_argument);
  CHECK_THROWS_AS(group_advantages({}), std::invalid_argument);
  CHECK_THROWS_AS(group_advantages({1.0, kInf}), std::invalid_argument);
}

TEST_CASE("the clipped objective takes the pessimistic branch") {
  const double l5 = std::log(0.5);
  const double l6 = std::log(0.6);  // rho = 1.2
  const double l4 = std::log(0.4);  // rho = 0.8

  // Positive advantage, ratio above the ceiling: clipped to 1 + eps.
  // Negative advantage, same ratio: the raw term is smaller, so unclipped.
  TrajectoryGroup up = two_member_group(l5, l6, l5, l6);
  CHECK(grpo_objective(up, {1.0, -1.0}, 0.1) ==
        doctest::Approx((1.1 * 1.0 + 1.2 * -1.0) / 2.0).epsilon(1e-12));

  // Ratio below the floor: positive advantage unclipped, negative clipped.
  TrajectoryGroup down = two_member_group(l5, l4, l5, l4);
  CHECK(grpo_objective(down, {1.0, -1.0}, 0.1) ==
        doctest::Approx((0.8 * 1.0 + 0.9 * -1.0) / 2.0).epsilon(1e-12));

  // Inside the trust region nothing clips.
  TrajectoryGroup flat = two_member_group(l5, l5, l5, l5);
  CHECK(grpo_objective(flat, {1.0, -1.0}, 0.1) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("the objective validates its inputs") {
  TrajectoryGroup g = two_member_group(std::log(0.5), std::log(0.5), std::log(0.5),
                                       std::log(0.5));
  CHECK_THROWS_AS(grpo_objective(g, {1.0, -1.0}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(grpo_objective(g, {1.0, -1.0}, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(grpo_objective(g, {1.0}, 0.2), std::invalid_argument);

  TrajectoryGroup single;
  single.returns = {1.0};
  single.logp_old = {{-1.0}};
  single.logp_new = {{-1.0}};
  CHECK_THROWS_AS(grpo_objective(single, {1.0}, 0.2), std::invalid_argument);

  TrajectoryGroup misaligned = g;
  misaligned.logp_new[0] = {-1.0, -2.0};
  CHECK_THROWS_AS(grpo_objective(misaligned, {1.0, -1.0}, 0.2), std::invalid_argument);

  TrajectoryGroup empty_tokens = g;
  empty_tokens.logp_old[0] = {};
  empty_tokens.logp_new[0] = {};
  CHECK_THROWS_AS(grpo_objective(empty_tokens, {1.0, -1.0}, 0.2), std::invalid_argument);

  TrajectoryGroup non_finite = g;
  non_finite.logp_new[0] = {-kInf};
  CHECK_THROWS_AS(grpo_objective(non_finite, {1.0, -1.0}, 0.2), std::invalid_argument);
}

TEST_CASE("property: the objective matches a direct re-computation") {
  Rng rng(0x0b1ec7);
  for (int trial = 0; trial < 200; ++trial) {
    const int g_size = 2 + static_cast<int>(rng.below(5));
    const double eps = 0.05 + 0.4 * rng.real01();
    TrajectoryGroup group;
    std::vector<double> advantages;
    for (int i = 0; i < g_size; ++i) {
      const int tokens = 1 + static_cast<int>(rng.below(5));
      std::vector<double> old_lp, new_lp;
      for (int n = 0; n < tokens; ++n) {
        old_lp.push_back(-3.0 * rng.real01() - 0.05);
        new_lp.push_back(-3.0 * rng.real01() - 0.05);
      }
      group.returns.push_back(rng.real01());
      group.logp_old.push_back(old_lp);
      group.logp_new.push_back(new_lp);
      advantages.push_back(2.0 * rng.real01() - 1.0);
    }
    double expected = 0.0;
    for (int i = 0; i < g_size; ++i) {
      double inner = 0.0;
      for (std::size_t n = 0; n < group.logp_old[static_cast<std::size_t>(i)].size(); ++n) {
        const double rho = std::exp(group.logp_new[static_cast<std::size_t>(i)][n] -
                                    group.logp_old[static_cast<std::size_t>(i)][n]);
        const double clipped = std::min(std::max(rho, 1.0 - eps), 1.0 + eps);
        inner += std::min(rho * advantages[static_cast<std::size_t>(i)],
                          clipped * advantages[static_cast<std::size_t>(i)]);
      }
      expected += inner / static_cast<double>(group.logp_old[static_cast<std::size_t>(i)].size());
    }
    expected /= g_size;
    CHECK(grpo_objective(group, advantages, eps) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("the toy policy masks frame requests out of the last round") {
  SyntheticEnv env = make_toy_env(4);
  ToyPolicy policy = make_toy_policy(env);
  CHECK(policy.bins == 16);
  CHECK(policy.options == 4);
  CHECK(policy.max_rounds == 4);
  CHECK(policy.n_states() == 8);
  CHECK(policy.n_actions() == 20);
  CHECK(policy.params.size() == 160);
  CHECK(std::all_of(policy.params.begin(), policy.params.end(),
                    [](double p) { return p == 0.0; }));

  // Non-final round: uniform over all 20 actions.
  std::vector<double> lp = policy.action_log_probs(policy.state_index(2, true));
  double sum = 0.0;
  for (double v : lp) {
    CHECK(v == doctest::Approx(-std::log(20.0)).epsilon(1e-12));
    sum += std::exp(v);
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

  // Final round: bins are masked, answers are uniform over 4.
  std::vector<double> last = policy.action_log_probs(policy.state_index(4, false));
  for (int a = 0; a < 16; ++a) CHECK(last[static_cast<std::size_t>(a)] == -kInf);
  for (int a = 16; a < 20; ++a) {
    CHECK(last[static_cast<std::size_t>(a)] == doctest::Approx(-std::log(4.0)).epsilon(1e-12));
  }

  // Sampling honors the mask and a dominant parameter wins.
  Rng rng(77);
  const int final_state = policy.state_index(4, true);
  for (int i = 0; i < 500; ++i) CHECK(policy.sample_action(final_state, rng) >= 16);
  ToyPolicy rigged = policy;
  rigged.params[static_cast<std::size_t>(policy.state_index(1, false) * 20 + 5)] = 50.0;
  for (int i = 0; i < 100; ++i) {
    CHECK(rigged.sample_action(policy.state_index(1, false), rng) == 5);
  }
}

TEST_CASE("rollouts are deterministic and self-consistently scored") {
  SyntheticEnv env = make_toy_env(6);
  ToyPolicy policy = make_toy_policy(env);
  RewardWeights weights;

  Rng rng_a(123);
  Rng rng_b(123);
  ToyRollout a = rollout_toy(env, policy, weights, rng_a);
  ToyRollout b = rollout_toy(env, policy, weights, rng_b);
  REQUIRE(a.steps.size() == b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    CHECK(a.steps[i].state == b.steps[i].state);
    CHECK(a.steps[i].action == b.steps[i].action);
    CHECK(a.steps[i].logp_old == b.steps[i].logp_old);
  }
  CHECK(a.episode_return == b.episode_return);

  // Every rollout ends with an answer (the mask guarantees round T answers),
  // its return equals the reward pipeline's, and its log-probs match the
  // sampling policy.
  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    ToyRollout r = rollout_toy(env, policy, weights, rng);
    const Trajectory& traj = r.trajectory;
    CHECK(traj.status == EpisodeStatus::Answered);
    CHECK(traj.tau >= 1);
    CHECK(traj.tau <= env.max_rounds);
    CHECK(traj.rounds.size() == r.steps.size());
    CHECK(traj.rounds.back().action == "answer");
    REQUIRE(traj.answer_index.has_value());
    CHECK(r.steps.back().action >= policy.bins);
    CHECK(r.episode_return ==
          score_trajectory(traj, nullptr, weights).episode_return);
    for (const ToyStep& step : r.steps) {
      CHECK(step.logp_old ==
            policy.action_log_probs(step.state)[static_cast<std::size_t>(step.action)]);
    }
    CHECK(traj.frames_used >= 3);
  }
}

TEST_CASE("groups carry the sampling snapshot and standardized advantages") {
  SyntheticEnv env = make_toy_env(5);
  ToyPolicy policy = make_toy_policy(env);
  RewardWeights weights;
  Rng rng(31);
  ToyGroup group = sample_toy_group(env, policy, 8, weights, rng);
  CHECK(group.rollouts.size() == 8);
  CHECK(group.old_policy.params == policy.params);
  std::vector<double> returns;
  for (const ToyRollout& r : group.rollouts) returns.push_back(r.episode_return);
  CHECK(group.advantages == group_advantages(returns));
  CHECK_THROWS_AS(sample_toy_group(env, policy, 1, weights, rng), std::invalid_argument);

  // token_view pairs each step's sampling-time log-prob with the current one.
  TrajectoryGroup view = token_view(group, policy);
  REQUIRE(view.returns.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(view.returns[i] == group.rollouts[i].episode_return);
    CHECK(view.logp_old[i] == view.logp_new[i]);  // same policy, rho = 1
  }

  // At the sampling policy the clipped surrogate is the mean advantage (= 0)
  // and the KL term vanishes.
  GrpoConfig config;
  CHECK(toy_objective(policy, group, config) == doctest::Approx(0.0).epsilon(1e-9));

  ToyPolicy moved = policy;
  for (double& p : moved.params) p += 0.05;
  TrajectoryGroup moved_view = token_view(group, moved);
  for (std::size_t i = 0; i < 8; ++i) CHECK(moved_view.logp_old[i] == view.logp_old[i]);
}

namespace {

double fd_gradient(const ToyPolicy& policy, const ToyGroup& group, const GrpoConfig& config,
                   std::size_t index, double h) {
  auto at = [&](double delta) {
    ToyPolicy shifted = policy;
    shifted.params[index] += delta;
    return toy_objective(shifted, group, config);
  };
  // Five-point central stencil: O(h^4) truncation error.
  return (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
}

}  // namespace

TEST_CASE("the analytic policy gradient matches finite differences") {
  SyntheticEnv env = make_toy_env(8);
  ToyPolicy policy = make_toy_policy(env);
  RewardWeights weights;
  Rng rng(0x9d);

  GrpoConfig config;
  config.clip_epsilon = 0.2;
  config.kl_coeff = 0.01;

  SUBCASE("near the sampling policy") {
    ToyGroup group = sample_toy_group(env, policy, 12, weights, rng);
    ToyPolicy current = policy;
    for (double& p : current.params) p += 0.04 * (rng.real01() - 0.5);

    const std::vector<double> grad = toy_policy_gradient(current, group, config);
    REQUIRE(grad.size() == current.params.size());
    for (std::size_t index = 0; index < grad.size(); index += 7) {
      CAPTURE(index);
      const double fd = fd_gradient(current, group, config, index, 1e-4);
      CHECK(grad[index] == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
    }
  }

  SUBCASE("after a large policy move, with clipping engaged") {
    ToyGroup group = sample_toy_group(env, policy, 12, weights, rng);
    ToyPolicy current = policy;
    for (double& p : current.params) p += 0.6 * (rng.real01() - 0.5);

    // Confirm some ratios actually left the trust region.
    TrajectoryGroup view = token_view(group, current);
    int outside = 0;
    for (std::size_t i = 0; i < view.logp_new.size(); ++i) {
      for (std::size_t n = 0; n < view.logp_new[i].size(); ++n) {
        const double rho = std::exp(view.logp_new[i][n] - view.logp_old[i][n]);
        if (rho > 1.2 || rho < 0.8) ++outside;
      }
    }
    CHECK(outside > 0);

    const std::vector<double> grad = toy_policy_gradient(current, group, config);
    for (std::size_t index = 0; index < grad.size(); index += 11) {
      CAPTURE(index);
      const double fd = fd_gradient(current, group, config, index, 1e-5);
      CHECK(grad[index] == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
    }
  }

  SUBCASE("without the KL term") {
    config.kl_coeff = 0.0;
    ToyGroup group = sample_toy_group(env, policy, 8, weights, rng);
    ToyPolicy current = policy;
    for (double& p : current.params) p += 0.05 * (rng.real01() - 0.5);
    const std::vector<double> grad = toy_policy_gradient(current, group, config);
    for (std::size_t index = 0; index < grad.size(); index += 13) {
      CAPTURE(index);
      const double fd = fd_gradient(current, group, config, index, 1e-4);
      CHECK(grad[index] == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
    }
  }
}

TEST_CASE("exact policy evaluation agrees with hand arithmetic for the uniform policy") {
  SyntheticEnv env = make_toy_env(11);
  ToyPolicy policy = make_toy_policy(env);
  RewardWeights weights;
  PolicyEval eval = evaluate_policy_exact(env, policy, weights);

  // P(answer) = 4/20 per non-final round; round 4 always answers:
  //   E[tau] = .2*1 + .8*.2*2 + .64*.2*3 + .512*4 = 2.952.
  CHECK(eval.mean_tau == doctest::Approx(2.952).epsilon(1e-9));
  // A uniform answer is correct with probability 1/4 wherever it happens.
  CHECK(eval.accuracy == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(eval.mean_frames >= 3.0);
  CHECK(eval.mean_return > 0.0);
}

TEST_CASE("exact policy evaluation agrees with Monte Carlo") {
  SyntheticEnv env = make_toy_env(13);
  ToyPolicy policy = make_toy_policy(env);
  // A slightly trained-looking policy, so the comparison is not just uniform.
  Rng perturb(5);
  for (double& p : policy.params) p += 0.5 * (perturb.real01() - 0.5);
  RewardWeights weights;
  PolicyEval exact = evaluate_policy_exact(env, policy, weights);

  const int kRollouts = 20000;
  Rng rng(99);
  double sum_return = 0.0, sum_tau = 0.0, sum_frames = 0.0, sum_acc = 0.0;
  for (int i = 0; i < kRollouts; ++i) {
    ToyRollout r = rollout_toy(env, policy, weights, rng);
    sum_return += r.episode_return;
    sum_tau += r.trajectory.tau;
    sum_frames += static_cast<double>(r.trajectory.frames_used);
    sum_acc += r.trajectory.correct() ? 1.0 : 0.0;
  }
  CHECK(exact.mean_return == doctest::Approx(sum_return / kRollouts).scale(1.0).epsilon(0.08));
  CHECK(exact.mean_tau == doctest::Approx(sum_tau / kRollouts).scale(1.0).epsilon(0.05));
  CHECK(exact.mean_frames == doctest::Approx(sum_frames / kRollouts).scale(1.0).epsilon(0.15));
  CHECK(exact.accuracy == doctest::Approx(sum_acc / kRollouts).scale(1.0).epsilon(0.02));
}

TEST_CASE("a zero learning rate leaves the learning curve flat") {
  SyntheticEnv env = make_toy_env(2);
  GrpoConfig config;
  config.iterations = 5;
  config.group_size = 4;
  config.learning_rate = 0.0;
  RewardWeights weights;
  TrainResult result = train_toy(env, config, weights, 7);
  CHECK_FALSE(result.diverged);
  REQUIRE(result.curve.size() == 6);  // one point per iteration plus the final
  for (const LearningPoint& p : result.curve) {
    CHECK(p.mean_return == result.curve[0].mean_return);
    CHECK(p.mean_tau == result.curve[0].mean_tau);
    CHECK(p.mean_frames == result.curve[0].mean_frames);
    CHECK(p.accuracy == result.curve[0].accuracy);
  }
  for (std::size_t i = 0; i < result.curve.size(); ++i) {
    CHECK(result.curve[i].iteration == static_cast<int>(i));
  }
  CHECK(std::all_of(result.policy.params.begin(), result.policy.params.end(),
                    [](double p) { return p == 0.0; }));
}

TEST_CASE("train_toy validates its configuration") {
  SyntheticEnv env = make_toy_env(2);
  RewardWeights weights;
  GrpoConfig bad;
  bad.clip_epsilon = 0.0;
  CHECK_THROWS_AS(train_toy(env, bad, weights, 1), std::invalid_argument);
  bad = GrpoConfig{};
  bad.group_size = 1;
  CHECK_THROWS_AS(train_toy(env, bad, weights, 1), std::invalid_argument);
  bad = GrpoConfig{};
  bad.iterations = -1;
  CHECK_THROWS_AS(train_toy(env, bad, weights, 1), std::invalid_argument);
}
