#pragma once

// Source-environment pretraining: exact soft value iteration for tabular
// MDPs, sampled soft Q-learning for the discretized cart-pole.

#include "relgap/soft_rl.hpp"

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace relgap {

struct TrainingRow {
  long step = 0;
  double episode_return = 0.0;
  double soft_bellman_residual = 0.0;
  double entropy = 0.0;
};

struct PretrainConfig {
  SoftLearnerConfig learner{0.05, 0.99, 0.1, 0.995};
  double initial_q = 100.0;  // optimistic start; about 1 / (1 - gamma) for unit rewards
  long max_steps = 200000;
  int batch_size = 32;
  std::size_t buffer_capacity = 100000;
  long eval_interval = 10000;
  int eval_episodes = 20;
  double stop_return = 495.0;
  long log_interval = 1000;

  void validate() const {
    if (max_steps <= 0) throw std::invalid_argument("pretrain: max_steps must be > 0");
    if (batch_size <= 0) throw std::invalid_argument("pretrain: batch_size must be > 0");
    if (eval_interval <= 0 || eval_episodes <= 0) {
      throw std::invalid_argument("pretrain: evaluation interval and episodes must be > 0");
    }
    if (log_interval <= 0) throw std::invalid_argument("pretrain: log_interval must be > 0");
  }
};

struct PretrainResult {
  Matrix q;                  // best evaluated snapshot
  double best_return = 0.0;  // greedy evaluation of that snapshot
  long steps = 0;
  std::vector<TrainingRow> telemetry;
};

/// Soft-optimal Q of the source MDP.
inline Matrix pretrain_tabular(const TabularMdp& source, double alpha) {
  return soft_value_iteration(source, alpha);
}

/// Trains a soft Q-learner on the cart-pole with one batch update per
/// environment step. Every eval_interval steps the greedy policy is scored over
/// eval_episodes episodes; the best snapshot is kept and training stops once
/// it reaches stop_return.
inline PretrainResult pretrain_cartpole(const CartPoleParams& params, const Discretizer& grid,
                                        const PretrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  CartPoleEnv env(params, grid, Origin::source);
  CartPoleEnv eval_env(params, grid, Origin::source);
  SoftLearner learner(env.n_states(), env.n_actions(), cfg.learner, cfg.initial_q);
  ReplayBuffer<PhysicalTransition> buffer(cfg.buffer_capacity, seed ^ 0x5bd1e995ULL);
  Rng rng(seed);
  Rng eval_rng(seed + 0x9E3779B97F4A7C15ULL);

  PretrainResult out;
  out.q = learner.q;
  out.best_return = -1.0;
  double residual_acc = 0.0;
  long residual_n = 0;
  double last_return = 0.0;
  const double alpha = cfg.learner.alpha;

  while (out.steps < cfg.max_steps && out.best_return < cfg.stop_return) {
    int s = env.reset(rng);
    bool over = false;
    double ep_return = 0.0;
    while (!over && out.steps < cfg.max_steps) {
      const int a = sample_softmax_action(learner.q, s, alpha, rng);
      const auto rec = env.step(a, rng, over);
      buffer.push(rec);
      ep_return += rec.transition.reward;
      s = rec.transition.next_state;
      ++out.steps;

      residual_acc += soft_q_update(learner, buffer.sample(static_cast<std::size_t>(cfg.batch_size)));
      ++residual_n;

      if (out.steps % cfg.log_interval == 0) {
        out.telemetry.push_back({out.steps, last_return, residual_acc / residual_n,
                                 mean_policy_entropy(learner.policy().probs())});
        residual_acc = 0.0;
        residual_n = 0;
      }
      if (out.steps % cfg.eval_interval == 0) {
        const double score = evaluate_greedy(eval_env, learner.q, cfg.eval_episodes, eval_rng);
        if (score > out.best_return) {
          out.best_return = score;
          out.q = learner.q;
        }
        if (out.best_return >= cfg.stop_return) break;
      }
    }
    if (over) last_return = ep_return;
  }
  if (out.best_return < 0.0) {
    out.best_return = evaluate_greedy(eval_env, learner.q, cfg.eval_episodes, eval_rng);
    out.q = learner.q;
  }
  return out;
}

}  // namespace relgap
