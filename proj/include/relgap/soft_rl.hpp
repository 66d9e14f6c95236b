#pragma once

// Tabular soft Q-learning with replay buffers. The learner's policy is the
// softmax of Q / alpha unless an explicit actor table is supplied.

#include "relgap/cartpole.hpp"
#include "relgap/instances.hpp"
#include "relgap/mdp.hpp"
#include "relgap/solvers.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace relgap {

enum class Origin { source, target };

struct Transition {
  int state = 0;
  int action = 0;
  double reward = 0.0;
  int next_state = 0;
  bool done = false;  // true only for true terminals; time-limit truncation keeps bootstrapping
  Origin origin = Origin::source;
};

/// Cart-pole transition that keeps the continuous states next to the indices.
struct PhysicalTransition {
  Transition transition;
  CartPoleState state;
  CartPoleState next_state;
};

inline const Transition& transition_of(const Transition& t) { return t; }
inline const Transition& transition_of(const PhysicalTransition& t) { return t.transition; }

/// Bounded FIFO with a seeded uniform sampler (with replacement).
template <class Record>
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {
    if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be > 0");
    items_.reserve(std::min<std::size_t>(capacity, 1u << 16));
  }

  void push(const Record& r) {
    if (items_.size() < capacity_) {
      items_.push_back(r);
    } else {
      items_[head_] = r;
      head_ = (head_ + 1) % capacity_;
    }
    ++total_pushed_;
  }

  std::vector<Record> sample(std::size_t batch_size) {
    if (items_.empty()) throw std::logic_error("ReplayBuffer: sample from empty buffer");
    std::vector<Record> out;
    out.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
      out.push_back(items_[static_cast<std::size_t>(rng_() % items_.size())]);
    }
    return out;
  }

  /// i-th oldest element.
  const Record& operator[](std::size_t i) const {
    return items_[(head_ + i) % items_.size()];
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return items_.empty(); }
  std::uint64_t total_pushed() const { return total_pushed_; }

  /// Element about to be overwritten by the next push, if the buffer is full.
  const Record* next_evicted() const { return items_.size() < capacity_ ? nullptr : &items_[head_]; }

 private:
  std::size_t capacity_;
  std::vector<Record> items_;
  std::size_t head_ = 0;
  std::uint64_t total_pushed_ = 0;
  Rng rng_;
};

struct SoftLearnerConfig {
  double alpha = 0.2;
  double gamma = 0.9;
  double learning_rate = 0.1;
  double polyak = 0.995;  // target <- polyak * target + (1 - polyak) * q
};

struct SoftLearner {
  Matrix q;
  Matrix target_q;
  SoftLearnerConfig config;

  SoftLearner(int n_states, int n_actions, SoftLearnerConfig cfg, double initial_q = 0.0)
      : q(Matrix::Constant(n_states, n_actions, initial_q)), target_q(q), config(cfg) {
    validate();
  }
  SoftLearner(Matrix q0, SoftLearnerConfig cfg) : q(std::move(q0)), target_q(q), config(cfg) {
    validate();
  }

  int n_states() const { return static_cast<int>(q.rows()); }
  int n_actions() const { return static_cast<int>(q.cols()); }

  /// Implied policy softmax(q / alpha).
  TabularPolicy policy() const { return soft_greedy_improvement(q, config.alpha); }

 private:
  void validate() const {
    if (!(config.alpha > 0.0)) throw std::invalid_argument("SoftLearner: alpha must be > 0");
    if (!(config.gamma >= 0.0 && config.gamma < 1.0)) {
      throw std::invalid_argument("SoftLearner: gamma must lie in [0, 1)");
    }
    if (!(config.learning_rate > 0.0)) {
      throw std::invalid_argument("SoftLearner: learning rate must be > 0");
    }
    if (!(config.polyak >= 0.0 && config.polyak <= 1.0)) {
      throw std::invalid_argument("SoftLearner: polyak must lie in [0, 1]");
    }
    if (!q.allFinite()) throw std::invalid_argument("SoftLearner: non-finite q table");
  }
};

namespace detail {

/// log softmax(q_row / alpha)(a) without forming the probabilities.
inline void log_softmax_row(const Matrix& q, int s, double alpha, std::span<double> out) {
  const double m = q.row(s).maxCoeff();
  double z = 0.0;
  for (Eigen::Index a = 0; a < q.cols(); ++a) z += std::exp((q(s, a) - m) / alpha);
  const double log_z = std::log(z);
  for (Eigen::Index a = 0; a < q.cols(); ++a) out[a] = (q(s, a) - m) / alpha - log_z;
}

}  // namespace detail

/// V-bar(s) = sum_a pi(a|s) (target_q(s,a) - alpha log pi(a|s)); pi is either
/// the implied softmax of q or the given actor table.
inline double soft_target_value(const SoftLearner& learner, int s, const Matrix* actor = nullptr) {
  const double alpha = learner.config.alpha;
  double acc = 0.0;
  if (actor) {
    for (Eigen::Index a = 0; a < learner.q.cols(); ++a) {
      const double p = (*actor)(s, a);
      if (p > 0.0) acc += p * (learner.target_q(s, a) - alpha * std::log(p));
    }
    return acc;
  }
  double logp[64];
  if (learner.q.cols() > 64) throw std::invalid_argument("soft_target_value: too many actions");
  detail::log_softmax_row(learner.q, s, alpha, {logp, static_cast<std::size_t>(learner.q.cols())});
  for (Eigen::Index a = 0; a < learner.q.cols(); ++a) {
    acc += std::exp(logp[a]) * (learner.target_q(s, a) - alpha * logp[a]);
  }
  return acc;
}

/// Mean squared soft Bellman residual of the learner on a batch.
template <class Record>
double soft_bellman_residual(const SoftLearner& learner, std::span<const Record> batch,
                             const Matrix* actor = nullptr) {
  if (batch.empty()) throw std::invalid_argument("soft_bellman_residual: empty batch");
  double acc = 0.0;
  for (const Record& rec : batch) {
    const Transition& t = transition_of(rec);
    const double bootstrap = t.done ? 0.0 : soft_target_value(learner, t.next_state, actor);
    const double err = learner.q(t.state, t.action) - (t.reward + learner.config.gamma * bootstrap);
    acc += err * err;
  }
  return acc / static_cast<double>(batch.size());
}

/// One soft Q step on a batch: targets r + gamma (1 - done) V-bar(s') are
/// computed from the pre-update tables, each q(s,a) moves toward its target by
/// the learning rate, then the target table is Polyak-averaged. Returns the
/// pre-update mean squared residual.
template <class Record>
double soft_q_update(SoftLearner& learner, std::span<const Record> batch,
                     const Matrix* actor = nullptr) {
  if (batch.empty()) throw std::invalid_argument("soft_q_update: empty batch");
  std::vector<double> targets;
  targets.reserve(batch.size());
  double residual = 0.0;
  for (const Record& rec : batch) {
    const Transition& t = transition_of(rec);
    if (t.state < 0 || t.state >= learner.n_states() || t.next_state < 0 ||
        t.next_state >= learner.n_states() || t.action < 0 || t.action >= learner.n_actions()) {
      throw std::invalid_argument("soft_q_update: transition index out of range");
    }
    const double bootstrap = t.done ? 0.0 : soft_target_value(learner, t.next_state, actor);
    targets.push_back(t.reward + learner.config.gamma * bootstrap);
    const double err = learner.q(t.state, t.action) - targets.back();
    residual += err * err;
  }
  const double lr = learner.config.learning_rate;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Transition& t = transition_of(batch[i]);
    double& cell = learner.q(t.state, t.action);
    cell += lr * (targets[i] - cell);
  }
  const double tau = learner.config.polyak;
  learner.target_q = tau * learner.target_q + (1.0 - tau) * learner.q;
  return residual / static_cast<double>(batch.size());
}

template <class Record>
double soft_q_update(SoftLearner& learner, const std::vector<Record>& batch,
                     const Matrix* actor = nullptr) {
  return soft_q_update(learner, std::span<const Record>(batch), actor);
}

template <class Record>
double soft_bellman_residual(const SoftLearner& learner, const std::vector<Record>& batch,
                             const Matrix* actor = nullptr) {
  return soft_bellman_residual(learner, std::span<const Record>(batch), actor);
}

/// Draws an action from softmax(q(s, .) / alpha).
inline int sample_softmax_action(const Matrix& q, int s, double alpha, Rng& rng) {
  double logp[64];
  detail::log_softmax_row(q, s, alpha, {logp, static_cast<std::size_t>(q.cols())});
  double u = uniform01(rng);
  for (Eigen::Index a = 0; a + 1 < q.cols(); ++a) {
    u -= std::exp(logp[a]);
    if (u < 0.0) return static_cast<int>(a);
  }
  return static_cast<int>(q.cols()) - 1;
}

/// Draws an action from an explicit probability row.
inline int sample_row_action(const Matrix& probs, int s, Rng& rng) {
  double u = uniform01(rng);
  for (Eigen::Index a = 0; a + 1 < probs.cols(); ++a) {
    u -= probs(s, a);
    if (u < 0.0) return static_cast<int>(a);
  }
  return static_cast<int>(probs.cols()) - 1;
}

inline int greedy_action(const Matrix& table, int s) {
  Eigen::Index best = 0;
  table.row(s).maxCoeff(&best);
  return static_cast<int>(best);
}

/// Mean per-state entropy of a probability table.
inline double mean_policy_entropy(const Matrix& probs) {
  double acc = 0.0;
  for (Eigen::Index s = 0; s < probs.rows(); ++s)
    for (Eigen::Index a = 0; a < probs.cols(); ++a) {
      const double p = probs(s, a);
      if (p > 0.0) acc -= p * std::log(p);
    }
  return acc / static_cast<double>(probs.rows());
}

// ---------------------------------------------------------------------------
// Environments
// ---------------------------------------------------------------------------

/// Episodic view of a tabular MDP: episodes start from rho and are truncated
/// after `horizon` steps (never terminal, so learners keep bootstrapping).
class TabularEnv {
 public:
  using Record = Transition;

  TabularEnv(const TabularMdp& mdp, int horizon, Origin origin)
      : mdp_(&mdp), horizon_(horizon), origin_(origin) {
    if (horizon <= 0) throw std::invalid_argument("TabularEnv: horizon must be > 0");
  }

  void set_mdp(const TabularMdp& mdp) { mdp_ = &mdp; }
  const TabularMdp& mdp() const { return *mdp_; }
  int n_states() const { return mdp_->n_states(); }
  int n_actions() const { return mdp_->n_actions(); }

  int reset(Rng& rng) {
    steps_ = 0;
    state_ = sample_index(mdp_->initial_dist().data(), mdp_->n_states(), rng);
    return state_;
  }

  Record step(int action, Rng& rng, bool& episode_over) {
    const auto row = mdp_->transition().row(state_, action);
    const int next = sample_index(row.data(), mdp_->n_states(), rng);
    Record rec{state_, action, mdp_->r(state_, action, next), next, false, origin_};
    state_ = next;
    ++steps_;
    episode_over = steps_ >= horizon_;
    return rec;
  }

 private:
  static int sample_index(const double* probs, int n, Rng& rng) {
    double u = uniform01(rng);
    for (int i = 0; i + 1 < n; ++i) {
      u -= probs[i];
      if (u < 0.0) return i;
    }
    return n - 1;
  }

  const TabularMdp* mdp_;
  int horizon_;
  Origin origin_;
  int state_ = 0;
  int steps_ = 0;
};

/// Cart-pole with a discretized observation.
class CartPoleEnv {
 public:
  using Record = PhysicalTransition;

  CartPoleEnv(CartPoleParams params, Discretizer discretizer, Origin origin)
      : params_(params), discretizer_(std::move(discretizer)), origin_(origin) {
    params_.validate();
  }

  const CartPoleParams& params() const { return params_; }
  void set_pole_length(double length) {
    params_.pole_length = length;
    params_.validate();
  }
  const Discretizer& discretizer() const { return discretizer_; }
  int n_states() const { return discretizer_.n_cells(); }
  int n_actions() const { return 2; }

  int reset(Rng& rng) {
    steps_ = 0;
    state_ = cartpole_reset(rng);
    return discretizer_.index(state_);
  }

  Record step(int action, Rng&, bool& episode_over) {
    const CartPoleStep out = cartpole_step(params_, state_, action, steps_);
    Record rec{{discretizer_.index(state_), action, out.reward, discretizer_.index(out.next),
                out.failed, origin_},
               state_,
               out.next};
    state_ = out.next;
    ++steps_;
    episode_over = out.done;
    return rec;
  }

 private:
  CartPoleParams params_;
  Discretizer discretizer_;
  Origin origin_;
  CartPoleState state_;
  int steps_ = 0;
};

struct EpisodeResult {
  double episode_return = 0.0;
  int steps = 0;
};

/// Runs one episode with actions from `choose(state, rng)`, pushing every
/// transition into `buffer` (when non-null).
template <class Env, class Chooser>
EpisodeResult collect_episode(Env& env, Chooser&& choose, Rng& rng,
                              ReplayBuffer<typename Env::Record>* buffer) {
  EpisodeResult out;
  int s = env.reset(rng);
  bool over = false;
  while (!over) {
    const int a = choose(s, rng);
    const auto rec = env.step(a, rng, over);
    if (buffer) buffer->push(rec);
    const Transition& t = transition_of(rec);
    out.episode_return += t.reward;
    ++out.steps;
    s = t.next_state;
  }
  return out;
}

/// Episode driven by the learner's implied soft policy.
template <class Env>
EpisodeResult collect_episode(Env& env, const SoftLearner& learner, Rng& rng,
                              ReplayBuffer<typename Env::Record>* buffer) {
  const double alpha = learner.config.alpha;
  return collect_episode(
      env, [&](int s, Rng& r) { return sample_softmax_action(learner.q, s, alpha, r); }, rng,
      buffer);
}

/// Mean undiscounted return of the greedy policy of `table` over n episodes.
template <class Env>
double evaluate_greedy(Env& env, const Matrix& table, int n_episodes, Rng& rng) {
  double total = 0.0;
  for (int i = 0; i < n_episodes; ++i) {
    total += collect_episode(
                 env, [&](int s, Rng&) { return greedy_action(table, s); }, rng, nullptr)
                 .episode_return;
  }
  return total / n_episodes;
}

}  // namespace relgap
