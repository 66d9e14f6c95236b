#pragma once

// Policy and dynamics transfer: relative policy optimization (RPO), relative
// transition optimization (RTO) and their closed loop (RPTO), on tabular MDP
// pairs and on the cart-pole with a trainable pole length.

#include "relgap/cartpole.hpp"
#include "relgap/dynamics_model.hpp"
#include "relgap/relativity.hpp"
#include "relgap/soft_rl.hpp"
#include "relgap/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace relgap {

struct TransferConfig {
  int alternate_frequency = 5;
  int policy_replay_ratio = 1;
  int dynamics_replay_ratio = 1;
  int critic_replay_ratio = 1;
  double rto_min_weight = 0.5;
  double rto_learning_rate = 0.05;            // tabular logits
  double rto_physical_learning_rate = 1e-2;   // pole length
  double rto_gradient_clip = 1.0;
  double rpo_learning_rate = 0.2;
  int critic_batch_size = 32;
  int policy_batch_size = 32;
  int dynamics_batch_size = 32;
  long target_step_budget = 50000;
  int source_episodes_per_iteration = 1;
  int target_episodes_per_iteration = 1;
  std::size_t buffer_capacity = 100000;
  long eval_interval = 2000;
  int eval_episodes = 10;

  void validate() const {
    auto at_least_one = [](long v, const char* name) {
      if (v < 1) throw std::invalid_argument(std::string("TransferConfig: ") + name + " must be >= 1");
    };
    at_least_one(alternate_frequency, "alternate_frequency");
    at_least_one(policy_replay_ratio, "policy_replay_ratio");
    at_least_one(dynamics_replay_ratio, "dynamics_replay_ratio");
    at_least_one(critic_replay_ratio, "critic_replay_ratio");
    at_least_one(critic_batch_size, "critic_batch_size");
    at_least_one(policy_batch_size, "policy_batch_size");
    at_least_one(dynamics_batch_size, "dynamics_batch_size");
    at_least_one(target_step_budget, "target_step_budget");
    at_least_one(source_episodes_per_iteration, "source_episodes_per_iteration");
    at_least_one(target_episodes_per_iteration, "target_episodes_per_iteration");
    at_least_one(static_cast<long>(buffer_capacity), "buffer_capacity");
    at_least_one(eval_interval, "eval_interval");
    at_least_one(eval_episodes, "eval_episodes");
    if (!(rto_min_weight > 0.0)) throw std::invalid_argument("TransferConfig: rto_min_weight must be > 0");
    if (!(rto_learning_rate > 0.0) || !(rto_physical_learning_rate > 0.0)) {
      throw std::invalid_argument("TransferConfig: RTO learning rates must be > 0");
    }
    if (!(rto_gradient_clip > 0.0)) {
      throw std::invalid_argument("TransferConfig: rto_gradient_clip must be > 0");
    }
    if (!(rpo_learning_rate > 0.0 && rpo_learning_rate <= 1.0)) {
      throw std::invalid_argument("TransferConfig: rpo_learning_rate must lie in (0, 1]");
    }
  }
};

// ---------------------------------------------------------------------------
// RTO weights
// ---------------------------------------------------------------------------

struct WeightRange {
  double w_min = 0.0;
  double w_max = 0.0;
};

struct RtoWeight {
  double raw = 0.0;
  double normalized = 0.0;
};

/// Min-max normalization shifted by eps: values inside the range map to
/// [eps, 1 + eps]; a degenerate range maps everything to eps.
inline RtoWeight normalize_rto_weight(double w, WeightRange range, double eps) {
  if (!(range.w_max > range.w_min)) return {w, eps};
  const double t = std::clamp((w - range.w_min) / (range.w_max - range.w_min), 0.0, 1.0);
  return {w, t + eps};
}

/// Occurrence counts of integer keys with an O(1) list of the keys present.
class KeyCounts {
 public:
  explicit KeyCounts(std::size_t n_keys) : counts_(n_keys, 0), slot_(n_keys, -1) {}

  void add(std::size_t key) {
    if (counts_.at(key)++ == 0) {
      slot_[key] = static_cast<long>(present_.size());
      present_.push_back(key);
    }
  }
  void remove(std::size_t key) {
    if (counts_.at(key) == 0) throw std::logic_error("KeyCounts: removing absent key");
    if (--counts_[key] == 0) {
      const std::size_t last = present_.back();
      present_[static_cast<std::size_t>(slot_[key])] = last;
      slot_[last] = slot_[key];
      present_.pop_back();
      slot_[key] = -1;
    }
  }
  long count(std::size_t key) const { return counts_.at(key); }
  const std::vector<std::size_t>& present() const { return present_; }

 private:
  std::vector<long> counts_;
  std::vector<long> slot_;
  std::vector<std::size_t> present_;
};

/// Soft state values V(s) = sum_a pi(a|s) (q(s,a) - alpha log pi(a|s)).
inline Vector soft_values(const Matrix& q, const Matrix& actor, double alpha) {
  if (q.rows() != actor.rows() || q.cols() != actor.cols()) {
    throw std::invalid_argument("soft_values: shape mismatch");
  }
  Vector v = Vector::Zero(q.rows());
  for (Eigen::Index s = 0; s < q.rows(); ++s)
    for (Eigen::Index a = 0; a < q.cols(); ++a) {
      const double p = actor(s, a);
      if (p > 0.0) v(s) += p * (q(s, a) - alpha * std::log(p));
    }
  return v;
}

/// Raw tabular weight (r(s,a,s') + gamma V(s'))^2.
inline double tabular_rto_weight(const TabularMdp& env, const Vector& v, int s, int a, int next) {
  const double x = env.r(s, a, next) + env.discount() * v(next);
  return x * x;
}

/// Range of the raw tabular weight over every candidate next state of every
/// (s, a) key present in `pairs` (key = s * n_actions + a).
inline WeightRange tabular_weight_range(const TabularMdp& env, const Vector& v,
                                        const KeyCounts& pairs) {
  WeightRange range{std::numeric_limits<double>::infinity(),
                    -std::numeric_limits<double>::infinity()};
  for (std::size_t key : pairs.present()) {
    const int s = static_cast<int>(key) / env.n_actions();
    const int a = static_cast<int>(key) % env.n_actions();
    for (int next = 0; next < env.n_states(); ++next) {
      const double w = tabular_rto_weight(env, v, s, a, next);
      range.w_min = std::min(range.w_min, w);
      range.w_max = std::max(range.w_max, w);
    }
  }
  if (pairs.present().empty()) range = {0.0, 0.0};
  return range;
}

/// Weighted one-hot regression loss of the tabular model, summed over the
/// batch:
///   sum_i sum_{s'} w_hat(s_i, a_i, s') (1[s' = s'_i] - P_phi(s'|s_i,a_i))^2.
/// The gradient with respect to the logits is accumulated into `grad` when
/// non-null (same shape as the logits, overwritten).
inline double rto_tabular_loss(const TabularDynamicsModel& model, std::span<const Transition> batch,
                               const TabularMdp& env, const Vector& v, WeightRange range,
                               double eps, Tensor3* grad = nullptr) {
  if (batch.empty()) throw std::invalid_argument("rto_update_tabular: empty batch");
  if (model.n_states() != env.n_states() || model.n_actions() != env.n_actions() ||
      v.size() != env.n_states()) {
    throw std::invalid_argument("rto_update_tabular: shape mismatch");
  }
  const int n = env.n_states();
  if (grad) *grad = Tensor3(n, env.n_actions(), n);
  std::vector<double> p(static_cast<std::size_t>(n));
  std::vector<double> c(static_cast<std::size_t>(n));
  double loss = 0.0;
  for (const Transition& t : batch) {
    if (t.state < 0 || t.state >= n || t.next_state < 0 || t.next_state >= n || t.action < 0 ||
        t.action >= env.n_actions()) {
      throw std::invalid_argument("rto_update_tabular: transition index out of range");
    }
    model.row_probabilities(t.state, t.action, p);
    double mean_c = 0.0;
    for (int k = 0; k < n; ++k) {
      const double w =
          normalize_rto_weight(tabular_rto_weight(env, v, t.state, t.action, k), range, eps).normalized;
      const double e = (k == t.next_state ? 1.0 : 0.0) - p[k];
      loss += w * e * e;
      c[k] = -2.0 * w * e;  // d loss_i / d p_k
      mean_c += c[k] * p[k];
    }
    if (grad) {
      auto g = grad->row(t.state, t.action);
      for (int k = 0; k < n; ++k) g[k] += p[k] * (c[k] - mean_c);
    }
  }
  return loss;
}

/// One gradient step on the logits. Returns the pre-update loss.
inline double rto_update_tabular(TabularDynamicsModel& model, std::span<const Transition> batch,
                                 const TabularMdp& env, const Vector& v, WeightRange range,
                                 const TransferConfig& cfg) {
  Tensor3 grad;
  const double loss = rto_tabular_loss(model, batch, env, v, range, cfg.rto_min_weight, &grad);
  const auto z = model.logits().data();
  const auto g = std::as_const(grad).data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] -= cfg.rto_learning_rate * g[i];
  return loss;
}

/// Key of the raw physical weight: it depends on the transition only through
/// the discretized next state and whether the step failed.
inline std::size_t physical_weight_key(const Transition& t) {
  return static_cast<std::size_t>(t.next_state) * 2 + (t.done ? 1 : 0);
}

/// Raw physical weight (r + gamma (1 - done) V(cell(s')))^2 for a key. Failing
/// steps carry reward 0, the others reward 1.
inline double physical_rto_weight(std::size_t key, const Vector& v, double gamma) {
  const bool failed = key % 2 == 1;
  const auto cell = static_cast<Eigen::Index>(key / 2);
  const double x = failed ? 0.0 : 1.0 + gamma * v(cell);
  return x * x;
}

inline WeightRange physical_weight_range(const KeyCounts& keys, const Vector& v, double gamma) {
  if (keys.present().empty()) return {0.0, 0.0};
  WeightRange range{std::numeric_limits<double>::infinity(),
                    -std::numeric_limits<double>::infinity()};
  for (std::size_t key : keys.present()) {
    const double w = physical_rto_weight(key, v, gamma);
    range.w_min = std::min(range.w_min, w);
    range.w_max = std::max(range.w_max, w);
  }
  return range;
}

/// Weighted squared prediction error of the simulator at `params` on real
/// transitions, averaged over the batch, and its derivative with respect to
/// pole_length (written to `grad` when non-null).
inline double rto_physical_loss(const CartPoleParams& params,
                                std::span<const PhysicalTransition> batch, const Vector& v,
                                double gamma, WeightRange range, double eps,
                                double* grad = nullptr) {
  if (batch.empty()) throw std::invalid_argument("rto_update_physical: empty batch");
  const double scale = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  double g = 0.0;
  for (const PhysicalTransition& rec : batch) {
    const Transition& t = rec.transition;
    const double w =
        normalize_rto_weight(physical_rto_weight(physical_weight_key(t), v, gamma), range, eps)
            .normalized;
    const auto predicted =
        cartpole_integrate(params, rec.state, action_force(params, t.action)).as_array();
    const auto observed = rec.next_state.as_array();
    std::array<double, 4> e{};
    double sq = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      e[i] = observed[i] - predicted[i];
      sq += e[i] * e[i];
    }
    loss += scale * w * sq;
    if (grad && sq > 0.0) {
      const auto d = cartpole_step_gradient(params, rec.state, t.action);
      double dot = 0.0;
      for (std::size_t i = 0; i < 4; ++i) dot += e[i] * d[i];
      g += scale * w * (-2.0 * dot);
    }
  }
  if (grad) *grad = g;
  return loss;
}

/// One clipped gradient step on pole_length, projected to stay >= 1e-3.
/// Returns the pre-update loss.
inline double rto_update_physical(CartPoleParams& params, std::span<const PhysicalTransition> batch,
                                  const Vector& v, double gamma, WeightRange range,
                                  const TransferConfig& cfg, double learning_rate) {
  double grad = 0.0;
  const double loss = rto_physical_loss(params, batch, v, gamma, range, cfg.rto_min_weight, &grad);
  grad = std::clamp(grad, -cfg.rto_gradient_clip, cfg.rto_gradient_clip);
  params.pole_length = std::max(params.pole_length - learning_rate * grad, 1e-3);
  return loss;
}

// ---------------------------------------------------------------------------
// RPO
// ---------------------------------------------------------------------------

/// KL-projected step of one actor row toward softmax(q / alpha):
/// pi_new proportional to pi_old^(1 - eta) * softmax(q / alpha)^eta.
inline void kl_policy_step(Matrix& actor, const Matrix& q, int s, double alpha, double eta) {
  const Eigen::Index m = q.cols();
  if (m > 64) throw std::invalid_argument("kl_policy_step: too many actions");
  double target[64];
  detail::log_softmax_row(q, s, alpha, {target, static_cast<std::size_t>(m)});
  // Floor keeps log pi finite so later steps and entropies stay defined.
  constexpr double kLogFloor = -700.0;
  double logits[64];
  double top = -std::numeric_limits<double>::infinity();
  for (Eigen::Index a = 0; a < m; ++a) {
    const double old_log = actor(s, a) > 0.0 ? std::max(std::log(actor(s, a)), kLogFloor) : kLogFloor;
    logits[a] = (1.0 - eta) * old_log + eta * target[a];
    top = std::max(top, logits[a]);
  }
  double z = 0.0;
  for (Eigen::Index a = 0; a < m; ++a) z += std::exp(logits[a] - top);
  for (Eigen::Index a = 0; a < m; ++a) {
    actor(s, a) = std::exp(std::max(logits[a] - top - std::log(z), kLogFloor));
  }
  actor.row(s) /= actor.row(s).sum();
}

/// Explicit actor table driven by the source-environment Q. Calls are counted
/// from 1; call k uses the source batch when k is a multiple of the
/// alternation frequency.
class RelativePolicyOptimizer {
 public:
  RelativePolicyOptimizer(Matrix actor, double alpha, double learning_rate, int alternate_frequency)
      : actor_(std::move(actor)), alpha_(alpha), eta_(learning_rate), f_(alternate_frequency) {
    if (alternate_frequency < 1) throw std::invalid_argument("RPO: alternate frequency must be >= 1");
    if (!(alpha > 0.0)) throw std::invalid_argument("RPO: alpha must be > 0");
    if (!(learning_rate > 0.0 && learning_rate <= 1.0)) {
      throw std::invalid_argument("RPO: learning rate must lie in (0, 1]");
    }
    TabularPolicy check(actor_);
    (void)check;
  }

  const Matrix& actor() const { return actor_; }
  TabularPolicy policy() const { return TabularPolicy(actor_); }
  long calls() const { return calls_; }
  long source_calls() const { return source_calls_; }
  bool next_uses_source() const { return (calls_ + 1) % f_ == 0; }

  /// Improves the actor at the states of the given batch. Returns true when
  /// the source batch was used.
  template <class Record>
  bool update(const Matrix& q_source, std::span<const Record> target_batch,
              std::span<const Record> source_batch) {
    if (q_source.rows() != actor_.rows() || q_source.cols() != actor_.cols()) {
      throw std::invalid_argument("RPO: Q and actor shapes differ");
    }
    const bool use_source = next_uses_source();
    const auto batch = use_source ? source_batch : target_batch;
    if (batch.empty()) throw std::invalid_argument("RPO: empty batch");
    for (const Record& rec : batch) {
      const int s = transition_of(rec).state;
      if (s < 0 || s >= actor_.rows()) throw std::invalid_argument("RPO: state out of range");
      kl_policy_step(actor_, q_source, s, alpha_, eta_);
    }
    ++calls_;
    if (use_source) ++source_calls_;
    return use_source;
  }

 private:
  Matrix actor_;
  double alpha_;
  double eta_;
  int f_;
  long calls_ = 0;
  long source_calls_ = 0;
};

/// RPO step on the learner's source Q; the source batch is consulted only on
/// alternation calls.
template <class Record>
bool rpo_update(RelativePolicyOptimizer& rpo, const SoftLearner& learner,
                std::span<const Record> target_batch, std::span<const Record> source_batch = {}) {
  return rpo.update(learner.q, target_batch, source_batch);
}

// ---------------------------------------------------------------------------
// Transfer problems
// ---------------------------------------------------------------------------

enum class Algorithm { rpo, rto, rpto, sac_warm };

inline const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::rpo: return "rpo";
    case Algorithm::rto: return "rto";
    case Algorithm::rpto: return "rpto";
    case Algorithm::sac_warm: return "sac_warm";
  }
  return "?";
}

inline Algorithm parse_algorithm(const std::string& name) {
  if (name == "rpo") return Algorithm::rpo;
  if (name == "rto") return Algorithm::rto;
  if (name == "rpto") return Algorithm::rpto;
  if (name == "sac_warm" || name == "sac-warm") return Algorithm::sac_warm;
  throw std::invalid_argument("unknown algorithm '" + name + "'");
}

/// Tabular source/target pair with a trainable transition model.
class TabularTransferProblem {
 public:
  using Record = Transition;
  using Env = TabularEnv;

  TabularTransferProblem(TabularMdp source, TabularMdp target, int episode_horizon, double alpha)
      : alpha_(alpha),
        source_(std::move(source)),
        target_(std::move(target)),
        model_(TabularDynamicsModel::from_probabilities(source_.transition())),
        model_mdp_(source_),
        source_env_(model_mdp_, episode_horizon, Origin::source),
        target_env_(target_, episode_horizon, Origin::target),
        pairs_(static_cast<std::size_t>(source_.n_states() * source_.n_actions())) {
    if (!source_.shares_environment_with(target_)) {
      throw std::invalid_argument("tabular transfer: source and target must share S, A, r, rho, gamma");
    }
  }
  // The environments point into the problem's own members.
  TabularTransferProblem(const TabularTransferProblem&) = delete;
  TabularTransferProblem& operator=(const TabularTransferProblem&) = delete;

  int n_states() const { return source_.n_states(); }
  int n_actions() const { return source_.n_actions(); }
  Env& source_env() { return source_env_; }
  Env& target_env() { return target_env_; }
  const TabularMdp& target() const { return target_; }
  const TabularDynamicsModel& model() const { return model_; }

  /// Source collection follows the current model.
  void refresh_source() {
    model_mdp_ = model_.as_mdp(source_);
    source_env_.set_mdp(model_mdp_);
  }

  void on_target_push(const Record& rec, const Record* evicted) {
    if (evicted) pairs_.remove(pair_key(*evicted));
    pairs_.add(pair_key(rec));
  }

  /// Exact entropy-regularized return rho . V_soft of the actor in the target MDP.
  double evaluate_target(const Matrix& actor, Rng&, int) const {
    return soft_return(target_, TabularPolicy(actor), alpha_);
  }

  double model_metric() const { return tv_divergence_dynamics(model_.as_mdp(source_), target_); }

  double rto_step(std::span<const Record> batch, const Vector& v, const TransferConfig& cfg) {
    const WeightRange range = tabular_weight_range(source_, v, pairs_);
    return rto_update_tabular(model_, batch, source_, v, range, cfg);
  }

 private:
  std::size_t pair_key(const Record& r) const {
    return static_cast<std::size_t>(r.state * source_.n_actions() + r.action);
  }

  double alpha_;
  TabularMdp source_;
  TabularMdp target_;
  TabularDynamicsModel model_;
  TabularMdp model_mdp_;
  TabularEnv source_env_;
  TabularEnv target_env_;
  KeyCounts pairs_;
};

/// Cart-pole pair: the source simulator uses the trainable pole length.
class CartPoleTransferProblem {
 public:
  using Record = PhysicalTransition;
  using Env = CartPoleEnv;

  CartPoleTransferProblem(CartPoleParams source, CartPoleParams target, Discretizer grid,
                          double gamma)
      : model_(source),
        source_env_(source, grid, Origin::source),
        target_env_(target, grid, Origin::target),
        eval_env_(target, grid, Origin::target),
        keys_(static_cast<std::size_t>(grid.n_cells()) * 2),
        gamma_(gamma) {}

  int n_states() const { return target_env_.n_states(); }
  int n_actions() const { return 2; }
  Env& source_env() { return source_env_; }
  Env& target_env() { return target_env_; }
  const CartPoleParams& model() const { return model_; }

  void refresh_source() { source_env_.set_pole_length(model_.pole_length); }

  void on_target_push(const Record& rec, const Record* evicted) {
    if (evicted) keys_.remove(physical_weight_key(evicted->transition));
    keys_.add(physical_weight_key(rec.transition));
  }

  /// Mean greedy return of the actor in the target simulator.
  double evaluate_target(const Matrix& actor, Rng& rng, int episodes) {
    return evaluate_greedy(eval_env_, actor, episodes, rng);
  }

  double model_metric() const { return model_.pole_length; }

  double rto_step(std::span<const Record> batch, const Vector& v, const TransferConfig& cfg) {
    const WeightRange range = physical_weight_range(keys_, v, gamma_);
    return rto_update_physical(model_, batch, v, gamma_, range, cfg, cfg.rto_physical_learning_rate);
  }

 private:
  CartPoleParams model_;
  CartPoleEnv source_env_;
  CartPoleEnv target_env_;
  CartPoleEnv eval_env_;
  KeyCounts keys_;
  double gamma_;
};

// ---------------------------------------------------------------------------
// The transfer loop
// ---------------------------------------------------------------------------

struct TransferRow {
  long target_steps = 0;
  long source_steps = 0;
  double target_return = 0.0;
  double source_return = 0.0;
  double pole_length_or_tv_gap = 0.0;
  double rto_loss = 0.0;
  double rpo_entropy = 0.0;
};

struct TransferLog {
  std::vector<TransferRow> rows;
  Matrix final_actor;
  Matrix final_q;
  long policy_updates = 0;
  long source_policy_updates = 0;
  long dynamics_updates = 0;
};

/// First logged target step count at which target_return reaches `threshold`.
inline std::optional<long> steps_to_threshold(const TransferLog& log, double threshold) {
  for (const auto& row : log.rows) {
    if (row.target_return >= threshold) return row.target_steps;
  }
  return std::nullopt;
}

/// Runs one transfer. Each iteration collects source episodes in the current
/// model (RPO, RTO, RPTO) and target episodes with the acting policy, then
/// performs, per collected target step: critic updates (source data, or target
/// data for the warm-started SAC baseline), RPO updates, and RTO updates, at
/// the configured replay ratios. The learner must hold the pretrained Q.
template <class Problem>
TransferLog run_transfer(Algorithm algorithm, Problem& problem, SoftLearner learner,
                         const TransferConfig& cfg, std::uint64_t seed) {
  using Record = typename Problem::Record;
  cfg.validate();
  if (learner.n_states() != problem.n_states() || learner.n_actions() != problem.n_actions()) {
    throw std::invalid_argument("run_transfer: learner shape does not match the problem");
  }
  const double alpha = learner.config.alpha;
  const bool uses_source = algorithm != Algorithm::sac_warm;
  const bool uses_rpo = algorithm == Algorithm::rpo || algorithm == Algorithm::rpto;
  const bool uses_rto = algorithm == Algorithm::rto || algorithm == Algorithm::rpto;

  RelativePolicyOptimizer rpo(learner.policy().probs(), alpha, cfg.rpo_learning_rate,
                              cfg.alternate_frequency);
  ReplayBuffer<Record> source_buffer(cfg.buffer_capacity, seed * 4 + 1);
  ReplayBuffer<Record> target_buffer(cfg.buffer_capacity, seed * 4 + 2);
  Rng source_rng(seed * 4 + 3);
  Rng target_rng(seed * 4 + 4);
  Rng eval_rng(seed ^ 0xD1B54A32D192ED03ULL);

  auto acting = [&]() -> Matrix {
    return algorithm == Algorithm::sac_warm ? learner.policy().probs() : rpo.actor();
  };

  TransferLog log;
  long target_steps = 0;
  long source_steps = 0;
  double last_source_return = 0.0;
  double rto_loss_acc = 0.0;
  long rto_loss_n = 0;
  double last_rto_loss = 0.0;
  long next_eval = 0;

  auto emit = [&] {
    const Matrix actor = acting();
    TransferRow row;
    row.target_steps = target_steps;
    row.source_steps = source_steps;
    row.target_return = problem.evaluate_target(actor, eval_rng, cfg.eval_episodes);
    row.source_return = last_source_return;
    row.pole_length_or_tv_gap = problem.model_metric();
    if (rto_loss_n > 0) last_rto_loss = rto_loss_acc / rto_loss_n;
    row.rto_loss = last_rto_loss;
    row.rpo_entropy = mean_policy_entropy(actor);
    rto_loss_acc = 0.0;
    rto_loss_n = 0;
    log.rows.push_back(row);
  };
  emit();
  next_eval = cfg.eval_interval;

  while (target_steps < cfg.target_step_budget) {
    if (uses_source) {
      problem.refresh_source();
      for (int e = 0; e < cfg.source_episodes_per_iteration; ++e) {
        const auto& actor = rpo.actor();
        const auto res = collect_episode(
            problem.source_env(),
            [&](int s, Rng& r) { return sample_row_action(actor, s, r); }, source_rng,
            &source_buffer);
        source_steps += res.steps;
        last_source_return = res.episode_return;
      }
    }

    long collected = 0;
    {
      const Matrix actor = acting();
      for (int e = 0; e < cfg.target_episodes_per_iteration; ++e) {
        auto& env = problem.target_env();
        int s = env.reset(target_rng);
        bool over = false;
        while (!over) {
          const int a = sample_row_action(actor, s, target_rng);
          const Record rec = env.step(a, target_rng, over);
          problem.on_target_push(rec, target_buffer.next_evicted());
          target_buffer.push(rec);
          s = transition_of(rec).next_state;
          ++collected;
        }
      }
    }
    target_steps += collected;

    for (long i = 0; i < collected * cfg.critic_replay_ratio; ++i) {
      if (algorithm == Algorithm::sac_warm) {
        soft_q_update(learner,
                      target_buffer.sample(static_cast<std::size_t>(cfg.critic_batch_size)));
      } else {
        soft_q_update(learner,
                      source_buffer.sample(static_cast<std::size_t>(cfg.critic_batch_size)),
                      &rpo.actor());
      }
    }

    if (uses_rpo) {
      for (long i = 0; i < collected * cfg.policy_replay_ratio; ++i) {
        const auto bs = static_cast<std::size_t>(cfg.policy_batch_size);
        if (rpo.next_uses_source()) {
          const auto batch = source_buffer.sample(bs);
          rpo_update<Record>(rpo, learner, {}, batch);
        } else {
          const auto batch = target_buffer.sample(bs);
          rpo_update<Record>(rpo, learner, batch, {});
        }
      }
    }

    if (uses_rto) {
      // Q and the actor are fixed during the dynamics updates of one iteration.
      const Vector v = soft_values(learner.q, rpo.actor(), alpha);
      for (long i = 0; i < collected * cfg.dynamics_replay_ratio; ++i) {
        const auto batch = target_buffer.sample(static_cast<std::size_t>(cfg.dynamics_batch_size));
        rto_loss_acc += problem.rto_step(batch, v, cfg);
        ++rto_loss_n;
        ++log.dynamics_updates;
      }
    }

    if (target_steps >= next_eval || target_steps >= cfg.target_step_budget) {
      emit();
      while (next_eval <= target_steps) next_eval += cfg.eval_interval;
    }
  }

  log.final_actor = acting();
  log.final_q = learner.q;
  log.policy_updates = rpo.calls();
  log.source_policy_updates = rpo.source_calls();
  return log;
}

}  // namespace relgap
