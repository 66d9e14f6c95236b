#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace relgap {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Tolerance used when validating probability vectors at construction time.
inline constexpr double kProbabilityTolerance = 1e-12;

/// Dense rank-3 tensor indexed [state][action][next_state], row-major in the
/// last index so that each (state, action) row is contiguous.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(int n_states, int n_actions, int n_next, double fill = 0.0)
      : n_states_(n_states), n_actions_(n_actions), n_next_(n_next) {
    if (n_states <= 0 || n_actions <= 0 || n_next <= 0) {
      throw std::invalid_argument("Tensor3: dimensions must be positive");
    }
    data_.assign(static_cast<std::size_t>(n_states) * n_actions * n_next, fill);
  }

  int n_states() const { return n_states_; }
  int n_actions() const { return n_actions_; }
  int n_next() const { return n_next_; }

  double& operator()(int s, int a, int sp) { return data_[index(s, a, sp)]; }
  double operator()(int s, int a, int sp) const { return data_[index(s, a, sp)]; }

  std::span<double> row(int s, int a) {
    return {data_.data() + index(s, a, 0), static_cast<std::size_t>(n_next_)};
  }
  std::span<const double> row(int s, int a) const {
    return {data_.data() + index(s, a, 0), static_cast<std::size_t>(n_next_)};
  }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  bool same_shape(const Tensor3& other) const {
    return n_states_ == other.n_states_ && n_actions_ == other.n_actions_ &&
           n_next_ == other.n_next_;
  }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  std::size_t index(int s, int a, int sp) const {
    return (static_cast<std::size_t>(s) * n_actions_ + a) * n_next_ + sp;
  }

  int n_states_ = 0;
  int n_actions_ = 0;
  int n_next_ = 0;
  std::vector<double> data_;
};

namespace detail {

inline void check_distribution(std::span<const double> p, const std::string& what) {
  double sum = 0.0;
  for (double x : p) {
    if (!std::isfinite(x) || x < 0.0) {
      throw std::invalid_argument(what + ": negative or non-finite probability");
    }
    sum += x;
  }
  if (std::abs(sum - 1.0) > kProbabilityTolerance) {
    throw std::invalid_argument(what + ": probabilities sum to " + std::to_string(sum));
  }
}

}  // namespace detail

/// Finite discounted MDP with rewards on (s, a, s') triples.
///
/// Immutable after construction. All invariants (stochastic rows, valid
/// initial distribution, finite rewards, discount in [0, 1)) are checked by
/// the constructor, which throws std::invalid_argument on violation.
class TabularMdp {
 public:
  TabularMdp(Tensor3 transition, Tensor3 reward, Vector initial_dist, double discount)
      : transition_(std::move(transition)),
        reward_(std::move(reward)),
        initial_dist_(std::move(initial_dist)),
        discount_(discount) {
    const int n = transition_.n_states();
    if (transition_.n_next() != n) {
      throw std::invalid_argument("TabularMdp: transition must be [S][A][S]");
    }
    if (!reward_.same_shape(transition_)) {
      throw std::invalid_argument("TabularMdp: reward shape differs from transition shape");
    }
    if (initial_dist_.size() != n) {
      throw std::invalid_argument("TabularMdp: initial distribution has wrong length");
    }
    if (!(discount_ >= 0.0 && discount_ < 1.0)) {
      throw std::invalid_argument("TabularMdp: discount must lie in [0, 1)");
    }
    for (int s = 0; s < n; ++s) {
      for (int a = 0; a < n_actions(); ++a) {
        detail::check_distribution(transition_.row(s, a),
                                   "TabularMdp: transition row (" + std::to_string(s) + "," +
                                       std::to_string(a) + ")");
      }
    }
    detail::check_distribution({initial_dist_.data(), static_cast<std::size_t>(n)},
                               "TabularMdp: initial distribution");
    r_max_ = -std::numeric_limits<double>::infinity();
    for (double r : reward_.data()) {
      if (!std::isfinite(r)) throw std::invalid_argument("TabularMdp: non-finite reward");
      r_max_ = std::max(r_max_, r);
    }
  }

  int n_states() const { return transition_.n_states(); }
  int n_actions() const { return transition_.n_actions(); }
  double discount() const { return discount_; }
  double r_max() const { return r_max_; }
  const Tensor3& transition() const { return transition_; }
  const Tensor3& reward() const { return reward_; }
  const Vector& initial_dist() const { return initial_dist_; }

  double p(int s, int a, int sp) const { return transition_(s, a, sp); }
  double r(int s, int a, int sp) const { return reward_(s, a, sp); }

  /// Same rewards, initial distribution and discount; different dynamics.
  TabularMdp with_transition(Tensor3 transition) const {
    return TabularMdp(std::move(transition), reward_, initial_dist_, discount_);
  }

  /// True when reward, initial distribution and discount coincide exactly.
  bool shares_environment_with(const TabularMdp& other) const {
    return transition_.same_shape(other.transition_) && reward_ == other.reward_ &&
           initial_dist_ == other.initial_dist_ && discount_ == other.discount_;
  }

 private:
  Tensor3 transition_;
  Tensor3 reward_;
  Vector initial_dist_;
  double discount_;
  double r_max_;
};

/// Row-stochastic action distribution per state.
class TabularPolicy {
 public:
  explicit TabularPolicy(Matrix probs) : probs_(std::move(probs)) {
    if (probs_.rows() <= 0 || probs_.cols() <= 0) {
      throw std::invalid_argument("TabularPolicy: empty policy");
    }
    for (Eigen::Index s = 0; s < probs_.rows(); ++s) {
      const Vector row = probs_.row(s).transpose();
      detail::check_distribution({row.data(), static_cast<std::size_t>(row.size())},
                                 "TabularPolicy: row " + std::to_string(s));
    }
  }

  static TabularPolicy uniform(int n_states, int n_actions) {
    return TabularPolicy(Matrix::Constant(n_states, n_actions, 1.0 / n_actions));
  }

  int n_states() const { return static_cast<int>(probs_.rows()); }
  int n_actions() const { return static_cast<int>(probs_.cols()); }
  const Matrix& probs() const { return probs_; }
  double operator()(int s, int a) const { return probs_(s, a); }

  bool full_support() const { return (probs_.array() > 0.0).all(); }

  bool matches(const TabularMdp& mdp) const {
    return n_states() == mdp.n_states() && n_actions() == mdp.n_actions();
  }

 private:
  Matrix probs_;
};

inline void require_compatible(const TabularMdp& mdp, const TabularPolicy& pi) {
  if (!pi.matches(mdp)) {
    throw std::invalid_argument("policy shape " + std::to_string(pi.n_states()) + "x" +
                                std::to_string(pi.n_actions()) + " does not match MDP " +
                                std::to_string(mdp.n_states()) + "x" +
                                std::to_string(mdp.n_actions()));
  }
}

/// State-to-state transition matrix P_pi(s, s') = sum_a pi(a|s) P(s'|s,a).
inline Matrix policy_transition(const TabularMdp& mdp, const TabularPolicy& pi) {
  require_compatible(mdp, pi);
  const int n = mdp.n_states();
  Matrix out = Matrix::Zero(n, n);
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < mdp.n_actions(); ++a) {
      const double w = pi(s, a);
      if (w == 0.0) continue;
      const auto row = mdp.transition().row(s, a);
      for (int sp = 0; sp < n; ++sp) out(s, sp) += w * row[sp];
    }
  }
  return out;
}

/// Expected one-step reward R(s, a) = sum_s' P(s'|s,a) r(s,a,s').
inline Matrix expected_reward(const TabularMdp& mdp) {
  Matrix out(mdp.n_states(), mdp.n_actions());
  for (int s = 0; s < mdp.n_states(); ++s) {
    for (int a = 0; a < mdp.n_actions(); ++a) {
      double acc = 0.0;
      for (int sp = 0; sp < mdp.n_states(); ++sp) acc += mdp.p(s, a, sp) * mdp.r(s, a, sp);
      out(s, a) = acc;
    }
  }
  return out;
}

/// Broadcasts a reward table r(s, a) onto all next states.
inline Tensor3 broadcast_reward(const Matrix& r_sa) {
  const int n = static_cast<int>(r_sa.rows());
  Tensor3 out(n, static_cast<int>(r_sa.cols()), n);
  for (int s = 0; s < n; ++s)
    for (int a = 0; a < r_sa.cols(); ++a)
      for (int sp = 0; sp < n; ++sp) out(s, a, sp) = r_sa(s, a);
  return out;
}

}  // namespace relgap
