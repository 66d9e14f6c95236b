#pragma once

#include "relgap/mdp.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace relgap {

struct ValueBundle {
  Vector v;
  Matrix q;
  Matrix advantage;
  double j = 0.0;
};

struct SoftValueBundle {
  Matrix q_soft;
  Vector v_soft;
  double temperature = 0.0;
};

struct OccupancyReport {
  Vector d_state;          // normalized, sums to one
  Matrix d_state_action;   // d_state(s) * pi(a|s)
  std::vector<Vector> time_marginals;  // p_0 .. p_T
  int horizon_T = 0;
};

namespace detail {

/// Solves (I - gamma * M) x = b for a row-stochastic M.
inline Vector solve_discounted(const Matrix& m, double gamma, const Vector& b) {
  const Eigen::Index n = m.rows();
  Matrix lhs = Matrix::Identity(n, n) - gamma * m;
  Eigen::PartialPivLU<Matrix> lu(lhs);
  Vector x = lu.solve(b);
  if (!x.allFinite() || (lhs * x - b).lpNorm<Eigen::Infinity>() > 1e-8 * (1.0 + b.lpNorm<Eigen::Infinity>())) {
    throw std::runtime_error("internal error: discounted linear system is singular");
  }
  return x;
}

/// q(s,a) = sum_s' P(s'|s,a) (r(s,a,s') + gamma v(s')).
inline Matrix backup(const TabularMdp& mdp, const Vector& v) {
  Matrix q(mdp.n_states(), mdp.n_actions());
  const double g = mdp.discount();
  for (int s = 0; s < mdp.n_states(); ++s) {
    for (int a = 0; a < mdp.n_actions(); ++a) {
      double acc = 0.0;
      for (int sp = 0; sp < mdp.n_states(); ++sp) {
        acc += mdp.p(s, a, sp) * (mdp.r(s, a, sp) + g * v(sp));
      }
      q(s, a) = acc;
    }
  }
  return q;
}

}  // namespace detail

/// Exact V, Q, A and J of a fixed policy by a direct linear solve.
inline ValueBundle policy_evaluation(const TabularMdp& mdp, const TabularPolicy& pi) {
  require_compatible(mdp, pi);
  const Matrix p_pi = policy_transition(mdp, pi);
  const Vector r_pi = (pi.probs().array() * expected_reward(mdp).array()).rowwise().sum();

  ValueBundle out;
  out.v = detail::solve_discounted(p_pi, mdp.discount(), r_pi);
  out.q = detail::backup(mdp, out.v);
  out.advantage = out.q.colwise() - out.v;
  out.j = mdp.initial_dist().dot(out.v);
  return out;
}

/// Per-state entropy-weighted soft value of a policy given q.
inline Vector soft_state_value(const Matrix& q, const Matrix& pi, double alpha) {
  Vector v(q.rows());
  for (Eigen::Index s = 0; s < q.rows(); ++s) {
    double acc = 0.0;
    for (Eigen::Index a = 0; a < q.cols(); ++a) {
      const double p = pi(s, a);
      if (p > 0.0) acc += p * (q(s, a) - alpha * std::log(p));
    }
    v(s) = acc;
  }
  return v;
}

/// Soft Q of a fixed full-support policy at temperature alpha.
///
/// The soft Bellman fixed point is linear in V: V = r_pi + alpha H_pi + gamma P_pi V,
/// so it is obtained by one direct solve followed by a backup.
inline SoftValueBundle soft_policy_evaluation(const TabularMdp& mdp, const TabularPolicy& pi,
                                              double alpha) {
  require_compatible(mdp, pi);
  if (!(alpha > 0.0)) throw std::invalid_argument("soft_policy_evaluation: alpha must be > 0");
  if (!pi.full_support()) {
    throw std::invalid_argument("soft_policy_evaluation: policy has a zero-probability action");
  }
  const Matrix& probs = pi.probs();
  const Vector entropy = -(probs.array() * probs.array().log()).rowwise().sum();
  const Vector r_pi = (probs.array() * expected_reward(mdp).array()).rowwise().sum();
  const Vector rhs = r_pi + alpha * entropy;

  SoftValueBundle out;
  out.temperature = alpha;
  out.v_soft = detail::solve_discounted(policy_transition(mdp, pi), mdp.discount(), rhs);
  out.q_soft = detail::backup(mdp, out.v_soft);
  return out;
}

/// Entropy-regularized return rho . V_soft.
inline double soft_return(const TabularMdp& mdp, const TabularPolicy& pi, double alpha) {
  return mdp.initial_dist().dot(soft_policy_evaluation(mdp, pi, alpha).v_soft);
}

/// Smallest T with gamma^(T+1) / (1 - gamma) < tol.
inline int truncation_horizon(double gamma, double tol) {
  if (!(tol > 0.0)) throw std::invalid_argument("truncation tolerance must be > 0");
  int t = 0;
  double tail = gamma / (1.0 - gamma);
  while (!(tail < tol)) {
    tail *= gamma;
    ++t;
  }
  return t;
}

/// State marginals p_0 .. p_T obtained by forward propagation from rho.
inline std::vector<Vector> time_marginals(const TabularMdp& mdp, const TabularPolicy& pi,
                                          int horizon) {
  const Matrix p_pi_t = policy_transition(mdp, pi).transpose();
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(horizon) + 1);
  out.push_back(mdp.initial_dist());
  for (int t = 1; t <= horizon; ++t) out.push_back(p_pi_t * out.back());
  return out;
}

inline OccupancyReport discounted_occupancy(const TabularMdp& mdp, const TabularPolicy& pi,
                                            double truncation_tol = 1e-10) {
  require_compatible(mdp, pi);
  const double g = mdp.discount();
  OccupancyReport out;
  out.horizon_T = truncation_horizon(g, truncation_tol);
  const Matrix p_pi = policy_transition(mdp, pi);
  out.d_state = detail::solve_discounted(p_pi.transpose(), g, (1.0 - g) * mdp.initial_dist());
  out.d_state_action = pi.probs().array().colwise() * out.d_state.array();
  out.time_marginals = time_marginals(mdp, pi, out.horizon_T);
  return out;
}

/// pi(a|s) proportional to exp(q(s,a) / alpha), stabilized per state.
inline TabularPolicy soft_greedy_improvement(const Matrix& q_soft, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("soft_greedy_improvement: alpha must be > 0");
  if (!q_soft.allFinite()) throw std::invalid_argument("soft_greedy_improvement: non-finite q");
  Matrix probs(q_soft.rows(), q_soft.cols());
  for (Eigen::Index s = 0; s < q_soft.rows(); ++s) {
    const double m = q_soft.row(s).maxCoeff();
    double z = 0.0;
    for (Eigen::Index a = 0; a < q_soft.cols(); ++a) {
      probs(s, a) = std::exp((q_soft(s, a) - m) / alpha);
      z += probs(s, a);
    }
    probs.row(s) /= z;
  }
  return TabularPolicy(std::move(probs));
}

/// Soft-optimal Q at temperature alpha by iterating the soft Bellman optimality
/// operator until the relative sup-norm change is below tol.
inline Matrix soft_value_iteration(const TabularMdp& mdp, double alpha, double tol = 1e-12,
                                   int max_iterations = 1'000'000) {
  if (!(alpha > 0.0)) throw std::invalid_argument("soft_value_iteration: alpha must be > 0");
  Matrix q = Matrix::Zero(mdp.n_states(), mdp.n_actions());
  for (int it = 0; it < max_iterations; ++it) {
    Vector v(mdp.n_states());
    for (int s = 0; s < mdp.n_states(); ++s) {
      const double m = q.row(s).maxCoeff();
      v(s) = m + alpha * std::log(((q.row(s).array() - m) / alpha).exp().sum());
    }
    Matrix next = detail::backup(mdp, v);
    const double change = (next - q).lpNorm<Eigen::Infinity>();
    q = std::move(next);
    if (change <= tol * (1.0 + q.lpNorm<Eigen::Infinity>())) return q;
  }
  throw std::runtime_error("soft_value_iteration: no convergence");
}

}  // namespace relgap
