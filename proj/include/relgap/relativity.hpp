#pragma once

// Exact relativity-gap decomposition, surrogate objectives, divergence
// constants, and numerical checks of the associated bounds on tabular MDPs.
//
// Every infinite trajectory expectation is realized through discounted
// occupancies: sum_t gamma^t E_{p_t}[f] = E_d[f] / (1 - gamma).

#include "relgap/instances.hpp"
#include "relgap/mdp.hpp"
#include "relgap/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace relgap {

/// Slack below which a bound check is reported as violated.
inline constexpr double kBoundSlackTolerance = -1e-9;

struct GapReport {
  double total_gap = 0.0;         // dynamics_induced + policy_induced
  double dynamics_induced = 0.0;  // J(P', pi) - J(P, pi) via the telescoping form
  double policy_induced = 0.0;    // J(P, pi) - J(P, pi') via the advantage form
  double direct_total = 0.0;      // J(P', pi) - J(P, pi') from two evaluations
};

struct BoundConstants {
  double delta1 = 0.0;   // max TV between dynamics
  double delta2 = 0.0;   // max TV between policies
  double eps_adv = 0.0;  // max |A^{P,pi}|
  double r_max = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;
  double c3 = 0.0;            // model-step divergence inside the min
  double c3_main_text = 0.0;  // policy divergence inside the min (telemetry only)
};

struct BoundCheckReport {
  std::uint64_t instance_id = 0;
  std::string bound_name;
  double lhs = 0.0;
  double rhs = 0.0;
  double slack = 0.0;
  bool holds = false;
};

namespace detail {

inline void require_shared_environment(const TabularMdp& a, const TabularMdp& b,
                                       const char* what) {
  if (a.n_states() != b.n_states() || a.n_actions() != b.n_actions()) {
    throw std::invalid_argument(std::string(what) + ": MDP shapes differ");
  }
  if (!(a.reward() == b.reward())) {
    throw std::invalid_argument(std::string(what) + ": reward tensors differ");
  }
  if (a.initial_dist() != b.initial_dist()) {
    throw std::invalid_argument(std::string(what) + ": initial distributions differ");
  }
  if (a.discount() != b.discount()) {
    throw std::invalid_argument(std::string(what) + ": discounts differ");
  }
}

inline void require_same_shape(const TabularMdp& a, const TabularMdp& b, const char* what) {
  if (a.n_states() != b.n_states() || a.n_actions() != b.n_actions()) {
    throw std::invalid_argument(std::string(what) + ": MDP shapes differ");
  }
}

/// E_{s' ~ dyn(.|s,a)} [r(s,a,s') + gamma v(s')] for every (s, a), with the
/// rewards and discount of `env`.
inline Matrix one_step_target(const TabularMdp& env, const Tensor3& dyn, const Vector& v) {
  const int n = env.n_states();
  Matrix out(n, env.n_actions());
  for (int s = 0; s < n; ++s)
    for (int a = 0; a < env.n_actions(); ++a) {
      const auto row = dyn.row(s, a);
      double acc = 0.0;
      for (int sp = 0; sp < n; ++sp) acc += row[sp] * (env.r(s, a, sp) + env.discount() * v(sp));
      out(s, a) = acc;
    }
  return out;
}

inline BoundCheckReport lower_bound_report(std::uint64_t id, std::string name, double lhs,
                                           double rhs) {
  const double slack = lhs - rhs;
  return {id, std::move(name), lhs, rhs, slack, slack >= kBoundSlackTolerance};
}

inline BoundCheckReport upper_bound_report(std::uint64_t id, std::string name, double lhs,
                                           double rhs) {
  const double slack = rhs - lhs;
  return {id, std::move(name), lhs, rhs, slack, slack >= kBoundSlackTolerance};
}

}  // namespace detail

/// Decomposes J(P', pi) - J(P, pi') into its dynamics- and policy-induced parts.
inline GapReport relativity_gap(const TabularMdp& p_prime, const TabularPolicy& pi,
                                const TabularMdp& p, const TabularPolicy& pi_prime) {
  detail::require_shared_environment(p_prime, p, "relativity_gap");
  require_compatible(p, pi);
  require_compatible(p, pi_prime);
  const double scale = 1.0 / (1.0 - p.discount());

  const ValueBundle vals_p_pi = policy_evaluation(p, pi);
  const OccupancyReport occ_prime = discounted_occupancy(p_prime, pi);
  const Matrix bracket = detail::one_step_target(p, p_prime.transition(), vals_p_pi.v) - vals_p_pi.q;
  const double dynamics_induced = scale * (occ_prime.d_state_action.array() * bracket.array()).sum();

  const ValueBundle vals_p_pi_prime = policy_evaluation(p, pi_prime);
  const OccupancyReport occ_p = discounted_occupancy(p, pi);
  const double policy_induced =
      scale * (occ_p.d_state_action.array() * vals_p_pi_prime.advantage.array()).sum();

  GapReport out;
  out.dynamics_induced = dynamics_induced;
  out.policy_induced = policy_induced;
  out.total_gap = dynamics_induced + policy_induced;
  out.direct_total = policy_evaluation(p_prime, pi).j - vals_p_pi_prime.j;
  return out;
}

/// max_{s,a} 1/2 sum_s' |P'(s'|s,a) - P(s'|s,a)|.
inline double tv_divergence_dynamics(const TabularMdp& p_prime, const TabularMdp& p) {
  detail::require_same_shape(p_prime, p, "tv_divergence_dynamics");
  double worst = 0.0;
  for (int s = 0; s < p.n_states(); ++s)
    for (int a = 0; a < p.n_actions(); ++a) {
      const auto x = p_prime.transition().row(s, a);
      const auto y = p.transition().row(s, a);
      double l1 = 0.0;
      for (std::size_t k = 0; k < x.size(); ++k) l1 += std::abs(x[k] - y[k]);
      worst = std::max(worst, 0.5 * l1);
    }
  return std::min(worst, 1.0);
}

/// max_s 1/2 sum_a |pi'(a|s) - pi(a|s)|.
inline double tv_divergence_policy(const TabularPolicy& pi_prime, const TabularPolicy& pi) {
  if (pi_prime.n_states() != pi.n_states() || pi_prime.n_actions() != pi.n_actions()) {
    throw std::invalid_argument("tv_divergence_policy: policy shapes differ");
  }
  const double worst =
      0.5 * (pi_prime.probs() - pi.probs()).cwiseAbs().rowwise().sum().maxCoeff();
  return std::min(worst, 1.0);
}

/// L_{pi'}(pi): states from (P', pi'), actions from pi, values under (P, pi').
inline double surrogate_policy(const TabularMdp& p_prime, const TabularMdp& p,
                               const TabularPolicy& pi, const TabularPolicy& pi_prime) {
  detail::require_same_shape(p_prime, p, "surrogate_policy");
  require_compatible(p, pi);
  require_compatible(p, pi_prime);
  const ValueBundle vals = policy_evaluation(p, pi_prime);
  const OccupancyReport occ = discounted_occupancy(p_prime, pi_prime);
  const Matrix bracket = detail::one_step_target(p, p_prime.transition(), vals.v) - vals.q;
  const Matrix weights = pi.probs().array().colwise() * occ.d_state.array();
  return (weights.array() * bracket.array()).sum() / (1.0 - p.discount());
}

/// L_{phi'}(phi): occupancy of (P', pi), next-state values under (P_phi', pi).
inline double surrogate_dynamics(const TabularMdp& p_prime, const TabularMdp& p_phi,
                                 const TabularMdp& p_phi_old, const TabularPolicy& pi) {
  detail::require_same_shape(p_prime, p_phi, "surrogate_dynamics");
  detail::require_same_shape(p_prime, p_phi_old, "surrogate_dynamics");
  require_compatible(p_prime, pi);
  const Vector v_old = policy_evaluation(p_phi_old, pi).v;
  const OccupancyReport occ = discounted_occupancy(p_prime, pi);
  const Matrix diff = detail::one_step_target(p_phi, p_prime.transition(), v_old) -
                      detail::one_step_target(p_phi, p_phi.transition(), v_old);
  return (occ.d_state_action.array() * diff.array()).sum() / (1.0 - p_prime.discount());
}

inline double theorem2_constant(double gamma, double r_max, double delta1, double delta2) {
  const double one_minus = 1.0 - gamma;
  return 4.0 * gamma * r_max * delta1 / (one_minus * one_minus) *
         std::min(delta2 * (gamma * gamma + 2.0) / one_minus, 1.0 + delta2 / one_minus);
}

inline double proposition1_constant(double gamma, double r_max, double eps_adv, double delta1,
                                    double delta2) {
  const double one_minus = 1.0 - gamma;
  const double sq = one_minus * one_minus;
  return 2.0 * gamma * eps_adv * (delta1 + 2.0 * delta2 * delta2) / sq +
         4.0 * gamma * r_max / sq *
             std::min(delta2 * (gamma * gamma + 2.0) / one_minus, 1.0 + delta2 / one_minus);
}

/// 4 gamma delta_outer r_max / (1-gamma)^2 * min(delta_inner (gamma^2+1)/(1-gamma), 1).
inline double theorem3_constant(double gamma, double r_max, double delta_outer,
                                double delta_inner) {
  const double one_minus = 1.0 - gamma;
  return 4.0 * gamma * delta_outer * r_max / (one_minus * one_minus) *
         std::min(delta_inner * (gamma * gamma + 1.0) / one_minus, 1.0);
}

/// Divergences and bound constants for (P', P, pi, pi'). P plays the role of
/// the current model P_phi; `p_phi_old` is the previous model P_phi' and
/// defaults to P itself.
inline BoundConstants bound_constants(const TabularMdp& p_prime, const TabularMdp& p,
                                      const TabularPolicy& pi, const TabularPolicy& pi_prime,
                                      const TabularMdp* p_phi_old = nullptr) {
  detail::require_same_shape(p_prime, p, "bound_constants");
  require_compatible(p, pi);
  require_compatible(p, pi_prime);
  const double g = p.discount();
  BoundConstants out;
  out.delta1 = tv_divergence_dynamics(p_prime, p);
  out.delta2 = tv_divergence_policy(pi_prime, pi);
  out.eps_adv = policy_evaluation(p, pi).advantage.cwiseAbs().maxCoeff();
  out.r_max = std::max(p.r_max(), p_prime.r_max());
  out.c1 = theorem2_constant(g, out.r_max, out.delta1, out.delta2);
  out.c2 = proposition1_constant(g, out.r_max, out.eps_adv, out.delta1, out.delta2);
  const double step = p_phi_old ? tv_divergence_dynamics(p, *p_phi_old) : 0.0;
  out.c3 = theorem3_constant(g, out.r_max, out.delta1, step);
  out.c3_main_text = theorem3_constant(g, out.r_max, out.delta1, out.delta2);
  return out;
}

/// One seeded verification instance: target P', source P, current model
/// P_phi with its previous snapshot P_phi_old, and two full-support policies.
struct VerificationInstance {
  std::uint64_t seed = 0;
  TabularMdp p_prime;
  TabularMdp p;
  TabularMdp p_phi;
  TabularMdp p_phi_old;
  TabularPolicy pi;
  TabularPolicy pi_prime;
};

struct InstanceRanges {
  int min_states = 2;
  int max_states = 10;
  int min_actions = 2;
  int max_actions = 4;
  std::vector<double> gammas{0.5, 0.9, 0.95};
  double max_mix = 1.0;
  double policy_floor = 1e-3;
};

/// Builds the instance for `seed`. When `base` is given it replaces the
/// generated source MDP (its reward, rho and discount are shared by all
/// dynamics of the instance).
inline VerificationInstance make_verification_instance(std::uint64_t seed,
                                                       const InstanceRanges& ranges = {},
                                                       const TabularMdp* base = nullptr) {
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + 0x2545F4914F6CDD1DULL);
  int n = uniform_int(rng, ranges.min_states, ranges.max_states);
  int m = uniform_int(rng, ranges.min_actions, ranges.max_actions);
  const double gamma = ranges.gammas.at(
      static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(ranges.gammas.size()) - 1)));
  const double mix = ranges.max_mix * uniform01(rng);

  MdpPair pair = random_mdp_pair(rng(), n, m, gamma, mix);
  if (base) {
    n = base->n_states();
    m = base->n_actions();
    Rng local(rng());
    pair = MdpPair{*base, base->with_transition(
                              mix_transition(base->transition(), random_transition(local, n, m), mix))};
  }
  const TabularMdp& p = pair.source;
  const TabularMdp& p_prime = pair.target;

  // Model step: part of the way from P toward P', plus a small independent wobble.
  const double step = uniform01(rng);
  const double wobble = 0.05 * uniform01(rng);
  Tensor3 phi = mix_transition(p.transition(), p_prime.transition(), step);
  phi = mix_transition(phi, random_transition(rng, n, m), wobble);

  TabularPolicy pi = random_policy(rng, n, m, ranges.policy_floor);
  const double policy_shift = uniform01(rng);
  TabularPolicy pi_prime =
      mix_policy(pi, random_policy(rng, n, m, ranges.policy_floor), policy_shift);

  TabularMdp p_phi = p.with_transition(std::move(phi));
  return {seed, p_prime, p, std::move(p_phi), p, std::move(pi), std::move(pi_prime)};
}

/// Delta^{P',P}(pi) >= L_{pi'}(pi) - C1.
inline BoundCheckReport verify_theorem2(const VerificationInstance& inst) {
  const double delta = policy_evaluation(inst.p_prime, inst.pi).j -
                       policy_evaluation(inst.p, inst.pi).j;
  const double surrogate = surrogate_policy(inst.p_prime, inst.p, inst.pi, inst.pi_prime);
  const BoundConstants k = bound_constants(inst.p_prime, inst.p, inst.pi, inst.pi_prime);
  return detail::lower_bound_report(inst.seed, "theorem2", delta, surrogate - k.c1);
}

/// J(P', pi) - J(P, pi') >= importance-weighted one-step surrogate - C2.
inline BoundCheckReport verify_proposition1(const VerificationInstance& inst) {
  const TabularMdp& p = inst.p;
  const double gap = policy_evaluation(inst.p_prime, inst.pi).j -
                     policy_evaluation(p, inst.pi_prime).j;
  const Vector v = policy_evaluation(p, inst.pi_prime).v;
  const OccupancyReport occ = discounted_occupancy(inst.p_prime, inst.pi_prime);
  const Matrix next = detail::one_step_target(p, inst.p_prime.transition(), v);
  double expectation = 0.0;
  for (int s = 0; s < p.n_states(); ++s)
    for (int a = 0; a < p.n_actions(); ++a) {
      const double behaviour = inst.pi_prime(s, a);
      const double ratio = inst.pi(s, a) / behaviour;
      expectation += occ.d_state(s) * behaviour * ratio * (next(s, a) - v(s));
    }
  expectation /= 1.0 - p.discount();
  const BoundConstants k = bound_constants(inst.p_prime, p, inst.pi, inst.pi_prime);
  return detail::lower_bound_report(inst.seed, "proposition1", gap, expectation - k.c2);
}

/// |Delta^{P',P_phi}(pi)| <= |L_{phi'}(phi)| + C3.
inline BoundCheckReport verify_theorem3(const VerificationInstance& inst) {
  const double delta = policy_evaluation(inst.p_prime, inst.pi).j -
                       policy_evaluation(inst.p_phi, inst.pi).j;
  const double surrogate = surrogate_dynamics(inst.p_prime, inst.p_phi, inst.p_phi_old, inst.pi);
  const BoundConstants k =
      bound_constants(inst.p_prime, inst.p_phi, inst.pi, inst.pi_prime, &inst.p_phi_old);
  return detail::upper_bound_report(inst.seed, "theorem3", std::abs(delta),
                                    std::abs(surrogate) + k.c3);
}

/// Same check with the policy divergence inside the min; telemetry only.
inline BoundCheckReport theorem3_main_text_variant(const VerificationInstance& inst) {
  const double delta = policy_evaluation(inst.p_prime, inst.pi).j -
                       policy_evaluation(inst.p_phi, inst.pi).j;
  const double surrogate = surrogate_dynamics(inst.p_prime, inst.p_phi, inst.p_phi_old, inst.pi);
  const BoundConstants k =
      bound_constants(inst.p_prime, inst.p_phi, inst.pi, inst.pi_prime, &inst.p_phi_old);
  return detail::upper_bound_report(inst.seed, "theorem3_main_text", std::abs(delta),
                                    std::abs(surrogate) + k.c3_main_text);
}

/// sum_s |p_t^{P',pi} - p_t^{P,pi}| <= 2 t delta1 and
/// sum_s |p_t^{P,pi'} - p_t^{P,pi}| <= 2 t delta2 for every t <= t_max.
/// Reports the tightest of the 2 (t_max + 1) checks.
inline BoundCheckReport verify_marginal_lemma(const VerificationInstance& inst, int t_max) {
  if (t_max < 0) throw std::invalid_argument("verify_marginal_lemma: t_max must be >= 0");
  const double delta1 = tv_divergence_dynamics(inst.p_prime, inst.p);
  const double delta2 = tv_divergence_policy(inst.pi_prime, inst.pi);
  const auto base = time_marginals(inst.p, inst.pi, t_max);
  const auto dyn = time_marginals(inst.p_prime, inst.pi, t_max);
  const auto pol = time_marginals(inst.p, inst.pi_prime, t_max);

  BoundCheckReport worst;
  worst.slack = std::numeric_limits<double>::infinity();
  for (int t = 0; t <= t_max; ++t) {
    const double l_dyn = (dyn[t] - base[t]).lpNorm<1>();
    const double l_pol = (pol[t] - base[t]).lpNorm<1>();
    for (auto [lhs, rhs] : {std::pair{l_dyn, 2.0 * t * delta1}, std::pair{l_pol, 2.0 * t * delta2}}) {
      if (rhs - lhs < worst.slack) {
        worst = detail::upper_bound_report(inst.seed, "marginal_lemma", lhs, rhs);
      }
    }
  }
  return worst;
}

/// Per-state |V^{P',pi} - V^{P,pi}| <= min(2 r_max delta1 / (1-gamma)^2, 2 r_max / (1-gamma))
/// and the analogous policy statement with delta2. Reports the tightest state.
inline BoundCheckReport verify_value_lemma(const VerificationInstance& inst) {
  const double g = inst.p.discount();
  const double r_max = std::max(inst.p.r_max(), inst.p_prime.r_max());
  const double delta1 = tv_divergence_dynamics(inst.p_prime, inst.p);
  const double delta2 = tv_divergence_policy(inst.pi_prime, inst.pi);
  const Vector v = policy_evaluation(inst.p, inst.pi).v;
  const Vector v_dyn = policy_evaluation(inst.p_prime, inst.pi).v;
  const Vector v_pol = policy_evaluation(inst.p, inst.pi_prime).v;
  const double cap = 2.0 * r_max / (1.0 - g);
  const double rhs_dyn = std::min(2.0 * r_max * delta1 / ((1.0 - g) * (1.0 - g)), cap);
  const double rhs_pol = std::min(2.0 * r_max * delta2 / ((1.0 - g) * (1.0 - g)), cap);

  BoundCheckReport worst;
  worst.slack = std::numeric_limits<double>::infinity();
  for (int s = 0; s < inst.p.n_states(); ++s) {
    for (auto [lhs, rhs] : {std::pair{std::abs(v_dyn(s) - v(s)), rhs_dyn},
                            std::pair{std::abs(v_pol(s) - v(s)), rhs_pol}}) {
      if (rhs - lhs < worst.slack) {
        worst = detail::upper_bound_report(inst.seed, "value_lemma", lhs, rhs);
      }
    }
  }
  return worst;
}

/// Gap identity as a check: |total_gap - direct_total| <= 1e-8.
inline BoundCheckReport verify_gap_identity(const VerificationInstance& inst) {
  const GapReport gap = relativity_gap(inst.p_prime, inst.pi, inst.p, inst.pi_prime);
  return detail::upper_bound_report(inst.seed, "gap_identity",
                                    std::abs(gap.total_gap - gap.direct_total), 1e-8);
}

}  // namespace relgap
