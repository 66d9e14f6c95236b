#include "relgap/instances.hpp"
#include "relgap/mdp.hpp"
#include "relgap/mdp_io.hpp"
#include "relgap/solvers.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace relgap;

namespace {

// ---------------------------------------------------------------------------
// Oracles. Deliberately naive: loops over explicit sums, no linear algebra.
// ---------------------------------------------------------------------------

/// J by finite-horizon dynamic programming, truncated at T with
/// gamma^T r_max / (1 - gamma) < tol.
double truncated_dp_return(const TabularMdp& mdp, const TabularPolicy& pi, double tol) {
  const int n = mdp.n_states();
  const double g = mdp.discount();
  double r_abs = 0.0;
  for (double r : mdp.reward().data()) r_abs = std::max(r_abs, std::abs(r));
  int horizon = 0;
  while (std::pow(g, horizon) * r_abs / (1.0 - g) >= tol) ++horizon;
  std::vector<double> v(n, 0.0);
  for (int t = 0; t < horizon; ++t) {
    std::vector<double> next(n, 0.0);
    for (int s = 0; s < n; ++s)
      for (int a = 0; a < mdp.n_actions(); ++a)
        for (int sp = 0; sp < n; ++sp)
          next[s] += pi(s, a) * mdp.p(s, a, sp) * (mdp.r(s, a, sp) + g * v[sp]);
    v = next;
  }
  double j = 0.0;
  for (int s = 0; s < n; ++s) j += mdp.initial_dist()(s) * v[s];
  return j;
}

/// Soft Q by repeated application of the fixed-policy soft Bellman operator.
Matrix soft_fixed_point_iteration(const TabularMdp& mdp, const TabularPolicy& pi, double alpha,
                                  int sweeps) {
  const int n = mdp.n_states();
  const int m = mdp.n_actions();
  Matrix q = Matrix::Zero(n, m);
  for (int it = 0; it < sweeps; ++it) {
    std::vector<double> v(n, 0.0);
    for (int s = 0; s < n; ++s)
      for (int a = 0; a < m; ++a) v[s] += pi(s, a) * (q(s, a) - alpha * std::log(pi(s, a)));
    Matrix next(n, m);
    for (int s = 0; s < n; ++s)
      for (int a = 0; a < m; ++a) {
        double acc = 0.0;
        for (int sp = 0; sp < n; ++sp) acc += mdp.p(s, a, sp) * (mdp.r(s, a, sp) + mdp.discount() * v[sp]);
        next(s, a) = acc;
      }
    q = next;
  }
  return q;
}

/// Monte-Carlo discounted return over rollouts truncated where the tail is
/// below 1e-12. Returns (mean, standard error).
std::pair<double, double> monte_carlo_return(const TabularMdp& mdp, const TabularPolicy& pi,
                                             int episodes, std::uint64_t seed) {
  Rng rng(seed);
  auto draw = [&](auto probs_at, int n) {
    double u = uniform01(rng);
    for (int i = 0; i + 1 < n; ++i) {
      u -= probs_at(i);
      if (u < 0.0) return i;
    }
    return n - 1;
  };
  const int n = mdp.n_states();
  const int m = mdp.n_actions();
  int horizon = 0;
  while (std::pow(mdp.discount(), horizon) / (1.0 - mdp.discount()) > 1e-12) ++horizon;
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int e = 0; e < episodes; ++e) {
    int s = draw([&](int i) { return mdp.initial_dist()(i); }, n);
    double ret = 0.0;
    double disc = 1.0;
    for (int t = 0; t < horizon; ++t) {
      const int a = draw([&](int i) { return pi(s, i); }, m);
      const int sp = draw([&](int i) { return mdp.p(s, a, i); }, n);
      ret += disc * mdp.r(s, a, sp);
      disc *= mdp.discount();
      s = sp;
    }
    sum += ret;
    sum_sq += ret * ret;
  }
  const double mean = sum / episodes;
  const double var = (sum_sq / episodes - mean * mean) * episodes / (episodes - 1.0);
  return {mean, std::sqrt(var / episodes)};
}

TabularMdp single_state(double reward, double gamma, int n_actions = 1) {
  Tensor3 p(1, n_actions, 1, 1.0);
  Tensor3 r(1, n_actions, 1, reward);
  return TabularMdp(p, r, Vector::Ones(1), gamma);
}

TabularMdp seeded_mdp(std::uint64_t seed, int n, int m, double gamma) {
  return random_mdp_pair(seed, n, m, gamma, 0.0).source;
}

}  // namespace

// ---------------------------------------------------------------------------
// Construction invariants
// ---------------------------------------------------------------------------

TEST(TabularMdp, RejectsInvalidComponents) {
  Tensor3 p(2, 1, 2, 0.5);
  Tensor3 r(2, 1, 2, 0.0);
  Vector rho = Vector::Constant(2, 0.5);
  EXPECT_NO_THROW(TabularMdp(p, r, rho, 0.9));
  EXPECT_THROW(TabularMdp(p, r, rho, 1.0), std::invalid_argument);
  EXPECT_NO_THROW(TabularMdp(p, r, rho, 0.0));

  Tensor3 bad = p;
  bad(0, 0, 0) = 0.6;
  EXPECT_THROW(TabularMdp(bad, r, rho, 0.9), std::invalid_argument);
  bad(0, 0, 0) = -0.1;
  bad(0, 0, 1) = 1.1;
  EXPECT_THROW(TabularMdp(bad, r, rho, 0.9), std::invalid_argument);

  EXPECT_THROW(TabularMdp(p, r, Vector::Constant(2, 0.6), 0.9), std::invalid_argument);
  Tensor3 r_nan = r;
  r_nan(1, 0, 1) = std::nan("");
  EXPECT_THROW(TabularMdp(p, r_nan, rho, 0.9), std::invalid_argument);
}

TEST(TabularMdp, ExposesRewardMaximum) {
  Tensor3 p(2, 1, 2, 0.5);
  Tensor3 r(2, 1, 2, -1.0);
  r(1, 0, 0) = 3.5;
  EXPECT_EQ(TabularMdp(p, r, Vector::Constant(2, 0.5), 0.9).r_max(), 3.5);
}

TEST(TabularPolicy, RowsMustBeDistributions) {
  Matrix probs(2, 2);
  probs << 0.5, 0.5, 0.2, 0.8;
  EXPECT_NO_THROW(TabularPolicy{probs});
  probs(1, 1) = 0.7;
  EXPECT_THROW(TabularPolicy{probs}, std::invalid_argument);
}

// ---------------------------------------------------------------------------
// policy_evaluation
// ---------------------------------------------------------------------------

TEST(PolicyEvaluation, SingleStateGeometricSeries) {
  const auto mdp = single_state(1.0, 0.9);
  const auto vb = policy_evaluation(mdp, TabularPolicy::uniform(1, 1));
  EXPECT_NEAR(vb.v(0), 10.0, 1e-12);
  EXPECT_NEAR(vb.j, 10.0, 1e-12);
}

TEST(PolicyEvaluation, ZeroRewardGivesZeroValues) {
  const auto base = seeded_mdp(3, 4, 2, 0.9);
  const TabularMdp mdp(base.transition(), Tensor3(4, 2, 4, 0.0), base.initial_dist(), 0.9);
  const auto vb = policy_evaluation(mdp, TabularPolicy::uniform(4, 2));
  EXPECT_EQ(vb.v.lpNorm<Eigen::Infinity>(), 0.0);
  EXPECT_EQ(vb.q.lpNorm<Eigen::Infinity>(), 0.0);
  EXPECT_EQ(vb.advantage.lpNorm<Eigen::Infinity>(), 0.0);
  EXPECT_EQ(vb.j, 0.0);
}

TEST(PolicyEvaluation, MatchesTruncatedDynamicProgramming) {
  const auto mdp = seeded_mdp(11, 5, 3, 0.9);
  Rng rng(5);
  const auto pi = random_policy(rng, 5, 3);
  EXPECT_NEAR(policy_evaluation(mdp, pi).j, truncated_dp_return(mdp, pi, 1e-9), 1e-8);
}

TEST(PolicyEvaluation, BundleInvariants) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto mdp = seeded_mdp(seed, 6, 3, 0.95);
    Rng rng(seed + 100);
    const auto pi = random_policy(rng, 6, 3);
    const auto vb = policy_evaluation(mdp, pi);
    const Vector v_from_q = (pi.probs().array() * vb.q.array()).rowwise().sum();
    EXPECT_LE((v_from_q - vb.v).lpNorm<Eigen::Infinity>(), 1e-10);
    EXPECT_NEAR(vb.j, mdp.initial_dist().dot(vb.v), 1e-10);
    for (int s = 0; s < 6; ++s)
      for (int a = 0; a < 3; ++a) EXPECT_EQ(vb.advantage(s, a), vb.q(s, a) - vb.v(s));
  }
}

TEST(PolicyEvaluation, RejectsShapeMismatch) {
  const auto mdp = seeded_mdp(1, 3, 2, 0.9);
  EXPECT_THROW(policy_evaluation(mdp, TabularPolicy::uniform(3, 3)), std::invalid_argument);
}

TEST(PolicyEvaluation, MonteCarloWithinThreeStandardErrors) {
  for (std::uint64_t seed : {2u, 9u}) {
    const auto mdp = seeded_mdp(seed, 4, 2, 0.8);
    Rng rng(seed);
    const auto pi = random_policy(rng, 4, 2);
    const auto [mean, se] = monte_carlo_return(mdp, pi, 100000, seed + 1);
    EXPECT_LE(std::abs(mean - policy_evaluation(mdp, pi).j), 3.0 * se);
  }
}

// ---------------------------------------------------------------------------
// soft_policy_evaluation
// ---------------------------------------------------------------------------

TEST(SoftPolicyEvaluation, VanishingTemperatureRecoversPlainValues) {
  const auto mdp = seeded_mdp(4, 5, 3, 0.9);
  Rng rng(8);
  const auto pi = random_policy(rng, 5, 3);
  const auto soft = soft_policy_evaluation(mdp, pi, 1e-8);
  EXPECT_LE((soft.q_soft - policy_evaluation(mdp, pi).q).lpNorm<Eigen::Infinity>(), 1e-5);
}

TEST(SoftPolicyEvaluation, DeterministicSingleActionHasNoEntropy) {
  const auto soft = soft_policy_evaluation(single_state(1.0, 0.9), TabularPolicy::uniform(1, 1), 1.0);
  EXPECT_NEAR(soft.q_soft(0, 0), 10.0, 1e-12);
}

TEST(SoftPolicyEvaluation, MatchesFixedPointIteration) {
  const auto mdp = seeded_mdp(21, 5, 3, 0.9);
  Rng rng(3);
  const auto pi = random_policy(rng, 5, 3);
  const auto soft = soft_policy_evaluation(mdp, pi, 0.2);
  EXPECT_LE((soft.q_soft - soft_fixed_point_iteration(mdp, pi, 0.2, 5000)).lpNorm<Eigen::Infinity>(),
            1e-8);
}

TEST(SoftPolicyEvaluation, BundleInvariants) {
  const auto mdp = seeded_mdp(6, 6, 4, 0.95);
  Rng rng(1);
  const auto pi = random_policy(rng, 6, 4);
  const double alpha = 0.3;
  const auto soft = soft_policy_evaluation(mdp, pi, alpha);
  for (int s = 0; s < 6; ++s) {
    double v = 0.0;
    for (int a = 0; a < 4; ++a) v += pi(s, a) * (soft.q_soft(s, a) - alpha * std::log(pi(s, a)));
    EXPECT_NEAR(soft.v_soft(s), v, 1e-10);
  }
  // Residual of the soft Bellman operator at the returned fixed point.
  for (int s = 0; s < 6; ++s)
    for (int a = 0; a < 4; ++a) {
      double target = 0.0;
      for (int sp = 0; sp < 6; ++sp) target += mdp.p(s, a, sp) * (mdp.r(s, a, sp) + 0.95 * soft.v_soft(sp));
      EXPECT_NEAR(soft.q_soft(s, a), target, 1e-10);
    }
}

TEST(SoftPolicyEvaluation, RejectsZeroProbabilityAction) {
  Matrix probs(1, 2);
  probs << 1.0, 0.0;
  EXPECT_THROW(soft_policy_evaluation(single_state(1.0, 0.9, 2), TabularPolicy(probs), 0.1),
               std::invalid_argument);
  EXPECT_THROW(soft_policy_evaluation(single_state(1.0, 0.9, 2), TabularPolicy::uniform(1, 2), 0.0),
               std::invalid_argument);
}

// ---------------------------------------------------------------------------
// discounted_occupancy
// ---------------------------------------------------------------------------

TEST(DiscountedOccupancy, AbsorbingSingleState) {
  const auto occ = discounted_occupancy(single_state(0.0, 0.9), TabularPolicy::uniform(1, 1));
  EXPECT_NEAR(occ.d_state(0), 1.0, 1e-15);
}

TEST(DiscountedOccupancy, DeterministicSwapAlternates) {
  Tensor3 p(2, 1, 2, 0.0);
  p(0, 0, 1) = 1.0;
  p(1, 0, 0) = 1.0;
  Vector rho(2);
  rho << 1.0, 0.0;
  const TabularMdp mdp(p, Tensor3(2, 1, 2, 0.0), rho, 0.9);
  const auto occ = discounted_occupancy(mdp, TabularPolicy::uniform(2, 1));
  EXPECT_NEAR(occ.d_state(0), 1.0 / 1.9, 1e-12);
  EXPECT_NEAR(occ.d_state(1), 0.9 / 1.9, 1e-12);
}

TEST(DiscountedOccupancy, SummedMarginalsMatchWithinTruncation) {
  const double tol = 1e-10;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto mdp = seeded_mdp(seed, 7, 3, 0.95);
    Rng rng(seed);
    const auto pi = random_policy(rng, 7, 3);
    const auto occ = discounted_occupancy(mdp, pi, tol);
    EXPECT_LT(std::pow(0.95, occ.horizon_T + 1) / 0.05, tol);
    ASSERT_EQ(occ.time_marginals.size(), static_cast<std::size_t>(occ.horizon_T) + 1);
    Vector summed = Vector::Zero(7);
    double disc = 1.0;
    for (const auto& p_t : occ.time_marginals) {
      EXPECT_NEAR(p_t.sum(), 1.0, 1e-12);
      summed += 0.05 * disc * p_t;
      disc *= 0.95;
    }
    EXPECT_LE((summed - occ.d_state).lpNorm<Eigen::Infinity>(), tol);
    EXPECT_NEAR(occ.d_state.sum(), 1.0, 1e-12);
    for (int s = 0; s < 7; ++s)
      for (int a = 0; a < 3; ++a) EXPECT_EQ(occ.d_state_action(s, a), occ.d_state(s) * pi(s, a));
  }
}

// ---------------------------------------------------------------------------
// soft_greedy_improvement
// ---------------------------------------------------------------------------

TEST(SoftGreedyImprovement, Examples) {
  Matrix q(1, 2);
  q << 1.0, 1.0;
  EXPECT_NEAR(soft_greedy_improvement(q, 1.0)(0, 0), 0.5, 1e-15);
  q << 0.0, 10.0;
  EXPECT_GT(soft_greedy_improvement(q, 0.01)(0, 1), 1.0 - 1e-6);
  q << 1.0, 2.0;
  const auto pi = soft_greedy_improvement(q, 1.0);
  EXPECT_NEAR(pi(0, 0), 1.0 / (1.0 + std::exp(1.0)), 1e-15);
  EXPECT_NEAR(pi(0, 1), std::exp(1.0) / (1.0 + std::exp(1.0)), 1e-15);
}

TEST(SoftGreedyImprovement, LargeValuesStayFiniteAndRejectsNonFinite) {
  Matrix q(1, 3);
  q << 1e6, 1e6 - 1.0, -1e6;
  const auto pi = soft_greedy_improvement(q, 0.5);
  EXPECT_TRUE(pi.probs().allFinite());
  q(0, 2) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(soft_greedy_improvement(q, 0.5), std::invalid_argument);
  EXPECT_THROW(soft_greedy_improvement(Matrix::Zero(1, 2), 0.0), std::invalid_argument);
}

TEST(SoftValueIteration, FixedPointOfSoftOptimality) {
  const auto mdp = seeded_mdp(17, 5, 3, 0.9);
  const double alpha = 0.2;
  const Matrix q = soft_value_iteration(mdp, alpha);
  const auto pi = soft_greedy_improvement(q, alpha);
  EXPECT_LE((soft_policy_evaluation(mdp, pi, alpha).q_soft - q).lpNorm<Eigen::Infinity>(), 1e-9);
  // No other policy has a larger soft return.
  Rng rng(2);
  const double best = soft_return(mdp, pi, alpha);
  for (int k = 0; k < 20; ++k) EXPECT_LE(soft_return(mdp, random_policy(rng, 5, 3), alpha), best + 1e-12);
}

// ---------------------------------------------------------------------------
// Identities
// ---------------------------------------------------------------------------

TEST(Identities, PolicyImprovement) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto mdp = seeded_mdp(seed, 2 + seed % 7, 2 + seed % 3, seed % 2 ? 0.9 : 0.5);
    Rng rng(seed);
    const auto pi = random_policy(rng, mdp.n_states(), mdp.n_actions());
    const auto pi_prime = random_policy(rng, mdp.n_states(), mdp.n_actions());
    const double g = mdp.discount();
    const auto occ = discounted_occupancy(mdp, pi);
    const auto adv = policy_evaluation(mdp, pi_prime).advantage;
    const double rhs = (occ.d_state_action.array() * adv.array()).sum() / (1.0 - g);
    EXPECT_NEAR(policy_evaluation(mdp, pi).j - policy_evaluation(mdp, pi_prime).j, rhs, 1e-8);
  }
}

TEST(Identities, Telescoping) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto pair = random_mdp_pair(seed, 2 + seed % 7, 2 + seed % 3, 0.9, 0.4);
    Rng rng(seed);
    const auto pi = random_policy(rng, pair.source.n_states(), pair.source.n_actions());
    const Vector v = policy_evaluation(pair.source, pi).v;
    const auto occ = discounted_occupancy(pair.target, pi);
    double rhs = 0.0;
    for (int s = 0; s < pair.source.n_states(); ++s)
      for (int a = 0; a < pair.source.n_actions(); ++a)
        for (int sp = 0; sp < pair.source.n_states(); ++sp)
          rhs += occ.d_state_action(s, a) * (pair.target.p(s, a, sp) - pair.source.p(s, a, sp)) *
                 (pair.source.r(s, a, sp) + 0.9 * v(sp));
    rhs /= 1.0 - 0.9;
    EXPECT_NEAR(policy_evaluation(pair.target, pi).j - policy_evaluation(pair.source, pi).j, rhs, 1e-8);
  }
}

// ---------------------------------------------------------------------------
// Text formats
// ---------------------------------------------------------------------------

TEST(MdpFormat, RoundTripIsExact) {
  const auto mdp = seeded_mdp(5, 4, 3, 0.95);
  std::stringstream buf;
  write_mdp(buf, mdp);
  const auto back = read_mdp(buf);
  EXPECT_TRUE(back.transition() == mdp.transition());
  EXPECT_TRUE(back.reward() == mdp.reward());
  EXPECT_EQ(back.initial_dist(), mdp.initial_dist());
  EXPECT_EQ(back.discount(), mdp.discount());
}

TEST(MdpFormat, ParsesCommentsAndReportsLineNumbers) {
  std::istringstream good(
      "# two states\n"
      "mdp 2 1 0.5\n"
      "rho 1 0   # start left\n"
      "P 0 0 0 1\n"
      "P 1 0 1 0\n"
      "\n"
      "R 0 0 1 1\n"
      "R 1 0 0 0\n");
  const auto mdp = read_mdp(good);
  EXPECT_EQ(mdp.p(0, 0, 1), 1.0);
  EXPECT_EQ(mdp.r(0, 0, 0), 1.0);

  std::istringstream bad("mdp 2 1 0.5\nrho 1 0\nP 0 0 0 1\nP 1 0 1 zero\n");
  try {
    read_mdp(bad);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4);
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos);
  }

  std::istringstream missing("mdp 2 1 0.5\nrho 1 0\nP 0 0 0 1\nR 0 0 1 1\nR 1 0 0 0\n");
  EXPECT_THROW(read_mdp(missing), ParseError);
}

TEST(PolicyFormat, RoundTrip) {
  Rng rng(4);
  const auto pi = random_policy(rng, 3, 2);
  std::stringstream buf;
  write_policy(buf, pi);
  EXPECT_EQ(read_policy(buf).probs(), pi.probs());
}
