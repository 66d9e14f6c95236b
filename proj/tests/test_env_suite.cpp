#include "relgap/cartpole.hpp"
#include "relgap/dynamics_model.hpp"
#include "relgap/instances.hpp"
#include "relgap/relativity.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace relgap;

namespace {

double vector_norm(const std::array<double, 4>& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

std::array<double, 4> difference(const std::array<double, 4>& a, const std::array<double, 4>& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]};
}

CartPoleState random_state(Rng& rng) {
  auto u = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };
  return {u(-2.0, 2.0), u(-2.0, 2.0), u(-0.2, 0.2), u(-2.0, 2.0)};
}

}  // namespace

// ---------------------------------------------------------------------------
// random_mdp_pair
// ---------------------------------------------------------------------------

TEST(RandomMdpPair, ZeroMixCopiesSource) {
  const auto pair = random_mdp_pair(4, 5, 3, 0.9, 0.0);
  EXPECT_TRUE(pair.source.transition() == pair.target.transition());
  EXPECT_EQ(tv_divergence_dynamics(pair.target, pair.source), 0.0);
}

TEST(RandomMdpPair, FullMixIsTheIndependentDraw) {
  // The target at mix 1 equals the independent component itself, which the
  // pair at mix 0.5 must sit exactly halfway toward.
  const auto full = random_mdp_pair(6, 4, 2, 0.9, 1.0);
  const auto half = random_mdp_pair(6, 4, 2, 0.9, 0.5);
  EXPECT_TRUE(full.source.transition() == half.source.transition());
  for (int s = 0; s < 4; ++s)
    for (int a = 0; a < 2; ++a)
      for (int sp = 0; sp < 4; ++sp) {
        const double mid = 0.5 * full.source.p(s, a, sp) + 0.5 * full.target.p(s, a, sp);
        EXPECT_NEAR(half.target.p(s, a, sp), mid, 1e-15);
      }
  EXPECT_GT(tv_divergence_dynamics(full.target, full.source), 0.0);
}

TEST(RandomMdpPair, SharesRewardsRhoAndDiscount) {
  const auto pair = random_mdp_pair(3, 6, 3, 0.95, 0.4);
  EXPECT_TRUE(pair.source.reward() == pair.target.reward());
  EXPECT_EQ(pair.source.initial_dist(), pair.target.initial_dist());
  EXPECT_EQ(pair.source.discount(), pair.target.discount());
  for (double r : pair.source.reward().data()) {
    EXPECT_GE(r, 0.0);
    EXPECT_LT(r, 1.0);
  }
}

TEST(RandomMdpPair, DeterministicForSeed) {
  const double a = tv_divergence_dynamics(random_mdp_pair(7, 5, 3, 0.9, 0.3).target,
                                          random_mdp_pair(7, 5, 3, 0.9, 0.3).source);
  const double b = tv_divergence_dynamics(random_mdp_pair(7, 5, 3, 0.9, 0.3).target,
                                          random_mdp_pair(7, 5, 3, 0.9, 0.3).source);
  EXPECT_EQ(a, b);
  EXPECT_GT(a, 0.0);
}

TEST(RandomMdpPair, DivergenceMonotoneInMix) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    double prev = 0.0;
    for (int k = 0; k <= 20; ++k) {
      const auto pair = random_mdp_pair(seed, 5, 3, 0.9, k / 20.0);
      const double d = tv_divergence_dynamics(pair.target, pair.source);
      EXPECT_GE(d, prev - 1e-15);
      prev = d;
    }
  }
}

TEST(RandomMdpPair, RejectsInvalidArguments) {
  EXPECT_THROW(random_mdp_pair(0, 0, 2, 0.9, 0.1), std::invalid_argument);
  EXPECT_THROW(random_mdp_pair(0, 3, 0, 0.9, 0.1), std::invalid_argument);
  EXPECT_THROW(random_mdp_pair(0, 3, 2, 0.9, 1.5), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Slippery gridworld
// ---------------------------------------------------------------------------

TEST(SlipperyGridworld, NoSlipIsDeterministicAndDivergenceTracksSlip) {
  const auto pair = slippery_gridworld_pair(3, 0.0, 0.2, 0.9);
  for (int s = 0; s < 9; ++s)
    for (int a = 0; a < 4; ++a) {
      int ones = 0;
      for (int sp = 0; sp < 9; ++sp) ones += pair.source.p(s, a, sp) == 1.0;
      EXPECT_EQ(ones, 1);
    }
  // Moving right from the centre: the intended cell loses exactly `slip`.
  EXPECT_DOUBLE_EQ(pair.target.p(4, 1, 5), 0.8);
  EXPECT_NEAR(tv_divergence_dynamics(pair.target, pair.source), 0.2, 1e-15);
  EXPECT_THROW(slippery_gridworld_pair(1, 0.0, 0.1, 0.9), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// cartpole_step
// ---------------------------------------------------------------------------

TEST(CartPole, AlternatingForcesReturnNearOrigin) {
  const CartPoleParams p;
  auto s = cartpole_step(p, CartPoleState{}, 1).next;
  s = cartpole_step(p, s, 0, 1).next;
  EXPECT_LT(std::abs(s.cart_position),
            2.0 * p.force_magnitude * p.time_step * p.time_step / p.cart_mass);
}

TEST(CartPole, BangBangRuleBalancesPastOneHundredSteps) {
  const CartPoleParams p;
  CartPoleState s;
  s.pole_angle = 0.01;
  int steps = 0;
  bool done = false;
  while (!done) {
    const int a = s.pole_angle + 0.5 * s.pole_angular_velocity > 0.0 ? 1 : 0;
    const auto out = cartpole_step(p, s, a, steps);
    s = out.next;
    done = out.done;
    ++steps;
  }
  EXPECT_GT(steps, 100);
}

TEST(CartPole, PoleLengthChangesDynamics) {
  CartPoleState s;
  s.pole_angle = 0.05;
  const auto a = cartpole_step(CartPoleParams{}.with_length(1.0), s, 1).next;
  const auto b = cartpole_step(CartPoleParams{}.with_length(2.0), s, 1).next;
  EXPECT_NE(a.pole_angular_velocity, b.pole_angular_velocity);
}

TEST(CartPole, Deterministic) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const auto s = random_state(rng);
    const auto a = cartpole_step(CartPoleParams{}, s, i % 2);
    const auto b = cartpole_step(CartPoleParams{}, s, i % 2);
    EXPECT_EQ(a.next, b.next);
    EXPECT_EQ(a.reward, b.reward);
    EXPECT_EQ(a.done, b.done);
  }
}

TEST(CartPole, RewardAndTermination) {
  const CartPoleParams p;
  CartPoleState s;
  s.pole_angle = p.angle_fail_threshold - 1e-6;
  s.pole_angular_velocity = 1.0;
  const auto fail = cartpole_step(p, s, 1);
  EXPECT_TRUE(fail.failed);
  EXPECT_TRUE(fail.done);
  EXPECT_EQ(fail.reward, 0.0);

  const auto last = cartpole_step(p, CartPoleState{}, 1, p.max_episode_steps - 1);
  EXPECT_FALSE(last.failed);
  EXPECT_TRUE(last.done);
  EXPECT_EQ(last.reward, 1.0);
}

TEST(CartPole, RejectsNonFiniteStateAndBadParams) {
  CartPoleState s;
  s.cart_velocity = std::nan("");
  EXPECT_THROW(cartpole_step(CartPoleParams{}, s, 0), std::invalid_argument);
  EXPECT_THROW(cartpole_step(CartPoleParams{}, CartPoleState{}, 2), std::invalid_argument);
  CartPoleParams bad;
  bad.pole_length = 0.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(CartPole, EnergyDriftBelowOnePercentPerHundredSteps) {
  // Semi-implicit Euler keeps the energy error bounded and oscillating within
  // a swing; the drift is the least-squares trend of energy over 2000 steps.
  const CartPoleParams p;
  CartPoleState s;
  s.pole_angle = 0.5;
  const double e0 = cartpole_energy(p, s);
  const int n = 2001;
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (int i = 0; i < n; ++i) {
    const double e = cartpole_energy(p, s);
    sx += i;
    sy += e;
    sxx += static_cast<double>(i) * i;
    sxy += i * e;
    s = cartpole_integrate(p, s, 0.0);
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  EXPECT_LT(std::abs(100.0 * slope) / std::abs(e0), 0.01);
}

// ---------------------------------------------------------------------------
// cartpole_step_gradient
// ---------------------------------------------------------------------------

TEST(CartPoleGradient, PositionInsensitiveAtEquilibrium) {
  // With zero angle and angular velocity the cart acceleration does not
  // depend on the length to first order.
  const auto g = cartpole_step_gradient(CartPoleParams{}, CartPoleState{}, 1);
  EXPECT_NEAR(g[0], 0.0, 1e-6);
}

TEST(CartPoleGradient, RichardsonRatioNearFour) {
  Rng rng(17);
  for (int probe = 0; probe < 100; ++probe) {
    const auto s = random_state(rng);
    const CartPoleParams p = CartPoleParams{}.with_length(0.5 + 2.0 * uniform01(rng));
    const int a = probe % 2;
    const auto d1 = cartpole_step_gradient(p, s, a, 1e-2);
    const auto d2 = cartpole_step_gradient(p, s, a, 0.5e-2);
    const auto d4 = cartpole_step_gradient(p, s, a, 0.25e-2);
    const double ratio = vector_norm(difference(d1, d2)) / vector_norm(difference(d2, d4));
    EXPECT_GE(ratio, 3.5) << "probe " << probe;
    EXPECT_LE(ratio, 4.5) << "probe " << probe;
  }
}

TEST(CartPoleGradient, LongerPoleSlowsAngularAcceleration) {
  CartPoleState s;
  s.pole_angle = 0.1;
  const CartPoleParams p;
  auto angular_acc = [&](double length) {
    const auto n = cartpole_integrate(p.with_length(length), s, 0.0);
    return std::abs(n.pole_angular_velocity - s.pole_angular_velocity) / p.time_step;
  };
  EXPECT_LT(angular_acc(1.1), angular_acc(1.0));
  // Pushing left with a right-leaning pole: angular acceleration is positive,
  // so a longer pole lowers the next angular velocity.
  const auto g = cartpole_step_gradient(p, s, 0);
  EXPECT_LT(g[3], 0.0);
}

// ---------------------------------------------------------------------------
// Discretizer
// ---------------------------------------------------------------------------

TEST(Discretizer, FirstAndLastCells) {
  const auto d = Discretizer::cartpole_default();
  EXPECT_EQ(d.n_cells(), 6 * 6 * 12 * 12);
  EXPECT_EQ(discretize(d, d.cell_center({0, 0, 0, 0})), 0);
  EXPECT_EQ(discretize(d, CartPoleState{100.0, 100.0, 100.0, 100.0}), d.n_cells() - 1);
  EXPECT_EQ(discretize(d, CartPoleState{-100.0, -100.0, -100.0, -100.0}), 0);
}

TEST(Discretizer, CellCentresAreABijection) {
  const auto d = Discretizer::uniform({3, 2, 4, 2}, {-1, -1, -1, -1}, {1, 1, 1, 1});
  std::set<int> seen;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 4; ++c)
        for (int e = 0; e < 2; ++e) {
          const int idx = discretize(d, d.cell_center({a, b, c, e}));
          EXPECT_EQ(idx, ((a * 2 + b) * 4 + c) * 2 + e);
          seen.insert(idx);
        }
  EXPECT_EQ(static_cast<int>(seen.size()), d.n_cells());
}

TEST(Discretizer, StableUnderSubHalfBinPerturbations) {
  const auto d = Discretizer::cartpole_default();
  Rng rng(23);
  for (int i = 0; i < 2000; ++i) {
    std::array<int, 4> cell{};
    std::array<double, 4> width{};
    for (std::size_t k = 0; k < 4; ++k) {
      cell[k] = uniform_int(rng, 0, d.bins(k) - 1);
      width[k] = d.edges(k)[1] - d.edges(k)[0];
    }
    const auto centre = d.cell_center(cell).as_array();
    std::array<double, 4> moved{};
    for (std::size_t k = 0; k < 4; ++k) {
      moved[k] = centre[k] + 0.49 * width[k] * (2.0 * uniform01(rng) - 1.0);
    }
    EXPECT_EQ(discretize(d, CartPoleState::from_array(moved)),
              discretize(d, CartPoleState::from_array(centre)));
  }
}

TEST(Discretizer, RejectsBadEdges) {
  EXPECT_THROW(Discretizer({std::vector<double>{0.0, 0.0}, {0.0, 1.0}, {0.0, 1.0}, {0.0, 1.0}}),
               std::invalid_argument);
  EXPECT_THROW(Discretizer({std::vector<double>{0.0}, {0.0, 1.0}, {0.0, 1.0}, {0.0, 1.0}}),
               std::invalid_argument);
}

// ---------------------------------------------------------------------------
// TabularDynamicsModel
// ---------------------------------------------------------------------------

TEST(TabularDynamicsModel, RowsAreDistributions) {
  Rng rng(31);
  Tensor3 logits(5, 3, 5);
  for (double& x : logits.data()) x = 20.0 * (uniform01(rng) - 0.5);
  const TabularDynamicsModel model(logits);
  const Tensor3 p = model.transition();
  for (int s = 0; s < 5; ++s)
    for (int a = 0; a < 3; ++a) {
      double sum = 0.0;
      for (double x : p.row(s, a)) sum += x;
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(TabularDynamicsModel, RoundTripsProbabilities) {
  const auto pair = random_mdp_pair(5, 4, 2, 0.9, 0.0);
  const auto model = TabularDynamicsModel::from_probabilities(pair.source.transition());
  const auto back = model.as_mdp(pair.source);
  EXPECT_LT(tv_divergence_dynamics(back, pair.source), 1e-12);
  EXPECT_THROW(TabularDynamicsModel(Tensor3(3, 2, 4)), std::invalid_argument);
}
