#pragma once

#include "relgap/mdp.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <utility>

namespace relgap {

using Rng = std::mt19937_64;

/// Uniform draw in [0, 1) from the top 53 bits, independent of the standard
/// library's distribution implementations.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline int uniform_int(Rng& rng, int lo, int hi_inclusive) {
  const auto span = static_cast<std::uint64_t>(hi_inclusive - lo + 1);
  return lo + static_cast<int>(rng() % span);
}

/// Symmetric Dirichlet(1) draw: normalized unit exponentials.
inline void dirichlet_row(Rng& rng, std::span<double> out) {
  double sum = 0.0;
  for (double& x : out) {
    x = -std::log1p(-uniform01(rng));
    sum += x;
  }
  for (double& x : out) x /= sum;
}

inline Tensor3 random_transition(Rng& rng, int n_states, int n_actions) {
  Tensor3 p(n_states, n_actions, n_states);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) dirichlet_row(rng, p.row(s, a));
  return p;
}

/// Row-wise (1 - w) * base + w * other.
inline Tensor3 mix_transition(const Tensor3& base, const Tensor3& other, double w) {
  if (!base.same_shape(other)) throw std::invalid_argument("mix_transition: shape mismatch");
  Tensor3 out = base;
  if (w == 0.0) return out;
  for (int s = 0; s < base.n_states(); ++s)
    for (int a = 0; a < base.n_actions(); ++a) {
      auto row = out.row(s, a);
      const auto o = other.row(s, a);
      double sum = 0.0;
      for (std::size_t k = 0; k < row.size(); ++k) {
        row[k] = (1.0 - w) * row[k] + w * o[k];
        sum += row[k];
      }
      for (double& x : row) x /= sum;
    }
  return out;
}

struct MdpPair {
  TabularMdp source;
  TabularMdp target;
};

/// Seeded source/target pair sharing rewards, initial distribution and
/// discount. Source rows are Dirichlet(1), rewards uniform in [0, 1), and the
/// target mixes each source row with an independent Dirichlet draw.
inline MdpPair random_mdp_pair(std::uint64_t seed, int n_states, int n_actions, double gamma,
                               double mix_weight) {
  if (n_states <= 0 || n_actions <= 0) {
    throw std::invalid_argument("random_mdp_pair: sizes must be positive");
  }
  if (!(mix_weight >= 0.0 && mix_weight <= 1.0)) {
    throw std::invalid_argument("random_mdp_pair: mix_weight must lie in [0, 1]");
  }
  Rng rng(seed);
  Tensor3 p = random_transition(rng, n_states, n_actions);
  Tensor3 r(n_states, n_actions, n_states);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a)
      for (double& x : r.row(s, a)) x = uniform01(rng);
  Vector rho(n_states);
  dirichlet_row(rng, {rho.data(), static_cast<std::size_t>(n_states)});
  const Tensor3 independent = random_transition(rng, n_states, n_actions);

  Tensor3 target_p = mix_weight == 1.0 ? independent : mix_transition(p, independent, mix_weight);
  TabularMdp source(std::move(p), r, rho, gamma);
  TabularMdp target = source.with_transition(std::move(target_p));
  return {std::move(source), std::move(target)};
}

/// Grid of side `width` with actions (up, right, down, left). A move goes in
/// the intended direction with probability 1 - slip and in each of the two
/// perpendicular directions with probability slip / 2; moves off the grid stay
/// put. Reward 1 for entering the bottom-right goal cell, which then restarts
/// the walk at the top-left cell. Source and target differ only in slip.
inline MdpPair slippery_gridworld_pair(int width, double source_slip, double target_slip,
                                       double gamma) {
  if (width < 2) throw std::invalid_argument("slippery_gridworld_pair: width must be >= 2");
  for (double slip : {source_slip, target_slip}) {
    if (!(slip >= 0.0 && slip <= 1.0)) {
      throw std::invalid_argument("slippery_gridworld_pair: slip must lie in [0, 1]");
    }
  }
  const int n = width * width;
  const int goal = n - 1;
  const int dr[4] = {-1, 0, 1, 0};
  const int dc[4] = {0, 1, 0, -1};
  auto build = [&](double slip) {
    Tensor3 p(n, 4, n, 0.0);
    for (int s = 0; s < n; ++s)
      for (int a = 0; a < 4; ++a) {
        if (s == goal) {
          p(s, a, 0) = 1.0;
          continue;
        }
        const std::pair<int, double> moves[3] = {
            {a, 1.0 - slip}, {(a + 1) % 4, 0.5 * slip}, {(a + 3) % 4, 0.5 * slip}};
        for (const auto& [dir, prob] : moves) {
          const int r = s / width + dr[dir];
          const int c = s % width + dc[dir];
          const bool inside = r >= 0 && r < width && c >= 0 && c < width;
          p(s, a, inside ? r * width + c : s) += prob;
        }
      }
    return p;
  };
  Tensor3 r(n, 4, n, 0.0);
  for (int s = 0; s < n; ++s)
    for (int a = 0; a < 4; ++a)
      if (s != goal) r(s, a, goal) = 1.0;
  Vector rho = Vector::Zero(n);
  rho(0) = 1.0;
  TabularMdp source(build(source_slip), r, rho, gamma);
  TabularMdp target = source.with_transition(build(target_slip));
  return {std::move(source), std::move(target)};
}

/// Random policy with every action probability at least `floor`.
inline TabularPolicy random_policy(Rng& rng, int n_states, int n_actions, double floor = 1e-3) {
  if (!(floor >= 0.0 && floor * n_actions < 1.0)) {
    throw std::invalid_argument("random_policy: floor too large");
  }
  Matrix probs(n_states, n_actions);
  std::vector<double> row(static_cast<std::size_t>(n_actions));
  for (int s = 0; s < n_states; ++s) {
    dirichlet_row(rng, row);
    for (int a = 0; a < n_actions; ++a) probs(s, a) = floor + (1.0 - floor * n_actions) * row[a];
    probs.row(s) /= probs.row(s).sum();
  }
  return TabularPolicy(std::move(probs));
}

/// Row-wise (1 - w) * a + w * b.
inline TabularPolicy mix_policy(const TabularPolicy& a, const TabularPolicy& b, double w) {
  Matrix probs = (1.0 - w) * a.probs() + w * b.probs();
  for (Eigen::Index s = 0; s < probs.rows(); ++s) probs.row(s) /= probs.row(s).sum();
  return TabularPolicy(std::move(probs));
}

}  // namespace relgap
