#pragma once

#include "relgap/instances.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace relgap {

/// Physical constants of the cart-pole. pole_length is the full length of a
/// uniform rod; the equations use its half-length.
struct CartPoleParams {
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double pole_length = 1.0;
  double gravity = 9.8;
  double force_magnitude = 10.0;
  double time_step = 0.02;
  double angle_fail_threshold = 12.0 * std::numbers::pi / 180.0;
  double position_fail_threshold = 2.4;
  int max_episode_steps = 500;

  void validate() const {
    auto positive = [](double x, const char* name) {
      if (!(std::isfinite(x) && x > 0.0)) {
        throw std::invalid_argument(std::string("CartPoleParams: ") + name + " must be > 0");
      }
    };
    positive(cart_mass, "cart_mass");
    positive(pole_mass, "pole_mass");
    positive(pole_length, "pole_length");
    positive(gravity, "gravity");
    positive(force_magnitude, "force_magnitude");
    positive(time_step, "time_step");
    positive(angle_fail_threshold, "angle_fail_threshold");
    positive(position_fail_threshold, "position_fail_threshold");
    if (max_episode_steps <= 0) {
      throw std::invalid_argument("CartPoleParams: max_episode_steps must be > 0");
    }
  }

  CartPoleParams with_length(double length) const {
    CartPoleParams out = *this;
    out.pole_length = length;
    return out;
  }
};

struct CartPoleState {
  double cart_position = 0.0;
  double cart_velocity = 0.0;
  double pole_angle = 0.0;
  double pole_angular_velocity = 0.0;

  std::array<double, 4> as_array() const {
    return {cart_position, cart_velocity, pole_angle, pole_angular_velocity};
  }
  static CartPoleState from_array(const std::array<double, 4>& v) {
    return {v[0], v[1], v[2], v[3]};
  }
  bool finite() const {
    return std::isfinite(cart_position) && std::isfinite(cart_velocity) &&
           std::isfinite(pole_angle) && std::isfinite(pole_angular_velocity);
  }
  friend bool operator==(const CartPoleState&, const CartPoleState&) = default;
};

struct CartPoleStep {
  CartPoleState next;
  double reward = 0.0;
  bool done = false;
  bool failed = false;  // terminal by leaving the angle/position envelope
};

/// One semi-implicit Euler step under an arbitrary horizontal force.
inline CartPoleState cartpole_integrate(const CartPoleParams& p, const CartPoleState& s,
                                        double force) {
  const double total_mass = p.cart_mass + p.pole_mass;
  const double half_length = 0.5 * p.pole_length;
  const double pole_mass_length = p.pole_mass * half_length;
  const double sin_t = std::sin(s.pole_angle);
  const double cos_t = std::cos(s.pole_angle);

  const double temp =
      (force + pole_mass_length * s.pole_angular_velocity * s.pole_angular_velocity * sin_t) /
      total_mass;
  const double angular_acc =
      (p.gravity * sin_t - cos_t * temp) /
      (half_length * (4.0 / 3.0 - p.pole_mass * cos_t * cos_t / total_mass));
  const double cart_acc = temp - pole_mass_length * angular_acc * cos_t / total_mass;

  CartPoleState n;
  n.cart_velocity = s.cart_velocity + p.time_step * cart_acc;
  n.cart_position = s.cart_position + p.time_step * n.cart_velocity;
  n.pole_angular_velocity = s.pole_angular_velocity + p.time_step * angular_acc;
  n.pole_angle = s.pole_angle + p.time_step * n.pole_angular_velocity;
  return n;
}

/// Action 1 pushes right, action 0 pushes left.
inline double action_force(const CartPoleParams& p, int action) {
  if (action != 0 && action != 1) throw std::invalid_argument("cartpole: action must be 0 or 1");
  return action == 1 ? p.force_magnitude : -p.force_magnitude;
}

/// Advances one step. `steps_taken` counts steps already taken in the episode;
/// the episode is done on failure or when it reaches max_episode_steps.
inline CartPoleStep cartpole_step(const CartPoleParams& p, const CartPoleState& s, int action,
                                  int steps_taken = 0) {
  if (!s.finite()) throw std::invalid_argument("cartpole_step: non-finite state");
  CartPoleStep out;
  out.next = cartpole_integrate(p, s, action_force(p, action));
  out.failed = std::abs(out.next.pole_angle) > p.angle_fail_threshold ||
               std::abs(out.next.cart_position) > p.position_fail_threshold;
  out.reward = out.failed ? 0.0 : 1.0;
  out.done = out.failed || steps_taken + 1 >= p.max_episode_steps;
  return out;
}

/// Central-difference derivative of the next state with respect to
/// pole_length, with step h = relative_step * pole_length.
inline std::array<double, 4> cartpole_step_gradient(const CartPoleParams& p,
                                                    const CartPoleState& s, int action,
                                                    double relative_step = 1e-4) {
  const double h = relative_step * p.pole_length;
  const double force = action_force(p, action);
  const auto plus = cartpole_integrate(p.with_length(p.pole_length + h), s, force).as_array();
  const auto minus = cartpole_integrate(p.with_length(p.pole_length - h), s, force).as_array();
  std::array<double, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) out[i] = (plus[i] - minus[i]) / (2.0 * h);
  return out;
}

/// Kinetic plus potential energy of cart and uniform rod (potential zero at
/// the pivot height).
inline double cartpole_energy(const CartPoleParams& p, const CartPoleState& s) {
  const double total_mass = p.cart_mass + p.pole_mass;
  const double h = 0.5 * p.pole_length;
  const double xd = s.cart_velocity;
  const double td = s.pole_angular_velocity;
  const double kinetic = 0.5 * total_mass * xd * xd +
                         p.pole_mass * h * xd * td * std::cos(s.pole_angle) +
                         (2.0 / 3.0) * p.pole_mass * h * h * td * td;
  return kinetic + p.pole_mass * p.gravity * h * std::cos(s.pole_angle);
}

/// Standard reset: every coordinate uniform in [-0.05, 0.05].
inline CartPoleState cartpole_reset(Rng& rng) {
  auto u = [&] { return -0.05 + 0.1 * uniform01(rng); };
  CartPoleState s;
  s.cart_position = u();
  s.cart_velocity = u();
  s.pole_angle = u();
  s.pole_angular_velocity = u();
  return s;
}

/// Axis-aligned grid over the 4-dimensional cart-pole state. Values outside
/// the outer edges are clamped into the boundary bins.
class Discretizer {
 public:
  /// `edges[d]` holds the bin boundaries of dimension d, strictly increasing,
  /// at least two entries (one bin).
  explicit Discretizer(std::array<std::vector<double>, 4> edges) : edges_(std::move(edges)) {
    n_cells_ = 1;
    for (std::size_t d = 0; d < 4; ++d) {
      const auto& e = edges_[d];
      if (e.size() < 2) throw std::invalid_argument("Discretizer: need at least one bin");
      for (std::size_t k = 1; k < e.size(); ++k) {
        if (!(e[k] > e[k - 1])) throw std::invalid_argument("Discretizer: edges must increase");
      }
      n_cells_ *= bins(d);
    }
  }

  /// Uniform bins: counts[d] bins spanning [lo[d], hi[d]].
  static Discretizer uniform(const std::array<int, 4>& counts, const std::array<double, 4>& lo,
                             const std::array<double, 4>& hi) {
    std::array<std::vector<double>, 4> edges;
    for (std::size_t d = 0; d < 4; ++d) {
      if (counts[d] <= 0) throw std::invalid_argument("Discretizer: bin count must be > 0");
      for (int k = 0; k <= counts[d]; ++k) {
        edges[d].push_back(lo[d] + (hi[d] - lo[d]) * k / counts[d]);
      }
    }
    return Discretizer(std::move(edges));
  }

  /// Bins (6, 6, 12, 12) over position +-2.4, velocity +-3, angle +-12 deg,
  /// angular velocity +-3.5.
  static Discretizer cartpole_default() {
    const double angle = 12.0 * std::numbers::pi / 180.0;
    return uniform({6, 6, 12, 12}, {-2.4, -3.0, -angle, -3.5}, {2.4, 3.0, angle, 3.5});
  }

  int bins(std::size_t d) const { return static_cast<int>(edges_[d].size()) - 1; }
  int n_cells() const { return n_cells_; }
  const std::vector<double>& edges(std::size_t d) const { return edges_[d]; }

  int bin(std::size_t d, double x) const {
    const auto& e = edges_[d];
    // Interior boundaries only: everything below e[1] is bin 0, above e[n-1] the last bin.
    const auto it = std::upper_bound(e.begin() + 1, e.end() - 1, x);
    return static_cast<int>(it - (e.begin() + 1));
  }

  int index(const CartPoleState& s) const {
    const auto v = s.as_array();
    int idx = 0;
    for (std::size_t d = 0; d < 4; ++d) idx = idx * bins(d) + bin(d, v[d]);
    return idx;
  }

  /// Centre of the cell with the given per-dimension bin indices.
  CartPoleState cell_center(const std::array<int, 4>& cell) const {
    std::array<double, 4> v{};
    for (std::size_t d = 0; d < 4; ++d) {
      v[d] = 0.5 * (edges_[d][cell[d]] + edges_[d][cell[d] + 1]);
    }
    return CartPoleState::from_array(v);
  }

 private:
  std::array<std::vector<double>, 4> edges_;
  int n_cells_ = 0;
};

inline int discretize(const Discretizer& d, const CartPoleState& s) { return d.index(s); }

}  // namespace relgap
