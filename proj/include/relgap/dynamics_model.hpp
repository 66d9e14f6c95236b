#pragma once

#include "relgap/mdp.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace relgap {

/// Trainable tabular dynamics: P_phi(.|s,a) = softmax(logits(s, a, .)).
class TabularDynamicsModel {
 public:
  explicit TabularDynamicsModel(Tensor3 logits) : logits_(std::move(logits)) {
    if (logits_.n_next() != logits_.n_states()) {
      throw std::invalid_argument("TabularDynamicsModel: logits must be [S][A][S]");
    }
    for (double x : logits_.data()) {
      if (!std::isfinite(x)) throw std::invalid_argument("TabularDynamicsModel: non-finite logit");
    }
  }

  /// Logits = log P, with zero probabilities mapped to a large negative logit.
  static TabularDynamicsModel from_probabilities(const Tensor3& p, double floor_logit = -50.0) {
    Tensor3 logits(p.n_states(), p.n_actions(), p.n_next());
    for (int s = 0; s < p.n_states(); ++s)
      for (int a = 0; a < p.n_actions(); ++a) {
        const auto src = p.row(s, a);
        auto dst = logits.row(s, a);
        for (std::size_t k = 0; k < src.size(); ++k) {
          dst[k] = src[k] > 0.0 ? std::max(std::log(src[k]), floor_logit) : floor_logit;
        }
      }
    return TabularDynamicsModel(std::move(logits));
  }

  int n_states() const { return logits_.n_states(); }
  int n_actions() const { return logits_.n_actions(); }
  const Tensor3& logits() const { return logits_; }
  Tensor3& logits() { return logits_; }

  /// Softmax of one logit row into `out`.
  void row_probabilities(int s, int a, std::span<double> out) const {
    const auto z = logits_.row(s, a);
    double m = -std::numeric_limits<double>::infinity();
    for (double x : z) m = std::max(m, x);
    double sum = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) {
      out[k] = std::exp(z[k] - m);
      sum += out[k];
    }
    for (double& x : out) x /= sum;
  }

  Tensor3 transition() const {
    Tensor3 p(n_states(), n_actions(), n_states());
    for (int s = 0; s < n_states(); ++s)
      for (int a = 0; a < n_actions(); ++a) row_probabilities(s, a, p.row(s, a));
    return p;
  }

  /// The model as an MDP sharing rewards, rho and discount with `env`.
  TabularMdp as_mdp(const TabularMdp& env) const { return env.with_transition(transition()); }

 private:
  Tensor3 logits_;
};

}  // namespace relgap
