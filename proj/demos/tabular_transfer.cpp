// Transfers a soft-optimal source policy to a perturbed tabular target with
// RPTO and prints the exact target return and model divergence as it learns.

#include "relgap/pretrain.hpp"
#include "relgap/transfer.hpp"

#include <cstdio>

int main() {
  using namespace relgap;
  const double alpha = 0.2;
  const MdpPair pair = random_mdp_pair(3, 5, 3, 0.9, 0.3);
  const Matrix q0 = pretrain_tabular(pair.source, alpha);

  TabularTransferProblem problem(pair.source, pair.target, 50, alpha);
  TransferConfig cfg;
  cfg.target_step_budget = 100000;
  cfg.eval_interval = 10000;
  const TransferLog log =
      run_transfer(Algorithm::rpto, problem, SoftLearner(q0, {alpha, 0.9, 0.01, 0.995}), cfg, 3);

  const double best = soft_return(
      pair.target, soft_greedy_improvement(soft_value_iteration(pair.target, alpha), alpha), alpha);
  std::printf("soft-optimal target return %.5f\n", best);
  std::printf("%12s %14s %10s\n", "target_steps", "target_return", "max_tv");
  for (const auto& row : log.rows) {
    std::printf("%12ld %14.5f %10.4f\n", row.target_steps, row.target_return,
                row.pole_length_or_tv_gap);
  }
}
