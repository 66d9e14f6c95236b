// Recovers an unknown pole length from real cart-pole transitions with RTO.

#include "relgap/pretrain.hpp"
#include "relgap/transfer.hpp"

#include <cstdio>
#include <cstdlib>

int main(int argc, char** argv) {
  using namespace relgap;
  const double target_length = argc > 1 ? std::atof(argv[1]) : 2.0;
  const Discretizer grid = Discretizer::cartpole_default();
  const CartPoleParams source;

  PretrainConfig pc;
  const PretrainResult pre = pretrain_cartpole(source, grid, pc, 0);
  std::printf("pretrained in %ld steps, greedy return %.1f\n", pre.steps, pre.best_return);

  CartPoleTransferProblem problem(source, source.with_length(target_length), grid, pc.learner.gamma);
  TransferConfig cfg;
  cfg.target_step_budget = 30000;
  cfg.eval_interval = 2500;
  const TransferLog log = run_transfer(Algorithm::rto, problem, SoftLearner(pre.q, pc.learner), cfg, 0);
  for (const auto& row : log.rows) {
    std::printf("target steps %6ld  pole length %.5f  rto loss %.3g\n", row.target_steps,
                row.pole_length_or_tv_gap, row.rto_loss);
  }
}
