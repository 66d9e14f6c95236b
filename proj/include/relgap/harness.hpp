#pragma once

// Experiment orchestration behind the relgap command line: bound
// verification sweeps, pretraining and transfer runs over seed lists.

#include "relgap/config.hpp"
#include "relgap/csv.hpp"
#include "relgap/mdp_io.hpp"
#include "relgap/pretrain.hpp"
#include "relgap/relativity.hpp"
#include "relgap/transfer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <numbers>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace relgap::harness {

enum ExitCode : int { kSuccess = 0, kFailure = 1, kUsage = 2 };

/// Invalid invocation or configuration; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::vector<ConfigKey> default_schema() {
  return {
      {"experiment", "kind", "tabular-transfer"},
      {"experiment", "algorithm", "rpto"},
      {"experiment", "seeds", "0,1,2,3,4,5,6,7"},
      {"experiment", "checkpoint_dir", ""},
      {"experiment", "require_pretrained", "false"},

      {"verify", "instances", "200"},
      {"verify", "first_seed", "0"},
      {"verify", "min_states", "2"},
      {"verify", "max_states", "10"},
      {"verify", "min_actions", "2"},
      {"verify", "max_actions", "4"},
      {"verify", "gammas", "0.5,0.9,0.95"},
      {"verify", "max_mix", "1.0"},
      {"verify", "policy_floor", "1e-3"},
      {"verify", "marginal_t_max", "50"},

      {"tabular", "n_states", "5"},
      {"tabular", "n_actions", "3"},
      {"tabular", "gamma", "0.9"},
      {"tabular", "mix_weight", "0.3"},
      {"tabular", "alpha", "0.2"},
      {"tabular", "critic_learning_rate", "0.01"},
      {"tabular", "polyak", "0.995"},
      {"tabular", "episode_horizon", "50"},

      {"cartpole", "cart_mass", "1.0"},
      {"cartpole", "pole_mass", "0.1"},
      {"cartpole", "pole_length", "1.0"},
      {"cartpole", "target_pole_length", "1.2"},
      {"cartpole", "gravity", "9.8"},
      {"cartpole", "force_magnitude", "10.0"},
      {"cartpole", "time_step", "0.02"},
      {"cartpole", "angle_fail_threshold_deg", "12.0"},
      {"cartpole", "position_fail_threshold", "2.4"},
      {"cartpole", "max_episode_steps", "500"},

      {"learner", "alpha", "0.05"},
      {"learner", "gamma", "0.99"},
      {"learner", "learning_rate", "0.1"},
      {"learner", "polyak", "0.995"},
      {"learner", "initial_q", "100"},

      {"pretrain", "max_steps", "200000"},
      {"pretrain", "batch_size", "32"},
      {"pretrain", "eval_interval", "10000"},
      {"pretrain", "eval_episodes", "20"},
      {"pretrain", "stop_return", "495"},
      {"pretrain", "log_interval", "1000"},

      {"transfer", "alternate_frequency", "5"},
      {"transfer", "policy_replay_ratio", "1"},
      {"transfer", "dynamics_replay_ratio", "1"},
      {"transfer", "critic_replay_ratio", "1"},
      {"transfer", "rto_min_weight", "0.5"},
      {"transfer", "rto_learning_rate", "0.05"},
      {"transfer", "rto_physical_learning_rate", "0.01"},
      {"transfer", "rto_gradient_clip", "1.0"},
      {"transfer", "rpo_learning_rate", "0.2"},
      {"transfer", "critic_batch_size", "32"},
      {"transfer", "policy_batch_size", "32"},
      {"transfer", "dynamics_batch_size", "32"},
      {"transfer", "target_step_budget", "50000"},
      {"transfer", "source_episodes_per_iteration", "1"},
      {"transfer", "target_episodes_per_iteration", "1"},
      {"transfer", "buffer_capacity", "100000"},
      {"transfer", "eval_interval", "2000"},
      {"transfer", "eval_episodes", "10"},
      {"transfer", "threshold_fraction", "0.9"},
      {"transfer", "source_eval_episodes", "20"},
  };
}

inline Config default_config() { return Config(default_schema()); }

// ---------------------------------------------------------------------------
// Settings extracted from a config
// ---------------------------------------------------------------------------

inline InstanceRanges instance_ranges(const Config& c) {
  InstanceRanges r;
  r.min_states = c.get_int("verify.min_states");
  r.max_states = c.get_int("verify.max_states");
  r.min_actions = c.get_int("verify.min_actions");
  r.max_actions = c.get_int("verify.max_actions");
  r.gammas = c.get_doubles("verify.gammas");
  r.max_mix = c.get_double("verify.max_mix");
  r.policy_floor = c.get_double("verify.policy_floor");
  if (r.min_states < 1 || r.max_states < r.min_states || r.min_actions < 1 ||
      r.max_actions < r.min_actions) {
    throw UsageError("verify: invalid state/action ranges");
  }
  if (r.gammas.empty()) throw UsageError("verify: gammas must not be empty");
  for (double g : r.gammas) {
    if (!(g >= 0.0 && g < 1.0)) throw UsageError("verify: every gamma must lie in [0, 1)");
  }
  if (!(r.max_mix >= 0.0 && r.max_mix <= 1.0)) throw UsageError("verify: max_mix must lie in [0, 1]");
  if (!(r.policy_floor > 0.0 && r.policy_floor * r.max_actions < 1.0)) {
    throw UsageError("verify: policy_floor must be positive and below 1 / max_actions");
  }
  return r;
}

inline TransferConfig transfer_config(const Config& c) {
  TransferConfig t;
  t.alternate_frequency = c.get_int("transfer.alternate_frequency");
  t.policy_replay_ratio = c.get_int("transfer.policy_replay_ratio");
  t.dynamics_replay_ratio = c.get_int("transfer.dynamics_replay_ratio");
  t.critic_replay_ratio = c.get_int("transfer.critic_replay_ratio");
  t.rto_min_weight = c.get_double("transfer.rto_min_weight");
  t.rto_learning_rate = c.get_double("transfer.rto_learning_rate");
  t.rto_physical_learning_rate = c.get_double("transfer.rto_physical_learning_rate");
  t.rto_gradient_clip = c.get_double("transfer.rto_gradient_clip");
  t.rpo_learning_rate = c.get_double("transfer.rpo_learning_rate");
  t.critic_batch_size = c.get_int("transfer.critic_batch_size");
  t.policy_batch_size = c.get_int("transfer.policy_batch_size");
  t.dynamics_batch_size = c.get_int("transfer.dynamics_batch_size");
  t.target_step_budget = c.get_long("transfer.target_step_budget");
  t.source_episodes_per_iteration = c.get_int("transfer.source_episodes_per_iteration");
  t.target_episodes_per_iteration = c.get_int("transfer.target_episodes_per_iteration");
  const long capacity = c.get_long("transfer.buffer_capacity");
  if (capacity < 1) throw UsageError("transfer: buffer_capacity must be >= 1");
  t.buffer_capacity = static_cast<std::size_t>(capacity);
  t.eval_interval = c.get_long("transfer.eval_interval");
  t.eval_episodes = c.get_int("transfer.eval_episodes");
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return t;
}

inline CartPoleParams cartpole_params(const Config& c, double length) {
  CartPoleParams p;
  p.cart_mass = c.get_double("cartpole.cart_mass");
  p.pole_mass = c.get_double("cartpole.pole_mass");
  p.pole_length = length;
  p.gravity = c.get_double("cartpole.gravity");
  p.force_magnitude = c.get_double("cartpole.force_magnitude");
  p.time_step = c.get_double("cartpole.time_step");
  p.angle_fail_threshold = c.get_double("cartpole.angle_fail_threshold_deg") * std::numbers::pi / 180.0;
  p.position_fail_threshold = c.get_double("cartpole.position_fail_threshold");
  p.max_episode_steps = c.get_int("cartpole.max_episode_steps");
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return p;
}

inline PretrainConfig pretrain_config(const Config& c) {
  PretrainConfig p;
  p.learner = {c.get_double("learner.alpha"), c.get_double("learner.gamma"),
               c.get_double("learner.learning_rate"), c.get_double("learner.polyak")};
  p.initial_q = c.get_double("learner.initial_q");
  p.max_steps = c.get_long("pretrain.max_steps");
  p.batch_size = c.get_int("pretrain.batch_size");
  p.eval_interval = c.get_long("pretrain.eval_interval");
  p.eval_episodes = c.get_int("pretrain.eval_episodes");
  p.stop_return = c.get_double("pretrain.stop_return");
  p.log_interval = c.get_long("pretrain.log_interval");
  try {
    p.validate();
    SoftLearner check(1, 1, p.learner);
    (void)check;
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return p;
}

struct TabularSettings {
  int n_states = 5;
  int n_actions = 3;
  double gamma = 0.9;
  double mix_weight = 0.3;
  SoftLearnerConfig learner;
  int episode_horizon = 50;
};

inline TabularSettings tabular_settings(const Config& c) {
  TabularSettings t;
  t.n_states = c.get_int("tabular.n_states");
  t.n_actions = c.get_int("tabular.n_actions");
  t.gamma = c.get_double("tabular.gamma");
  t.mix_weight = c.get_double("tabular.mix_weight");
  t.learner = {c.get_double("tabular.alpha"), t.gamma, c.get_double("tabular.critic_learning_rate"),
               c.get_double("tabular.polyak")};
  t.episode_horizon = c.get_int("tabular.episode_horizon");
  if (t.n_states < 1 || t.n_actions < 1) throw UsageError("tabular: sizes must be positive");
  if (!(t.gamma >= 0.0 && t.gamma < 1.0)) throw UsageError("tabular: gamma must lie in [0, 1)");
  if (!(t.mix_weight >= 0.0 && t.mix_weight <= 1.0)) {
    throw UsageError("tabular: mix_weight must lie in [0, 1]");
  }
  if (t.episode_horizon < 1) throw UsageError("tabular: episode_horizon must be >= 1");
  try {
    SoftLearner check(1, 1, t.learner);
    (void)check;
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return t;
}

inline std::vector<std::uint64_t> seed_list(const Config& c) {
  std::vector<std::uint64_t> out;
  std::set<long> seen;
  for (long s : c.get_longs("experiment.seeds")) {
    if (s < 0) throw UsageError("seeds must be non-negative");
    if (!seen.insert(s).second) throw UsageError("duplicate seed " + std::to_string(s));
    out.push_back(static_cast<std::uint64_t>(s));
  }
  if (out.empty()) throw UsageError("seed list is empty");
  return out;
}

// ---------------------------------------------------------------------------
// Parallel map over indices, results in index order
// ---------------------------------------------------------------------------

template <class Result, class Fn>
std::vector<Result> parallel_map(std::size_t n, int jobs, Fn&& fn) {
  std::vector<std::optional<Result>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<Result> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& bound_csv_header() {
  static const std::vector<std::string> h{"seed", "bound_name", "lhs", "rhs", "slack", "holds"};
  return h;
}

inline void write_bound_row(CsvWriter& w, const BoundCheckReport& r) {
  w.row({static_cast<long long>(r.instance_id), r.bound_name, r.lhs, r.rhs, r.slack, r.holds});
}

struct VerifyOutcome {
  std::vector<std::vector<BoundCheckReport>> suites;  // [suite][instance]
  std::vector<BoundCheckReport> main_text_variant;
  long violations = 0;
};

inline const std::vector<std::string>& verify_suite_names() {
  static const std::vector<std::string> names{"gap_identity", "theorem2",       "proposition1",
                                              "theorem3",     "marginal_lemma", "value_lemma"};
  return names;
}

/// Runs every suite on `instances` seeded instances starting at first_seed.
inline VerifyOutcome verify_sweep(long instances, std::uint64_t first_seed,
                                  const InstanceRanges& ranges, int t_max, int jobs,
                                  const TabularMdp* base = nullptr) {
  struct PerInstance {
    std::vector<BoundCheckReport> reports;
    BoundCheckReport variant;
  };
  auto per = parallel_map<PerInstance>(static_cast<std::size_t>(instances), jobs, [&](std::size_t i) {
    const auto inst = make_verification_instance(first_seed + i, ranges, base);
    PerInstance out;
    out.reports = {verify_gap_identity(inst),   verify_theorem2(inst),
                   verify_proposition1(inst),   verify_theorem3(inst),
                   verify_marginal_lemma(inst, t_max), verify_value_lemma(inst)};
    out.variant = theorem3_main_text_variant(inst);
    return out;
  });
  VerifyOutcome outcome;
  outcome.suites.resize(verify_suite_names().size());
  for (const auto& p : per) {
    for (std::size_t k = 0; k < p.reports.size(); ++k) {
      outcome.suites[k].push_back(p.reports[k]);
      if (!p.reports[k].holds) ++outcome.violations;
    }
    outcome.main_text_variant.push_back(p.variant);
  }
  return outcome;
}

inline int run_verify(const Config& c, const std::filesystem::path& out_dir,
                      const std::string& mdp_path, int jobs, std::ostream& log) {
  const long instances = c.get_long("verify.instances");
  if (instances <= 0) throw UsageError("verify: instance count must be positive");
  const long first = c.get_long("verify.first_seed");
  if (first < 0) throw UsageError("verify: first_seed must be non-negative");
  const int t_max = c.get_int("verify.marginal_t_max");
  if (t_max < 0) throw UsageError("verify: marginal_t_max must be non-negative");
  const InstanceRanges ranges = instance_ranges(c);

  std::optional<TabularMdp> base;
  if (!mdp_path.empty()) base = load_mdp(mdp_path);

  const VerifyOutcome outcome = verify_sweep(instances, static_cast<std::uint64_t>(first), ranges,
                                             t_max, jobs, base ? &*base : nullptr);

  std::filesystem::create_directories(out_dir);
  CsvWriter summary((out_dir / "slack_summary.csv").string(),
                    {"bound_name", "instances", "violations", "mean_slack", "min_slack"});
  auto summarize = [&](const std::string& name, const std::vector<BoundCheckReport>& rows) {
    double sum = 0.0;
    double lo = std::numeric_limits<double>::infinity();
    long bad = 0;
    for (const auto& r : rows) {
      sum += r.slack;
      lo = std::min(lo, r.slack);
      if (!r.holds) ++bad;
    }
    summary.row({name, static_cast<long long>(rows.size()), static_cast<long long>(bad),
                 sum / static_cast<double>(rows.size()), lo});
    log << name << ": " << rows.size() - static_cast<std::size_t>(bad) << "/" << rows.size()
        << " hold, min slack " << format_double(lo) << "\n";
  };
  for (std::size_t k = 0; k < outcome.suites.size(); ++k) {
    const std::string& name = verify_suite_names()[k];
    CsvWriter w((out_dir / (name + ".csv")).string(), bound_csv_header());
    for (const auto& r : outcome.suites[k]) write_bound_row(w, r);
    summarize(name, outcome.suites[k]);
  }
  // Telemetry only: the variant with the policy divergence inside the min.
  {
    CsvWriter w((out_dir / "theorem3_main_text.csv").string(), bound_csv_header());
    for (const auto& r : outcome.main_text_variant) write_bound_row(w, r);
  }
  return outcome.violations == 0 ? kSuccess : kFailure;
}

// ---------------------------------------------------------------------------
// pretrain / transfer
// ---------------------------------------------------------------------------

enum class ExperimentKind { tabular, cartpole };

struct ExperimentPlan {
  ExperimentKind kind = ExperimentKind::tabular;
  Algorithm algorithm = Algorithm::rpto;
};

inline ExperimentPlan experiment_plan(const Config& c) {
  const std::string kind = c.get_string("experiment.kind");
  ExperimentPlan plan;
  try {
    if (kind == "tabular-transfer") {
      plan.kind = ExperimentKind::tabular;
      plan.algorithm = parse_algorithm(c.get_string("experiment.algorithm"));
    } else if (kind.rfind("cartpole-", 0) == 0) {
      plan.kind = ExperimentKind::cartpole;
      plan.algorithm = parse_algorithm(kind.substr(9));
    } else {
      throw std::invalid_argument("unknown experiment kind '" + kind + "'");
    }
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return plan;
}

inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::uint64_t seed) {
  return dir / ("checkpoint_seed" + std::to_string(seed) + ".txt");
}

inline std::filesystem::path checkpoint_dir(const Config& c, const std::filesystem::path& out_dir) {
  const std::string d = c.get_string("experiment.checkpoint_dir");
  return d.empty() ? out_dir : std::filesystem::path(d);
}

inline MdpPair tabular_pair(const TabularSettings& t, std::uint64_t seed) {
  return random_mdp_pair(seed, t.n_states, t.n_actions, t.gamma, t.mix_weight);
}

inline void save_matrix(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  write_matrix(out, m);
}

inline Matrix load_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  try {
    return read_matrix(in);
  } catch (const ParseError& e) {
    throw ParseError(e.line(), path.string() + ": " + e.what());
  }
}

inline const std::vector<std::string>& training_csv_header() {
  static const std::vector<std::string> h{"step", "episode_return", "soft_bellman_residual",
                                          "entropy"};
  return h;
}

/// Pretrains one seed, writes its checkpoint and training telemetry, and
/// returns the pretrained Q.
inline Matrix pretrain_seed(const Config& c, const ExperimentPlan& plan,
                            const std::filesystem::path& out_dir,
                            const std::filesystem::path& ckpt_dir, std::uint64_t seed) {
  CsvWriter w((out_dir / ("pretrain_seed" + std::to_string(seed) + ".csv")).string(),
              training_csv_header());
  Matrix q;
  if (plan.kind == ExperimentKind::tabular) {
    const TabularSettings t = tabular_settings(c);
    const MdpPair pair = tabular_pair(t, seed);
    q = pretrain_tabular(pair.source, t.learner.alpha);
    const TabularPolicy pi = soft_greedy_improvement(q, t.learner.alpha);
    const SoftValueBundle sv = soft_policy_evaluation(pair.source, pi, t.learner.alpha);
    double residual = (sv.q_soft - q).cwiseAbs().maxCoeff();
    residual *= residual;
    w.row({0LL, pair.source.initial_dist().dot(sv.v_soft), residual, mean_policy_entropy(pi.probs())});
  } else {
    const CartPoleParams source = cartpole_params(c, c.get_double("cartpole.pole_length"));
    const PretrainResult r =
        pretrain_cartpole(source, Discretizer::cartpole_default(), pretrain_config(c), seed);
    for (const auto& row : r.telemetry) {
      w.row({static_cast<long long>(row.step), row.episode_return, row.soft_bellman_residual,
             row.entropy});
    }
    q = r.q;
  }
  std::filesystem::create_directories(ckpt_dir);
  save_matrix(checkpoint_path(ckpt_dir, seed), q);
  return q;
}

inline int run_pretrain(const Config& c, const std::filesystem::path& out_dir, int jobs,
                        std::ostream& log) {
  const ExperimentPlan plan = experiment_plan(c);
  const auto seeds = seed_list(c);
  const auto ckpt = checkpoint_dir(c, out_dir);
  std::filesystem::create_directories(out_dir);
  parallel_map<int>(seeds.size(), jobs, [&](std::size_t i) {
    pretrain_seed(c, plan, out_dir, ckpt, seeds[i]);
    return 0;
  });
  log << "pretrained " << seeds.size() << " seed(s); checkpoints in " << ckpt.string() << "\n";
  return kSuccess;
}

inline const std::vector<std::string>& run_csv_header() {
  static const std::vector<std::string> h{"target_steps",   "source_steps",
                                          "target_return",  "source_return",
                                          "pole_length_or_tv_gap", "rto_loss",
                                          "rpo_entropy"};
  return h;
}

struct SeedResult {
  std::uint64_t seed = 0;
  double source_return = 0.0;  // converged return of the pretrained policy in the source
  TransferLog log;
};

/// Median and interquartile range with linear interpolation between order
/// statistics.
inline std::pair<double, double> median_iqr(std::vector<double> xs) {
  if (xs.empty()) throw std::invalid_argument("median_iqr: empty sample");
  std::sort(xs.begin(), xs.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(xs.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, xs.size() - 1);
    return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
  };
  return {q(0.5), q(0.75) - q(0.25)};
}

inline void write_run_csv(const std::filesystem::path& path, const TransferLog& log) {
  CsvWriter w(path.string(), run_csv_header());
  for (const auto& r : log.rows) {
    w.row({static_cast<long long>(r.target_steps), static_cast<long long>(r.source_steps),
           r.target_return, r.source_return, r.pole_length_or_tv_gap, r.rto_loss, r.rpo_entropy});
  }
}

/// Medians and IQRs across seeds for each logged step index.
inline void write_aggregate_csv(const std::filesystem::path& path,
                                const std::vector<SeedResult>& results) {
  std::vector<std::string> header{"log_index"};
  for (const auto& col : run_csv_header()) {
    header.push_back(col + "_median");
    header.push_back(col + "_iqr");
  }
  CsvWriter w(path.string(), header);
  std::size_t n_rows = std::numeric_limits<std::size_t>::max();
  for (const auto& r : results) n_rows = std::min(n_rows, r.log.rows.size());
  for (std::size_t i = 0; i < n_rows; ++i) {
    std::vector<CsvCell> cells{static_cast<long long>(i)};
    auto add = [&](auto field) {
      std::vector<double> xs;
      for (const auto& r : results) xs.push_back(static_cast<double>(field(r.log.rows[i])));
      const auto [m, iqr] = median_iqr(xs);
      cells.emplace_back(m);
      cells.emplace_back(iqr);
    };
    add([](const TransferRow& r) { return r.target_steps; });
    add([](const TransferRow& r) { return r.source_steps; });
    add([](const TransferRow& r) { return r.target_return; });
    add([](const TransferRow& r) { return r.source_return; });
    add([](const TransferRow& r) { return r.pole_length_or_tv_gap; });
    add([](const TransferRow& r) { return r.rto_loss; });
    add([](const TransferRow& r) { return r.rpo_entropy; });
    w.row(cells);
  }
}

/// Runs one seed end to end (checkpoint or pretraining, then transfer).
inline SeedResult transfer_seed(const Config& c, const ExperimentPlan& plan,
                                const std::filesystem::path& out_dir,
                                const std::filesystem::path& ckpt_dir, bool require_pretrained,
                                std::uint64_t seed) {
  const TransferConfig cfg = transfer_config(c);
  const auto ckpt = checkpoint_path(ckpt_dir, seed);
  Matrix q;
  if (std::filesystem::exists(ckpt)) {
    q = load_matrix(ckpt);
  } else if (require_pretrained) {
    throw std::runtime_error("missing checkpoint '" + ckpt.string() + "'");
  } else {
    q = pretrain_seed(c, plan, out_dir, ckpt_dir, seed);
  }

  SeedResult result;
  result.seed = seed;
  if (plan.kind == ExperimentKind::tabular) {
    const TabularSettings t = tabular_settings(c);
    const MdpPair pair = tabular_pair(t, seed);
    if (q.rows() != t.n_states || q.cols() != t.n_actions) {
      throw std::runtime_error("checkpoint '" + ckpt.string() + "' has the wrong shape");
    }
    result.source_return =
        soft_return(pair.source, soft_greedy_improvement(q, t.learner.alpha), t.learner.alpha);
    TabularTransferProblem problem(pair.source, pair.target, t.episode_horizon, t.learner.alpha);
    result.log = run_transfer(plan.algorithm, problem, SoftLearner(q, t.learner), cfg, seed);
    std::ofstream model_out(out_dir / ("dynamics_seed" + std::to_string(seed) + ".txt"));
    write_mdp(model_out, problem.model().as_mdp(pair.source));
  } else {
    const PretrainConfig pc = pretrain_config(c);
    const CartPoleParams source = cartpole_params(c, c.get_double("cartpole.pole_length"));
    const CartPoleParams target = cartpole_params(c, c.get_double("cartpole.target_pole_length"));
    const Discretizer grid = Discretizer::cartpole_default();
    if (q.rows() != grid.n_cells() || q.cols() != 2) {
      throw std::runtime_error("checkpoint '" + ckpt.string() + "' has the wrong shape");
    }
    CartPoleEnv source_env(source, grid, Origin::source);
    Rng eval_rng(seed + 0x9E3779B97F4A7C15ULL);
    result.source_return =
        evaluate_greedy(source_env, q, c.get_int("transfer.source_eval_episodes"), eval_rng);
    CartPoleTransferProblem problem(source, target, grid, pc.learner.gamma);
    result.log = run_transfer(plan.algorithm, problem, SoftLearner(q, pc.learner), cfg, seed);
    Matrix length(1, 1);
    length(0, 0) = problem.model().pole_length;
    save_matrix(out_dir / ("dynamics_seed" + std::to_string(seed) + ".txt"), length);
  }
  write_run_csv(out_dir / ("run_seed" + std::to_string(seed) + ".csv"), result.log);
  return result;
}

inline int run_transfer_experiment(const Config& c, const std::filesystem::path& out_dir,
                                   int jobs, bool require_pretrained, std::ostream& log) {
  const ExperimentPlan plan = experiment_plan(c);
  const auto seeds = seed_list(c);
  transfer_config(c);
  const double fraction = c.get_double("transfer.threshold_fraction");
  const auto ckpt = checkpoint_dir(c, out_dir);
  const bool require = require_pretrained || c.get_bool("experiment.require_pretrained");
  std::filesystem::create_directories(out_dir);

  const auto results = parallel_map<SeedResult>(seeds.size(), jobs, [&](std::size_t i) {
    return transfer_seed(c, plan, out_dir, ckpt, require, seeds[i]);
  });

  write_aggregate_csv(out_dir / "aggregate.csv", results);
  CsvWriter summary((out_dir / "summary.csv").string(),
                    {"seed", "source_return", "threshold", "steps_to_threshold", "reached",
                     "final_target_return", "final_pole_length_or_tv_gap"});
  for (const auto& r : results) {
    const double threshold = fraction * r.source_return;
    const auto hit = steps_to_threshold(r.log, threshold);
    const auto& last = r.log.rows.back();
    summary.row({static_cast<long long>(r.seed), r.source_return, threshold,
                 static_cast<long long>(hit.value_or(-1)), hit.has_value(), last.target_return,
                 last.pole_length_or_tv_gap});
    log << "seed " << r.seed << ": final target return " << format_double(last.target_return)
        << ", model " << format_double(last.pole_length_or_tv_gap) << "\n";
  }
  return kSuccess;
}

}  // namespace relgap::harness
