#include "lbpo/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "lbpo/errors.hpp"
#include "lbpo/policy_eval.hpp"
#include "lbpo/safe_update.hpp"

namespace lbpo {

std::unique_ptr<Environment> make_environment(const ExperimentConfig& config) {
  config.validate();
  if (config.env == EnvKind::kDidactic) {
    DidacticEnv::Options o;
    o.noise_std = config.noise_std;
    o.action_bound = config.action_bound;
    o.horizon = config.horizon;
    o.discount = config.discount;
    o.threshold = config.threshold;
    return std::make_unique<DidacticEnv>(o);
  }
  GridworldOptions g = config.grid;
  g.discount = config.discount;
  g.threshold = config.threshold;
  return std::make_unique<GridworldEnv>(g, config.horizon);
}

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

namespace {

std::string join(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ';';
    out += format_double(values[i]);
  }
  return out;
}

std::vector<double> split_doubles(const std::string& field) {
  std::vector<double> out;
  std::stringstream ss(field);
  std::string item;
  while (std::getline(ss, item, ';')) out.push_back(std::stod(item));
  return out;
}

struct Critics {
  QFunction qr;
  std::vector<QFunction> qcs;
};

std::vector<Trajectory> collect(const Environment& env, const DeterministicPolicy& policy, std::size_t count,
                                double exploration_std, Rng& env_rng, Rng& explore_rng) {
  const PolicyFn fn = [&policy](const Vector& s) { return policy.act(s); };
  std::vector<Trajectory> trajs;
  trajs.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    trajs.push_back(rollout(env, fn, exploration_std, env.spec().horizon, env_rng, explore_rng));
  }
  return trajs;
}

std::vector<double> measure_costs(const std::vector<Trajectory>& trajs, const CmdpSpec& spec) {
  std::vector<double> out(spec.num_constraints());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = estimate_policy_cost(trajs, spec.discount, i);
  return out;
}

bool strictly_safe(const std::vector<double>& measured, const std::vector<double>& thresholds) {
  for (std::size_t i = 0; i < measured.size(); ++i) {
    if (!(measured[i] < thresholds[i])) return false;
  }
  return true;
}

void fit_critics(Critics& critics, const DeterministicPolicy& policy, const std::vector<Trajectory>& trajs,
                 const ExperimentConfig& config, Rng& rng) {
  const Matrix inputs = q_inputs(trajs);
  auto fit = [&](QFunction& q, Signal signal) {
    const LambdaReturns targets = td_lambda_targets(trajs, q, policy, config.discount, config.lambda, signal, config.terminal);
    fit_q(q, inputs, flatten(targets), config.q_fit, rng);
  };
  fit(critics.qr, Signal::reward());
  for (std::size_t i = 0; i < critics.qcs.size(); ++i) fit(critics.qcs[i], Signal::cost(i));
}

void write_snapshot(const std::filesystem::path& dir, std::size_t epoch, const DeterministicPolicy& policy,
                    std::vector<std::filesystem::path>& written) {
  char name[64];
  std::snprintf(name, sizeof name, "policy_%06zu.bin", epoch);
  const auto path = dir / "snapshots" / name;
  save_params(path, policy.net());
  written.push_back(path);
}

}  // namespace

std::string format_metrics_row(const MetricsRow& row) {
  std::string out = std::to_string(row.epoch);
  out += ',' + format_double(row.undiscounted_return);
  out += ',' + join(row.undiscounted_cost);
  out += ',' + join(row.discounted_cost);
  out += ',' + join(row.epsilon);
  out += row.violated ? ",1" : ",0";
  out += ',' + format_double(row.kl_after);
  out += ',' + std::to_string(row.linesearch_steps);
  out += row.backtracked ? ",1" : ",0";
  return out;
}

SafeStart safe_initialize(const Environment& env, const ExperimentConfig& config) {
  const CmdpSpec& spec = env.spec();
  Rng init_rng = make_stream(config.seed, Stream::kInit, 0);
  Rng env_rng = make_stream(config.seed, Stream::kInit, 1);
  Rng explore_rng = make_stream(config.seed, Stream::kInit, 2);
  Rng fit_rng = make_stream(config.seed, Stream::kInit, 3);

  SafeStart start;
  start.policy = DeterministicPolicy::initialized(spec.state_dim, config.policy_hidden, spec.action_low,
                                                  spec.action_high, init_rng, config.policy_init_scale);
  Critics critics{QFunction::initialized(spec.state_dim, spec.action_dim, config.q_hidden, init_rng), {}};
  for (std::size_t i = 0; i < spec.num_constraints(); ++i) {
    critics.qcs.push_back(QFunction::initialized(spec.state_dim, spec.action_dim, config.q_hidden, init_rng));
  }

  const double explore_std = config.trust_region.exploration_std;
  for (std::size_t it = 0;; ++it) {
    const auto trajs = collect(env, start.policy, config.trajectories, explore_std, env_rng, explore_rng);
    start.measured = measure_costs(trajs, spec);
    if (strictly_safe(start.measured, spec.thresholds)) break;
    if (it == config.init_max_iters) {
      throw InitializationFailure("no safe policy found after " + std::to_string(it) + " cost-recovery steps");
    }
    fit_critics(critics, start.policy, trajs, config, fit_rng);
    const ConstraintBudget budget = constraint_budget(spec.thresholds, start.measured, spec.discount);
    auto [next, report] = backtrack_update(start.policy, visited_states(trajs), critics.qr, critics.qcs, budget,
                                           config.trust_region, BacktrackMode::kCostOnly);
    start.policy = std::move(next);
    start.iterations = it + 1;
  }
  start.qr = std::move(critics.qr);
  start.qcs = std::move(critics.qcs);
  return start;
}

TrainingResult run_training(const ExperimentConfig& config) {
  const auto env = make_environment(config);
  return run_training(config, *env);
}

TrainingResult run_training(const ExperimentConfig& config, const Environment& env) {
  config.validate();
  const CmdpSpec& spec = env.spec();
  TrainingResult result;

  SafeStart start = safe_initialize(env, config);
  result.init_iterations = start.iterations;
  DeterministicPolicy policy = std::move(start.policy);
  Critics critics{std::move(start.qr), std::move(start.qcs)};

  Rng env_rng = make_stream(config.seed, Stream::kEnvironment);
  Rng explore_rng = make_stream(config.seed, Stream::kExploration);
  Rng fit_rng = make_stream(config.seed, Stream::kQFit);

  const bool write = !config.out_dir.empty();
  std::ofstream csv;
  if (write) {
    std::filesystem::create_directories(config.out_dir / "snapshots");
    csv.open(config.out_dir / "metrics.csv", std::ios::binary | std::ios::trunc);
    if (!csv) throw InputError("cannot write metrics to " + config.out_dir.string());
    csv << kMetricsHeader << '\n';
    csv.flush();
    write_snapshot(config.out_dir, 0, policy, result.snapshots);
    std::ofstream(config.out_dir / "config.json", std::ios::binary | std::ios::trunc) << config_to_json(config) << '\n';
  }

  const double explore_std = config.trust_region.exploration_std;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto trajs = collect(env, policy, config.trajectories, explore_std, env_rng, explore_rng);

    MetricsRow row;
    row.epoch = epoch;
    double ret = 0.0;
    for (const auto& t : trajs) ret += std::accumulate(t.rewards.begin(), t.rewards.end(), 0.0);
    row.undiscounted_return = ret / static_cast<double>(trajs.size());
    row.undiscounted_cost.assign(spec.num_constraints(), 0.0);
    for (std::size_t i = 0; i < spec.num_constraints(); ++i) {
      for (const auto& t : trajs) row.undiscounted_cost[i] += std::accumulate(t.costs[i].begin(), t.costs[i].end(), 0.0);
      row.undiscounted_cost[i] /= static_cast<double>(trajs.size());
    }
    row.discounted_cost = measure_costs(trajs, spec);
    const ConstraintBudget budget = constraint_budget(spec.thresholds, row.discounted_cost, spec.discount);
    row.epsilon = budget.epsilon;
    row.violated = false;
    for (std::size_t i = 0; i < spec.num_constraints(); ++i) {
      if (row.discounted_cost[i] > spec.thresholds[i]) row.violated = true;
    }

    try {
      fit_critics(critics, policy, trajs, config, fit_rng);
      const Matrix states = visited_states(trajs);
      std::pair<DeterministicPolicy, UpdateReport> step;
      switch (config.algo) {
        case Algo::kLbpo:
          step = lbpo_update(policy, states, critics.qr, critics.qcs, budget, config.barrier, config.trust_region);
          break;
        case Algo::kBacktrack:
          step = backtrack_update(policy, states, critics.qr, critics.qcs, budget, config.trust_region,
                                  BacktrackMode::kAuto);
          break;
        case Algo::kUnconstrained:
          step = backtrack_update(policy, states, critics.qr, critics.qcs, budget, config.trust_region,
                                  BacktrackMode::kRewardOnly);
          break;
      }
      policy = std::move(step.first);
      const UpdateReport& report = step.second;
      row.accepted = report.accepted;
      row.kl_after = report.kl_after;
      row.linesearch_steps = report.linesearch_steps;
      row.backtracked = report.backtracked;
      row.min_margin = report.min_margin;
    } catch (...) {
      if (write) csv.flush();
      throw;
    }

    if (write) {
      csv << format_metrics_row(row) << '\n';
      csv.flush();
      if (epoch % config.snapshot_every == 0) write_snapshot(config.out_dir, epoch, policy, result.snapshots);
    }
    result.rows.push_back(std::move(row));
  }
  result.final_policy = std::move(policy);
  return result;
}

std::size_t violation_count(std::span<const MetricsRow> rows) {
  return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.violated; }));
}

double violation_fraction(std::span<const MetricsRow> rows) {
  if (rows.empty()) throw InputError("violation_fraction needs at least one row");
  return static_cast<double>(violation_count(rows)) / static_cast<double>(rows.size());
}

double tail_mean_cost(std::span<const MetricsRow> rows, std::size_t window, std::size_t constraint) {
  if (rows.empty()) throw InputError("tail mean of an empty run");
  const auto tail = rows.last(std::min(window, rows.size()));
  double acc = 0.0;
  for (const auto& r : tail) acc += r.discounted_cost.at(constraint);
  return acc / static_cast<double>(tail.size());
}

double tail_mean_return(std::span<const MetricsRow> rows, std::size_t window) {
  if (rows.empty()) throw InputError("tail mean of an empty run");
  const auto tail = rows.last(std::min(window, rows.size()));
  double acc = 0.0;
  for (const auto& r : tail) acc += r.undiscounted_return;
  return acc / static_cast<double>(tail.size());
}

namespace {

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sem_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
}

std::size_t kl_exceptions(const std::vector<MetricsRow>& rows, double mu) {
  return static_cast<std::size_t>(std::count_if(
      rows.begin(), rows.end(), [mu](const MetricsRow& r) { return r.accepted && r.kl_after > mu + 1e-6; }));
}

std::filesystem::path run_dir(const std::filesystem::path& root, const std::string& name) {
  return root.empty() ? std::filesystem::path{} : root / "runs" / name;
}

}  // namespace

double SampleSweepCell::mean_violations() const {
  std::vector<double> v(violations.begin(), violations.end());
  return mean_of(v);
}

double SampleSweepCell::mean_fraction() const { return mean_of(fractions); }

std::vector<SampleSweepCell> sweep_samples(const ExperimentConfig& base, std::span<const Algo> algos,
                                           std::span<const std::size_t> sample_counts,
                                           std::span<const std::uint64_t> seeds) {
  for (auto n : sample_counts) {
    if (n == 0) throw InputError("sample counts must be positive");
  }
  std::vector<SampleSweepCell> cells;
  for (Algo algo : algos) {
    for (std::size_t count : sample_counts) {
      SampleSweepCell cell;
      cell.algo = algo;
      cell.trajectories = count;
      for (std::uint64_t seed : seeds) {
        ExperimentConfig cfg = base;
        cfg.algo = algo;
        cfg.trajectories = count;
        cfg.seed = seed;
        cfg.out_dir = run_dir(base.out_dir, to_string(algo) + "_n" + std::to_string(count) + "_s" + std::to_string(seed));
        const TrainingResult run = run_training(cfg);
        cell.violations.push_back(violation_count(run.rows));
        cell.fractions.push_back(run.rows.empty() ? 0.0 : violation_fraction(run.rows));
        cell.accepted_kl_exceptions.push_back(kl_exceptions(run.rows, cfg.trust_region.mu));
      }
      cells.push_back(std::move(cell));
    }
  }
  if (!base.out_dir.empty()) {
    std::filesystem::create_directories(base.out_dir);
    std::ofstream out(base.out_dir / "samples.csv", std::ios::binary | std::ios::trunc);
    out << "algo,trajectories,mean_violations,mean_fraction,violations_per_seed\n";
    for (const auto& c : cells) {
      out << to_string(c.algo) << ',' << c.trajectories << ',' << format_double(c.mean_violations()) << ','
          << format_double(c.mean_fraction()) << ',';
      for (std::size_t i = 0; i < c.violations.size(); ++i) out << (i ? ";" : "") << c.violations[i];
      out << '\n';
    }
  }
  return cells;
}

namespace {

std::vector<double> column(const std::vector<std::vector<double>>& table, std::size_t j) {
  std::vector<double> out;
  for (const auto& row : table) out.push_back(row.at(j));
  return out;
}

}  // namespace

double BetaSweepResult::mean_cost(std::size_t b) const { return mean_of(column(cost, b)); }
double BetaSweepResult::sem_cost(std::size_t b) const { return sem_of(column(cost, b)); }
double BetaSweepResult::mean_return(std::size_t b) const { return mean_of(column(ret, b)); }
double BetaSweepResult::sem_return(std::size_t b) const { return sem_of(column(ret, b)); }

std::string BetaSweepResult::to_csv() const {
  std::string out = "seed";
  for (double b : betas) out += ",cost_beta_" + format_double(b) + ",return_beta_" + format_double(b);
  out += '\n';
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    out += std::to_string(seeds[s]);
    for (std::size_t b = 0; b < betas.size(); ++b) out += ',' + format_double(cost[s][b]) + ',' + format_double(ret[s][b]);
    out += '\n';
  }
  out += "mean";
  for (std::size_t b = 0; b < betas.size(); ++b) out += ',' + format_double(mean_cost(b)) + ',' + format_double(mean_return(b));
  out += "\nsem";
  for (std::size_t b = 0; b < betas.size(); ++b) out += ',' + format_double(sem_cost(b)) + ',' + format_double(sem_return(b));
  out += '\n';
  return out;
}

BetaSweepResult sweep_beta(const ExperimentConfig& base, std::span<const double> betas,
                           std::span<const std::uint64_t> seeds) {
  if (betas.empty() || seeds.empty()) throw InputError("beta sweep needs at least one beta and one seed");
  BetaSweepResult result;
  result.betas.assign(betas.begin(), betas.end());
  result.seeds.assign(seeds.begin(), seeds.end());
  for (std::uint64_t seed : seeds) {
    std::vector<double> costs;
    std::vector<double> returns;
    for (double beta : betas) {
      ExperimentConfig cfg = base;
      cfg.seed = seed;
      cfg.barrier.beta = beta;
      cfg.out_dir = run_dir(base.out_dir, "beta_" + format_double(beta) + "_s" + std::to_string(seed));
      const TrainingResult run = run_training(cfg);
      if (run.rows.empty()) throw InputError("beta sweep needs at least one epoch");
      costs.push_back(tail_mean_cost(run.rows));
      returns.push_back(tail_mean_return(run.rows));
      result.accepted_kl_exceptions += kl_exceptions(run.rows, cfg.trust_region.mu);
    }
    result.cost.push_back(std::move(costs));
    result.ret.push_back(std::move(returns));
  }
  if (!base.out_dir.empty()) {
    std::filesystem::create_directories(base.out_dir);
    std::ofstream(base.out_dir / "beta.csv", std::ios::binary | std::ios::trunc) << result.to_csv();
  }
  return result;
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw InputError(path.string() + " is not a metrics file");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    if (f.size() != 9) throw InputError("malformed metrics row in " + path.string());
    MetricsRow r;
    try {
      r.epoch = std::stoul(f[0]);
      r.undiscounted_return = std::stod(f[1]);
      r.undiscounted_cost = split_doubles(f[2]);
      r.discounted_cost = split_doubles(f[3]);
      r.epsilon = split_doubles(f[4]);
      r.violated = f[5] == "1";
      r.kl_after = std::stod(f[6]);
      r.linesearch_steps = std::stoul(f[7]);
      r.backtracked = f[8] == "1";
    } catch (const std::logic_error&) {
      throw InputError("malformed metrics row in " + path.string());
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string report(std::span<const std::filesystem::path> metrics_files) {
  std::string out = "file,epochs,violation_fraction,final_cost,final_return,backtracked_fraction\n";
  for (const auto& path : metrics_files) {
    const auto rows = read_metrics(path);
    out += path.string() + ',' + std::to_string(rows.size());
    if (rows.empty()) {
      out += ",,,,\n";
      continue;
    }
    const double backtracked =
        static_cast<double>(std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.backtracked; })) /
        static_cast<double>(rows.size());
    out += ',' + format_double(violation_fraction(rows)) + ',' + format_double(tail_mean_cost(rows)) + ',' +
           format_double(tail_mean_return(rows)) + ',' + format_double(backtracked) + '\n';
  }
  return out;
}

}  // namespace lbpo
