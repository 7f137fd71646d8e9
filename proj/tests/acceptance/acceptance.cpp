// Acceptance gate: one PASS/FAIL line per criterion.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "lbpo/config.hpp"
#include "lbpo/harness.hpp"
#include "lbpo/policy_eval.hpp"
#include "lbpo/safe_update.hpp"
#include "lbpo/tabular_oracle.hpp"

namespace fs = std::filesystem;
using namespace lbpo;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void emit(int id, const char* name, const Outcome& o) {
  if (!o.pass) ++failures;
  std::printf("[%s] criterion %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
  std::fflush(stdout);
}

Outcome guarded(const std::function<Outcome()>& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
}

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Matrix::NullaryExpr(rows, cols, [&]() { return n(rng); });
}

Outcome safety_theorem() {
  const auto start = Clock::now();
  const auto r = run_oracle_suite(OracleSuiteOptions{});
  const double t = seconds_since(start);
  const bool ok = r.instances == 10 && r.certified_policies == 500 && r.safety_ok() && t < 10.0;
  return {ok, fmt("%zu instances, %zu certified policies, %zu exceptions, max cost excess %.2e, %.2fs", r.instances,
                  r.certified_policies, r.safety_exceptions, r.max_certified_cost_excess, t)};
}

Outcome offset_identity() {
  const auto start = Clock::now();
  Rng rng = make_stream(1, Stream::kOracle);
  std::uniform_real_distribution<double> eps(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> states(3, 25);
  double worst = 0.0;
  for (int k = 0; k < 50; ++k) {
    const auto cmdp = random_tabular_cmdp(states(rng), 4, 0.9, rng);
    const auto pi = random_tabular_policy(cmdp.num_states, 4, rng);
    worst = std::max(worst, q_l_offset_check(cmdp, pi, eps(rng)));
  }
  const double t = seconds_since(start);
  return {worst < 1e-10 && t < 5.0, fmt("max |Q_L - Q_C - eps/(1-gamma)| = %.2e over 50 CMDPs, %.2fs", worst, t)};
}

Outcome budget_bound() {
  const auto r = run_oracle_suite(OracleSuiteOptions{});
  return {r.budget_ok(), fmt("max L(s0) - d0 = %.2e, max visitation error = %.2e", r.max_start_excess,
                             r.max_visitation_error)};
}

struct SweepArtifacts {
  std::size_t kl_exceptions = 0;
  std::size_t runs = 0;
  bool ran = false;
};

Outcome robustness(const fs::path& out, SweepArtifacts& art) {
  const auto start = Clock::now();
  ExperimentConfig base = ExperimentConfig::defaults(EnvKind::kDidactic);
  base.barrier.beta = 0.005;
  base.epochs = 100;
  base.out_dir = out.empty() ? fs::path() : out / "samples";
  const std::vector<Algo> algos{Algo::kLbpo, Algo::kBacktrack};
  const std::vector<std::size_t> counts{10, 30, 100};
  const std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  const auto cells = sweep_samples(base, algos, counts, seeds);
  const double t = seconds_since(start);

  bool ordered = true;
  double lbpo_fraction_100 = 1.0;
  std::string table;
  for (std::size_t c : counts) {
    double lbpo = 0.0, backtrack = 0.0;
    for (const auto& cell : cells) {
      if (cell.trajectories != c) continue;
      if (cell.algo == Algo::kLbpo) {
        lbpo = cell.mean_violations();
        if (c == 100) lbpo_fraction_100 = cell.mean_fraction();
      } else {
        backtrack = cell.mean_violations();
      }
      for (std::size_t e : cell.accepted_kl_exceptions) art.kl_exceptions += e;
      art.runs += cell.violations.size();
    }
    ordered = ordered && lbpo <= backtrack;
    table += fmt(" N=%zu lbpo %.1f / backtrack %.1f;", c, lbpo, backtrack);
  }
  art.ran = true;
  const bool ok = ordered && lbpo_fraction_100 <= 0.10 && t < 15 * 60.0;
  return {ok, fmt("mean violations%s lbpo fraction at N=100 %.3f, %.0fs", table.c_str(), lbpo_fraction_100, t)};
}

Outcome risk_aversion(const fs::path& out, SweepArtifacts& art) {
  const auto start = Clock::now();
  ExperimentConfig base = ExperimentConfig::defaults(EnvKind::kDidactic);
  base.epochs = 100;
  base.out_dir = out.empty() ? fs::path() : out / "beta";
  const std::vector<double> betas{0.005, 0.01, 0.02};
  const std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  const auto r = sweep_beta(base, betas, seeds);
  const double t = seconds_since(start);
  art.kl_exceptions += r.accepted_kl_exceptions;
  art.runs += betas.size() * seeds.size();
  art.ran = true;

  bool monotone = true;
  std::string table;
  for (std::size_t b = 0; b < betas.size(); ++b) {
    table += fmt(" beta %.3g cost %.3f +- %.3f;", betas[b], r.mean_cost(b), r.sem_cost(b));
    if (b == 0) continue;
    const double pooled = std::sqrt(r.sem_cost(b) * r.sem_cost(b) + r.sem_cost(b - 1) * r.sem_cost(b - 1));
    monotone = monotone && r.mean_cost(b) <= r.mean_cost(b - 1) + pooled;
  }
  return {monotone && t < 15 * 60.0, fmt("final-10 mean cost%s %.0fs", table.c_str(), t)};
}

Outcome trust_region_contract(const SweepArtifacts& art) {
  if (!art.ran) return {false, "sweeps did not complete"};
  return {art.kl_exceptions == 0,
          fmt("%zu accepted updates above mu + 1e-6 across %zu runs", art.kl_exceptions, art.runs)};
}

Outcome numerical_kernels() {
  Rng rng = make_stream(7, Stream::kOracle);

  double cg_residual = 0.0;
  for (int k = 0; k < 10; ++k) {
    const Matrix a = gaussian(50, 50, rng);
    const Matrix h = a * a.transpose() / 50.0 + Matrix::Identity(50, 50);
    const Vector g = gaussian(50, 1, rng);
    const auto r = conjugate_gradient([&](const Vector& v) -> Vector { return h * v; }, g, 50, 1e-12);
    const Vector dense = h.ldlt().solve(g);
    cg_residual = std::max({cg_residual, (h * r.x - g).norm(), (r.x - dense).norm()});
  }

  double grad_error = 0.0;
  BarrierConfig barrier;
  barrier.beta = 0.05;
  const Vector low = Vector::Constant(2, -0.2), high = Vector::Constant(2, 0.2);
  std::uniform_real_distribution<double> eps(0.01, 0.5);
  for (int k = 0; k < 20; ++k) {
    const auto policy = DeterministicPolicy::initialized(2, {6}, low, high, rng, 1.0);
    const auto qr = QFunction::initialized(2, 2, {8}, rng);
    const std::vector<QFunction> qcs{QFunction::initialized(2, 2, {8}, rng)};
    const Matrix states = gaussian(2, 6, rng);
    ConstraintBudget budget;
    budget.epsilon = {eps(rng)};
    budget.thresholds = {1.0};
    budget.measured = {0.0};
    budget.discount = 0.99;
    const Vector g = lbpo_surrogate_gradient(states, policy, qr, qcs, budget, barrier);
    Vector fd(g.size());
    const double step = 1e-6;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      Vector p = policy.params();
      p(i) += step;
      const double up = lbpo_surrogate_value(states, policy.with_params(p), policy, qr, qcs, budget, barrier);
      p(i) -= 2 * step;
      const double down = lbpo_surrogate_value(states, policy.with_params(p), policy, qr, qcs, budget, barrier);
      fd(i) = (up - down) / (2 * step);
    }
    grad_error = std::max(grad_error, (g - fd).norm() / std::max(fd.norm(), 1e-12));
  }

  double asymmetry = 0.0;
  for (int k = 0; k < 20; ++k) {
    const auto policy = DeterministicPolicy::initialized(2, {16, 16}, low, high, rng, 1.0);
    const Matrix states = gaussian(2, 30, rng);
    const auto n = static_cast<Eigen::Index>(policy.num_params());
    const Vector u = gaussian(n, 1, rng), v = gaussian(n, 1, rng);
    const double uhv = u.dot(fisher_vector_product(policy, states, v, 0.05, 1e-2));
    const double vhu = v.dot(fisher_vector_product(policy, states, u, 0.05, 1e-2));
    asymmetry = std::max(asymmetry, std::abs(uhv - vhu));
  }

  const bool ok = cg_residual < 1e-8 && grad_error < 1e-4 && asymmetry < 1e-8;
  return {ok, fmt("CG residual %.2e, surrogate gradient rel. error %.2e, FVP asymmetry %.2e", cg_residual, grad_error,
                  asymmetry)};
}

Trajectory scalar_trajectory(Rng& rng, std::size_t horizon) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  Trajectory traj;
  traj.costs.resize(1);
  for (std::size_t t = 0; t <= horizon; ++t) traj.states.push_back(Vector::Constant(1, u(rng)));
  for (std::size_t t = 0; t < horizon; ++t) {
    traj.actions_mean.push_back(Vector::Zero(1));
    traj.actions_exec.push_back(Vector::Zero(1));
    traj.rewards.push_back(u(rng));
    traj.costs[0].push_back(std::abs(u(rng)));
  }
  return traj;
}

Outcome td_lambda() {
  Rng rng = make_stream(8, Stream::kOracle);
  std::vector<Trajectory> trajs;
  for (int k = 0; k < 50; ++k) trajs.push_back(scalar_trajectory(rng, 20));
  const BootstrapFn v = [](const Vector& s) { return std::sin(3.0 * s(0)); };
  const double gamma = 0.97;

  double mc_error = 0.0, one_step_error = 0.0;
  const auto mc = td_lambda_targets(trajs, v, gamma, 1.0, Signal::cost(0), TerminalBootstrap::kZero);
  const auto td0 = td_lambda_targets(trajs, v, gamma, 0.0, Signal::cost(0), TerminalBootstrap::kQ);
  for (std::size_t k = 0; k < trajs.size(); ++k) {
    const auto& c = trajs[k].costs[0];
    for (std::size_t t = 0; t < c.size(); ++t) {
      mc_error = std::max(mc_error, std::abs(mc[k][t] - discounted_sum(std::span(c).subspan(t), gamma)));
      one_step_error = std::max(one_step_error, std::abs(td0[k][t] - (c[t] + gamma * v(trajs[k].states[t + 1]))));
    }
  }

  GridworldOptions opt;
  opt.hazards = {{2, 1}, {2, 2}, {2, 3}};
  const auto cmdp = build_gridworld(opt);
  const auto policy = random_tabular_policy(cmdp.num_states, cmdp.num_actions, rng);
  double sup = 0.0;
  for (const Signal sig : {Signal::reward(), Signal::cost(0)}) {
    const auto fitted = evaluate_tabular_td(cmdp, policy, sig, TabularTdOptions{}, rng);
    sup = std::max(sup, (fitted.table() - exact_q(cmdp, policy, sig)).cwiseAbs().maxCoeff());
  }
  const bool ok = mc_error <= 1e-12 && one_step_error <= 1e-12 && sup < 0.05;
  return {ok, fmt("lambda=1 error %.2e, lambda=0 error %.2e, tabular sup-norm %.4f on 5x5 gridworld", mc_error,
                  one_step_error, sup)};
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

Outcome determinism(const fs::path& out) {
  const fs::path root = out.empty() ? fs::temp_directory_path() / "lbpo_acceptance_determinism" : out / "determinism";
  std::size_t compared = 0;
  bool identical = true;
  std::vector<ExperimentConfig> configs;
  for (Algo algo : {Algo::kLbpo, Algo::kBacktrack, Algo::kUnconstrained}) {
    auto c = ExperimentConfig::defaults(EnvKind::kDidactic);
    c.algo = algo;
    c.seed = 11;
    c.epochs = 15;
    configs.push_back(c);
  }
  auto grid = ExperimentConfig::defaults(EnvKind::kGridworld);
  grid.seed = 11;
  grid.epochs = 10;
  configs.push_back(grid);
  for (std::size_t i = 0; i < configs.size(); ++i) {
    std::string first;
    for (int rep = 0; rep < 2; ++rep) {
      auto c = configs[i];
      c.out_dir = root / ("run" + std::to_string(i) + "_" + std::to_string(rep));
      fs::remove_all(c.out_dir);
      run_training(c);
      const std::string csv = slurp(c.out_dir / "metrics.csv");
      if (rep == 0) {
        first = csv;
      } else {
        identical = identical && csv == first && !csv.empty();
        ++compared;
      }
    }
  }
  return {identical, fmt("%zu repeated runs compared byte for byte", compared)};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path out;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--out" && i + 1 < argc) out = argv[++i];
  }
  if (!out.empty()) fs::create_directories(out);

  SweepArtifacts art;
  emit(1, "Lyapunov safety", guarded(safety_theorem));
  emit(2, "offset identity", guarded(offset_identity));
  emit(3, "budget bound", guarded(budget_bound));
  emit(4, "didactic robustness", guarded([&] { return robustness(out, art); }));
  emit(5, "risk aversion", guarded([&] { return risk_aversion(out, art); }));
  emit(6, "trust region", guarded([&] { return trust_region_contract(art); }));
  emit(7, "numerical kernels", guarded(numerical_kernels));
  emit(8, "TD(lambda)", guarded(td_lambda));
  emit(9, "determinism", guarded([&] { return determinism(out); }));
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
