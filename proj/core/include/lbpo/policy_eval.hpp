#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "lbpo/cmdp.hpp"
#include "lbpo/func_approx.hpp"

namespace lbpo {

/// Which per-step signal a value estimate tracks.
struct Signal {
  enum class Kind { kReward, kCost };
  Kind kind = Kind::kReward;
  std::size_t index = 0;  // constraint index for kCost

  static Signal reward() { return {Kind::kReward, 0}; }
  static Signal cost(std::size_t i) { return {Kind::kCost, i}; }

  std::span<const double> of(const Trajectory& traj) const;
};

/// Per-(trajectory, timestep) regression targets for one Q-function.
using LambdaReturns = std::vector<std::vector<double>>;

/// V(s) = Q(s, pi(s)) used to bootstrap the lambda-return recursion.
using BootstrapFn = std::function<double(const Vector& state)>;

enum class TerminalBootstrap { kQ, kZero };

/// G_t = sig_t + discount * [(1 - lambda) V(s_{t+1}) + lambda G_{t+1}], with
/// G_H = V(s_H) (or 0 for TerminalBootstrap::kZero), computed backward per
/// trajectory.
LambdaReturns td_lambda_targets(std::span<const Trajectory> trajectories, const BootstrapFn& bootstrap,
                                double discount, double lambda, Signal signal,
                                TerminalBootstrap terminal = TerminalBootstrap::kQ);

/// Same recursion with V(s) = q(s, policy(s)), evaluated in one batch.
LambdaReturns td_lambda_targets(std::span<const Trajectory> trajectories, const QFunction& q,
                                const DeterministicPolicy& policy, double discount, double lambda, Signal signal,
                                TerminalBootstrap terminal = TerminalBootstrap::kQ);

struct FitOptions {
  double learning_rate = 1e-3;
  std::size_t epochs = 200;
  std::size_t batch_size = 256;
};

struct FitResult {
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

/// Mini-batch Adam on the mean squared error between q(inputs) and targets.
/// Inputs hold one stacked (state, action) sample per column. Throws
/// TrainingDivergence when the loss becomes non-finite.
FitResult fit_q(QFunction& q, const Matrix& inputs, const Vector& targets, const FitOptions& options, Rng& rng);

/// Stacked (s_t, a_exec_t) columns for every step of every trajectory.
Matrix q_inputs(std::span<const Trajectory> trajectories);
/// s_0 .. s_{H-1} of every trajectory, one per column.
Matrix visited_states(std::span<const Trajectory> trajectories);
Vector flatten(const LambdaReturns& returns);

/// Mean over trajectories of the discounted cost of constraint `index`.
double estimate_policy_cost(std::span<const Trajectory> trajectories, double discount, std::size_t index);

/// Per-constraint Lyapunov budget: epsilon_i = (1 - discount) (d0_i - measured_i).
struct ConstraintBudget {
  std::vector<double> epsilon;
  std::vector<double> measured;
  std::vector<double> thresholds;
  double discount = 0.0;

  std::size_t size() const { return epsilon.size(); }
  bool all_safe() const;
  /// Largest threshold-normalized violation; lowest index on ties.
  std::size_t most_violated() const;
};

ConstraintBudget constraint_budget(std::span<const double> thresholds, std::span<const double> measured,
                                   double discount);

/// Table-backed Q for tabular CMDPs. Trajectory states and actions are
/// one-element vectors holding the index.
class TabularQ {
 public:
  TabularQ(std::size_t num_states, std::size_t num_actions) : table_(Matrix::Zero(num_states, num_actions)) {}

  double value(std::size_t s, std::size_t a) const { return table_(s, a); }
  /// V(s) = sum_a pi(a|s) Q(s, a)
  double state_value(const TabularPolicy& policy, std::size_t s) const;
  const Matrix& table() const { return table_; }
  Matrix& table() { return table_; }

  /// Exact least squares for a table: each visited cell becomes the mean of
  /// its targets; unvisited cells keep their value.
  void fit(std::span<const Trajectory> trajectories, const LambdaReturns& targets);

 private:
  Matrix table_;
};

/// Tabular rollout from a forced first (state, action), then following `policy`.
Trajectory tabular_rollout(const TabularCmdp& cmdp, const TabularPolicy& policy, std::size_t state,
                           std::size_t action, std::size_t horizon, Rng& rng);

struct TabularTdOptions {
  double lambda = 0.97;
  std::size_t horizon = 30;
  std::size_t rollouts_per_pair = 200;
  std::size_t sweeps = 10;
  std::size_t burn_in = 3;
};

/// Repeated TD(lambda) regression on exhaustive rollouts (every (s, a) pair
/// used as a start). Tables fitted after the first `burn_in` sweeps are
/// averaged into the result.
TabularQ evaluate_tabular_td(const TabularCmdp& cmdp, const TabularPolicy& policy, Signal signal,
                             const TabularTdOptions& options, Rng& rng);

}  // namespace lbpo
