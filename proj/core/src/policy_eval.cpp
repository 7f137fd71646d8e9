#include "lbpo/policy_eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lbpo/errors.hpp"

namespace lbpo {

std::span<const double> Signal::of(const Trajectory& traj) const {
  if (kind == Kind::kReward) return traj.rewards;
  if (index >= traj.costs.size()) throw InputError("signal refers to a missing constraint");
  return traj.costs[index];
}

namespace {

// values[t] = V(s_{t+1}) for t = 0 .. H-1.
std::vector<double> lambda_returns(std::span<const double> sig, std::span<const double> values, double discount,
                                   double lambda, TerminalBootstrap terminal) {
  const std::size_t horizon = sig.size();
  std::vector<double> g(horizon);
  double next_return = (terminal == TerminalBootstrap::kQ && horizon > 0) ? values[horizon - 1] : 0.0;
  for (std::size_t t = horizon; t-- > 0;) {
    // G_H is the bootstrap itself, so the last step needs no blend.
    const double next_value = (t + 1 == horizon) ? next_return : values[t];
    g[t] = sig[t] + discount * ((1.0 - lambda) * next_value + lambda * next_return);
    next_return = g[t];
  }
  return g;
}

void check_td_args(std::span<const Trajectory> trajectories, double lambda) {
  if (trajectories.empty()) throw InputError("td_lambda_targets: empty trajectory set");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InputError("lambda must lie in [0, 1]");
}

}  // namespace

LambdaReturns td_lambda_targets(std::span<const Trajectory> trajectories, const BootstrapFn& bootstrap,
                                double discount, double lambda, Signal signal, TerminalBootstrap terminal) {
  check_td_args(trajectories, lambda);
  LambdaReturns out;
  out.reserve(trajectories.size());
  std::vector<double> values;
  for (const Trajectory& traj : trajectories) {
    values.resize(traj.horizon());
    for (std::size_t t = 0; t < traj.horizon(); ++t) values[t] = bootstrap(traj.states[t + 1]);
    out.push_back(lambda_returns(signal.of(traj), values, discount, lambda, terminal));
  }
  return out;
}

LambdaReturns td_lambda_targets(std::span<const Trajectory> trajectories, const QFunction& q,
                                const DeterministicPolicy& policy, double discount, double lambda, Signal signal,
                                TerminalBootstrap terminal) {
  check_td_args(trajectories, lambda);
  std::size_t total = 0;
  for (const auto& traj : trajectories) total += traj.horizon();
  Matrix next_states(static_cast<Eigen::Index>(q.state_dim()), static_cast<Eigen::Index>(total));
  Eigen::Index col = 0;
  for (const auto& traj : trajectories) {
    for (std::size_t t = 1; t <= traj.horizon(); ++t) next_states.col(col++) = traj.states[t];
  }
  const Vector values = q.value_batch(next_states, policy.act_batch(next_states));

  LambdaReturns out;
  out.reserve(trajectories.size());
  const double* cursor = values.data();
  for (const Trajectory& traj : trajectories) {
    out.push_back(lambda_returns(signal.of(traj), {cursor, traj.horizon()}, discount, lambda, terminal));
    cursor += traj.horizon();
  }
  return out;
}

Matrix q_inputs(std::span<const Trajectory> trajectories) {
  if (trajectories.empty()) return {};
  const auto sd = trajectories.front().states.front().size();
  const auto ad = trajectories.front().actions_exec.empty() ? 0 : trajectories.front().actions_exec.front().size();
  std::size_t total = 0;
  for (const auto& traj : trajectories) total += traj.horizon();
  Matrix x(sd + ad, static_cast<Eigen::Index>(total));
  Eigen::Index col = 0;
  for (const auto& traj : trajectories) {
    for (std::size_t t = 0; t < traj.horizon(); ++t, ++col) {
      x.col(col).head(sd) = traj.states[t];
      x.col(col).tail(ad) = traj.actions_exec[t];
    }
  }
  return x;
}

Matrix visited_states(std::span<const Trajectory> trajectories) {
  if (trajectories.empty()) return {};
  const auto sd = trajectories.front().states.front().size();
  std::size_t total = 0;
  for (const auto& traj : trajectories) total += traj.horizon();
  Matrix s(sd, static_cast<Eigen::Index>(total));
  Eigen::Index col = 0;
  for (const auto& traj : trajectories) {
    for (std::size_t t = 0; t < traj.horizon(); ++t) s.col(col++) = traj.states[t];
  }
  return s;
}

Vector flatten(const LambdaReturns& returns) {
  std::size_t total = 0;
  for (const auto& r : returns) total += r.size();
  Vector v(static_cast<Eigen::Index>(total));
  Eigen::Index i = 0;
  for (const auto& r : returns) {
    for (double x : r) v(i++) = x;
  }
  return v;
}

// ---------------------------------------------------------------------------
// Regression

namespace {

double mse(const QFunction& q, const Matrix& inputs, const Vector& targets) {
  const Vector pred = q.net().forward_batch(inputs).row(0).transpose();
  return (pred - targets).squaredNorm() / static_cast<double>(targets.size());
}

}  // namespace

FitResult fit_q(QFunction& q, const Matrix& inputs, const Vector& targets, const FitOptions& options, Rng& rng) {
  if (!(options.learning_rate > 0.0)) throw InputError("learning_rate must be positive");
  if (options.batch_size == 0) throw InputError("batch_size must be positive");
  if (inputs.cols() != targets.size() || targets.size() == 0) throw InputError("fit_q: inputs and targets disagree");
  if (static_cast<std::size_t>(inputs.rows()) != q.state_dim() + q.action_dim()) {
    throw InputError("fit_q: input rows must equal state_dim + action_dim");
  }

  FitResult result;
  result.initial_loss = mse(q, inputs, targets);
  if (!std::isfinite(result.initial_loss)) throw TrainingDivergence("initial Q loss is not finite");
  if (options.epochs == 0) {
    result.final_loss = result.initial_loss;
    return result;
  }

  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  Mlp& net = q.net();
  Vector params = net.params();
  Vector m1 = Vector::Zero(params.size());
  Vector m2 = Vector::Zero(params.size());
  double beta1_pow = 1.0;
  double beta2_pow = 1.0;

  const auto n = static_cast<std::size_t>(targets.size());
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Matrix batch_x;
  Vector batch_y;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += options.batch_size) {
      const std::size_t len = std::min(options.batch_size, n - start);
      batch_x.resize(inputs.rows(), static_cast<Eigen::Index>(len));
      batch_y.resize(static_cast<Eigen::Index>(len));
      for (std::size_t j = 0; j < len; ++j) {
        batch_x.col(static_cast<Eigen::Index>(j)) = inputs.col(order[start + j]);
        batch_y(static_cast<Eigen::Index>(j)) = targets(order[start + j]);
      }
      const Vector grad = net.grad_params_fused(batch_x, [&](const Matrix& pred) -> Matrix {
        return (2.0 / static_cast<double>(len)) * (pred.row(0) - batch_y.transpose());
      });
      if (!grad.allFinite()) throw TrainingDivergence("non-finite Q gradient");

      beta1_pow *= kBeta1;
      beta2_pow *= kBeta2;
      m1 = kBeta1 * m1 + (1.0 - kBeta1) * grad;
      m2 = kBeta2 * m2 + (1.0 - kBeta2) * grad.cwiseAbs2();
      const double step = options.learning_rate / (1.0 - beta1_pow);
      const double bias2 = 1.0 - beta2_pow;
      params.array() -= step * m1.array() / ((m2.array() / bias2).sqrt() + kEps);
      net.set_params(params);
    }
  }
  result.final_loss = mse(q, inputs, targets);
  if (!std::isfinite(result.final_loss)) throw TrainingDivergence("Q regression diverged");
  return result;
}

// ---------------------------------------------------------------------------
// Cost estimates and budgets

double estimate_policy_cost(std::span<const Trajectory> trajectories, double discount, std::size_t index) {
  if (trajectories.empty()) throw InputError("estimate_policy_cost needs at least one trajectory");
  double total = 0.0;
  for (const auto& traj : trajectories) {
    if (index >= traj.costs.size()) throw InputError("constraint index out of range");
    total += discounted_sum(traj.costs[index], discount);
  }
  return total / static_cast<double>(trajectories.size());
}

bool ConstraintBudget::all_safe() const {
  return std::all_of(epsilon.begin(), epsilon.end(), [](double e) { return e > 0.0; });
}

std::size_t ConstraintBudget::most_violated() const {
  std::size_t best = 0;
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < size(); ++i) {
    const double excess = measured[i] - thresholds[i];
    const double normalized = thresholds[i] > 0.0 ? excess / thresholds[i]
                              : excess > 0.0      ? std::numeric_limits<double>::infinity()
                                                  : excess;
    if (normalized > worst) {
      worst = normalized;
      best = i;
    }
  }
  return best;
}

ConstraintBudget constraint_budget(std::span<const double> thresholds, std::span<const double> measured,
                                   double discount) {
  if (!(discount > 0.0 && discount < 1.0)) throw InputError("discount must lie in (0, 1)");
  if (thresholds.size() != measured.size()) throw InputError("one measurement per threshold required");
  ConstraintBudget b;
  b.thresholds.assign(thresholds.begin(), thresholds.end());
  b.measured.assign(measured.begin(), measured.end());
  b.discount = discount;
  for (std::size_t i = 0; i < thresholds.size(); ++i) b.epsilon.push_back((1.0 - discount) * (thresholds[i] - measured[i]));
  return b;
}

// ---------------------------------------------------------------------------
// Tabular evaluation

double TabularQ::state_value(const TabularPolicy& policy, std::size_t s) const {
  return policy.probs.row(static_cast<Eigen::Index>(s)).dot(table_.row(static_cast<Eigen::Index>(s)));
}

void TabularQ::fit(std::span<const Trajectory> trajectories, const LambdaReturns& targets) {
  Matrix sums = Matrix::Zero(table_.rows(), table_.cols());
  Matrix counts = Matrix::Zero(table_.rows(), table_.cols());
  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    const auto& traj = trajectories[k];
    for (std::size_t t = 0; t < traj.horizon(); ++t) {
      const auto s = static_cast<Eigen::Index>(traj.states[t](0));
      const auto a = static_cast<Eigen::Index>(traj.actions_exec[t](0));
      sums(s, a) += targets[k][t];
      counts(s, a) += 1.0;
    }
  }
  for (Eigen::Index s = 0; s < table_.rows(); ++s) {
    for (Eigen::Index a = 0; a < table_.cols(); ++a) {
      if (counts(s, a) > 0.0) table_(s, a) = sums(s, a) / counts(s, a);
    }
  }
}

Trajectory tabular_rollout(const TabularCmdp& cmdp, const TabularPolicy& policy, std::size_t state,
                           std::size_t action, std::size_t horizon, Rng& rng) {
  Trajectory traj;
  traj.costs.assign(cmdp.num_constraints(), {});
  auto as_vec = [](std::size_t v) { return Vector::Constant(1, static_cast<double>(v)); };
  std::size_t s = state;
  traj.states.push_back(as_vec(s));
  for (std::size_t t = 0; t < horizon; ++t) {
    const std::size_t a = (t == 0) ? action : sample_action(policy, s, rng);
    traj.actions_mean.push_back(as_vec(a));
    traj.actions_exec.push_back(as_vec(a));
    traj.rewards.push_back(cmdp.reward(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)));
    for (std::size_t i = 0; i < cmdp.num_constraints(); ++i) traj.costs[i].push_back(cmdp.costs[i](static_cast<Eigen::Index>(s)));
    s = sample_next_state(cmdp, s, a, rng);
    traj.states.push_back(as_vec(s));
  }
  return traj;
}

TabularQ evaluate_tabular_td(const TabularCmdp& cmdp, const TabularPolicy& policy, Signal signal,
                             const TabularTdOptions& options, Rng& rng) {
  if (options.burn_in >= options.sweeps) throw InputError("burn_in must be smaller than sweeps");
  TabularQ q(cmdp.num_states, cmdp.num_actions);
  TabularQ averaged(cmdp.num_states, cmdp.num_actions);
  for (std::size_t sweep = 0; sweep < options.sweeps; ++sweep) {
    std::vector<Trajectory> batch;
    batch.reserve(cmdp.num_states * cmdp.num_actions * options.rollouts_per_pair);
    for (std::size_t s = 0; s < cmdp.num_states; ++s) {
      for (std::size_t a = 0; a < cmdp.num_actions; ++a) {
        for (std::size_t k = 0; k < options.rollouts_per_pair; ++k) {
          batch.push_back(tabular_rollout(cmdp, policy, s, a, options.horizon, rng));
        }
      }
    }
    const TabularQ frozen = q;
    BootstrapFn bootstrap = [&](const Vector& state) {
      return frozen.state_value(policy, static_cast<std::size_t>(state(0)));
    };
    const auto targets = td_lambda_targets(batch, bootstrap, cmdp.discount, options.lambda, signal);
    q.fit(batch, targets);
    if (sweep >= options.burn_in) {
      const double k = static_cast<double>(sweep - options.burn_in + 1);
      averaged.table() += (q.table() - averaged.table()) / k;
    }
  }
  return averaged;
}

}  // namespace lbpo
