#include <gtest/gtest.h>

#include <cmath>

#include "lbpo/cmdp.hpp"
#include "lbpo/errors.hpp"
#include "lbpo/policy_eval.hpp"
#include "lbpo/tabular_oracle.hpp"

namespace lbpo {
namespace {

// States are scalars so a bootstrap can read its value straight off the state.
Trajectory scalar_trajectory(const std::vector<double>& states, const std::vector<double>& rewards,
                             const std::vector<double>& costs) {
  Trajectory traj;
  for (double s : states) traj.states.push_back(Vector::Constant(1, s));
  for (std::size_t t = 0; t < rewards.size(); ++t) {
    traj.actions_mean.push_back(Vector::Zero(1));
    traj.actions_exec.push_back(Vector::Zero(1));
  }
  traj.rewards = rewards;
  traj.costs = {costs};
  return traj;
}

const BootstrapFn kStateIsValue = [](const Vector& s) { return s(0); };

std::vector<Trajectory> random_trajectories(Rng& rng, std::size_t count, std::size_t horizon) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<Trajectory> out;
  for (std::size_t k = 0; k < count; ++k) {
    std::vector<double> s(horizon + 1), r(horizon), c(horizon);
    for (auto& x : s) x = u(rng);
    for (auto& x : r) x = u(rng);
    for (auto& x : c) x = std::abs(u(rng));
    out.push_back(scalar_trajectory(s, r, c));
  }
  return out;
}

TEST(TdLambda, LambdaOneWithZeroTailIsMonteCarlo) {
  Rng rng(1);
  const auto trajs = random_trajectories(rng, 20, 15);
  for (const Signal sig : {Signal::reward(), Signal::cost(0)}) {
    const auto g = td_lambda_targets(trajs, kStateIsValue, 0.97, 1.0, sig, TerminalBootstrap::kZero);
    for (std::size_t k = 0; k < trajs.size(); ++k) {
      const auto x = sig.of(trajs[k]);
      for (std::size_t t = 0; t < x.size(); ++t) {
        EXPECT_NEAR(g[k][t], discounted_sum(x.subspan(t), 0.97), 1e-12);
      }
    }
  }
}

TEST(TdLambda, LambdaZeroIsOneStepBootstrap) {
  Rng rng(2);
  const auto trajs = random_trajectories(rng, 20, 15);
  const auto g = td_lambda_targets(trajs, kStateIsValue, 0.9, 0.0, Signal::reward());
  for (std::size_t k = 0; k < trajs.size(); ++k) {
    for (std::size_t t = 0; t < trajs[k].horizon(); ++t) {
      EXPECT_NEAR(g[k][t], trajs[k].rewards[t] + 0.9 * trajs[k].states[t + 1](0), 1e-12);
    }
  }
}

TEST(TdLambda, HandUnrolledHalfLambda) {
  const std::vector<Trajectory> trajs{scalar_trajectory({0, 10, 20, 30}, {1, 2, 3}, {0, 0, 0})};
  const auto g = td_lambda_targets(trajs, kStateIsValue, 0.9, 0.5, Signal::reward());
  // G2 = 3 + 0.9*30; G1 = 2 + 0.9*(0.5*20 + 0.5*G2); G0 = 1 + 0.9*(0.5*10 + 0.5*G1)
  EXPECT_NEAR(g[0][2], 30.0, 1e-12);
  EXPECT_NEAR(g[0][1], 24.5, 1e-12);
  EXPECT_NEAR(g[0][0], 16.525, 1e-12);
}

TEST(TdLambda, NetworkOverloadMatchesBootstrapOverload) {
  Rng rng(3);
  const auto q = QFunction::initialized(1, 1, {8}, rng);
  const auto policy = DeterministicPolicy::initialized(1, {4}, Vector::Constant(1, -1), Vector::Constant(1, 1), rng, 1.0);
  const auto trajs = random_trajectories(rng, 5, 7);
  const BootstrapFn v = [&](const Vector& s) { return q.value(s, policy.act(s)); };
  const auto a = td_lambda_targets(trajs, q, policy, 0.95, 0.7, Signal::cost(0));
  const auto b = td_lambda_targets(trajs, v, 0.95, 0.7, Signal::cost(0));
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (std::size_t t = 0; t < a[k].size(); ++t) EXPECT_NEAR(a[k][t], b[k][t], 1e-12);
  }
}

TEST(TdLambda, RejectsBadArguments) {
  Rng rng(4);
  const auto trajs = random_trajectories(rng, 2, 3);
  EXPECT_THROW(td_lambda_targets(trajs, kStateIsValue, 0.9, 1.5, Signal::reward()), InputError);
  EXPECT_THROW(td_lambda_targets(std::vector<Trajectory>{}, kStateIsValue, 0.9, 0.5, Signal::reward()), InputError);
  EXPECT_THROW(td_lambda_targets(trajs, kStateIsValue, 0.9, 0.5, Signal::cost(3)), InputError);
}

TEST(FitQ, ZeroTargetsReduceLoss) {
  Rng rng(5);
  auto q = QFunction::initialized(2, 2, {16}, rng);
  std::normal_distribution<double> n(0.0, 1.0);
  const Matrix x = Matrix::NullaryExpr(4, 300, [&]() { return n(rng); });
  const auto r = fit_q(q, x, Vector::Zero(300), FitOptions{}, rng);
  EXPECT_LT(r.final_loss, r.initial_loss);
}

TEST(FitQ, SinglePointLinearInterpolates) {
  Rng rng(6);
  auto q = QFunction::initialized(1, 1, {}, rng);
  Matrix x(2, 1);
  x << 0.5, -0.3;
  FitOptions opt;
  opt.learning_rate = 1e-2;
  opt.epochs = 3000;
  const auto r = fit_q(q, x, Vector::Constant(1, 1.7), opt, rng);
  EXPECT_LT(r.final_loss, 1e-6);
  EXPECT_NEAR(q.value(Vector::Constant(1, 0.5), Vector::Constant(1, -0.3)), 1.7, 1e-3);
}

TEST(FitQ, ZeroEpochsLeaveParamsUnchanged) {
  Rng rng(7);
  auto q = QFunction::initialized(2, 2, {8}, rng);
  const Vector before = q.net().params();
  FitOptions opt;
  opt.epochs = 0;
  fit_q(q, Matrix::Ones(4, 10), Vector::Ones(10), opt, rng);
  EXPECT_EQ(q.net().params(), before);
}

TEST(FitQ, NonFiniteLossIsDivergence) {
  Rng rng(8);
  auto q = QFunction::initialized(1, 1, {4}, rng);
  Matrix x = Matrix::Ones(2, 3);
  Vector y = Vector::Ones(3);
  y(1) = std::nan("");
  EXPECT_THROW(fit_q(q, x, y, FitOptions{}, rng), TrainingDivergence);
}

TEST(PolicyCost, Examples) {
  const std::vector<Trajectory> zero{scalar_trajectory({0, 0, 0}, {1, 1}, {0, 0})};
  EXPECT_EQ(estimate_policy_cost(zero, 0.5, 0), 0.0);
  const std::vector<Trajectory> ones{scalar_trajectory({0, 0, 0}, {0, 0}, {1, 1})};
  EXPECT_DOUBLE_EQ(estimate_policy_cost(ones, 0.5, 0), 1.5);
  const std::vector<Trajectory> two{scalar_trajectory({0, 0, 0, 0}, {0, 0, 0}, {1, 2, 4}),
                                    scalar_trajectory({0, 0, 0, 0}, {0, 0, 0}, {3, 0, 1})};
  // (1 + 0.9*2 + 0.81*4 + 3 + 0 + 0.81*1) / 2
  EXPECT_NEAR(estimate_policy_cost(two, 0.9, 0), (6.04 + 3.81) / 2.0, 1e-12);
}

TEST(ConstraintBudget, Examples) {
  const std::vector<double> d0{25.0}, m{15.0};
  EXPECT_NEAR(constraint_budget(d0, m, 0.99).epsilon[0], 0.1, 1e-12);
  EXPECT_EQ(constraint_budget(d0, d0, 0.99).epsilon[0], 0.0);
  const std::vector<double> d2{2.0}, m1{1.0};
  EXPECT_NEAR(constraint_budget(d2, m1, 0.9).epsilon[0], 0.1, 1e-12);
}

TEST(ConstraintBudget, SignMatchesSafety) {
  Rng rng(9);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::vector<double> d0{u(rng), u(rng)}, m{u(rng), u(rng)};
    const auto b = constraint_budget(d0, m, 0.95);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(b.epsilon[i] > 0.0, m[i] < d0[i]);
    EXPECT_EQ(b.all_safe(), m[0] < d0[0] && m[1] < d0[1]);
  }
}

TEST(ConstraintBudget, MostViolatedIsLargestRelativeExcess) {
  const std::vector<double> d0{1.0, 10.0}, m{1.1, 15.0};
  EXPECT_EQ(constraint_budget(d0, m, 0.9).most_violated(), 1u);
}

TEST(TabularTd, ConvergesToExactQOnGridworld) {
  GridworldOptions opt;
  opt.hazards = {{2, 1}, {2, 2}, {2, 3}};
  const auto cmdp = build_gridworld(opt);
  Rng rng(10);
  const auto policy = random_tabular_policy(cmdp.num_states, cmdp.num_actions, rng);
  for (const Signal sig : {Signal::reward(), Signal::cost(0)}) {
    const Matrix exact = exact_q(cmdp, policy, sig);
    const auto fitted = evaluate_tabular_td(cmdp, policy, sig, TabularTdOptions{}, rng);
    EXPECT_LT((fitted.table() - exact).cwiseAbs().maxCoeff(), 0.05);
  }
}

}  // namespace
}  // namespace lbpo
