#pragma once

#include <cstddef>
#include <cstdint>

#include "lbpo/cmdp.hpp"
#include "lbpo/policy_eval.hpp"

namespace lbpo {

/// P^pi[s][s'] = sum_a pi(a|s) P(s'|s, a)
Matrix policy_transition_matrix(const TabularCmdp& cmdp, const TabularPolicy& policy);

/// h^pi[s]: sum_a pi(a|s) r(s, a) for the reward, c_i(s) for a cost.
Vector policy_signal(const TabularCmdp& cmdp, const TabularPolicy& policy, Signal signal);

/// V = (I - gamma P^pi)^{-1} h^pi by dense LU.
Vector exact_value(const TabularCmdp& cmdp, const TabularPolicy& policy, Signal signal);

/// Fixed-point iteration V <- h^pi + gamma P^pi V from V = 0.
Vector value_iteration(const TabularCmdp& cmdp, const TabularPolicy& policy, Signal signal, std::size_t iterations);

/// Q(s, a) = h(s, a) + gamma sum_s' P(s'|s, a) V(s'), num_states x num_actions.
Matrix exact_q(const TabularCmdp& cmdp, const TabularPolicy& policy, Signal signal);

/// Row `state` of (I - gamma P^pi)^{-1}: discounted visitation counts.
Vector discounted_visitation(const TabularCmdp& cmdp, const TabularPolicy& policy, std::size_t state);

/// L = (I - gamma P^{pi_B})^{-1} (c + epsilon 1).
Vector lyapunov_function(const TabularCmdp& cmdp, const TabularPolicy& baseline, double epsilon,
                         std::size_t constraint = 0);

/// (1 - gamma)(d0 - D_B(s0)), floored at 0. Throws UnsafeBaselineError when
/// D_B(s0) > d0 + kCostTolerance and
/// NumericalError when the visitation row of s0 does not sum to 1/(1 - gamma).
double max_budget(const TabularCmdp& cmdp, const TabularPolicy& baseline, std::size_t constraint = 0);

/// B_{pi,c}[L](s) = c(s) + gamma sum_a pi(a|s) sum_s' P(s'|s, a) L(s')
Vector cost_bellman(const TabularCmdp& cmdp, const TabularPolicy& policy, const Vector& lyapunov,
                    std::size_t constraint = 0);

struct LyapunovCertificate {
  Vector lyapunov;
  double epsilon_used = 0.0;
  bool pointwise_ok = false;
  bool start_ok = false;  // L(s0) <= d0 + 1e-9
  double exact_cost = 0.0;
  /// pointwise_ok && start_ok implies exact_cost <= d0 + 1e-9.
  bool implication_holds = true;

  bool certified() const { return pointwise_ok && start_ok; }
};

inline constexpr double kPointwiseTolerance = 1e-12;
inline constexpr double kCostTolerance = 1e-9;

LyapunovCertificate certify_policy(const TabularCmdp& cmdp, const TabularPolicy& candidate, const Vector& lyapunov,
                                   double epsilon, std::size_t constraint = 0);

/// max_{s,a} |Q_L(s, a) - Q^C(s, a) - epsilon / (1 - gamma)| with
/// Q_L(s, a) = c(s) + epsilon + gamma sum_s' P(s'|s, a) L(s').
double q_l_offset_check(const TabularCmdp& cmdp, const TabularPolicy& baseline, double epsilon,
                        std::size_t constraint = 0);

struct SafeInstance {
  TabularCmdp cmdp;
  TabularPolicy baseline;
};

/// Random CMDP plus a random baseline, with d0 = D_B(s0) + margin.
SafeInstance random_safe_instance(std::size_t num_states, std::size_t num_actions, double discount, double margin,
                                  Rng& rng);

/// Mixture (1 - alpha) pi_B + alpha pi_random with alpha halved from 1 until
/// the certificate passes. Falls back to pi_B after `max_halvings`.
TabularPolicy sample_induced_policy(const TabularCmdp& cmdp, const TabularPolicy& baseline, const Vector& lyapunov,
                                    double epsilon, Rng& rng, std::size_t max_halvings = 64);

struct OracleSuiteOptions {
  std::size_t instances = 10;
  std::size_t policies_per_instance = 50;
  std::size_t min_states = 3;
  std::size_t max_states = 25;
  std::size_t num_actions = 4;
  double discount = 0.9;
  std::uint64_t seed = 0;
};

struct OracleSuiteReport {
  std::size_t instances = 0;
  std::size_t certified_policies = 0;
  std::size_t safety_exceptions = 0;
  double max_certified_cost_excess = 0.0;  // max(0, exact_cost - d0) over certified policies
  double max_offset_deviation = 0.0;
  double max_start_excess = 0.0;        // max L(s0) - d0 at the maximal budget
  double max_visitation_error = 0.0;    // max |row sum - 1/(1 - gamma)|
  double max_value_iteration_gap = 0.0;

  bool safety_ok() const { return safety_exceptions == 0; }
  bool offset_ok() const { return max_offset_deviation < 1e-10; }
  bool budget_ok() const { return max_start_excess <= kCostTolerance && max_visitation_error <= kCostTolerance; }
};

OracleSuiteReport run_oracle_suite(const OracleSuiteOptions& options);

}  // namespace lbpo
