#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <utility>

#include "lbpo/func_approx.hpp"
#include "lbpo/policy_eval.hpp"

namespace lbpo {

struct BarrierConfig {
  double beta = 0.005;
  double beta_thres = 0.05;
  /// When set, the barrier term is dropped entirely for beta < beta_thres.
  bool literal_beta_thres_mode = false;

  /// The beta actually applied to the barrier term.
  double effective_beta() const;
  void validate() const;
};

struct TrustRegionConfig {
  double mu = 0.012;
  std::size_t cg_iters = 10;
  double cg_tol = 1e-8;
  double damping = 1e-2;
  double decay = 0.8;
  std::size_t max_linesearch = 10;
  double exploration_std = 0.05;

  void validate() const;
};

struct UpdateReport {
  bool accepted = false;
  double kl_after = 0.0;
  std::size_t linesearch_steps = 0;
  bool backtracked = false;
  /// min over batch states and constraints of epsilon_i - delta_q_i(s) at the
  /// returned parameters.
  double min_margin = 0.0;
  double gradient_norm = 0.0;
  double objective_before = 0.0;
  double objective_after = 0.0;
};

/// Q(s, pi_new(s)) - Q(s, pi_base(s))
double delta_q(const QFunction& qc, const Vector& state, const DeterministicPolicy& policy_new,
               const DeterministicPolicy& policy_base);
Vector delta_q_batch(const QFunction& qc, const Matrix& states, const DeterministicPolicy& policy_new,
                     const DeterministicPolicy& policy_base);

/// -beta * log(epsilon - delta_q). Throws UnsafeBaselineError for epsilon <= 0
/// and BarrierDomainError for delta_q >= epsilon.
double barrier_value(double delta_q, double epsilon, double beta);

/// mean_s [ -Q^R(s, pi(s)) + sum_i psi_i(s) ] with delta_q measured against `base`.
/// Returns +inf outside the barrier domain.
double lbpo_surrogate_value(const Matrix& states, const DeterministicPolicy& policy, const DeterministicPolicy& base,
                            const QFunction& qr, std::span<const QFunction> qcs, const ConstraintBudget& budget,
                            const BarrierConfig& barrier);

/// Gradient of the surrogate with respect to the policy parameters, taken at
/// pi = pi_B where every delta_q is zero.
Vector lbpo_surrogate_gradient(const Matrix& states, const DeterministicPolicy& policy, const QFunction& qr,
                               std::span<const QFunction> qcs, const ConstraintBudget& budget,
                               const BarrierConfig& barrier);

/// Mean KL between N(pi_a(s), std^2 I) and N(pi_b(s), std^2 I).
double mean_kl(const DeterministicPolicy& policy_a, const DeterministicPolicy& policy_b, const Matrix& states,
               double exploration_std);

/// (1/std^2) mean_s J_s^T J_s v + damping v, J_s the action Jacobian at the
/// current parameters.
Vector fisher_vector_product(const DeterministicPolicy& policy, const Matrix& states, const Vector& v,
                             double exploration_std, double damping);

using LinearOperator = std::function<Vector(const Vector&)>;

struct CgResult {
  Vector x;
  double residual = 0.0;
  std::size_t iterations = 0;
};

/// Solves H x = g for symmetric positive definite H. Stops when
/// ||H x - g|| <= tol * max(1, ||g||) or after `iters` iterations.
CgResult conjugate_gradient(const LinearOperator& apply_h, const Vector& g, std::size_t iters, double tol);

/// Minimizer of g^T d subject to 0.5 d^T H d <= mu:
/// d = -sqrt(2 mu / (x^T H x)) x with x = H^{-1} g.
Vector trust_region_direction(const Vector& g, const LinearOperator& apply_h, double mu, std::size_t cg_iters,
                              double cg_tol);

struct LineSearchResult {
  Vector params;
  std::size_t steps = 0;
  bool accepted = false;
};

/// Tries params + decay^j * full_step for j = 0 .. max_steps-1 and returns the
/// first candidate accepted by `accept`. Falls back to `params` when none is.
LineSearchResult line_search(const Vector& params, const Vector& full_step,
                             const std::function<bool(const Vector&)>& accept, double decay,
                             std::size_t max_steps);

/// Barrier-augmented trust-region update. If any budget entry is non-positive
/// the barrier is skipped and a cost-recovery step is taken instead.
std::pair<DeterministicPolicy, UpdateReport> lbpo_update(const DeterministicPolicy& policy, const Matrix& states,
                                                         const QFunction& qr, std::span<const QFunction> qcs,
                                                         const ConstraintBudget& budget, const BarrierConfig& barrier,
                                                         const TrustRegionConfig& trust_region);

enum class BacktrackMode {
  kAuto,         // reward when every constraint is safe, cost otherwise
  kRewardOnly,   // the unconstrained baseline
  kCostOnly,     // safety pretraining
};

/// Trust-region step on mean -Q^R when the baseline is measured safe, else on
/// mean Q^C of the most-violated constraint. No barrier term.
std::pair<DeterministicPolicy, UpdateReport> backtrack_update(const DeterministicPolicy& policy, const Matrix& states,
                                                              const QFunction& qr, std::span<const QFunction> qcs,
                                                              const ConstraintBudget& budget,
                                                              const TrustRegionConfig& trust_region,
                                                              BacktrackMode mode = BacktrackMode::kAuto);

}  // namespace lbpo
