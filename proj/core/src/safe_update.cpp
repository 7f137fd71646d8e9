#include "lbpo/safe_update.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lbpo/errors.hpp"

namespace lbpo {

void BarrierConfig::validate() const {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw InputError("beta must be finite and nonnegative");
}

double BarrierConfig::effective_beta() const {
  if (literal_beta_thres_mode && beta < beta_thres) return 0.0;
  return beta;
}

void TrustRegionConfig::validate() const {
  if (!(mu > 0.0)) throw InputError("trust region radius mu must be positive");
  if (!(decay > 0.0 && decay < 1.0)) throw InputError("line-search decay must lie in (0, 1)");
  if (!(damping >= 0.0)) throw InputError("damping must be nonnegative");
  if (!(exploration_std > 0.0)) throw InputError("exploration_std must be positive");
  if (cg_iters == 0) throw InputError("cg_iters must be positive");
  if (max_linesearch == 0) throw InputError("max_linesearch must be positive");
}

double delta_q(const QFunction& qc, const Vector& state, const DeterministicPolicy& policy_new,
               const DeterministicPolicy& policy_base) {
  return delta_q_batch(qc, state, policy_new, policy_base)(0);
}

Vector delta_q_batch(const QFunction& qc, const Matrix& states, const DeterministicPolicy& policy_new,
                     const DeterministicPolicy& policy_base) {
  return qc.value_batch(states, policy_new.act_batch(states)) - qc.value_batch(states, policy_base.act_batch(states));
}

double barrier_value(double delta_q, double epsilon, double beta) {
  if (!(epsilon > 0.0)) throw UnsafeBaselineError("barrier requires a positive budget");
  if (!(delta_q < epsilon)) throw BarrierDomainError("delta_q reached the barrier pole");
  return -beta * std::log(epsilon - delta_q);
}

namespace {

void check_constraints(std::span<const QFunction> qcs, const ConstraintBudget& budget) {
  if (qcs.size() != budget.size()) throw InputError("one cost Q-function per constraint required");
}

double mean(const Vector& v) { return v.size() == 0 ? 0.0 : v.mean(); }

}  // namespace

double lbpo_surrogate_value(const Matrix& states, const DeterministicPolicy& policy, const DeterministicPolicy& base,
                            const QFunction& qr, std::span<const QFunction> qcs, const ConstraintBudget& budget,
                            const BarrierConfig& barrier) {
  check_constraints(qcs, budget);
  const Matrix actions = policy.act_batch(states);
  double value = -mean(qr.value_batch(states, actions));
  const double beta = barrier.effective_beta();
  for (std::size_t i = 0; i < qcs.size(); ++i) {
    const double eps = budget.epsilon[i];
    if (!(eps > 0.0)) throw UnsafeBaselineError("surrogate requires a safe baseline");
    const Vector dq = qcs[i].value_batch(states, actions) - qcs[i].value_batch(states, base.act_batch(states));
    if ((dq.array() >= eps).any()) return std::numeric_limits<double>::infinity();
    if (beta > 0.0) value += -beta * (eps - dq.array()).log().mean();
  }
  return value;
}

Vector lbpo_surrogate_gradient(const Matrix& states, const DeterministicPolicy& policy, const QFunction& qr,
                               std::span<const QFunction> qcs, const ConstraintBudget& budget,
                               const BarrierConfig& barrier) {
  check_constraints(qcs, budget);
  barrier.validate();
  for (double eps : budget.epsilon) {
    if (!(eps > 0.0)) throw UnsafeBaselineError("surrogate gradient requires a safe baseline");
  }
  const Matrix actions = policy.act_batch(states);
  // Chain rule: d/dtheta f(s, pi(s)) = J^T df/da, accumulated as one VJP.
  Matrix upstream = -qr.grad_action_batch(states, actions);
  const double beta = barrier.effective_beta();
  if (beta > 0.0) {
    for (std::size_t i = 0; i < qcs.size(); ++i) {
      upstream += (beta / budget.epsilon[i]) * qcs[i].grad_action_batch(states, actions);
    }
  }
  return policy.vjp_params(states, upstream) / static_cast<double>(states.cols());
}

double mean_kl(const DeterministicPolicy& policy_a, const DeterministicPolicy& policy_b, const Matrix& states,
               double exploration_std) {
  if (!(exploration_std > 0.0)) throw InputError("KL between noised policies needs exploration_std > 0");
  const Matrix diff = policy_a.act_batch(states) - policy_b.act_batch(states);
  return diff.colwise().squaredNorm().mean() / (2.0 * exploration_std * exploration_std);
}

Vector fisher_vector_product(const DeterministicPolicy& policy, const Matrix& states, const Vector& v,
                             double exploration_std, double damping) {
  if (!(exploration_std > 0.0)) throw InputError("Fisher product needs exploration_std > 0");
  const Matrix jv = policy.jvp_params(states, v);
  const double scale = 1.0 / (exploration_std * exploration_std * static_cast<double>(states.cols()));
  return scale * policy.vjp_params(states, jv) + damping * v;
}

CgResult conjugate_gradient(const LinearOperator& apply_h, const Vector& g, std::size_t iters, double tol) {
  CgResult out;
  out.x = Vector::Zero(g.size());
  Vector r = g;
  Vector p = r;
  double rr = r.squaredNorm();
  const double target = tol * std::max(1.0, g.norm());
  out.residual = std::sqrt(rr);
  for (std::size_t k = 0; k < iters && out.residual > target; ++k) {
    const Vector hp = apply_h(p);
    const double php = p.dot(hp);
    if (!std::isfinite(php) || php <= 0.0) throw NumericalError("conjugate gradient lost positive curvature");
    const double alpha = rr / php;
    out.x += alpha * p;
    r -= alpha * hp;
    const double rr_new = r.squaredNorm();
    if (!std::isfinite(rr_new) || !out.x.allFinite()) throw NumericalError("conjugate gradient produced non-finite iterate");
    p = r + (rr_new / rr) * p;
    rr = rr_new;
    out.residual = std::sqrt(rr);
    out.iterations = k + 1;
  }
  return out;
}

Vector trust_region_direction(const Vector& g, const LinearOperator& apply_h, double mu, std::size_t cg_iters,
                              double cg_tol) {
  if (!(mu > 0.0)) throw InputError("mu must be positive");
  const CgResult cg = conjugate_gradient(apply_h, g, cg_iters, cg_tol);
  const double curvature = cg.x.dot(apply_h(cg.x));
  if (!(curvature > 0.0) || !std::isfinite(curvature)) throw NumericalError("non-positive curvature along the CG direction");
  return -std::sqrt(2.0 * mu / curvature) * cg.x;
}

LineSearchResult line_search(const Vector& params, const Vector& full_step,
                             const std::function<bool(const Vector&)>& accept, double decay,
                             std::size_t max_steps) {
  LineSearchResult out{params, 0, false};
  double scale = 1.0;
  for (std::size_t j = 0; j < max_steps; ++j, scale *= decay) {
    out.steps = j + 1;
    Vector candidate = params + scale * full_step;
    if (accept(candidate)) {
      out.params = std::move(candidate);
      out.accepted = true;
      return out;
    }
  }
  return out;
}

namespace {

double min_margin(const Matrix& states, const DeterministicPolicy& candidate, const DeterministicPolicy& base,
                  std::span<const QFunction> qcs, const ConstraintBudget& budget) {
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < qcs.size(); ++i) {
    const Vector dq = delta_q_batch(qcs[i], states, candidate, base);
    margin = std::min(margin, budget.epsilon[i] - dq.maxCoeff());
  }
  return margin;
}

LinearOperator fisher_operator(const DeterministicPolicy& policy, const Matrix& states, const TrustRegionConfig& tr) {
  return [&policy, &states, &tr](const Vector& v) {
    return fisher_vector_product(policy, states, v, tr.exploration_std, tr.damping);
  };
}

/// Shared trust-region + line-search driver for a smooth objective whose
/// gradient at the current parameters is `g`.
std::pair<DeterministicPolicy, UpdateReport> trust_region_step(
    const DeterministicPolicy& policy, const Matrix& states, const Vector& g,
    const std::function<double(const DeterministicPolicy&)>& objective,
    const std::function<bool(const DeterministicPolicy&)>& extra_accept, const TrustRegionConfig& tr) {
  UpdateReport report;
  report.gradient_norm = g.norm();
  report.objective_before = objective(policy);
  report.objective_after = report.objective_before;
  if (report.gradient_norm <= tr.cg_tol) {
    report.accepted = true;
    return {policy, report};
  }

  const Vector full_step = trust_region_direction(g, fisher_operator(policy, states, tr), tr.mu, tr.cg_iters, tr.cg_tol);
  const double before = report.objective_before;
  double accepted_kl = 0.0;
  double accepted_objective = before;
  auto accept = [&](const Vector& params) {
    const DeterministicPolicy candidate = policy.with_params(params);
    const double kl = mean_kl(candidate, policy, states, tr.exploration_std);
    if (!(kl <= tr.mu)) return false;
    if (extra_accept && !extra_accept(candidate)) return false;
    const double value = objective(candidate);
    if (!(value < before)) return false;
    accepted_kl = kl;
    accepted_objective = value;
    return true;
  };
  const LineSearchResult ls = line_search(policy.params(), full_step, accept, tr.decay, tr.max_linesearch);
  report.accepted = ls.accepted;
  report.linesearch_steps = ls.steps;
  if (ls.accepted) {
    report.kl_after = accepted_kl;
    report.objective_after = accepted_objective;
  }
  return {policy.with_params(ls.params), report};
}

}  // namespace

std::pair<DeterministicPolicy, UpdateReport> lbpo_update(const DeterministicPolicy& policy, const Matrix& states,
                                                         const QFunction& qr, std::span<const QFunction> qcs,
                                                         const ConstraintBudget& budget, const BarrierConfig& barrier,
                                                         const TrustRegionConfig& trust_region) {
  trust_region.validate();
  barrier.validate();
  check_constraints(qcs, budget);
  if (!budget.all_safe()) {
    auto [next, report] = backtrack_update(policy, states, qr, qcs, budget, trust_region, BacktrackMode::kCostOnly);
    report.backtracked = true;
    return {std::move(next), report};
  }

  const Vector g = lbpo_surrogate_gradient(states, policy, qr, qcs, budget, barrier);
  auto objective = [&](const DeterministicPolicy& candidate) {
    return lbpo_surrogate_value(states, candidate, policy, qr, qcs, budget, barrier);
  };
  // The Lyapunov constraint: delta_q < epsilon at every batch state.
  auto inside_barrier = [&](const DeterministicPolicy& candidate) {
    return min_margin(states, candidate, policy, qcs, budget) > 0.0;
  };
  auto [next, report] = trust_region_step(policy, states, g, objective, inside_barrier, trust_region);
  report.min_margin = min_margin(states, next, policy, qcs, budget);
  return {std::move(next), report};
}

std::pair<DeterministicPolicy, UpdateReport> backtrack_update(const DeterministicPolicy& policy, const Matrix& states,
                                                              const QFunction& qr, std::span<const QFunction> qcs,
                                                              const ConstraintBudget& budget,
                                                              const TrustRegionConfig& trust_region,
                                                              BacktrackMode mode) {
  trust_region.validate();
  check_constraints(qcs, budget);
  const bool use_cost = mode == BacktrackMode::kCostOnly || (mode == BacktrackMode::kAuto && !budget.all_safe());
  if (use_cost && qcs.empty()) throw InputError("cost recovery requested without constraints");

  const Matrix actions = policy.act_batch(states);
  const double n = static_cast<double>(states.cols());
  Vector g;
  std::function<double(const DeterministicPolicy&)> objective;
  if (use_cost) {
    const QFunction& qc = qcs[budget.most_violated()];
    g = policy.vjp_params(states, qc.grad_action_batch(states, actions)) / n;
    objective = [&](const DeterministicPolicy& p) { return qc.value_batch(states, p.act_batch(states)).mean(); };
  } else {
    g = policy.vjp_params(states, -qr.grad_action_batch(states, actions)) / n;
    objective = [&](const DeterministicPolicy& p) { return -qr.value_batch(states, p.act_batch(states)).mean(); };
  }
  auto [next, report] = trust_region_step(policy, states, g, objective, nullptr, trust_region);
  report.backtracked = use_cost;
  report.min_margin = qcs.empty() ? std::numeric_limits<double>::infinity()
                                  : min_margin(states, next, policy, qcs, budget);
  return {std::move(next), report};
}

}  // namespace lbpo
