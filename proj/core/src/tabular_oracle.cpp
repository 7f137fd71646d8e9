#include "lbpo/tabular_oracle.hpp"

#include <algorithm>
#include <cmath>

#include "lbpo/errors.hpp"

namespace lbpo {

namespace {

using Index = Eigen::Index;

void check_policy(const TabularCmdp& cmdp, const TabularPolicy& policy) {
  if (static_cast<std::size_t>(policy.probs.rows()) != cmdp.num_states ||
      static_cast<std::size_t>(policy.probs.cols()) != cmdp.num_actions) {
    throw InputError("policy shape does not match the CMDP");
  }
  policy.validate();
}

void check_constraint(const TabularCmdp& cmdp, std::size_t constraint) {
  if (constraint >= cmdp.num_constraints()) throw InputError("constraint index out of range");
}

Matrix resolvent_system(const TabularCmdp& cmdp, const TabularPolicy& policy) {
  if (!(cmdp.discount > 0.0 && cmdp.discount < 1.0)) throw InputError("exact evaluation needs 0 < discount < 1");
  const Index n = static_cast<Index>(cmdp.num_states);
  return Matrix::Identity(n, n) - cmdp.discount * policy_transition_matrix(cmdp, policy);
}

Vector solve(const Matrix& system, const Vector& rhs) {
  Eigen::PartialPivLU<Matrix> lu(system);
  Vector x = lu.solve(rhs);
  if (!x.allFinite()) throw NumericalError("singular policy-evaluation system");
  return x;
}

/// sum_s' P(s'|s, a) v(s') for every (s, a).
Matrix expected_next(const TabularCmdp& cmdp, const Vector& v) {
  Matrix out(static_cast<Index>(cmdp.num_states), static_cast<Index>(cmdp.num_actions));
  for (std::size_t s = 0; s < cmdp.num_states; ++s) {
    for (std::size_t a = 0; a < cmdp.num_actions; ++a) {
      const auto row = cmdp.row(s, a);
      double acc = 0.0;
      for (std::size_t n = 0; n < cmdp.num_states; ++n) acc += row[n] * v(static_cast<Index>(n));
      out(static_cast<Index>(s), static_cast<Index>(a)) = acc;
    }
  }
  return out;
}

Matrix signal_table(const TabularCmdp& cmdp, Signal signal) {
  if (signal.kind == Signal::Kind::kReward) return cmdp.reward;
  check_constraint(cmdp, signal.index);
  return cmdp.costs[signal.index].replicate(1, static_cast<Index>(cmdp.num_actions));
}

}  // namespace

Matrix policy_transition_matrix(const TabularCmdp& cmdp, const TabularPolicy& policy) {
  check_policy(cmdp, policy);
  const Index n = static_cast<Index>(cmdp.num_states);
  Matrix out = Matrix::Zero(n, n);
  for (std::size_t s = 0; s < cmdp.num_states; ++s) {
    for (std::size_t a = 0; a < cmdp.num_actions; ++a) {
      const double w = policy.probs(static_cast<Index>(s), static_cast<Index>(a));
      if (w == 0.0) continue;
      const auto row = cmdp.row(s, a);
      for (std::size_t next = 0; next < cmdp.num_states; ++next) {
        out(static_cast<Index>(s), static_cast<Index>(next)) += w * row[next];
      }
    }
  }
  return out;
}

Vector policy_signal(const TabularCmdp& cmdp, const TabularPolicy& policy, Signal signal) {
  check_policy(cmdp, policy);
  return policy.probs.cwiseProduct(signal_table(cmdp, signal)).rowwise().sum();
}

Vector exact_value(const TabularCmdp& cmdp, const TabularPolicy& policy, Signal signal) {
  return solve(resolvent_system(cmdp, policy), policy_signal(cmdp, policy, signal));
}

Vector value_iteration(const TabularCmdp& cmdp, const TabularPolicy& policy, Signal signal, std::size_t iterations) {
  const Matrix p = policy_transition_matrix(cmdp, policy);
  const Vector h = policy_signal(cmdp, policy, signal);
  Vector v = Vector::Zero(h.size());
  for (std::size_t k = 0; k < iterations; ++k) v = h + cmdp.discount * p * v;
  return v;
}

Matrix exact_q(const TabularCmdp& cmdp, const TabularPolicy& policy, Signal signal) {
  const Vector v = exact_value(cmdp, policy, signal);
  return signal_table(cmdp, signal) + cmdp.discount * expected_next(cmdp, v);
}

Vector discounted_visitation(const TabularCmdp& cmdp, const TabularPolicy& policy, std::size_t state) {
  if (state >= cmdp.num_states) throw InputError("state out of range");
  const Matrix system = resolvent_system(cmdp, policy);
  Vector e = Vector::Zero(static_cast<Index>(cmdp.num_states));
  e(static_cast<Index>(state)) = 1.0;
  return solve(system.transpose(), e);
}

Vector lyapunov_function(const TabularCmdp& cmdp, const TabularPolicy& baseline, double epsilon,
                         std::size_t constraint) {
  if (!(epsilon >= 0.0)) throw InputError("auxiliary cost must be nonnegative");
  check_constraint(cmdp, constraint);
  const Vector rhs = cmdp.costs[constraint].array() + epsilon;
  return solve(resolvent_system(cmdp, baseline), rhs);
}

double max_budget(const TabularCmdp& cmdp, const TabularPolicy& baseline, std::size_t constraint) {
  check_constraint(cmdp, constraint);
  const Vector visits = discounted_visitation(cmdp, baseline, cmdp.start);
  const double expected = 1.0 / (1.0 - cmdp.discount);
  if (std::abs(visits.sum() - expected) > kCostTolerance) {
    throw NumericalError("discounted visitation does not sum to 1/(1 - discount)");
  }
  const double cost = visits.dot(cmdp.costs[constraint]);
  const double d0 = cmdp.thresholds[constraint];
  if (cost > d0 + kCostTolerance) throw UnsafeBaselineError("baseline policy violates the constraint");
  return std::max(0.0, (1.0 - cmdp.discount) * (d0 - cost));
}

Vector cost_bellman(const TabularCmdp& cmdp, const TabularPolicy& policy, const Vector& lyapunov,
                    std::size_t constraint) {
  check_constraint(cmdp, constraint);
  if (static_cast<std::size_t>(lyapunov.size()) != cmdp.num_states) throw InputError("Lyapunov vector has the wrong size");
  return cmdp.costs[constraint] + cmdp.discount * policy_transition_matrix(cmdp, policy) * lyapunov;
}

LyapunovCertificate certify_policy(const TabularCmdp& cmdp, const TabularPolicy& candidate, const Vector& lyapunov,
                                   double epsilon, std::size_t constraint) {
  LyapunovCertificate cert;
  cert.lyapunov = lyapunov;
  cert.epsilon_used = epsilon;
  const Vector backed_up = cost_bellman(cmdp, candidate, lyapunov, constraint);
  cert.pointwise_ok = ((backed_up - lyapunov).array() <= kPointwiseTolerance).all();
  const double d0 = cmdp.thresholds[constraint];
  cert.start_ok = lyapunov(static_cast<Index>(cmdp.start)) <= d0 + kCostTolerance;
  cert.exact_cost = exact_value(cmdp, candidate, Signal::cost(constraint))(static_cast<Index>(cmdp.start));
  cert.implication_holds = !cert.certified() || cert.exact_cost <= d0 + kCostTolerance;
  return cert;
}

double q_l_offset_check(const TabularCmdp& cmdp, const TabularPolicy& baseline, double epsilon,
                        std::size_t constraint) {
  const Vector lyap = lyapunov_function(cmdp, baseline, epsilon, constraint);
  const Matrix c = signal_table(cmdp, Signal::cost(constraint));
  const Matrix q_l = (c.array() + epsilon).matrix() + cmdp.discount * expected_next(cmdp, lyap);
  const Matrix q_c = exact_q(cmdp, baseline, Signal::cost(constraint));
  const double offset = epsilon / (1.0 - cmdp.discount);
  return ((q_l - q_c).array() - offset).abs().maxCoeff();
}

SafeInstance random_safe_instance(std::size_t num_states, std::size_t num_actions, double discount, double margin,
                                  Rng& rng) {
  if (!(margin >= 0.0)) throw InputError("margin must be nonnegative");
  SafeInstance inst{random_tabular_cmdp(num_states, num_actions, discount, rng),
                    random_tabular_policy(num_states, num_actions, rng)};
  const double cost = exact_value(inst.cmdp, inst.baseline, Signal::cost(0))(static_cast<Index>(inst.cmdp.start));
  inst.cmdp.thresholds[0] = cost + margin;
  return inst;
}

TabularPolicy sample_induced_policy(const TabularCmdp& cmdp, const TabularPolicy& baseline, const Vector& lyapunov,
                                    double epsilon, Rng& rng, std::size_t max_halvings) {
  const TabularPolicy proposal = random_tabular_policy(cmdp.num_states, cmdp.num_actions, rng);
  double alpha = 1.0;
  for (std::size_t k = 0; k <= max_halvings; ++k, alpha *= 0.5) {
    TabularPolicy mix{(1.0 - alpha) * baseline.probs + alpha * proposal.probs};
    // renormalize so rows pass the 1e-12 validation after rounding
    for (Index s = 0; s < mix.probs.rows(); ++s) mix.probs.row(s) /= mix.probs.row(s).sum();
    if (certify_policy(cmdp, mix, lyapunov, epsilon).pointwise_ok) return mix;
  }
  return baseline;
}

OracleSuiteReport run_oracle_suite(const OracleSuiteOptions& options) {
  if (options.min_states == 0 || options.min_states > options.max_states) throw InputError("invalid state range");
  OracleSuiteReport report;
  Rng rng = make_stream(options.seed, Stream::kOracle);
  std::uniform_int_distribution<std::size_t> size_dist(options.min_states, options.max_states);
  std::uniform_real_distribution<double> margin_dist(0.0, 2.0);
  for (std::size_t i = 0; i < options.instances; ++i) {
    const std::size_t n = size_dist(rng);
    const SafeInstance inst = random_safe_instance(n, options.num_actions, options.discount, margin_dist(rng), rng);
    const TabularCmdp& cmdp = inst.cmdp;
    const double d0 = cmdp.thresholds[0];
    ++report.instances;

    const Vector visits = discounted_visitation(cmdp, inst.baseline, cmdp.start);
    report.max_visitation_error =
        std::max(report.max_visitation_error, std::abs(visits.sum() - 1.0 / (1.0 - cmdp.discount)));

    const double eps = max_budget(cmdp, inst.baseline);
    const Vector lyap = lyapunov_function(cmdp, inst.baseline, eps);
    report.max_start_excess = std::max(report.max_start_excess, lyap(static_cast<Index>(cmdp.start)) - d0);
    report.max_offset_deviation = std::max(report.max_offset_deviation, q_l_offset_check(cmdp, inst.baseline, eps));

    const Vector exact = exact_value(cmdp, inst.baseline, Signal::cost(0));
    const Vector iterated = value_iteration(cmdp, inst.baseline, Signal::cost(0), 10000);
    report.max_value_iteration_gap = std::max(report.max_value_iteration_gap, (exact - iterated).cwiseAbs().maxCoeff());

    for (std::size_t k = 0; k < options.policies_per_instance; ++k) {
      const TabularPolicy pi = sample_induced_policy(cmdp, inst.baseline, lyap, eps, rng);
      const LyapunovCertificate cert = certify_policy(cmdp, pi, lyap, eps);
      if (!cert.certified()) continue;
      ++report.certified_policies;
      report.max_certified_cost_excess = std::max(report.max_certified_cost_excess, cert.exact_cost - d0);
      if (!cert.implication_holds) ++report.safety_exceptions;
    }
  }
  return report;
}

}  // namespace lbpo
