#include "lbpo/cmdp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "lbpo/errors.hpp"

namespace lbpo {

namespace {

void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) {
    throw InputError(std::string(what) + " has non-finite components");
  }
}

}  // namespace

void CmdpSpec::validate() const {
  if (!(discount > 0.0 && discount < 1.0)) throw InputError("discount must lie in (0, 1)");
  if (horizon < 1) throw InputError("horizon must be at least 1");
  if (thresholds.empty()) throw InputError("at least one constraint is required");
  if (static_cast<std::size_t>(action_low.size()) != action_dim ||
      static_cast<std::size_t>(action_high.size()) != action_dim) {
    throw InputError("action bounds do not match action_dim");
  }
  if (!((action_low.array() < action_high.array()).all())) {
    throw InputError("action_low must be strictly below action_high");
  }
  for (double d0 : thresholds) {
    if (!(d0 >= 0.0)) throw InputError("constraint thresholds must be nonnegative");
  }
}

Vector clip_action(const Vector& action, const Vector& low, const Vector& high) {
  if (action.size() != low.size() || action.size() != high.size()) {
    throw InputError("clip_action: dimension mismatch");
  }
  return action.cwiseMax(low).cwiseMin(high);
}

// ---------------------------------------------------------------------------
// Didactic environment

DidacticEnv::DidacticEnv() : DidacticEnv(Options{}) {}

DidacticEnv::DidacticEnv(Options options) : options_(options) {
  if (!(options_.noise_std >= 0.0)) throw InputError("noise_std must be nonnegative");
  if (!(options_.action_bound > 0.0)) throw InputError("action_bound must be positive");
  spec_.state_dim = 2;
  spec_.action_dim = 2;
  spec_.action_low = Vector::Constant(2, -options_.action_bound);
  spec_.action_high = Vector::Constant(2, options_.action_bound);
  spec_.horizon = options_.horizon;
  spec_.discount = options_.discount;
  spec_.thresholds = {options_.threshold};
  spec_.validate();
}

StepResult DidacticEnv::step(const Vector& state, const Vector& action, Rng& rng) const {
  if (state.size() != 2 || action.size() != 2) throw InputError("didactic env expects 2-vectors");
  require_finite(state, "state");
  require_finite(action, "action");

  Eigen::Vector2d noise;
  if (noise_hook_) {
    noise = noise_hook_(rng);
  } else {
    std::normal_distribution<double> gauss(0.0, 1.0);
    noise.x() = options_.noise_std * gauss(rng);
    noise.y() = options_.noise_std * gauss(rng);
  }

  StepResult out;
  out.next_state = state + clip_action(action, spec_.action_low, spec_.action_high) + Vector(noise);
  const double radius = out.next_state.norm();
  out.reward = radius;
  out.costs = {radius};
  return out;
}

// ---------------------------------------------------------------------------
// Tabular CMDPs

void TabularCmdp::validate() const {
  if (num_states == 0 || num_actions == 0) throw InputError("tabular CMDP must be non-empty");
  if (transitions.size() != num_states * num_actions * num_states) {
    throw InputError("transition tensor has the wrong size");
  }
  if (static_cast<std::size_t>(reward.rows()) != num_states ||
      static_cast<std::size_t>(reward.cols()) != num_actions) {
    throw InputError("reward matrix has the wrong shape");
  }
  if (costs.size() != thresholds.size()) throw InputError("one threshold per cost signal required");
  for (const auto& c : costs) {
    if (static_cast<std::size_t>(c.size()) != num_states) throw InputError("cost vector has the wrong size");
  }
  if (start >= num_states) throw InputError("start state out of range");
  if (!(discount > 0.0 && discount < 1.0)) throw InputError("discount must lie in (0, 1)");
  for (std::size_t s = 0; s < num_states; ++s) {
    for (std::size_t a = 0; a < num_actions; ++a) {
      double total = 0.0;
      for (double v : row(s, a)) {
        if (!(v >= 0.0)) throw InputError("transition probabilities must be nonnegative");
        total += v;
      }
      if (std::abs(total - 1.0) > 1e-12) throw InputError("transition row does not sum to one");
    }
  }
}

TabularPolicy TabularPolicy::deterministic(const std::vector<std::size_t>& actions, std::size_t num_actions) {
  TabularPolicy pi;
  pi.probs = Matrix::Zero(static_cast<Eigen::Index>(actions.size()), static_cast<Eigen::Index>(num_actions));
  for (std::size_t s = 0; s < actions.size(); ++s) {
    if (actions[s] >= num_actions) throw InputError("deterministic policy action out of range");
    pi.probs(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(actions[s])) = 1.0;
  }
  return pi;
}

TabularPolicy TabularPolicy::uniform(std::size_t num_states, std::size_t num_actions) {
  TabularPolicy pi;
  pi.probs = Matrix::Constant(static_cast<Eigen::Index>(num_states), static_cast<Eigen::Index>(num_actions),
                              1.0 / static_cast<double>(num_actions));
  return pi;
}

void TabularPolicy::validate() const {
  if ((probs.array() < 0.0).any()) throw InputError("policy probabilities must be nonnegative");
  for (Eigen::Index s = 0; s < probs.rows(); ++s) {
    if (std::abs(probs.row(s).sum() - 1.0) > 1e-12) throw InputError("policy row does not sum to one");
  }
}

namespace {

std::size_t sample_categorical(std::span<const double> weights, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] > 0.0) last_positive = i;
    acc += weights[i];
    if (u < acc) return i;
  }
  return last_positive;
}

}  // namespace

std::size_t sample_next_state(const TabularCmdp& cmdp, std::size_t state, std::size_t action, Rng& rng) {
  return sample_categorical(cmdp.row(state, action), rng);
}

std::size_t sample_action(const TabularPolicy& policy, std::size_t state, Rng& rng) {
  const auto r = static_cast<Eigen::Index>(state);
  std::vector<double> w(static_cast<std::size_t>(policy.probs.cols()));
  for (Eigen::Index a = 0; a < policy.probs.cols(); ++a) w[static_cast<std::size_t>(a)] = policy.probs(r, a);
  return sample_categorical(w, rng);
}

TabularCmdp build_gridworld(const GridworldOptions& options) {
  const std::size_t w = options.width;
  const std::size_t h = options.height;
  if (w < 2 || h < 2) throw InputError("gridworld dimensions must be at least 2");
  if (!(options.slip_prob >= 0.0 && options.slip_prob < 1.0)) throw InputError("slip_prob must lie in [0, 1)");
  auto in_range = [&](Cell c) { return c.first < w && c.second < h; };
  if (!in_range(options.goal)) throw InputError("goal cell out of range");
  if (!in_range(options.start)) throw InputError("start cell out of range");
  for (const auto& c : options.hazards) {
    if (!in_range(c)) throw InputError("hazard cell out of range");
  }

  TabularCmdp cmdp;
  cmdp.num_states = w * h;
  cmdp.num_actions = kGridMoves.size();
  cmdp.transitions.assign(cmdp.num_states * cmdp.num_actions * cmdp.num_states, 0.0);
  cmdp.reward = Matrix::Zero(static_cast<Eigen::Index>(cmdp.num_states), static_cast<Eigen::Index>(cmdp.num_actions));
  cmdp.costs = {Vector::Zero(static_cast<Eigen::Index>(cmdp.num_states))};
  cmdp.start = grid_index(options, options.start);
  cmdp.discount = options.discount;
  cmdp.thresholds = {options.threshold};

  cmdp.reward.row(static_cast<Eigen::Index>(grid_index(options, options.goal))).setOnes();
  for (const auto& c : options.hazards) cmdp.costs[0](static_cast<Eigen::Index>(grid_index(options, c))) = 1.0;

  auto destination = [&](std::size_t x, std::size_t y, std::size_t move) {
    const long nx = static_cast<long>(x) + kGridMoves[move][0];
    const long ny = static_cast<long>(y) + kGridMoves[move][1];
    if (nx < 0 || ny < 0 || nx >= static_cast<long>(w) || ny >= static_cast<long>(h)) return y * w + x;
    return static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
  };

  const double slip_each = options.slip_prob / static_cast<double>(kGridMoves.size() - 1);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t s = y * w + x;
      for (std::size_t a = 0; a < kGridMoves.size(); ++a) {
        for (std::size_t m = 0; m < kGridMoves.size(); ++m) {
          cmdp.p(s, a, destination(x, y, m)) += (m == a) ? 1.0 - options.slip_prob : slip_each;
        }
      }
    }
  }
  cmdp.validate();
  return cmdp;
}

// ---------------------------------------------------------------------------
// Continuous adapter over a gridworld

GridworldEnv::GridworldEnv(GridworldOptions options, std::size_t horizon)
    : options_(std::move(options)), cmdp_(build_gridworld(options_)) {
  spec_.state_dim = 2;
  spec_.action_dim = 2;
  spec_.action_low = Vector::Constant(2, -1.0);
  spec_.action_high = Vector::Constant(2, 1.0);
  spec_.horizon = horizon;
  spec_.discount = options_.discount;
  spec_.thresholds = {options_.threshold};
  spec_.validate();
}

Vector GridworldEnv::encode(std::size_t index) const {
  const double x = static_cast<double>(index % options_.width);
  const double y = static_cast<double>(index / options_.width);
  Vector v(2);
  v << 2.0 * x / static_cast<double>(options_.width - 1) - 1.0, 2.0 * y / static_cast<double>(options_.height - 1) - 1.0;
  return v;
}

std::size_t GridworldEnv::decode(const Vector& state) const {
  if (state.size() != 2 || !state.allFinite()) throw InputError("gridworld state must be a finite 2-vector");
  auto axis = [](double u, std::size_t n) {
    const double cell = std::round((u + 1.0) * 0.5 * static_cast<double>(n - 1));
    return static_cast<std::size_t>(std::clamp(cell, 0.0, static_cast<double>(n - 1)));
  };
  return axis(state(1), options_.height) * options_.width + axis(state(0), options_.width);
}

Vector GridworldEnv::initial_state() const { return encode(cmdp_.start); }

std::size_t GridworldEnv::move_for_action(const Vector& action) {
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < kGridMoves.size(); ++m) {
    const double score = kGridMoves[m][0] * action(0) + kGridMoves[m][1] * action(1);
    if (score > best_score) {
      best_score = score;
      best = m;
    }
  }
  return best;
}

StepResult GridworldEnv::step(const Vector& state, const Vector& action, Rng& rng) const {
  if (action.size() != 2) throw InputError("gridworld action must be a 2-vector");
  require_finite(action, "action");
  const std::size_t s = decode(state);
  const std::size_t a = move_for_action(action);
  StepResult out;
  out.reward = cmdp_.reward(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
  out.costs = {cmdp_.costs[0](static_cast<Eigen::Index>(s))};
  out.next_state = encode(sample_next_state(cmdp_, s, a, rng));
  return out;
}

// ---------------------------------------------------------------------------
// Rollouts

Trajectory rollout(const Environment& env, const PolicyFn& policy, double exploration_std,
                   std::size_t horizon, Rng& env_rng, Rng& explore_rng) {
  if (!(exploration_std >= 0.0)) throw InputError("exploration_std must be nonnegative");
  const CmdpSpec& spec = env.spec();
  const std::size_t m = spec.num_constraints();

  Trajectory traj;
  traj.states.reserve(horizon + 1);
  traj.actions_mean.reserve(horizon);
  traj.actions_exec.reserve(horizon);
  traj.rewards.reserve(horizon);
  traj.costs.assign(m, {});
  for (auto& c : traj.costs) c.reserve(horizon);

  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector state = env.initial_state();
  traj.states.push_back(state);
  for (std::size_t t = 0; t < horizon; ++t) {
    Vector mean = policy(state);
    Vector noisy = mean;
    if (exploration_std > 0.0) {
      for (Eigen::Index i = 0; i < noisy.size(); ++i) noisy(i) += exploration_std * gauss(explore_rng);
    }
    Vector executed = clip_action(noisy, spec.action_low, spec.action_high);
    StepResult step = env.step(state, executed, env_rng);

    traj.actions_mean.push_back(std::move(mean));
    traj.actions_exec.push_back(std::move(executed));
    traj.rewards.push_back(step.reward);
    for (std::size_t i = 0; i < m; ++i) traj.costs[i].push_back(step.costs.at(i));
    state = std::move(step.next_state);
    traj.states.push_back(state);
  }
  return traj;
}

Trajectory rollout(const Environment& env, const PolicyFn& policy, double exploration_std,
                   std::size_t horizon, Rng& rng) {
  return rollout(env, policy, exploration_std, horizon, rng, rng);
}

double discounted_sum(std::span<const double> values, double discount) {
  if (!(discount >= 0.0 && discount <= 1.0)) throw InputError("discount must lie in [0, 1]");
  // Horner from the tail keeps 0^0 = 1 for discount == 0.
  double acc = 0.0;
  for (auto it = values.rbegin(); it != values.rend(); ++it) {
    if (!std::isfinite(*it)) throw InputError("discounted_sum: non-finite value");
    acc = *it + discount * acc;
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Random instances

TabularCmdp random_tabular_cmdp(std::size_t num_states, std::size_t num_actions, double discount, Rng& rng) {
  if (num_states == 0 || num_actions == 0) throw InputError("random CMDP must be non-empty");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  TabularCmdp cmdp;
  cmdp.num_states = num_states;
  cmdp.num_actions = num_actions;
  cmdp.discount = discount;
  cmdp.start = 0;
  cmdp.transitions.resize(num_states * num_actions * num_states);
  for (std::size_t s = 0; s < num_states; ++s) {
    for (std::size_t a = 0; a < num_actions; ++a) {
      double total = 0.0;
      for (std::size_t n = 0; n < num_states; ++n) {
        // cubing concentrates mass on a few successors
        const double u = unif(rng);
        cmdp.p(s, a, n) = u * u * u;
        total += cmdp.p(s, a, n);
      }
      for (std::size_t n = 0; n < num_states; ++n) cmdp.p(s, a, n) /= total;
    }
  }
  cmdp.reward = Matrix::NullaryExpr(static_cast<Eigen::Index>(num_states), static_cast<Eigen::Index>(num_actions),
                                    [&]() { return unif(rng); });
  cmdp.costs = {Vector::NullaryExpr(static_cast<Eigen::Index>(num_states), [&]() { return unif(rng); })};
  cmdp.thresholds = {0.0};
  return cmdp;
}

TabularPolicy random_tabular_policy(std::size_t num_states, std::size_t num_actions, Rng& rng) {
  std::exponential_distribution<double> expo(1.0);
  TabularPolicy pi;
  pi.probs = Matrix(static_cast<Eigen::Index>(num_states), static_cast<Eigen::Index>(num_actions));
  for (Eigen::Index s = 0; s < pi.probs.rows(); ++s) {
    for (Eigen::Index a = 0; a < pi.probs.cols(); ++a) pi.probs(s, a) = expo(rng);
    pi.probs.row(s) /= pi.probs.row(s).sum();
  }
  return pi;
}

}  // namespace lbpo
