#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lbpo/rng.hpp"

namespace lbpo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Shape and constraint data shared by every environment.
struct CmdpSpec {
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  Vector action_low;
  Vector action_high;
  std::size_t horizon = 1;
  double discount = 0.99;
  std::vector<double> thresholds;  // d0, one per constraint

  std::size_t num_constraints() const { return thresholds.size(); }

  /// Throws InputError unless 0 < discount < 1, horizon >= 1, m >= 1,
  /// low < high componentwise and every threshold is nonnegative.
  void validate() const;
};

struct StepResult {
  Vector next_state;
  double reward = 0.0;
  std::vector<double> costs;
};

class Environment {
 public:
  virtual ~Environment() = default;

  virtual const CmdpSpec& spec() const = 0;
  virtual Vector initial_state() const = 0;
  virtual StepResult step(const Vector& state, const Vector& action, Rng& rng) const = 0;
};

/// Componentwise clamp into [low, high].
Vector clip_action(const Vector& action, const Vector& low, const Vector& high);

/// Two-dimensional point mass whose reward and cost are both the distance
/// from the origin. Actions are clipped to a box and Gaussian noise is added
/// to every transition.
class DidacticEnv final : public Environment {
 public:
  struct Options {
    double noise_std = 0.1;
    double action_bound = 0.2;
    std::size_t horizon = 10;
    double discount = 0.99;
    double threshold = 2.0;
  };

  /// Replaces the Gaussian transition noise; receives the stream the step was given.
  using NoiseHook = std::function<Eigen::Vector2d(Rng&)>;

  DidacticEnv();
  explicit DidacticEnv(Options options);

  const CmdpSpec& spec() const override { return spec_; }
  const Options& options() const { return options_; }
  Vector initial_state() const override { return Vector::Zero(2); }

  /// Reward and cost are evaluated at the post-transition state.
  StepResult step(const Vector& state, const Vector& action, Rng& rng) const override;

  void set_noise_hook(NoiseHook hook) { noise_hook_ = std::move(hook); }

 private:
  Options options_;
  CmdpSpec spec_;
  NoiseHook noise_hook_;
};

/// A finite CMDP with explicit transition tensor.
struct TabularCmdp {
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::vector<double> transitions;  // [s][a][s'] flattened, row-major
  Matrix reward;                    // num_states x num_actions
  std::vector<Vector> costs;        // one per-state vector per constraint
  std::size_t start = 0;
  double discount = 0.9;
  std::vector<double> thresholds;

  double p(std::size_t s, std::size_t a, std::size_t next) const {
    return transitions[(s * num_actions + a) * num_states + next];
  }
  double& p(std::size_t s, std::size_t a, std::size_t next) {
    return transitions[(s * num_actions + a) * num_states + next];
  }
  std::span<const double> row(std::size_t s, std::size_t a) const {
    return {transitions.data() + (s * num_actions + a) * num_states, num_states};
  }
  std::size_t num_constraints() const { return costs.size(); }

  /// Throws InputError on inconsistent sizes, negative entries or rows that
  /// do not sum to one within 1e-12.
  void validate() const;
};

/// Stationary tabular policy: rows are action distributions.
struct TabularPolicy {
  Matrix probs;  // num_states x num_actions

  static TabularPolicy deterministic(const std::vector<std::size_t>& actions, std::size_t num_actions);
  static TabularPolicy uniform(std::size_t num_states, std::size_t num_actions);

  void validate() const;
};

/// Samples s' ~ P(.|s, a).
std::size_t sample_next_state(const TabularCmdp& cmdp, std::size_t state, std::size_t action, Rng& rng);

/// Samples a ~ pi(.|s).
std::size_t sample_action(const TabularPolicy& policy, std::size_t state, Rng& rng);

using Cell = std::pair<std::size_t, std::size_t>;  // (x, y)

struct GridworldOptions {
  std::size_t width = 5;
  std::size_t height = 5;
  std::vector<Cell> hazards;
  Cell goal{4, 4};
  Cell start{0, 0};
  double discount = 0.9;
  double threshold = 1.0;
  double slip_prob = 0.1;
};

/// Action order of the gridworld: up (+y), right (+x), down (-y), left (-x).
inline constexpr std::array<std::array<int, 2>, 4> kGridMoves{{{0, 1}, {1, 0}, {0, -1}, {-1, 0}}};

/// Four-action gridworld. Reward 1 for acting in the goal cell, cost 1 in
/// hazard cells. The intended move succeeds with probability 1 - slip_prob;
/// otherwise one of the three other moves happens uniformly. Moves into a
/// wall leave the agent in place.
TabularCmdp build_gridworld(const GridworldOptions& options);

inline std::size_t grid_index(const GridworldOptions& options, Cell cell) {
  return cell.second * options.width + cell.first;
}

/// Continuous-action view of a gridworld for the policy-gradient pipeline.
/// The state is the cell position scaled to [-1, 1]^2; the executed move is
/// the grid direction best aligned with the 2-D action (ties to lowest index).
/// Cost is charged on the state the step starts from, as in the tabular model.
class GridworldEnv final : public Environment {
 public:
  GridworldEnv(GridworldOptions options, std::size_t horizon);

  const CmdpSpec& spec() const override { return spec_; }
  const TabularCmdp& tabular() const { return cmdp_; }
  const GridworldOptions& options() const { return options_; }

  Vector initial_state() const override;
  StepResult step(const Vector& state, const Vector& action, Rng& rng) const override;

  Vector encode(std::size_t index) const;
  std::size_t decode(const Vector& state) const;
  static std::size_t move_for_action(const Vector& action);

 private:
  GridworldOptions options_;
  TabularCmdp cmdp_;
  CmdpSpec spec_;
};

/// One rollout. states has horizon + 1 entries, everything else horizon.
struct Trajectory {
  std::vector<Vector> states;
  std::vector<Vector> actions_mean;
  std::vector<Vector> actions_exec;
  std::vector<double> rewards;
  std::vector<std::vector<double>> costs;  // [constraint][t]

  std::size_t horizon() const { return rewards.size(); }
};

using PolicyFn = std::function<Vector(const Vector&)>;

/// Executes clip(policy(s) + N(0, exploration_std^2)) for `horizon` steps.
/// Environment noise draws from env_rng, exploration noise from explore_rng.
Trajectory rollout(const Environment& env, const PolicyFn& policy, double exploration_std,
                   std::size_t horizon, Rng& env_rng, Rng& explore_rng);

/// Single-stream convenience overload.
Trajectory rollout(const Environment& env, const PolicyFn& policy, double exploration_std,
                   std::size_t horizon, Rng& rng);

/// sum_t discount^t values[t]
double discounted_sum(std::span<const double> values, double discount);

/// Random tabular CMDP: dense random transition rows, rewards and a single
/// cost signal uniform in [0, 1). The threshold is left at zero for the
/// caller to set against a chosen baseline policy.
TabularCmdp random_tabular_cmdp(std::size_t num_states, std::size_t num_actions, double discount, Rng& rng);

TabularPolicy random_tabular_policy(std::size_t num_states, std::size_t num_actions, Rng& rng);

}  // namespace lbpo
