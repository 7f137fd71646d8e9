#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lbpo/cmdp.hpp"
#include "lbpo/policy_eval.hpp"
#include "lbpo/safe_update.hpp"

namespace lbpo {

enum class EnvKind { kDidactic, kGridworld };
enum class Algo { kLbpo, kBacktrack, kUnconstrained };

EnvKind parse_env(std::string_view name);
Algo parse_algo(std::string_view name);
std::string to_string(EnvKind env);
std::string to_string(Algo algo);

struct ExperimentConfig {
  EnvKind env = EnvKind::kDidactic;
  Algo algo = Algo::kLbpo;
  std::uint64_t seed = 0;
  std::size_t epochs = 100;
  std::size_t trajectories = 30;
  std::size_t horizon = 10;
  double discount = 0.99;
  double lambda = 0.97;
  /// Tail of the lambda-return at the truncation step.
  TerminalBootstrap terminal = TerminalBootstrap::kZero;
  double threshold = 2.0;

  // didactic environment
  double noise_std = 0.1;
  double action_bound = 0.2;

  // gridworld environment
  GridworldOptions grid;

  BarrierConfig barrier;
  TrustRegionConfig trust_region;
  FitOptions q_fit;

  std::vector<std::size_t> policy_hidden{32, 32};
  std::vector<std::size_t> q_hidden{32, 32};
  double policy_init_scale = 0.01;

  std::size_t init_max_iters = 200;
  std::size_t snapshot_every = 10;
  std::filesystem::path out_dir;

  /// Defaults for one environment: the didactic env uses horizon 10 and
  /// discount 0.99, the gridworld horizon 30 and discount 0.9.
  static ExperimentConfig defaults(EnvKind env);

  /// Throws InputError on non-positive hyperparameters or inconsistent sizes.
  void validate() const;
};

/// Parses a JSON document. Keys absent from the document keep the defaults of
/// the selected env; unknown keys are rejected with InputError.
ExperimentConfig config_from_json(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& config);

}  // namespace lbpo
