#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lbpo/cmdp.hpp"
#include "lbpo/config.hpp"
#include "lbpo/func_approx.hpp"

namespace lbpo {

std::unique_ptr<Environment> make_environment(const ExperimentConfig& config);

struct MetricsRow {
  std::size_t epoch = 0;
  double undiscounted_return = 0.0;
  std::vector<double> undiscounted_cost;
  std::vector<double> discounted_cost;
  std::vector<double> epsilon;
  bool violated = false;
  double kl_after = 0.0;
  std::size_t linesearch_steps = 0;
  bool backtracked = false;
  // kept in memory only
  bool accepted = false;
  double min_margin = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "epoch,return,cost_undisc,cost_disc,epsilon,violated,kl,linesearch_steps,backtracked";

/// One CSV line without the trailing newline; floats at 17 significant digits,
/// per-constraint fields joined with ';'.
std::string format_metrics_row(const MetricsRow& row);

/// Formats a double with 17 significant digits.
std::string format_double(double value);

struct SafeStart {
  DeterministicPolicy policy;
  QFunction qr;
  std::vector<QFunction> qcs;
  std::size_t iterations = 0;  // cost-recovery steps taken
  std::vector<double> measured;
};

/// Initial policy near zero action, then cost-only trust-region steps until
/// every measured discounted cost is strictly below its threshold. Throws
/// InitializationFailure after config.init_max_iters steps.
SafeStart safe_initialize(const Environment& env, const ExperimentConfig& config);

struct TrainingResult {
  std::vector<MetricsRow> rows;
  DeterministicPolicy final_policy;
  std::size_t init_iterations = 0;
  std::vector<std::filesystem::path> snapshots;
};

/// Runs the collect / fit / update loop. When config.out_dir is non-empty,
/// writes metrics.csv (flushed every epoch) and policy snapshots every
/// snapshot_every epochs plus the initial one.
TrainingResult run_training(const ExperimentConfig& config);
TrainingResult run_training(const ExperimentConfig& config, const Environment& env);

/// Fraction of rows flagged violated. Throws InputError on an empty span.
double violation_fraction(std::span<const MetricsRow> rows);
std::size_t violation_count(std::span<const MetricsRow> rows);

/// Mean over the last `window` rows (or all rows if fewer).
double tail_mean_cost(std::span<const MetricsRow> rows, std::size_t window = 10, std::size_t constraint = 0);
double tail_mean_return(std::span<const MetricsRow> rows, std::size_t window = 10);

struct SampleSweepCell {
  Algo algo = Algo::kLbpo;
  std::size_t trajectories = 0;
  std::vector<std::size_t> violations;  // per seed
  std::vector<double> fractions;        // per seed
  std::vector<std::size_t> accepted_kl_exceptions;  // per seed, accepted rows with kl > mu + 1e-6

  double mean_violations() const;
  double mean_fraction() const;
};

/// Runs every (algo, sample count, seed) cell. Writes samples.csv to
/// base.out_dir when set.
std::vector<SampleSweepCell> sweep_samples(const ExperimentConfig& base, std::span<const Algo> algos,
                                           std::span<const std::size_t> sample_counts,
                                           std::span<const std::uint64_t> seeds);

struct BetaSweepResult {
  std::vector<double> betas;
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<double>> cost;    // [seed][beta], final-10-epoch mean
  std::vector<std::vector<double>> ret;     // [seed][beta]
  std::size_t accepted_kl_exceptions = 0;

  double mean_cost(std::size_t beta_index) const;
  double sem_cost(std::size_t beta_index) const;
  double mean_return(std::size_t beta_index) const;
  double sem_return(std::size_t beta_index) const;
  /// 1 + 2 |betas| columns: seed, then cost and return per beta; one row per
  /// seed followed by mean and sem rows.
  std::string to_csv() const;
};

BetaSweepResult sweep_beta(const ExperimentConfig& base, std::span<const double> betas,
                           std::span<const std::uint64_t> seeds);

/// Reads a metrics CSV written by run_training.
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

/// One summary line per metrics file: file, epochs, violation fraction,
/// final-10 mean cost and return, backtracked fraction.
std::string report(std::span<const std::filesystem::path> metrics_files);

}  // namespace lbpo
