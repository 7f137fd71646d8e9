#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "lbpo/config.hpp"
#include "lbpo/errors.hpp"
#include "lbpo/harness.hpp"

namespace lbpo {
namespace {

namespace fs = std::filesystem;

ExperimentConfig small_config(std::uint64_t seed = 0) {
  ExperimentConfig c = ExperimentConfig::defaults(EnvKind::kDidactic);
  c.seed = seed;
  c.epochs = 4;
  c.trajectories = 6;
  c.q_fit.epochs = 60;
  c.policy_hidden = {16};
  c.q_hidden = {16};
  c.snapshot_every = 2;
  c.noise_std = 0.03;
  return c;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("lbpo_harness_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Didactic dynamics with every cost zeroed.
class CostFreeEnv final : public Environment {
 public:
  const CmdpSpec& spec() const override { return inner_.spec(); }
  Vector initial_state() const override { return inner_.initial_state(); }
  StepResult step(const Vector& s, const Vector& a, Rng& rng) const override {
    StepResult r = inner_.step(s, a, rng);
    for (double& c : r.costs) c = 0.0;
    return r;
  }

 private:
  DidacticEnv inner_;
};

TEST(Config, ParsesKnownKeys) {
  const auto c = config_from_json(R"({"env": "gridworld", "algo": "backtrack", "seed": 7, "beta": 0.02,
                                      "epochs": 12, "mu": 0.01, "q_hidden": [16, 16],
                                      "grid": {"width": 4, "height": 3, "goal": [3, 2], "hazards": [[1, 1]]}})");
  EXPECT_EQ(c.env, EnvKind::kGridworld);
  EXPECT_EQ(c.algo, Algo::kBacktrack);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.barrier.beta, 0.02);
  EXPECT_EQ(c.epochs, 12u);
  EXPECT_EQ(c.trust_region.mu, 0.01);
  EXPECT_EQ(c.q_hidden, (std::vector<std::size_t>{16, 16}));
  EXPECT_EQ(c.grid.width, 4u);
  EXPECT_EQ(c.grid.hazards.size(), 1u);
  EXPECT_EQ(c.discount, 0.9);
}

TEST(Config, DefaultsFollowPublishedHyperparameters) {
  const auto c = ExperimentConfig::defaults(EnvKind::kDidactic);
  EXPECT_EQ(c.trust_region.mu, 0.012);
  EXPECT_EQ(c.trust_region.exploration_std, 0.05);
  EXPECT_EQ(c.lambda, 0.97);
  EXPECT_EQ(c.barrier.beta, 0.005);
  EXPECT_EQ(c.barrier.beta_thres, 0.05);
  EXPECT_EQ(c.trajectories, 30u);
  EXPECT_EQ(c.q_fit.learning_rate, 1e-3);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(config_from_json(R"({"beat": 0.1})"), InputError);
  EXPECT_THROW(config_from_json(R"({"grid": {"colour": 1}})"), InputError);
  EXPECT_THROW(config_from_json(R"({"env": "mujoco"})"), InputError);
  EXPECT_THROW(config_from_json(R"({"discount": 1.5})"), InputError);
  EXPECT_THROW(config_from_json(R"({"trajectories": 0})"), InputError);
  EXPECT_THROW(config_from_json(R"({"mu": "big"})"), InputError);
  EXPECT_THROW(config_from_json("{not json"), InputError);
}

TEST(Config, JsonRoundTrip) {
  auto c = small_config(3);
  c.algo = Algo::kUnconstrained;
  c.barrier.beta = 0.02;
  const auto back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
}

TEST(Metrics, HeaderIsFixed) {
  EXPECT_STREQ(kMetricsHeader, "epoch,return,cost_undisc,cost_disc,epsilon,violated,kl,linesearch_steps,backtracked");
}

TEST(Metrics, RowFormatting) {
  MetricsRow row;
  row.epoch = 3;
  row.undiscounted_return = 0.1;
  row.undiscounted_cost = {2.5};
  row.discounted_cost = {2.25, 0.5};
  row.epsilon = {-0.0025, 0.015};
  row.violated = true;
  row.kl_after = 0.0;
  row.linesearch_steps = 4;
  row.backtracked = true;
  EXPECT_EQ(format_metrics_row(row), "3,0.10000000000000001,2.5,2.25;0.5,-0.0025000000000000001;0.014999999999999999,1,0,4,1");
}

TEST(Metrics, ViolationFraction) {
  std::vector<MetricsRow> rows(12);
  EXPECT_EQ(violation_fraction(rows), 0.0);
  for (std::size_t i = 0; i < 3; ++i) rows[i * 4].violated = true;
  EXPECT_EQ(violation_fraction(rows), 0.25);
  EXPECT_EQ(violation_count(rows), 3u);
  for (auto& r : rows) r.violated = true;
  EXPECT_EQ(violation_fraction(rows), 1.0);
  EXPECT_THROW(violation_fraction(std::vector<MetricsRow>{}), InputError);
}

TEST(Training, ZeroEpochsWritesOnlyInitialSnapshot) {
  auto c = small_config();
  c.epochs = 0;
  c.out_dir = scratch("zero");
  const auto r = run_training(c);
  EXPECT_TRUE(r.rows.empty());
  ASSERT_EQ(r.snapshots.size(), 1u);
  EXPECT_EQ(r.snapshots[0].filename(), "policy_000000.bin");
  EXPECT_EQ(slurp(c.out_dir / "metrics.csv"), std::string(kMetricsHeader) + "\n");
  fs::remove_all(c.out_dir);
}

TEST(Training, SameSeedSameBytes) {
  auto a = small_config(5);
  auto b = small_config(5);
  a.out_dir = scratch("det_a");
  b.out_dir = scratch("det_b");
  run_training(a);
  run_training(b);
  const std::string csv = slurp(a.out_dir / "metrics.csv");
  EXPECT_EQ(csv, slurp(b.out_dir / "metrics.csv"));
  EXPECT_EQ(slurp(a.out_dir / "snapshots" / "policy_000004.bin"), slurp(b.out_dir / "snapshots" / "policy_000004.bin"));
  auto other = small_config(6);
  other.out_dir = scratch("det_c");
  run_training(other);
  EXPECT_NE(csv, slurp(other.out_dir / "metrics.csv"));
  for (const auto& d : {a.out_dir, b.out_dir, other.out_dir}) fs::remove_all(d);
}

TEST(Training, RowsAreSelfConsistent) {
  for (Algo algo : {Algo::kLbpo, Algo::kBacktrack, Algo::kUnconstrained}) {
    auto c = small_config(1);
    c.algo = algo;
    c.epochs = 6;
    c.out_dir = scratch("rows");
    const auto r = run_training(c);
    ASSERT_EQ(r.rows.size(), 6u);
    EXPECT_EQ(r.snapshots.size(), 4u);
    for (const auto& row : r.rows) {
      EXPECT_EQ(row.violated, row.discounted_cost[0] > c.threshold);
      EXPECT_NEAR(row.epsilon[0], (1.0 - c.discount) * (c.threshold - row.discounted_cost[0]), 1e-12);
      if (row.accepted) EXPECT_LE(row.kl_after, c.trust_region.mu + 1e-6);
      if (algo == Algo::kLbpo && row.accepted && !row.backtracked) EXPECT_GT(row.min_margin, 0.0);
      if (algo == Algo::kUnconstrained) EXPECT_FALSE(row.backtracked);
      if (algo == Algo::kBacktrack) EXPECT_EQ(row.backtracked, row.violated);
    }
    const auto back = read_metrics(c.out_dir / "metrics.csv");
    ASSERT_EQ(back.size(), r.rows.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
      EXPECT_EQ(format_metrics_row(back[i]), format_metrics_row(r.rows[i]));
    }
    fs::remove_all(c.out_dir);
  }
}

TEST(Training, GridworldRuns) {
  auto c = ExperimentConfig::defaults(EnvKind::kGridworld);
  c.epochs = 2;
  c.trajectories = 4;
  c.q_fit.epochs = 3;
  const auto r = run_training(c);
  EXPECT_EQ(r.rows.size(), 2u);
}

TEST(SafeInit, CostFreeEnvironmentPassesImmediately) {
  const CostFreeEnv env;
  const auto start = safe_initialize(env, small_config());
  EXPECT_EQ(start.iterations, 0u);
  EXPECT_EQ(start.measured[0], 0.0);
}

TEST(SafeInit, QuietNearZeroPolicyIsAlreadySafe) {
  const auto c = small_config(2);
  DidacticEnv::Options opt;
  opt.noise_std = c.noise_std;
  const DidacticEnv env(opt);
  const auto start = safe_initialize(env, c);
  EXPECT_EQ(start.iterations, 0u);
  EXPECT_LT(start.measured[0], 2.0);
}

TEST(SafeInit, RecoversFromUnsafeStart) {
  const DidacticEnv env;
  auto c = ExperimentConfig::defaults(EnvKind::kDidactic);
  c.seed = 2;
  const auto start = safe_initialize(env, c);
  EXPECT_GT(start.iterations, 0u);
  EXPECT_LT(start.measured[0], c.threshold);
}

TEST(SafeInit, ZeroThresholdFails) {
  auto c = small_config();
  c.threshold = 0.0;
  c.init_max_iters = 3;
  EXPECT_THROW(run_training(c), InitializationFailure);
}

TEST(Sweeps, SingleCellMatchesRun) {
  auto c = small_config(4);
  const std::vector<Algo> algos{Algo::kBacktrack};
  const std::vector<std::size_t> counts{6};
  const std::vector<std::uint64_t> seeds{4};
  const auto cells = sweep_samples(c, algos, counts, seeds);
  ASSERT_EQ(cells.size(), 1u);
  c.algo = Algo::kBacktrack;
  const auto run = run_training(c);
  EXPECT_EQ(cells[0].violations.at(0), violation_count(run.rows));
  EXPECT_EQ(cells[0].mean_violations(), static_cast<double>(violation_count(run.rows)));
}

TEST(Sweeps, BetaCsvShape) {
  auto c = small_config();
  c.epochs = 2;
  c.out_dir = scratch("beta");
  const std::vector<double> betas{0.005, 0.02};
  const std::vector<std::uint64_t> seeds{0, 1};
  const auto r = sweep_beta(c, betas, seeds);
  std::istringstream csv(slurp(c.out_dir / "beta.csv"));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(csv, line)) {
    ++lines;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 4) << line;
  }
  EXPECT_EQ(lines, 1 + seeds.size() + 2);
  EXPECT_EQ(r.to_csv(), slurp(c.out_dir / "beta.csv"));
  fs::remove_all(c.out_dir);
}

TEST(Sweeps, SingleBetaReducesToOneRun) {
  auto c = small_config(2);
  const std::vector<double> betas{0.01};
  const std::vector<std::uint64_t> seeds{2};
  const auto r = sweep_beta(c, betas, seeds);
  c.barrier.beta = 0.01;
  const auto run = run_training(c);
  EXPECT_EQ(r.mean_cost(0), tail_mean_cost(run.rows));
  EXPECT_EQ(r.mean_return(0), tail_mean_return(run.rows));
}

TEST(Report, SummarizesFiles) {
  auto c = small_config(3);
  c.out_dir = scratch("report");
  run_training(c);
  const std::vector<fs::path> files{c.out_dir / "metrics.csv"};
  const std::string text = report(files);
  EXPECT_EQ(text.rfind("file,epochs,violation_fraction,final_cost,final_return,backtracked_fraction\n", 0), 0u);
  EXPECT_NE(text.find("metrics.csv,4,"), std::string::npos);
  fs::remove_all(c.out_dir);
}

}  // namespace
}  // namespace lbpo
