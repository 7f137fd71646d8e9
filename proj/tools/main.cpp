#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lbpo/config.hpp"
#include "lbpo/errors.hpp"
#include "lbpo/harness.hpp"
#include "lbpo/tabular_oracle.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<double> beta;
  std::optional<std::string> env;
  std::optional<std::string> algo;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> trajectories;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--beta", f.beta, "barrier coefficient");
  cmd->add_option("--env", f.env, "didactic | gridworld");
  cmd->add_option("--algo", f.algo, "lbpo | backtrack | unconstrained");
  cmd->add_option("--epochs", f.epochs, "training epochs");
  cmd->add_option("--trajectories", f.trajectories, "trajectories per epoch");
}

lbpo::ExperimentConfig build_config(const CommonFlags& f) {
  nlohmann::json raw = nlohmann::json::object();
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    std::stringstream buf;
    buf << in.rdbuf();
    try {
      raw = nlohmann::json::parse(buf.str());
    } catch (const nlohmann::json::parse_error& e) {
      throw lbpo::InputError(std::string("config is not valid JSON: ") + e.what());
    }
  }
  if (f.seed) raw["seed"] = *f.seed;
  if (!f.out.empty()) raw["out_dir"] = f.out;
  if (f.beta) raw["beta"] = *f.beta;
  if (f.env) raw["env"] = *f.env;
  if (f.algo) raw["algo"] = *f.algo;
  if (f.epochs) raw["epochs"] = *f.epochs;
  if (f.trajectories) raw["trajectories"] = *f.trajectories;
  return lbpo::config_from_json(raw.dump());
}

int cmd_train(const CommonFlags& f) {
  const auto cfg = build_config(f);
  const auto result = lbpo::run_training(cfg);
  std::printf("epochs %zu  init_steps %zu  violations %zu\n", result.rows.size(), result.init_iterations,
              lbpo::violation_count(result.rows));
  if (!result.rows.empty()) {
    std::printf("violation_fraction %s  final_cost %s  final_return %s\n",
                lbpo::format_double(lbpo::violation_fraction(result.rows)).c_str(),
                lbpo::format_double(lbpo::tail_mean_cost(result.rows)).c_str(),
                lbpo::format_double(lbpo::tail_mean_return(result.rows)).c_str());
  }
  if (!cfg.out_dir.empty()) std::printf("metrics written to %s\n", (cfg.out_dir / "metrics.csv").string().c_str());
  return 0;
}

int cmd_sweep_beta(const CommonFlags& f, const std::vector<double>& betas, const std::vector<std::uint64_t>& seeds) {
  const auto cfg = build_config(f);
  const auto result = lbpo::sweep_beta(cfg, betas, seeds);
  std::cout << result.to_csv();
  return 0;
}

int cmd_sweep_samples(const CommonFlags& f, const std::vector<std::size_t>& counts,
                      const std::vector<std::uint64_t>& seeds, const std::vector<std::string>& algo_names) {
  const auto cfg = build_config(f);
  std::vector<lbpo::Algo> algos;
  for (const auto& name : algo_names) algos.push_back(lbpo::parse_algo(name));
  const auto cells = lbpo::sweep_samples(cfg, algos, counts, seeds);
  std::printf("algo,trajectories,mean_violations,mean_fraction\n");
  for (const auto& c : cells) {
    std::printf("%s,%zu,%s,%s\n", lbpo::to_string(c.algo).c_str(), c.trajectories,
                lbpo::format_double(c.mean_violations()).c_str(), lbpo::format_double(c.mean_fraction()).c_str());
  }
  return 0;
}

int cmd_verify_oracle(const lbpo::OracleSuiteOptions& options) {
  const auto r = lbpo::run_oracle_suite(options);
  std::printf("instances %zu  certified %zu  safety_exceptions %zu\n", r.instances, r.certified_policies,
              r.safety_exceptions);
  std::printf("max_certified_cost_excess %.3e\n", r.max_certified_cost_excess);
  std::printf("max_offset_deviation %.3e\n", r.max_offset_deviation);
  std::printf("max_start_excess %.3e\n", r.max_start_excess);
  std::printf("max_visitation_error %.3e\n", r.max_visitation_error);
  std::printf("max_value_iteration_gap %.3e\n", r.max_value_iteration_gap);
  const bool ok = r.safety_ok() && r.offset_ok() && r.budget_ok();
  std::printf("%s\n", ok ? "OK" : "FAILED");
  return ok ? 0 : 1;
}

int cmd_report(std::vector<std::string> inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      for (const auto& entry : fs::recursive_directory_iterator(p)) {
        if (entry.is_regular_file() && entry.path().filename() == "metrics.csv") files.push_back(entry.path());
      }
    } else {
      files.push_back(p);
    }
  }
  std::sort(files.begin(), files.end());
  std::cout << lbpo::report(files);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lyapunov barrier policy optimization experiments"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  auto* train = app.add_subcommand("train", "run one training experiment");
  add_common(train, train_flags);

  CommonFlags beta_flags;
  std::vector<double> betas{0.005, 0.008, 0.01, 0.02};
  std::vector<std::uint64_t> beta_seeds{0, 1, 2, 3, 4};
  auto* sweep_beta = app.add_subcommand("sweep-beta", "final cost and return per barrier coefficient");
  add_common(sweep_beta, beta_flags);
  sweep_beta->add_option("--betas", betas, "barrier coefficients")->delimiter(',');
  sweep_beta->add_option("--seeds", beta_seeds, "seeds")->delimiter(',');

  CommonFlags sample_flags;
  std::vector<std::size_t> counts{10, 30, 100};
  std::vector<std::uint64_t> sample_seeds{0, 1, 2, 3, 4};
  std::vector<std::string> algos{"lbpo", "backtrack"};
  auto* sweep_samples = app.add_subcommand("sweep-samples", "constraint violations per trajectory budget");
  add_common(sweep_samples, sample_flags);
  sweep_samples->add_option("--counts", counts, "trajectories per epoch")->delimiter(',');
  sweep_samples->add_option("--seeds", sample_seeds, "seeds")->delimiter(',');
  sweep_samples->add_option("--algos", algos, "algorithms")->delimiter(',');

  lbpo::OracleSuiteOptions oracle;
  auto* verify = app.add_subcommand("verify-oracle", "exact checks on random tabular CMDPs");
  verify->add_option("--seed", oracle.seed, "seed");
  verify->add_option("--instances", oracle.instances, "random CMDPs");
  verify->add_option("--policies", oracle.policies_per_instance, "sampled policies per CMDP");
  verify->add_option("--max-states", oracle.max_states, "largest CMDP");

  std::vector<std::string> report_inputs;
  auto* report = app.add_subcommand("report", "summarize metrics files");
  report->add_option("inputs", report_inputs, "metrics.csv files or directories")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(train_flags);
    if (*sweep_beta) return cmd_sweep_beta(beta_flags, betas, beta_seeds);
    if (*sweep_samples) return cmd_sweep_samples(sample_flags, counts, sample_seeds, algos);
    if (*verify) return cmd_verify_oracle(oracle);
    if (*report) return cmd_report(report_inputs);
  } catch (const lbpo::InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
