#include "lbpo/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lbpo/errors.hpp"

namespace lbpo {

using nlohmann::json;

EnvKind parse_env(std::string_view name) {
  if (name == "didactic") return EnvKind::kDidactic;
  if (name == "gridworld") return EnvKind::kGridworld;
  throw InputError("unknown env '" + std::string(name) + "'");
}

Algo parse_algo(std::string_view name) {
  if (name == "lbpo") return Algo::kLbpo;
  if (name == "backtrack") return Algo::kBacktrack;
  if (name == "unconstrained") return Algo::kUnconstrained;
  throw InputError("unknown algo '" + std::string(name) + "'");
}

std::string to_string(EnvKind env) { return env == EnvKind::kDidactic ? "didactic" : "gridworld"; }

std::string to_string(Algo algo) {
  switch (algo) {
    case Algo::kLbpo: return "lbpo";
    case Algo::kBacktrack: return "backtrack";
    case Algo::kUnconstrained: return "unconstrained";
  }
  return "unknown";
}

ExperimentConfig ExperimentConfig::defaults(EnvKind env) {
  ExperimentConfig c;
  c.env = env;
  if (env == EnvKind::kGridworld) {
    c.horizon = 30;
    c.discount = 0.9;
    c.threshold = 1.0;
    c.grid.hazards = {{2, 1}, {2, 2}, {2, 3}};
  }
  return c;
}

void ExperimentConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw InputError(std::string(name) + " must be positive");
  };
  if (epochs > 1000000) throw InputError("epochs out of range");
  if (trajectories == 0) throw InputError("trajectories must be positive");
  if (horizon == 0) throw InputError("horizon must be positive");
  if (!(discount > 0.0 && discount < 1.0)) throw InputError("discount must lie in (0, 1)");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InputError("lambda must lie in [0, 1]");
  if (!(threshold >= 0.0)) throw InputError("threshold must be nonnegative");
  positive(noise_std, "noise_std");
  positive(action_bound, "action_bound");
  positive(q_fit.learning_rate, "q_learning_rate");
  if (q_fit.batch_size == 0) throw InputError("q_batch_size must be positive");
  positive(policy_init_scale, "policy_init_scale");
  if (policy_hidden.empty() || q_hidden.empty()) throw InputError("hidden layer lists must be non-empty");
  for (auto h : policy_hidden) if (h == 0) throw InputError("hidden layer sizes must be positive");
  for (auto h : q_hidden) if (h == 0) throw InputError("hidden layer sizes must be positive");
  if (snapshot_every == 0) throw InputError("snapshot_every must be positive");
  if (init_max_iters == 0) throw InputError("init_max_iters must be positive");
  barrier.validate();
  trust_region.validate();
  if (env == EnvKind::kGridworld) {
    if (grid.width == 0 || grid.height == 0) throw InputError("grid must be non-empty");
    if (!(grid.slip_prob >= 0.0 && grid.slip_prob <= 1.0)) throw InputError("slip_prob must lie in [0, 1]");
  }
}

namespace {

template <typename T>
T take(const json& j, const char* key) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw InputError(std::string("bad value for '") + key + "': " + e.what());
  }
}

Cell take_cell(const json& j, const char* key) {
  const auto v = take<std::vector<std::size_t>>(j, key);
  if (v.size() != 2) throw InputError(std::string("'") + key + "' must be [x, y]");
  return {v[0], v[1]};
}

void apply_grid(GridworldOptions& g, const json& j) {
  if (!j.is_object()) throw InputError("'grid' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "width") g.width = take<std::size_t>(value, "width");
    else if (key == "height") g.height = take<std::size_t>(value, "height");
    else if (key == "slip_prob") g.slip_prob = take<double>(value, "slip_prob");
    else if (key == "goal") g.goal = take_cell(value, "goal");
    else if (key == "start") g.start = take_cell(value, "start");
    else if (key == "hazards") {
      if (!value.is_array()) throw InputError("'hazards' must be a list of cells");
      g.hazards.clear();
      for (const auto& cell : value) g.hazards.push_back(take_cell(cell, "hazards"));
    } else {
      throw InputError("unknown grid key '" + key + "'");
    }
  }
}

TerminalBootstrap parse_terminal(const std::string& name) {
  if (name == "q") return TerminalBootstrap::kQ;
  if (name == "zero") return TerminalBootstrap::kZero;
  throw InputError("terminal_bootstrap must be 'q' or 'zero'");
}

}  // namespace

ExperimentConfig config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw InputError("config must be a JSON object");

  EnvKind env = EnvKind::kDidactic;
  if (j.contains("env")) env = parse_env(take<std::string>(j["env"], "env"));
  ExperimentConfig c = ExperimentConfig::defaults(env);

  for (const auto& [key, v] : j.items()) {
    const char* k = key.c_str();
    if (key == "env") continue;
    else if (key == "algo") c.algo = parse_algo(take<std::string>(v, k));
    else if (key == "seed") c.seed = take<std::uint64_t>(v, k);
    else if (key == "epochs") c.epochs = take<std::size_t>(v, k);
    else if (key == "trajectories") c.trajectories = take<std::size_t>(v, k);
    else if (key == "horizon") c.horizon = take<std::size_t>(v, k);
    else if (key == "discount") c.discount = take<double>(v, k);
    else if (key == "lambda") c.lambda = take<double>(v, k);
    else if (key == "terminal_bootstrap") c.terminal = parse_terminal(take<std::string>(v, k));
    else if (key == "threshold") c.threshold = take<double>(v, k);
    else if (key == "noise_std") c.noise_std = take<double>(v, k);
    else if (key == "action_bound") c.action_bound = take<double>(v, k);
    else if (key == "grid") apply_grid(c.grid, v);
    else if (key == "beta") c.barrier.beta = take<double>(v, k);
    else if (key == "beta_thres") c.barrier.beta_thres = take<double>(v, k);
    else if (key == "literal_beta_thres_mode") c.barrier.literal_beta_thres_mode = take<bool>(v, k);
    else if (key == "mu") c.trust_region.mu = take<double>(v, k);
    else if (key == "exploration_std") c.trust_region.exploration_std = take<double>(v, k);
    else if (key == "cg_iters") c.trust_region.cg_iters = take<std::size_t>(v, k);
    else if (key == "cg_tol") c.trust_region.cg_tol = take<double>(v, k);
    else if (key == "damping") c.trust_region.damping = take<double>(v, k);
    else if (key == "linesearch_decay") c.trust_region.decay = take<double>(v, k);
    else if (key == "max_linesearch") c.trust_region.max_linesearch = take<std::size_t>(v, k);
    else if (key == "q_learning_rate") c.q_fit.learning_rate = take<double>(v, k);
    else if (key == "q_epochs") c.q_fit.epochs = take<std::size_t>(v, k);
    else if (key == "q_batch_size") c.q_fit.batch_size = take<std::size_t>(v, k);
    else if (key == "policy_hidden") c.policy_hidden = take<std::vector<std::size_t>>(v, k);
    else if (key == "q_hidden") c.q_hidden = take<std::vector<std::size_t>>(v, k);
    else if (key == "policy_init_scale") c.policy_init_scale = take<double>(v, k);
    else if (key == "init_max_iters") c.init_max_iters = take<std::size_t>(v, k);
    else if (key == "snapshot_every") c.snapshot_every = take<std::size_t>(v, k);
    else if (key == "out_dir") c.out_dir = take<std::string>(v, k);
    else throw InputError("unknown config key '" + key + "'");
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str());
}

std::string config_to_json(const ExperimentConfig& c) {
  json grid = {{"width", c.grid.width},
               {"height", c.grid.height},
               {"slip_prob", c.grid.slip_prob},
               {"goal", {c.grid.goal.first, c.grid.goal.second}},
               {"start", {c.grid.start.first, c.grid.start.second}},
               {"hazards", json::array()}};
  for (const auto& [x, y] : c.grid.hazards) grid["hazards"].push_back({x, y});
  json j = {{"env", to_string(c.env)},
            {"algo", to_string(c.algo)},
            {"seed", c.seed},
            {"epochs", c.epochs},
            {"trajectories", c.trajectories},
            {"horizon", c.horizon},
            {"discount", c.discount},
            {"lambda", c.lambda},
            {"terminal_bootstrap", c.terminal == TerminalBootstrap::kQ ? "q" : "zero"},
            {"threshold", c.threshold},
            {"noise_std", c.noise_std},
            {"action_bound", c.action_bound},
            {"grid", grid},
            {"beta", c.barrier.beta},
            {"beta_thres", c.barrier.beta_thres},
            {"literal_beta_thres_mode", c.barrier.literal_beta_thres_mode},
            {"mu", c.trust_region.mu},
            {"exploration_std", c.trust_region.exploration_std},
            {"cg_iters", c.trust_region.cg_iters},
            {"cg_tol", c.trust_region.cg_tol},
            {"damping", c.trust_region.damping},
            {"linesearch_decay", c.trust_region.decay},
            {"max_linesearch", c.trust_region.max_linesearch},
            {"q_learning_rate", c.q_fit.learning_rate},
            {"q_epochs", c.q_fit.epochs},
            {"q_batch_size", c.q_fit.batch_size},
            {"policy_hidden", c.policy_hidden},
            {"q_hidden", c.q_hidden},
            {"policy_init_scale", c.policy_init_scale},
            {"init_max_iters", c.init_max_iters},
            {"snapshot_every", c.snapshot_every},
            {"out_dir", c.out_dir.string()}};
  return j.dump(2);
}

}  // namespace lbpo
