#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mindhouse/agent/agent.hpp"
#include "mindhouse/mind/mind.hpp"
#include "mindhouse/rewards/rewards.hpp"
#include "mindhouse/trainer/train.hpp"

namespace mindhouse::harness {

struct WorldConfig {
  int houses = 1;
  int rooms = 4;
  int grid_size = 15;
};

struct DataConfig {
  int episodes_per_house = 60;
  int spawn_k = 30;
  double eval_fraction = 0.2;  // trailing fraction of episodes held out
};

struct EvalConfig {
  std::vector<int> tiers = {10, 30, 50};
  int n_max = 80;
  int planner_budget = 80;
  bool use_imagery = true;
};

/// Every knob of every module in one document. JSON parsing is strict: an
/// unknown key anywhere is an error, so typos cannot silently fall back to
/// defaults. Unset keys keep the defaults below; the resolved config (all
/// values, including the per-stage seeds derived from `seed`) is what runs
/// are logged with and reproducible from.
struct RunConfig {
  uint64_t seed = 1;
  WorldConfig world;
  DataConfig data;
  mind::MindConfig mind;
  agent::AgentConfig agent;  // sizes only; vocabulary dims are derived
  trainer::VaeConfig vae;
  trainer::ImageryConfig imagery;
  trainer::BCConfig bc;
  trainer::RLConfig rl;
  rewards::RewardConfig rewards;
  EvalConfig eval;
};

/// Parses a strict-key JSON document; absent sections/keys keep defaults.
/// Stage seeds not given explicitly are derived deterministically from the
/// top-level seed.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

/// Fully resolved document, sorted keys, stable bytes. Re-parsing it yields
/// an identical config.
std::string run_config_to_json(const RunConfig& cfg);

/// FNV-1a 64 of the resolved JSON; stamped into checkpoints and reports.
uint64_t config_hash(const RunConfig& cfg);

}  // namespace mindhouse::harness
