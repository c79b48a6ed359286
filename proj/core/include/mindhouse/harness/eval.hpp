#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mindhouse/rewards/rewards.hpp"
#include "mindhouse/trainer/train.hpp"

namespace mindhouse::harness {

/// Aggregates for one spawn tier (the agent starts `offset` primitive
/// actions from the target). Episodes whose house cannot realize the tier
/// distance (fallback spawn) are excluded from the means and counted in
/// `excluded`; episodes that hit the step budget are included (the forced
/// Stop defines the terminal distance) and tallied in `timeouts`.
struct TierResult {
  int offset = 0;
  int episodes = 0;
  int excluded = 0;
  int timeouts = 0;
  double mean_d_delta = 0.0;  // mean of d_0 - d_T; never exceeds offset
  double qa_accuracy = 0.0;
  double mean_steps = 0.0;  // primitive actions per episode
};

struct EvalReport {
  std::vector<TierResult> tiers;       // in the order requested
  std::string config_fingerprint;      // hex config hash
  std::string notes;                   // fixed methodology string

  /// Sorted keys, fixed formatting: byte-identical across runs with the
  /// same config and seed.
  std::string to_json_string() const;
};

struct EvalOptions {
  std::vector<int> tiers = {10, 30, 50};
  int n_max = 80;
  int planner_budget = 80;
  bool use_imagery = true;
  uint64_t seed = 0;  // drives the re-spawn draws only; actions are greedy
  rewards::RewardConfig rcfg;
  uint64_t config_hash = 0;
};

/// Greedy-policy evaluation: each episode is re-spawned at every tier
/// offset (seeded per episode/tier), run to Stop, and scored by the
/// geodesic distance change d_0 - d_T and answer correctness.
/// Single-threaded and deterministic.
EvalReport evaluate(const trainer::ModelBundle& m,
                    const trainer::WorldData& data,
                    const std::vector<eqagen::Episode>& split,
                    const EvalOptions& opts);

}  // namespace mindhouse::harness
