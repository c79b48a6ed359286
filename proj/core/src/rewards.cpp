#include "mindhouse/rewards/rewards.hpp"

#include <algorithm>

namespace mindhouse::rewards {

double final_reward(bool answer_correct, int actions_executed,
                    const RewardConfig& cfg) {
  check(cfg.lambda_f >= 0.0, "final_reward: lambda_f must be >= 0");
  check(cfg.n_max >= 1, "final_reward: n_max must be >= 1");
  check(actions_executed >= 0, "final_reward: negative action count");
  if (!answer_correct) return 0.0;
  return 1.0 + cfg.lambda_f * std::max(cfg.n_max - actions_executed, 0);
}

double progressive_reward(int d_t, int d_t1) {
  check(d_t >= 0 && d_t1 >= 0, "progressive_reward: distances must be >= 0");
  return static_cast<double>(d_t - d_t1);
}

double planned_reward(double p_with_mental, double p_without) {
  check(p_with_mental >= 0.0 && p_with_mental <= 1.0,
        "planned_reward: p_with_mental outside [0,1]");
  check(p_without >= 0.0 && p_without <= 1.0,
        "planned_reward: p_without outside [0,1]");
  return p_with_mental - p_without;
}

double total_reward(double r_p, double r_m, double r_f, bool is_terminal) {
  check(is_terminal || r_f == 0.0,
        "total_reward: r_f supplied on a non-terminal step");
  return is_terminal ? r_p + r_m + r_f : r_p + r_m;
}

}  // namespace mindhouse::rewards
