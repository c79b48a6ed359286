#pragma once

#include "mindhouse/util/check.hpp"

namespace mindhouse::rewards {

struct RewardConfig {
  double lambda_f = 0.01;  // efficiency bonus weight; keeps the bonus < 1
  int n_max = 80;          // primitive-action budget
};

/// Correct answer: 1 + lambda_f * max(n_max - n, 0). Incorrect: 0.
double final_reward(bool answer_correct, int actions_executed,
                    const RewardConfig& cfg);

/// d_t - d_{t+1}: positive when the step reduced the geodesic distance.
double progressive_reward(int d_t, int d_t1);

/// Improvement of the correct answer's probability when the newest mental
/// image joins the QA input: p_with_mental - p_without. Range [-1, 1].
double planned_reward(double p_with_mental, double p_without);

/// r_p + r_m, plus r_f on the terminal step. Supplying a nonzero r_f on a
/// non-terminal step is a caller bug and is rejected.
double total_reward(double r_p, double r_m, double r_f, bool is_terminal);

}  // namespace mindhouse::rewards
