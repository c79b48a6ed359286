#pragma once

#include <vector>

#include "mindhouse/util/check.hpp"

namespace mindhouse::trainer {

/// Generalized advantage estimation by backward recursion:
///   delta_t = R_t + gamma * V_{t+1} - V_t
///   A_t     = delta_t + gamma * lambda * A_{t+1}
/// `values` carries one trailing bootstrap entry (0 for terminal episodes).
/// Everything runs in double so the recursion matches the direct
/// exponentially-weighted sum of residuals to full precision.
inline std::vector<double> gae_advantages(const std::vector<double>& rewards,
                                          const std::vector<double>& values,
                                          double gamma, double lambda) {
  check(gamma >= 0.0 && gamma <= 1.0, "gae: gamma must lie in [0, 1]");
  check(lambda >= 0.0 && lambda <= 1.0, "gae: lambda must lie in [0, 1]");
  check(values.size() == rewards.size() + 1,
        "gae: need one value per step plus a bootstrap, got " +
            std::to_string(rewards.size()) + " rewards and " +
            std::to_string(values.size()) + " values");
  const size_t n = rewards.size();
  std::vector<double> adv(n, 0.0);
  double acc = 0.0;
  for (size_t i = n; i-- > 0;) {
    const double delta = rewards[i] + gamma * values[i + 1] - values[i];
    acc = delta + gamma * lambda * acc;
    adv[i] = acc;
  }
  return adv;
}

/// Discounted return-to-go G_t = R_t + gamma * G_{t+1}, bootstrap at the end.
inline std::vector<double> discounted_returns(const std::vector<double>& rewards,
                                              double gamma, double bootstrap) {
  check(gamma >= 0.0 && gamma <= 1.0, "returns: gamma must lie in [0, 1]");
  std::vector<double> out(rewards.size(), 0.0);
  double acc = bootstrap;
  for (size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    out[i] = acc;
  }
  return out;
}

}  // namespace mindhouse::trainer
