#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mindhouse/ndnet/params.hpp"
#include "mindhouse/ndnet/tape.hpp"

namespace mindhouse::ndnet {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  int64_t elements_checked = 0;
  bool passed = false;
};

/// Central-difference check of analytic gradients, run entirely in double.
/// `loss_fn` rebuilds the loss on a fresh tape from the current parameters;
/// it must be deterministic. Error per coordinate is
/// |analytic - numeric| / max(1, |analytic|).
inline GradCheckReport grad_check(
    ParamSetT<double>& ps, const std::vector<ParamId>& subset,
    const std::function<Var(TapeT<double>&, std::vector<Var>&)>& loss_fn,
    double epsilon = 1e-5, double tolerance = 1e-4, int64_t max_per_param = 0) {
  GradCheckReport rep;

  TapeT<double> tape;
  std::vector<Var> vars(ps.size(), -1);
  for (ParamId id : subset) vars[static_cast<size_t>(id)] = tape.leaf(ps.value(id));
  for (size_t i = 0; i < ps.size(); ++i)
    if (vars[i] < 0) vars[i] = tape.constant(ps.value(static_cast<ParamId>(i)));
  Var loss = loss_fn(tape, vars);
  std::vector<Var> leaf_vars;
  for (ParamId id : subset) leaf_vars.push_back(vars[static_cast<size_t>(id)]);
  auto analytic = tape.backward(loss, leaf_vars);

  for (size_t pi = 0; pi < subset.size(); ++pi) {
    const ParamId id = subset[pi];
    auto& p = ps.value(id);
    const int64_t n = max_per_param > 0 ? std::min(max_per_param, p.numel())
                                        : p.numel();
    for (int64_t j = 0; j < n; ++j) {
      const double orig = p.at(j);

      auto eval = [&](double x) {
        p.at(j) = x;
        TapeT<double> t2;
        std::vector<Var> v2(ps.size(), -1);
        for (size_t i = 0; i < ps.size(); ++i)
          v2[i] = t2.constant(ps.value(static_cast<ParamId>(i)));
        const double out = t2.value(loss_fn(t2, v2)).item();
        return out;
      };

      const double plus = eval(orig + epsilon);
      const double minus = eval(orig - epsilon);
      p.at(j) = orig;

      const double numeric = (plus - minus) / (2.0 * epsilon);
      const double a = analytic[pi].at(j);
      const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      ++rep.elements_checked;
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_param = ps.name(id);
        rep.worst_index = j;
      }
    }
  }
  rep.passed = rep.max_rel_error <= tolerance;
  return rep;
}

}  // namespace mindhouse::ndnet
