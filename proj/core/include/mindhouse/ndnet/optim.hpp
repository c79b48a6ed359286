#pragma once

#include <cmath>
#include <vector>

#include "mindhouse/ndnet/params.hpp"
#include "mindhouse/ndnet/tensor.hpp"
#include "mindhouse/util/check.hpp"

namespace mindhouse::ndnet {

/// Adam moments for a fixed subset of parameters. The subset is pinned at
/// construction so frozen parameters never grow stale moment state.
template <typename S>
struct AdamStateT {
  std::vector<ParamId> ids;
  std::vector<TensorT<S>> m, v;
  int64_t step = 0;
  S beta1 = S(0.9), beta2 = S(0.999), eps = S(1e-8);

  AdamStateT() = default;

  AdamStateT(const ParamSetT<S>& ps, std::vector<ParamId> subset)
      : ids(std::move(subset)) {
    m.reserve(ids.size());
    v.reserve(ids.size());
    for (ParamId id : ids) {
      m.push_back(TensorT<S>::zeros(ps.value(id).shape));
      v.push_back(TensorT<S>::zeros(ps.value(id).shape));
    }
  }
};

using AdamState = AdamStateT<float>;

/// Global-norm gradient clipping: if ||g||_2 over all listed grads exceeds
/// `max_norm`, scale every grad by max_norm/||g||_2. Returns the pre-clip norm.
template <typename S>
double clip_global_norm(std::vector<TensorT<S>>& grads, double max_norm) {
  check(max_norm > 0.0, "clip_global_norm: max_norm must be positive");
  double sq = 0.0;
  for (const auto& g : grads)
    for (S v : g.data) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const S k = static_cast<S>(max_norm / norm);
    for (auto& g : grads)
      for (auto& v : g.data) v *= k;
  }
  return norm;
}

/// One Adam update over state.ids. `grads[i]` must correspond to state.ids[i].
template <typename S>
void adam_step(ParamSetT<S>& ps, AdamStateT<S>& state,
               const std::vector<TensorT<S>>& grads, double lr) {
  check(grads.size() == state.ids.size(),
        "adam_step: grads count does not match optimizer subset");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(static_cast<double>(state.beta1),
                                    static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(state.beta2),
                                    static_cast<double>(state.step));
  for (size_t i = 0; i < state.ids.size(); ++i) {
    auto& p = ps.value(state.ids[i]);
    const auto& g = grads[i];
    check(p.shape == g.shape, "adam_step: grad shape " + g.shape.str() +
                                  " does not match param " + p.shape.str());
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (int64_t j = 0; j < p.numel(); ++j) {
      const S gj = g.at(j);
      m.at(j) = state.beta1 * m.at(j) + (S(1) - state.beta1) * gj;
      v.at(j) = state.beta2 * v.at(j) + (S(1) - state.beta2) * gj * gj;
      const double mhat = static_cast<double>(m.at(j)) / bc1;
      const double vhat = static_cast<double>(v.at(j)) / bc2;
      p.at(j) -= static_cast<S>(lr * mhat / (std::sqrt(vhat) +
                                             static_cast<double>(state.eps)));
    }
    check(p.all_finite(), "adam_step: parameter became non-finite");
  }
}

}  // namespace mindhouse::ndnet
