#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mindhouse/ndnet/tape.hpp"
#include "mindhouse/ndnet/tensor.hpp"
#include "mindhouse/util/check.hpp"
#include "mindhouse/util/rng.hpp"

namespace mindhouse::ndnet {

/// Stable handle into a ParamSet. Indices survive save/load and the
/// float<->double cast used by the finite-difference gradient checker.
using ParamId = int32_t;

/// Named, ordered collection of trainable tensors. Iteration order is
/// creation order, which is deterministic given a fixed model build order,
/// so optimizer state and checkpoints line up across runs.
template <typename S>
class ParamSetT {
 public:
  ParamId add(const std::string& name, TensorT<S> init) {
    check(by_name_.find(name) == by_name_.end(),
          "param '" + name + "' already exists");
    names_.push_back(name);
    values_.push_back(std::move(init));
    by_name_[name] = static_cast<ParamId>(values_.size() - 1);
    return static_cast<ParamId>(values_.size() - 1);
  }

  ParamId id(const std::string& name) const {
    auto it = by_name_.find(name);
    check(it != by_name_.end(), "param '" + name + "' not found");
    return it->second;
  }

  bool has(const std::string& name) const {
    return by_name_.find(name) != by_name_.end();
  }

  TensorT<S>& value(ParamId id) {
    check(id >= 0 && static_cast<size_t>(id) < values_.size(),
          "param id out of range");
    return values_[static_cast<size_t>(id)];
  }
  const TensorT<S>& value(ParamId id) const {
    check(id >= 0 && static_cast<size_t>(id) < values_.size(),
          "param id out of range");
    return values_[static_cast<size_t>(id)];
  }
  const std::string& name(ParamId id) const {
    return names_[static_cast<size_t>(id)];
  }

  size_t size() const { return values_.size(); }

  int64_t numel() const {
    int64_t n = 0;
    for (const auto& v : values_) n += v.numel();
    return n;
  }

  std::vector<ParamId> all_ids() const {
    std::vector<ParamId> out(values_.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<ParamId>(i);
    return out;
  }

  /// Ids whose names start with any of the given prefixes, in creation order.
  std::vector<ParamId> ids_with_prefix(
      const std::vector<std::string>& prefixes) const {
    std::vector<ParamId> out;
    for (size_t i = 0; i < names_.size(); ++i)
      for (const auto& p : prefixes)
        if (names_[i].rfind(p, 0) == 0) {
          out.push_back(static_cast<ParamId>(i));
          break;
        }
    return out;
  }

  template <typename S2>
  ParamSetT<S2> cast() const {
    ParamSetT<S2> out;
    for (size_t i = 0; i < values_.size(); ++i)
      out.add(names_[i], values_[i].template cast<S2>());
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<TensorT<S>> values_;
  std::map<std::string, ParamId> by_name_;
};

using ParamSet = ParamSetT<float>;

// ---- initializers ----------------------------------------------------------

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)).
template <typename S>
TensorT<S> fanin_uniform(Shape shape, int fan_in, Rng& rng) {
  check(fan_in > 0, "fanin_uniform: fan_in must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  auto t = TensorT<S>::zeros(std::move(shape));
  for (auto& v : t.data)
    v = static_cast<S>((rng.uniform() * 2.0 - 1.0) * bound);
  return t;
}

// ---- layer handles ---------------------------------------------------------
// Modules hold ParamIds, not tensors; the same handles serve the float
// training path and the double gradient-check path.

/// y = W x + b with W [out x in].
struct Linear {
  ParamId w, b;
  int in = 0, out = 0;

  Linear() = default;

  template <typename S>
  Linear(ParamSetT<S>& ps, const std::string& name, int in_dim, int out_dim,
         Rng& rng)
      : in(in_dim), out(out_dim) {
    w = ps.add(name + ".w",
               fanin_uniform<S>(Shape{out_dim, in_dim}, in_dim, rng));
    b = ps.add(name + ".b", fanin_uniform<S>(Shape{out_dim}, in_dim, rng));
  }

  template <typename S>
  Var operator()(TapeT<S>& t, Var w_var, Var b_var, Var x) const {
    return t.add(t.matmul(w_var, x), b_var);
  }
};

/// Strided valid conv block handle (kernel [out, in, k, k]).
struct Conv {
  ParamId w, b;
  int in = 0, out = 0, k = 0, stride = 1;

  Conv() = default;

  template <typename S>
  Conv(ParamSetT<S>& ps, const std::string& name, int in_ch, int out_ch,
       int kernel, int stride_, Rng& rng)
      : in(in_ch), out(out_ch), k(kernel), stride(stride_) {
    const int fan_in = in_ch * kernel * kernel;
    w = ps.add(name + ".w", fanin_uniform<S>(Shape{out_ch, in_ch, kernel, kernel},
                                             fan_in, rng));
    b = ps.add(name + ".b", fanin_uniform<S>(Shape{out_ch}, fan_in, rng));
  }
};

/// Transposed conv block handle (kernel [in, out, k, k]).
struct Deconv {
  ParamId w, b;
  int in = 0, out = 0, k = 0, stride = 1;

  Deconv() = default;

  template <typename S>
  Deconv(ParamSetT<S>& ps, const std::string& name, int in_ch, int out_ch,
         int kernel, int stride_, Rng& rng)
      : in(in_ch), out(out_ch), k(kernel), stride(stride_) {
    const int fan_in = in_ch * kernel * kernel;
    w = ps.add(name + ".w", fanin_uniform<S>(Shape{in_ch, out_ch, kernel, kernel},
                                             fan_in, rng));
    b = ps.add(name + ".b", fanin_uniform<S>(Shape{out_ch}, fan_in, rng));
  }
};

/// Single-layer LSTM cell handles. Gate layout in the stacked weight rows is
/// [input, forget, cell, output]; the forget-gate bias chunk starts at 1 so
/// memory is retained early in training.
struct LstmCell {
  ParamId w_ih, w_hh, b;
  int in = 0, hidden = 0;

  LstmCell() = default;

  template <typename S>
  LstmCell(ParamSetT<S>& ps, const std::string& name, int in_dim, int hid,
           Rng& rng)
      : in(in_dim), hidden(hid) {
    w_ih = ps.add(name + ".w_ih",
                  fanin_uniform<S>(Shape{4 * hid, in_dim}, in_dim, rng));
    w_hh = ps.add(name + ".w_hh",
                  fanin_uniform<S>(Shape{4 * hid, hid}, hid, rng));
    auto bias = fanin_uniform<S>(Shape{4 * hid}, hid, rng);
    for (int i = hid; i < 2 * hid; ++i) bias.at(i) = S(1);
    b = ps.add(name + ".b", std::move(bias));
  }
};

/// Vars for every parameter on a tape: ids in `trainable` become leaves,
/// everything else enters as constants (frozen parameters get no gradients
/// and no optimizer state drift).
template <typename S>
std::vector<Var> emit_params(TapeT<S>& t, const ParamSetT<S>& ps,
                             const std::vector<ParamId>& trainable) {
  std::vector<char> is_leaf(ps.size(), 0);
  for (ParamId id : trainable) is_leaf[static_cast<size_t>(id)] = 1;
  std::vector<Var> vars(ps.size());
  for (size_t i = 0; i < ps.size(); ++i)
    vars[i] = is_leaf[i] ? t.leaf(ps.value(static_cast<ParamId>(i)))
                         : t.constant(ps.value(static_cast<ParamId>(i)));
  return vars;
}

/// One LSTM step on a tape. `x` is [in], `h`/`c` are [hidden] vars already on
/// the tape. Returns the new (h, c).
template <typename S>
std::pair<Var, Var> lstm_step(TapeT<S>& t, const LstmCell& cell, Var w_ih,
                              Var w_hh, Var b, Var x, Var h, Var c) {
  const int H = cell.hidden;
  Var gates = t.add(t.add(t.matmul(w_ih, x), t.matmul(w_hh, h)), b);
  Var i = t.sigmoid(t.slice(gates, 0, H));
  Var f = t.sigmoid(t.slice(gates, H, H));
  Var g = t.tanh_op(t.slice(gates, 2 * H, H));
  Var o = t.sigmoid(t.slice(gates, 3 * H, H));
  Var c_new = t.add(t.mul(f, c), t.mul(i, g));
  Var h_new = t.mul(o, t.tanh_op(c_new));
  return {h_new, c_new};
}

}  // namespace mindhouse::ndnet
