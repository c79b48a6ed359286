#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mindhouse/ndnet/tensor.hpp"
#include "mindhouse/util/check.hpp"

namespace mindhouse::ndnet {

/// Node handle on a tape. Plain index; valid until the tape is cleared.
using Var = int32_t;

/// Reverse-mode tape over TensorT<S>. Each primitive records a closure that,
/// given the output cotangent, accumulates into its inputs' cotangents.
/// Replaying the node list in reverse visits every recorded op exactly once.
///
/// Ops reject mismatched shapes (naming both) and non-finite results; the
/// latter doubles as the training-instability tripwire. log_sum_exp and
/// softmax-family ops use the subtract-max form, and elu1p is the strictly
/// positive exponential replacement used for mixture scales.
template <typename S>
class TapeT {
 public:
  TapeT() = default;
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;
  TapeT(TapeT&&) noexcept = default;
  TapeT& operator=(TapeT&&) noexcept = default;

  /// Differentiable input (parameter). Must be finite.
  Var leaf(TensorT<S> value) {
    check(value.all_finite(), "leaf: non-finite input rejected");
    return push(std::move(value), true, nullptr);
  }

  /// Non-differentiable input (data, frozen parameters).
  Var constant(TensorT<S> value) {
    check(value.all_finite(), "constant: non-finite input rejected");
    return push(std::move(value), false, nullptr);
  }

  const TensorT<S>& value(Var v) const { return node(v).value; }
  size_t size() const { return nodes_.size(); }

  // ---- elementwise -------------------------------------------------------

  Var add(Var a, Var b) {
    binary_shape_check("add", a, b);
    auto out = value(a);
    for (int64_t i = 0; i < out.numel(); ++i) out.at(i) += value(b).at(i);
    return push(std::move(out), grad(a) || grad(b),
                [a, b](TapeT& t, const TensorT<S>& g) {
                  t.accumulate(a, g);
                  t.accumulate(b, g);
                });
  }

  Var sub(Var a, Var b) {
    binary_shape_check("sub", a, b);
    auto out = value(a);
    for (int64_t i = 0; i < out.numel(); ++i) out.at(i) -= value(b).at(i);
    return push(std::move(out), grad(a) || grad(b),
                [a, b](TapeT& t, const TensorT<S>& g) {
                  t.accumulate(a, g);
                  auto neg = g;
                  for (auto& v : neg.data) v = -v;
                  t.accumulate(b, neg);
                });
  }

  Var mul(Var a, Var b) {
    binary_shape_check("mul", a, b);
    auto out = value(a);
    for (int64_t i = 0; i < out.numel(); ++i) out.at(i) *= value(b).at(i);
    return push(std::move(out), grad(a) || grad(b),
                [a, b](TapeT& t, const TensorT<S>& g) {
                  auto ga = g;
                  for (int64_t i = 0; i < g.numel(); ++i)
                    ga.at(i) *= t.value(b).at(i);
                  t.accumulate(a, ga);
                  auto gb = g;
                  for (int64_t i = 0; i < g.numel(); ++i)
                    gb.at(i) *= t.value(a).at(i);
                  t.accumulate(b, gb);
                });
  }

  Var div(Var a, Var b) {
    binary_shape_check("div", a, b);
    auto out = value(a);
    for (int64_t i = 0; i < out.numel(); ++i) out.at(i) /= value(b).at(i);
    return push(std::move(out), grad(a) || grad(b),
                [a, b](TapeT& t, const TensorT<S>& g) {
                  auto ga = g;
                  for (int64_t i = 0; i < g.numel(); ++i)
                    ga.at(i) /= t.value(b).at(i);
                  t.accumulate(a, ga);
                  auto gb = g;
                  for (int64_t i = 0; i < g.numel(); ++i) {
                    const S bv = t.value(b).at(i);
                    gb.at(i) = -g.at(i) * t.value(a).at(i) / (bv * bv);
                  }
                  t.accumulate(b, gb);
                });
  }

  Var scale(Var a, S k) {
    auto out = value(a);
    for (auto& v : out.data) v *= k;
    return push(std::move(out), grad(a),
                [a, k](TapeT& t, const TensorT<S>& g) {
                  auto ga = g;
                  for (auto& v : ga.data) v *= k;
                  t.accumulate(a, ga);
                });
  }

  Var add_scalar(Var a, S k) {
    auto out = value(a);
    for (auto& v : out.data) v += k;
    return push(std::move(out), grad(a),
                [a](TapeT& t, const TensorT<S>& g) { t.accumulate(a, g); });
  }

  Var neg(Var a) { return scale(a, S(-1)); }

  // ---- nonlinearities ----------------------------------------------------

  Var sigmoid(Var a) {
    auto out = value(a);
    for (auto& v : out.data) v = S(1) / (S(1) + std::exp(-v));
    return unary_from_output("sigmoid", a, std::move(out),
                             [](S y) { return y * (S(1) - y); });
  }

  Var tanh_op(Var a) {
    auto out = value(a);
    for (auto& v : out.data) v = std::tanh(v);
    return unary_from_output("tanh", a, std::move(out),
                             [](S y) { return S(1) - y * y; });
  }

  Var relu(Var a) {
    auto out = value(a);
    for (auto& v : out.data) v = v > S(0) ? v : S(0);
    const Var src = a;
    return push(std::move(out), grad(a),
                [src](TapeT& t, const TensorT<S>& g) {
                  auto ga = g;
                  for (int64_t i = 0; i < g.numel(); ++i)
                    if (t.value(src).at(i) <= S(0)) ga.at(i) = S(0);
                  t.accumulate(src, ga);
                });
  }

  Var exp_op(Var a) {
    auto out = value(a);
    for (auto& v : out.data) v = std::exp(v);
    return unary_from_output("exp", a, std::move(out), [](S y) { return y; });
  }

  Var log_op(Var a) {
    auto out = value(a);
    for (auto& v : out.data) v = std::log(v);
    const Var src = a;
    return push(std::move(out), grad(a),
                [src](TapeT& t, const TensorT<S>& g) {
                  auto ga = g;
                  for (int64_t i = 0; i < g.numel(); ++i)
                    ga.at(i) /= t.value(src).at(i);
                  t.accumulate(src, ga);
                });
  }

  /// ELU(1,x)+1: x+1 for x >= 0, exp(x) for x < 0. Strictly positive for all
  /// finite inputs (output floored at the smallest positive normal so deep
  /// negatives cannot underflow to zero).
  Var elu1p(Var a) {
    auto out = value(a);
    constexpr S floor_v = std::numeric_limits<S>::min();
    for (auto& v : out.data) {
      v = v >= S(0) ? v + S(1) : std::exp(v);
      if (v < floor_v) v = floor_v;
    }
    const Var src = a;
    return push(std::move(out), grad(a),
                [src](TapeT& t, const TensorT<S>& g) {
                  auto ga = g;
                  for (int64_t i = 0; i < g.numel(); ++i) {
                    const S x = t.value(src).at(i);
                    ga.at(i) *= x >= S(0) ? S(1) : std::exp(x);
                  }
                  t.accumulate(src, ga);
                });
  }

  // ---- reductions & normalizers (1-D) -------------------------------------

  Var reduce_sum(Var a) {
    S acc = S(0);
    for (S v : value(a).data) acc += v;
    return push(TensorT<S>::scalar(acc), grad(a),
                [a](TapeT& t, const TensorT<S>& g) {
                  auto ga = TensorT<S>::full(t.value(a).shape, g.item());
                  t.accumulate(a, ga);
                });
  }

  Var reduce_mean(Var a) {
    const S n = static_cast<S>(value(a).numel());
    S acc = S(0);
    for (S v : value(a).data) acc += v;
    return push(TensorT<S>::scalar(acc / n), grad(a),
                [a, n](TapeT& t, const TensorT<S>& g) {
                  auto ga = TensorT<S>::full(t.value(a).shape, g.item() / n);
                  t.accumulate(a, ga);
                });
  }

  /// Row sums of a [rows x cols] tensor -> [rows].
  Var sum_rows(Var a, int rows, int cols) {
    check(value(a).numel() == int64_t(rows) * cols,
          "sum_rows: tensor " + value(a).shape.str() + " is not " +
              std::to_string(rows) + "x" + std::to_string(cols));
    auto out = TensorT<S>::zeros(Shape{rows});
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        out.at(r) += value(a).at(int64_t(r) * cols + c);
    return push(std::move(out), grad(a),
                [a, rows, cols](TapeT& t, const TensorT<S>& g) {
                  auto ga = TensorT<S>::zeros(t.value(a).shape);
                  for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < cols; ++c)
                      ga.at(int64_t(r) * cols + c) = g.at(r);
                  t.accumulate(a, ga);
                });
  }

  Var softmax(Var a) {
    auto out = softmax_values(value(a));
    return push(std::move(out), grad(a),
                [a](TapeT& t, const TensorT<S>& g, Var self) {
                  const auto& y = t.value(self);
                  S dot = S(0);
                  for (int64_t i = 0; i < g.numel(); ++i)
                    dot += y.at(i) * g.at(i);
                  auto ga = g;
                  for (int64_t i = 0; i < g.numel(); ++i)
                    ga.at(i) = y.at(i) * (g.at(i) - dot);
                  t.accumulate(a, ga);
                });
  }

  Var log_softmax(Var a) {
    auto sm = softmax_values(value(a));
    auto out = sm;
    for (auto& v : out.data) v = std::log(v);
    return push(std::move(out), grad(a),
                [a](TapeT& t, const TensorT<S>& g, Var self) {
                  S gsum = S(0);
                  for (S v : g.data) gsum += v;
                  auto ga = g;
                  for (int64_t i = 0; i < g.numel(); ++i)
                    ga.at(i) = g.at(i) - std::exp(t.value(self).at(i)) * gsum;
                  t.accumulate(a, ga);
                });
  }

  /// Overflow-safe log(sum(exp(v))) -> scalar, subtract-max form. Finite for
  /// any input with a finite maximum.
  Var log_sum_exp(Var a) {
    const auto& x = value(a);
    check(x.numel() > 0, "log_sum_exp: empty input");
    S m = x.at(0);
    for (S v : x.data) m = std::max(m, v);
    S acc = S(0);
    for (S v : x.data) acc += std::exp(v - m);
    return push(TensorT<S>::scalar(m + std::log(acc)), grad(a),
                [a](TapeT& t, const TensorT<S>& g, Var self) {
                  const S lse = t.value(self).item();
                  auto ga = TensorT<S>::zeros(t.value(a).shape);
                  for (int64_t i = 0; i < ga.numel(); ++i)
                    ga.at(i) = std::exp(t.value(a).at(i) - lse) * g.item();
                  t.accumulate(a, ga);
                });
  }

  // ---- shape plumbing ------------------------------------------------------

  /// Contiguous range copy, 1-D result. Rows of a row-major matrix are slices.
  Var slice(Var a, int64_t offset, int64_t len) {
    const auto& x = value(a);
    check(offset >= 0 && len >= 0 && offset + len <= x.numel(),
          "slice: range [" + std::to_string(offset) + ", " +
              std::to_string(offset + len) + ") outside tensor " +
              x.shape.str());
    TensorT<S> out(Shape{static_cast<int>(len)},
                   std::vector<S>(x.data.begin() + offset,
                                  x.data.begin() + offset + len));
    return push(std::move(out), grad(a),
                [a, offset, len](TapeT& t, const TensorT<S>& g) {
                  auto ga = TensorT<S>::zeros(t.value(a).shape);
                  for (int64_t i = 0; i < len; ++i)
                    ga.at(offset + i) = g.at(i);
                  t.accumulate(a, ga);
                });
  }

  /// Element pick -> scalar.
  Var pick(Var a, int64_t index) {
    const auto& x = value(a);
    check(index >= 0 && index < x.numel(),
          "pick: index " + std::to_string(index) + " outside tensor " +
              x.shape.str());
    return push(TensorT<S>::scalar(x.at(index)), grad(a),
                [a, index](TapeT& t, const TensorT<S>& g) {
                  auto ga = TensorT<S>::zeros(t.value(a).shape);
                  ga.at(index) = g.item();
                  t.accumulate(a, ga);
                });
  }

  /// Concatenation of 1-D tensors.
  Var concat(const std::vector<Var>& parts) {
    check(!parts.empty(), "concat: no inputs");
    std::vector<S> data;
    bool needs = false;
    std::vector<int64_t> lens;
    for (Var p : parts) {
      const auto& x = value(p);
      data.insert(data.end(), x.data.begin(), x.data.end());
      lens.push_back(x.numel());
      needs = needs || grad(p);
    }
    const int n = static_cast<int>(data.size());
    return push(TensorT<S>(Shape{n}, std::move(data)), needs,
                [parts, lens](TapeT& t, const TensorT<S>& g) {
                  int64_t off = 0;
                  for (size_t i = 0; i < parts.size(); ++i) {
                    TensorT<S> gi(t.value(parts[i]).shape,
                                  std::vector<S>(g.data.begin() + off,
                                                 g.data.begin() + off + lens[i]));
                    t.accumulate(parts[i], gi);
                    off += lens[i];
                  }
                });
  }

  Var reshape(Var a, Shape s) {
    check(s.numel() == value(a).numel(),
          "reshape: " + value(a).shape.str() + " to " + s.str());
    auto out = value(a);
    out.shape = std::move(s);
    return push(std::move(out), grad(a),
                [a](TapeT& t, const TensorT<S>& g) {
                  auto ga = g;
                  ga.shape = t.value(a).shape;
                  t.accumulate(a, ga);
                });
  }

  // ---- linear algebra ------------------------------------------------------

  /// [m x k] * [k x n] -> [m x n]; a rank-1 right operand [k] yields [m].
  Var matmul(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    check(A.shape.rank() == 2, "matmul: left operand " + A.shape.str() +
                                   " is not a matrix");
    const int m = A.shape.dims[0], k = A.shape.dims[1];
    const bool vec = B.shape.rank() == 1;
    const int kb = vec ? B.shape.dims[0] : B.shape.dims[0];
    const int n = vec ? 1 : B.shape.dims[1];
    check((vec || B.shape.rank() == 2) && kb == k,
          "matmul: shapes " + A.shape.str() + " and " + B.shape.str() +
              " do not conform");
    auto out = TensorT<S>::zeros(vec ? Shape{m} : Shape{m, n});
    for (int i = 0; i < m; ++i)
      for (int kk = 0; kk < k; ++kk) {
        const S av = A.at(int64_t(i) * k + kk);
        if (av == S(0)) continue;
        for (int j = 0; j < n; ++j)
          out.at(int64_t(i) * n + j) += av * B.at(int64_t(kk) * n + j);
      }
    return push(std::move(out), grad(a) || grad(b),
                [a, b, m, k, n](TapeT& t, const TensorT<S>& g) {
                  const auto& A2 = t.value(a);
                  const auto& B2 = t.value(b);
                  auto ga = TensorT<S>::zeros(A2.shape);
                  auto gb = TensorT<S>::zeros(B2.shape);
                  // dA = g * B^T, dB = A^T * g
                  for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) {
                      const S gv = g.at(int64_t(i) * n + j);
                      if (gv == S(0)) continue;
                      for (int kk = 0; kk < k; ++kk) {
                        ga.at(int64_t(i) * k + kk) +=
                            gv * B2.at(int64_t(kk) * n + j);
                        gb.at(int64_t(kk) * n + j) +=
                            gv * A2.at(int64_t(i) * k + kk);
                      }
                    }
                  t.accumulate(a, ga);
                  t.accumulate(b, gb);
                });
  }

  Var dot(Var a, Var b) { return reduce_sum(mul(a, b)); }

  // ---- convolution ---------------------------------------------------------

  /// Valid-padding 2-D convolution. input [C,H,W], kernel [O,C,kh,kw],
  /// bias [O] -> [O,H',W'] with H' = (H-kh)/stride + 1.
  Var conv2d(Var input, Var kernel, Var bias, int stride) {
    const auto& x = value(input);
    const auto& w = value(kernel);
    const auto& b = value(bias);
    check(x.shape.rank() == 3 && w.shape.rank() == 4,
          "conv2d: input " + x.shape.str() + " kernel " + w.shape.str());
    const int C = x.shape.dims[0], H = x.shape.dims[1], W = x.shape.dims[2];
    const int O = w.shape.dims[0], kh = w.shape.dims[2], kw = w.shape.dims[3];
    check(w.shape.dims[1] == C, "conv2d: kernel channels " + w.shape.str() +
                                    " vs input " + x.shape.str());
    check(b.shape == Shape{O}, "conv2d: bias " + b.shape.str() +
                                   " does not match kernel " + w.shape.str());
    check(stride >= 1 && H >= kh && W >= kw,
          "conv2d: kernel " + w.shape.str() + " larger than input " +
              x.shape.str());
    const int Ho = (H - kh) / stride + 1;
    const int Wo = (W - kw) / stride + 1;
    auto out = TensorT<S>::zeros(Shape{O, Ho, Wo});
    for (int o = 0; o < O; ++o)
      for (int y = 0; y < Ho; ++y)
        for (int xo = 0; xo < Wo; ++xo) {
          S acc = b.at(o);
          for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx)
                acc += x.at((int64_t(c) * H + y * stride + ky) * W +
                            xo * stride + kx) *
                       w.at(((int64_t(o) * C + c) * kh + ky) * kw + kx);
          out.at((int64_t(o) * Ho + y) * Wo + xo) = acc;
        }
    const bool needs = grad(input) || grad(kernel) || grad(bias);
    return push(
        std::move(out), needs,
        [input, kernel, bias, stride, C, H, W, O, kh, kw, Ho,
         Wo](TapeT& t, const TensorT<S>& g) {
          const auto& x2 = t.value(input);
          const auto& w2 = t.value(kernel);
          auto gx = TensorT<S>::zeros(x2.shape);
          auto gw = TensorT<S>::zeros(w2.shape);
          auto gb = TensorT<S>::zeros(t.value(bias).shape);
          for (int o = 0; o < O; ++o)
            for (int y = 0; y < Ho; ++y)
              for (int xo = 0; xo < Wo; ++xo) {
                const S gv = g.at((int64_t(o) * Ho + y) * Wo + xo);
                if (gv == S(0)) continue;
                gb.at(o) += gv;
                for (int c = 0; c < C; ++c)
                  for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                      const int64_t xi =
                          (int64_t(c) * H + y * stride + ky) * W +
                          xo * stride + kx;
                      const int64_t wi =
                          ((int64_t(o) * C + c) * kh + ky) * kw + kx;
                      gx.at(xi) += gv * w2.at(wi);
                      gw.at(wi) += gv * x2.at(xi);
                    }
              }
          t.accumulate(input, gx);
          t.accumulate(kernel, gw);
          t.accumulate(bias, gb);
        });
  }

  /// Transposed (fractionally-strided) convolution. input [C,H,W],
  /// kernel [C,O,kh,kw], bias [O] -> [O,H',W'] with H' = (H-1)*stride + kh.
  Var conv2d_transpose(Var input, Var kernel, Var bias, int stride) {
    const auto& x = value(input);
    const auto& w = value(kernel);
    const auto& b = value(bias);
    check(x.shape.rank() == 3 && w.shape.rank() == 4,
          "conv2d_transpose: input " + x.shape.str() + " kernel " +
              w.shape.str());
    const int C = x.shape.dims[0], H = x.shape.dims[1], W = x.shape.dims[2];
    const int O = w.shape.dims[1], kh = w.shape.dims[2], kw = w.shape.dims[3];
    check(w.shape.dims[0] == C, "conv2d_transpose: kernel " + w.shape.str() +
                                    " vs input " + x.shape.str());
    check(b.shape == Shape{O}, "conv2d_transpose: bias " + b.shape.str() +
                                   " does not match kernel " + w.shape.str());
    const int Ho = (H - 1) * stride + kh;
    const int Wo = (W - 1) * stride + kw;
    auto out = TensorT<S>::zeros(Shape{O, Ho, Wo});
    for (int o = 0; o < O; ++o)
      for (int64_t i = 0; i < int64_t(Ho) * Wo; ++i)
        out.at(int64_t(o) * Ho * Wo + i) = b.at(o);
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int xi = 0; xi < W; ++xi) {
          const S xv = x.at((int64_t(c) * H + y) * W + xi);
          if (xv == S(0)) continue;
          for (int o = 0; o < O; ++o)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx)
                out.at((int64_t(o) * Ho + y * stride + ky) * Wo + xi * stride +
                       kx) +=
                    xv * w.at(((int64_t(c) * O + o) * kh + ky) * kw + kx);
        }
    const bool needs = grad(input) || grad(kernel) || grad(bias);
    return push(
        std::move(out), needs,
        [input, kernel, bias, stride, C, H, W, O, kh, kw, Ho,
         Wo](TapeT& t, const TensorT<S>& g) {
          const auto& x2 = t.value(input);
          const auto& w2 = t.value(kernel);
          auto gx = TensorT<S>::zeros(x2.shape);
          auto gw = TensorT<S>::zeros(w2.shape);
          auto gb = TensorT<S>::zeros(t.value(bias).shape);
          for (int o = 0; o < O; ++o)
            for (int64_t i = 0; i < int64_t(Ho) * Wo; ++i)
              gb.at(o) += g.at(int64_t(o) * Ho * Wo + i);
          for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
              for (int xi = 0; xi < W; ++xi) {
                const int64_t xidx = (int64_t(c) * H + y) * W + xi;
                S acc = S(0);
                for (int o = 0; o < O; ++o)
                  for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                      const S gv =
                          g.at((int64_t(o) * Ho + y * stride + ky) * Wo +
                               xi * stride + kx);
                      const int64_t wi =
                          ((int64_t(c) * O + o) * kh + ky) * kw + kx;
                      acc += gv * w2.at(wi);
                      gw.at(wi) += gv * x2.at(xidx);
                    }
                gx.at(xidx) = acc;
              }
          t.accumulate(input, gx);
          t.accumulate(kernel, gw);
          t.accumulate(bias, gb);
        });
  }

  // ---- losses --------------------------------------------------------------

  /// Sum of per-element Bernoulli cross-entropy between sigmoid(logits) and
  /// targets in [0,1], computed in the max/log1p form so large logits do not
  /// overflow. Scalar output.
  Var bce_with_logits(Var logits, Var targets) {
    binary_shape_check("bce_with_logits", logits, targets);
    const auto& z = value(logits);
    const auto& t = value(targets);
    S acc = S(0);
    for (int64_t i = 0; i < z.numel(); ++i) {
      const S zv = z.at(i);
      acc += std::max(zv, S(0)) - zv * t.at(i) +
             std::log1p(std::exp(-std::abs(zv)));
    }
    return push(TensorT<S>::scalar(acc), grad(logits) || grad(targets),
                [logits, targets](TapeT& tp, const TensorT<S>& g) {
                  const auto& z2 = tp.value(logits);
                  const auto& t2 = tp.value(targets);
                  auto gz = TensorT<S>::zeros(z2.shape);
                  for (int64_t i = 0; i < z2.numel(); ++i) {
                    const S s = S(1) / (S(1) + std::exp(-z2.at(i)));
                    gz.at(i) = (s - t2.at(i)) * g.item();
                  }
                  tp.accumulate(logits, gz);
                  auto gt = TensorT<S>::zeros(t2.shape);
                  for (int64_t i = 0; i < t2.numel(); ++i)
                    gt.at(i) = -z2.at(i) * g.item();
                  tp.accumulate(targets, gt);
                });
  }

  // ---- reverse pass ----------------------------------------------------------

  /// Cotangents of `loss` (a scalar on this tape) with respect to `leaves`.
  /// Leaves the loss never touched get zero gradients.
  std::vector<TensorT<S>> backward(Var loss, const std::vector<Var>& leaves) {
    check(loss >= 0 && static_cast<size_t>(loss) < nodes_.size(),
          "backward: loss is not on this tape");
    check(value(loss).numel() == 1,
          "backward: loss must be scalar, got " + value(loss).shape.str());
    grads_.assign(nodes_.size(), TensorT<S>());
    grads_[static_cast<size_t>(loss)] = TensorT<S>::scalar(S(1));
    grads_[static_cast<size_t>(loss)].shape = value(loss).shape;
    for (Var v = loss; v >= 0; --v) {
      auto& node = nodes_[static_cast<size_t>(v)];
      auto& g = grads_[static_cast<size_t>(v)];
      if (g.data.empty() || !node.backprop) continue;
      node.backprop(*this, g, v);
    }
    std::vector<TensorT<S>> out;
    out.reserve(leaves.size());
    for (Var l : leaves) {
      auto& g = grads_[static_cast<size_t>(l)];
      out.push_back(g.data.empty() ? TensorT<S>::zeros(value(l).shape)
                                    : std::move(g));
    }
    grads_.clear();
    return out;
  }

  void clear() {
    nodes_.clear();
    grads_.clear();
  }

 private:
  struct Node {
    TensorT<S> value;
    bool requires_grad = false;
    std::function<void(TapeT&, const TensorT<S>&, Var)> backprop;
  };

  const Node& node(Var v) const {
    check(v >= 0 && static_cast<size_t>(v) < nodes_.size(),
          "tape: variable not on this tape");
    return nodes_[static_cast<size_t>(v)];
  }

  bool grad(Var v) const { return node(v).requires_grad; }

  template <typename F>
  Var push(TensorT<S> value, bool requires_grad, F&& backprop) {
    check(value.all_finite(), "tape: non-finite result");
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if constexpr (!std::is_same_v<std::decay_t<F>, std::nullptr_t>) {
      if (requires_grad) {
        if constexpr (std::is_invocable_v<F, TapeT&, const TensorT<S>&, Var>) {
          n.backprop = std::forward<F>(backprop);
        } else {
          n.backprop = [f = std::forward<F>(backprop)](
                           TapeT& t, const TensorT<S>& g, Var) { f(t, g); };
        }
      }
    }
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
  }

  template <typename DF>
  Var unary_from_output(const char* /*name*/, Var a, TensorT<S> out, DF df) {
    return push(std::move(out), grad(a),
                [a, df](TapeT& t, const TensorT<S>& g, Var self) {
                  auto ga = g;
                  for (int64_t i = 0; i < g.numel(); ++i)
                    ga.at(i) *= df(t.value(self).at(i));
                  t.accumulate(a, ga);
                });
  }

  void binary_shape_check(const char* op, Var a, Var b) const {
    check(value(a).shape == value(b).shape,
          std::string(op) + ": shape mismatch " + value(a).shape.str() +
              " vs " + value(b).shape.str());
  }

  static TensorT<S> softmax_values(const TensorT<S>& x) {
    check(x.numel() > 0, "softmax: empty input");
    S m = x.at(0);
    for (S v : x.data) m = std::max(m, v);
    auto out = x;
    S acc = S(0);
    for (auto& v : out.data) {
      v = std::exp(v - m);
      acc += v;
    }
    for (auto& v : out.data) v /= acc;
    return out;
  }

  void accumulate(Var v, const TensorT<S>& g) {
    if (!nodes_[static_cast<size_t>(v)].requires_grad) return;
    auto& slot = grads_[static_cast<size_t>(v)];
    if (slot.data.empty()) {
      slot = g;
      return;
    }
    for (int64_t i = 0; i < g.numel(); ++i) slot.at(i) += g.at(i);
  }

  std::vector<Node> nodes_;
  std::vector<TensorT<S>> grads_;
};

using Tape = TapeT<float>;

}  // namespace mindhouse::ndnet
