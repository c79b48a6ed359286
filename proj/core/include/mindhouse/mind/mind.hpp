#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "mindhouse/gridhouse/house.hpp"
#include "mindhouse/ndnet/params.hpp"
#include "mindhouse/ndnet/tape.hpp"
#include "mindhouse/util/rng.hpp"

namespace mindhouse::mind {

/// Sizes for the mental autoencoder and the imagery model. Frame sizes must
/// be powers of two (the decoder doubles resolution per layer from a 2x2
/// seed). Defaults are desk-scale; latent/hidden go up to 128/512 for
/// full-scale runs.
struct MindConfig {
  int frame_size = 32;
  int latent = 32;  // N_m
  std::vector<int> enc_channels = {16, 32, 64, 128};
  int dec_base = 64;        // decoder channels at the 2x2 seed
  int imagery_hidden = 128; // LSTM hidden size
  int mixtures = 5;         // K
  double beta = 4.0;
  double temperature = 1.0; // MDN component-selection temperature
};

/// Parameter handles into a ParamSet. Encoder/decoder live under "enc."/
/// "dec.", the imagery model under "imag." — the trainer freezes stages by
/// these prefixes.
struct MindHandles {
  MindConfig cfg;
  std::vector<ndnet::Conv> enc_convs;
  ndnet::Linear enc_mu, enc_logsig;
  ndnet::Linear dec_fc;
  std::vector<ndnet::Deconv> dec_deconvs;
  ndnet::LstmCell imag_lstm;
  ndnet::Linear imag_pi, imag_mu, imag_sigma;
};

MindHandles build_mind(ndnet::ParamSet& ps, const MindConfig& cfg, Rng& rng);

// ---- graph builders (shared between float training and double checking) ----

struct EncodeOut {
  ndnet::Var mu = -1;
  ndnet::Var logsig = -1;  // sigma = exp(logsig) > 0
};

template <typename S>
EncodeOut encode_graph(ndnet::TapeT<S>& t, const MindHandles& h,
                       const std::vector<ndnet::Var>& params,
                       ndnet::Var frame) {
  const auto& shape = t.value(frame).shape;
  check(shape == ndnet::Shape{3, h.cfg.frame_size, h.cfg.frame_size},
        "encode: frame must be [3," + std::to_string(h.cfg.frame_size) + "," +
            std::to_string(h.cfg.frame_size) + "], got " + shape.str());
  ndnet::Var x = frame;
  for (const auto& conv : h.enc_convs)
    x = t.relu(t.conv2d(x, params[conv.w], params[conv.b], conv.stride));
  x = t.reshape(x, ndnet::Shape{static_cast<int>(t.value(x).numel())});
  EncodeOut out;
  out.mu = t.add(t.matmul(params[h.enc_mu.w], x), params[h.enc_mu.b]);
  out.logsig =
      t.add(t.matmul(params[h.enc_logsig.w], x), params[h.enc_logsig.b]);
  return out;
}

/// Pre-sigmoid reconstruction logits [3,H,W]; decode() applies the sigmoid,
/// the VAE loss consumes the logits directly.
template <typename S>
ndnet::Var decode_logits_graph(ndnet::TapeT<S>& t, const MindHandles& h,
                               const std::vector<ndnet::Var>& params,
                               ndnet::Var m) {
  check(t.value(m).shape == ndnet::Shape{h.cfg.latent},
        "decode: latent must be [" + std::to_string(h.cfg.latent) + "], got " +
            t.value(m).shape.str());
  ndnet::Var x = t.add(t.matmul(params[h.dec_fc.w], m), params[h.dec_fc.b]);
  x = t.reshape(x, ndnet::Shape{h.cfg.dec_base, 2, 2});
  for (size_t i = 0; i < h.dec_deconvs.size(); ++i) {
    const auto& dc = h.dec_deconvs[i];
    x = t.conv2d_transpose(x, params[dc.w], params[dc.b], dc.stride);
    if (i + 1 < h.dec_deconvs.size()) x = t.relu(x);
  }
  return x;
}

/// Closed-form KL(N(mu, sigma) || N(0, I)) with sigma = exp(logsig):
/// 0.5 * sum(mu^2 + sigma^2 - 1 - 2*logsig). Zero exactly at the prior.
template <typename S>
ndnet::Var kl_graph(ndnet::TapeT<S>& t, ndnet::Var mu, ndnet::Var logsig) {
  const auto dims = static_cast<double>(t.value(mu).numel());
  ndnet::Var quad =
      t.reduce_sum(t.add(t.mul(mu, mu), t.exp_op(t.scale(logsig, 2.0))));
  return t.sub(t.add_scalar(t.scale(quad, 0.5), -0.5 * dims),
               t.reduce_sum(logsig));
}

/// Reconstruction Bernoulli cross-entropy + beta * KL. `eps` is the frozen
/// reparameterization noise: m = mu + exp(logsig) * eps keeps the sample
/// differentiable in (mu, logsig).
template <typename S>
ndnet::Var vae_loss_graph(ndnet::TapeT<S>& t, const MindHandles& h,
                          const std::vector<ndnet::Var>& params,
                          ndnet::Var frame, const ndnet::TensorT<S>& eps,
                          double beta) {
  check(beta >= 0.0, "vae_loss: beta must be >= 0");
  EncodeOut enc = encode_graph(t, h, params, frame);
  ndnet::Var sigma = t.exp_op(enc.logsig);
  ndnet::Var m = t.add(enc.mu, t.mul(sigma, t.constant(eps)));
  ndnet::Var logits = decode_logits_graph(t, h, params, m);
  ndnet::Var recon = t.bce_with_logits(logits, frame);
  if (beta == 0.0) return recon;
  return t.add(recon, t.scale(kl_graph(t, enc.mu, enc.logsig), beta));
}

/// MDN parameters as tape nodes: log-weights [K], means and scales [K*N_m].
struct MixVars {
  ndnet::Var log_pi = -1;
  ndnet::Var mu = -1;
  ndnet::Var sigma = -1;
};

struct ImageryGraphOut {
  MixVars mix;
  ndnet::Var h = -1;
  ndnet::Var c = -1;
};

/// One LSTM step over [m ⊕ one-hot(action)] plus the MDN head.
template <typename S>
ImageryGraphOut imagery_step_graph(ndnet::TapeT<S>& t, const MindHandles& h,
                                   const std::vector<ndnet::Var>& params,
                                   ndnet::Var m, gridhouse::Action action,
                                   ndnet::Var h_in, ndnet::Var c_in) {
  ndnet::Var onehot = t.constant(ndnet::TensorT<S>::one_hot(
      gridhouse::kNumActions, static_cast<int>(action)));
  ndnet::Var x = t.concat({m, onehot});
  auto [h_new, c_new] =
      ndnet::lstm_step(t, h.imag_lstm, params[h.imag_lstm.w_ih],
                       params[h.imag_lstm.w_hh], params[h.imag_lstm.b], x,
                       h_in, c_in);
  ImageryGraphOut out;
  out.h = h_new;
  out.c = c_new;
  out.mix.log_pi = t.log_softmax(
      t.add(t.matmul(params[h.imag_pi.w], h_new), params[h.imag_pi.b]));
  out.mix.mu =
      t.add(t.matmul(params[h.imag_mu.w], h_new), params[h.imag_mu.b]);
  out.mix.sigma = t.elu1p(
      t.add(t.matmul(params[h.imag_sigma.w], h_new), params[h.imag_sigma.b]));
  return out;
}

/// -log sum_k exp(log pi_k + sum_d log N(target_d; mu_kd, sigma_kd)),
/// accumulated through log_sum_exp so large magnitudes stay finite.
template <typename S>
ndnet::Var mdn_nll_graph(ndnet::TapeT<S>& t, const MixVars& mix,
                         ndnet::Var target, int K, int N) {
  constexpr double kLog2Pi = 1.8378770664093453;
  std::vector<ndnet::Var> comp;
  comp.reserve(static_cast<size_t>(K));
  for (int k = 0; k < K; ++k) {
    ndnet::Var mu_k = t.slice(mix.mu, k * N, N);
    ndnet::Var sig_k = t.slice(mix.sigma, k * N, N);
    ndnet::Var z = t.div(t.sub(target, mu_k), sig_k);
    ndnet::Var quad = t.scale(t.reduce_sum(t.mul(z, z)), -0.5);
    ndnet::Var logdet = t.neg(t.reduce_sum(t.log_op(sig_k)));
    ndnet::Var log_n =
        t.add_scalar(t.add(quad, logdet), -0.5 * kLog2Pi * N);
    comp.push_back(t.add(t.pick(mix.log_pi, k), log_n));
  }
  return t.neg(t.log_sum_exp(t.concat(comp)));
}

// ---- float-side inference -------------------------------------------------

/// A sampled mental representation with its posterior.
struct MentalRep {
  ndnet::Tensor m, mu, sigma;
};

/// Posterior parameters for one frame ([3,H,W] in [0,1]).
std::pair<ndnet::Tensor, ndnet::Tensor> encode(const ndnet::ParamSet& ps,
                                               const MindHandles& h,
                                               const ndnet::Tensor& frame);

/// Reparameterized draw m = mu + sigma * eps.
MentalRep sample_latent(const ndnet::Tensor& mu, const ndnet::Tensor& sigma,
                        Rng& rng);

/// Mental image in (0,1), shape [3,H,W].
ndnet::Tensor decode(const ndnet::ParamSet& ps, const MindHandles& h,
                     const ndnet::Tensor& m);

double vae_loss(const ndnet::ParamSet& ps, const MindHandles& h,
                const ndnet::Tensor& frame, const ndnet::Tensor& eps,
                double beta);

struct MixtureParams {
  std::vector<float> pi;     // K, simplex
  ndnet::Tensor mu, sigma;   // [K, N_m], sigma > 0
};

struct ImageryState {
  ndnet::Tensor h, c;
};

ImageryState initial_imagery_state(const MindConfig& cfg);

std::pair<MixtureParams, ImageryState> imagery_step(
    const ndnet::ParamSet& ps, const MindHandles& h, const ndnet::Tensor& m,
    gridhouse::Action action, const ImageryState& state);

double mdn_nll(const MixtureParams& mix, const ndnet::Tensor& target);

/// Component via Categorical(pi^(1/tau) / Z), then a diagonal-Gaussian draw.
ndnet::Tensor sample_imagery(const MixtureParams& mix, Rng& rng,
                             double temperature = 1.0);

struct RolloutStep {
  MixtureParams mix;
  ndnet::Tensor sample;
};

/// Iterates imagery_step over `actions`, feeding each sampled latent back in.
std::vector<RolloutStep> imagine_rollout(const ndnet::ParamSet& ps,
                                         const MindHandles& h,
                                         const ndnet::Tensor& m,
                                         const ImageryState& state,
                                         const std::vector<gridhouse::Action>& actions,
                                         Rng& rng, double temperature = 1.0);

}  // namespace mindhouse::mind
