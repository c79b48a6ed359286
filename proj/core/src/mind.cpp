#include "mindhouse/mind/mind.hpp"

#include <cmath>
#include <string>

namespace mindhouse::mind {

using ndnet::ParamSet;
using ndnet::Shape;
using ndnet::Tape;
using ndnet::Tensor;
using ndnet::Var;

namespace {

bool power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

void validate(const MindConfig& cfg) {
  check(power_of_two(cfg.frame_size) && cfg.frame_size >= 4,
        "mind: frame_size must be a power of two >= 4, got " +
            std::to_string(cfg.frame_size));
  check(cfg.latent >= 1, "mind: latent dimension must be positive");
  check(cfg.enc_channels.size() == 4, "mind: encoder takes 4 conv layers");
  check(cfg.dec_base >= 1 && cfg.imagery_hidden >= 1,
        "mind: channel/hidden sizes must be positive");
  check(cfg.mixtures >= 1, "mind: need at least one mixture component");
  check(cfg.temperature > 0.0, "mind: temperature must be positive");
}

int conv_out(int size, int k, int stride) { return (size - k) / stride + 1; }

}  // namespace

MindHandles build_mind(ParamSet& ps, const MindConfig& cfg, Rng& rng) {
  validate(cfg);
  MindHandles h;
  h.cfg = cfg;

  // Encoder: four strided convs; kernels shrink with the feature map so the
  // stack stays valid from 32x32 down to 4x4 inputs.
  int size = cfg.frame_size;
  int in_ch = 3;
  for (int i = 0; i < 4; ++i) {
    const int k = std::min(4, size);
    const int out_ch = cfg.enc_channels[static_cast<size_t>(i)];
    h.enc_convs.emplace_back(ps, "enc.conv" + std::to_string(i), in_ch, out_ch,
                             k, 2, rng);
    size = conv_out(size, k, 2);
    in_ch = out_ch;
  }
  const int enc_flat = in_ch * size * size;
  h.enc_mu = ndnet::Linear(ps, "enc.mu", enc_flat, cfg.latent, rng);
  h.enc_logsig = ndnet::Linear(ps, "enc.logsig", enc_flat, cfg.latent, rng);

  // Decoder: latent -> dec_base x 2 x 2 seed, then kernel-2 stride-2
  // transposed convs double the resolution up to the frame size.
  h.dec_fc = ndnet::Linear(ps, "dec.fc", cfg.latent, cfg.dec_base * 4, rng);
  int ch = cfg.dec_base;
  int res = 2;
  int layer = 0;
  while (res < cfg.frame_size) {
    const bool last = res * 2 == cfg.frame_size;
    const int out_ch = last ? 3 : std::max(8, ch / 2);
    h.dec_deconvs.emplace_back(ps, "dec.deconv" + std::to_string(layer), ch,
                               out_ch, 2, 2, rng);
    ch = out_ch;
    res *= 2;
    ++layer;
  }

  // Imagery model: one LSTM layer over [m ⊕ one-hot(a)] plus the MDN head.
  h.imag_lstm = ndnet::LstmCell(ps, "imag.lstm",
                                cfg.latent + gridhouse::kNumActions,
                                cfg.imagery_hidden, rng);
  h.imag_pi =
      ndnet::Linear(ps, "imag.pi", cfg.imagery_hidden, cfg.mixtures, rng);
  h.imag_mu = ndnet::Linear(ps, "imag.mu", cfg.imagery_hidden,
                            cfg.mixtures * cfg.latent, rng);
  h.imag_sigma = ndnet::Linear(ps, "imag.sigma", cfg.imagery_hidden,
                               cfg.mixtures * cfg.latent, rng);
  return h;
}

std::pair<Tensor, Tensor> encode(const ParamSet& ps, const MindHandles& h,
                                 const Tensor& frame) {
  Tape t;
  auto params = ndnet::emit_params(t, ps, {});
  EncodeOut out = encode_graph(t, h, params, t.constant(frame));
  Tensor sigma = t.value(t.exp_op(out.logsig));
  return {t.value(out.mu), sigma};
}

MentalRep sample_latent(const Tensor& mu, const Tensor& sigma, Rng& rng) {
  check(mu.shape == sigma.shape, "sample_latent: mu/sigma shape mismatch");
  MentalRep rep;
  rep.mu = mu;
  rep.sigma = sigma;
  rep.m = mu;
  for (int64_t i = 0; i < mu.numel(); ++i) {
    check(sigma.at(i) > 0.f, "sample_latent: sigma must be positive");
    rep.m.at(i) =
        mu.at(i) + sigma.at(i) * static_cast<float>(rng.normal());
  }
  return rep;
}

Tensor decode(const ParamSet& ps, const MindHandles& h, const Tensor& m) {
  Tape t;
  auto params = ndnet::emit_params(t, ps, {});
  Var logits = decode_logits_graph(t, h, params, t.constant(m));
  return t.value(t.sigmoid(logits));
}

double vae_loss(const ParamSet& ps, const MindHandles& h, const Tensor& frame,
                const Tensor& eps, double beta) {
  Tape t;
  auto params = ndnet::emit_params(t, ps, {});
  Var loss = vae_loss_graph(t, h, params, t.constant(frame), eps, beta);
  return static_cast<double>(t.value(loss).item());
}

ImageryState initial_imagery_state(const MindConfig& cfg) {
  return {Tensor::zeros(Shape{cfg.imagery_hidden}),
          Tensor::zeros(Shape{cfg.imagery_hidden})};
}

std::pair<MixtureParams, ImageryState> imagery_step(
    const ParamSet& ps, const MindHandles& h, const Tensor& m,
    gridhouse::Action action, const ImageryState& state) {
  Tape t;
  auto params = ndnet::emit_params(t, ps, {});
  ImageryGraphOut out =
      imagery_step_graph(t, h, params, t.constant(m), action,
                         t.constant(state.h), t.constant(state.c));
  const int K = h.cfg.mixtures, N = h.cfg.latent;
  MixtureParams mix;
  const Tensor log_pi = t.value(out.mix.log_pi);
  mix.pi.resize(static_cast<size_t>(K));
  for (int k = 0; k < K; ++k)
    mix.pi[static_cast<size_t>(k)] = std::exp(log_pi.at(k));
  mix.mu = t.value(out.mix.mu);
  mix.mu.shape = Shape{K, N};
  mix.sigma = t.value(out.mix.sigma);
  mix.sigma.shape = Shape{K, N};
  return {mix, ImageryState{t.value(out.h), t.value(out.c)}};
}

double mdn_nll(const MixtureParams& mix, const Tensor& target) {
  constexpr double kLog2Pi = 1.8378770664093453;
  const int K = static_cast<int>(mix.pi.size());
  const int N = static_cast<int>(target.numel());
  check(mix.mu.numel() == int64_t(K) * N && mix.sigma.numel() == int64_t(K) * N,
        "mdn_nll: mixture/target dimension mismatch");
  // log-sum-exp over components in double precision.
  std::vector<double> comp(static_cast<size_t>(K));
  double max_c = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < K; ++k) {
    check(mix.pi[static_cast<size_t>(k)] >= 0.f, "mdn_nll: negative weight");
    double log_n = -0.5 * kLog2Pi * N;
    for (int d = 0; d < N; ++d) {
      const double s = mix.sigma.at(k * N + d);
      check(s > 0.0, "mdn_nll: sigma must be positive");
      const double z = (double(target.at(d)) - mix.mu.at(k * N + d)) / s;
      log_n -= 0.5 * z * z + std::log(s);
    }
    comp[static_cast<size_t>(k)] =
        std::log(double(mix.pi[static_cast<size_t>(k)])) + log_n;
    max_c = std::max(max_c, comp[static_cast<size_t>(k)]);
  }
  double acc = 0.0;
  for (double c : comp) acc += std::exp(c - max_c);
  return -(max_c + std::log(acc));
}

Tensor sample_imagery(const MixtureParams& mix, Rng& rng, double temperature) {
  check(temperature > 0.0, "sample_imagery: temperature must be positive");
  const int K = static_cast<int>(mix.pi.size());
  const int N = static_cast<int>(mix.mu.numel()) / K;
  std::vector<double> w(static_cast<size_t>(K));
  for (int k = 0; k < K; ++k)
    w[static_cast<size_t>(k)] =
        std::pow(double(mix.pi[static_cast<size_t>(k)]), 1.0 / temperature);
  const int k = static_cast<int>(rng.categorical(w));
  Tensor out = Tensor::zeros(Shape{N});
  for (int d = 0; d < N; ++d)
    out.at(d) = mix.mu.at(k * N + d) +
                mix.sigma.at(k * N + d) * static_cast<float>(rng.normal());
  return out;
}

std::vector<RolloutStep> imagine_rollout(
    const ParamSet& ps, const MindHandles& h, const Tensor& m,
    const ImageryState& state, const std::vector<gridhouse::Action>& actions,
    Rng& rng, double temperature) {
  check(!actions.empty(), "imagine_rollout: empty action sequence");
  std::vector<RolloutStep> out;
  out.reserve(actions.size());
  Tensor cur = m;
  ImageryState st = state;
  for (gridhouse::Action a : actions) {
    auto [mix, next] = imagery_step(ps, h, cur, a, st);
    RolloutStep step;
    step.mix = mix;
    step.sample = sample_imagery(mix, rng, temperature);
    cur = step.sample;
    st = next;
    out.push_back(std::move(step));
  }
  return out;
}

}  // namespace mindhouse::mind
