#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mindhouse/agent/agent.hpp"
#include "mindhouse/eqagen/eqagen.hpp"
#include "mindhouse/gridhouse/house.hpp"
#include "mindhouse/mind/mind.hpp"
#include "mindhouse/rewards/rewards.hpp"
#include "mindhouse/trainer/gae.hpp"

namespace mindhouse::trainer {

// ---- model + data views -----------------------------------------------------

/// One parameter set holding both networks; the handles index into it.
struct ModelBundle {
  ndnet::ParamSet ps;
  mind::MindHandles mh;
  agent::AgentHandles ah;
};

/// Builds the mental model and the agent in one parameter set. Vocabulary
/// sizes and the cross-network dimensions (feature, imagery hidden) are
/// filled in from `mind_cfg` and `vocab`.
ModelBundle build_model(const mind::MindConfig& mind_cfg,
                        agent::AgentConfig agent_cfg,
                        const eqagen::Vocabulary& vocab, uint64_t seed);

/// A split of the generated world: houses, the shared vocabulary, and the
/// episodes the current stage trains (or evaluates) on.
struct WorldData {
  std::vector<gridhouse::HouseMap> houses;
  eqagen::Vocabulary vocab;
  std::vector<eqagen::Episode> episodes;
};

const gridhouse::HouseMap& house_by_id(const WorldData& data, int house_id);

// ---- metrics ----------------------------------------------------------------

struct MetricsRow {
  std::string stage;
  int epoch = 0;
  double loss = 0.0;
  double success_rate = 0.0;
  double mean_d_delta = 0.0;
  double qa_accuracy = 0.0;

  std::string to_json_line() const;  // one JSON object, sorted keys
};

using MetricsSink = std::function<void(const MetricsRow&)>;

struct StageResult {
  std::vector<MetricsRow> metrics;
  bool aborted = false;  // non-finite loss; parameters rolled back
  int final_phase = 0;   // bc only: curriculum phase reached
};

// ---- stage configs ----------------------------------------------------------

struct VaeConfig {
  int batch = 20;
  double lr = 1e-4;
  double beta = 4.0;
  double clip = 5.0;
  int epochs = 5;
  uint64_t seed = 0;
};

struct ImageryConfig {
  int batch = 20;
  double lr = 1e-5;
  double clip = 5.0;
  int epochs = 5;
  uint64_t seed = 0;
};

struct BCConfig {
  int batch = 20;
  double lr = 1e-4;
  double clip = 5.0;
  int max_epochs = 10;
  int curriculum_step = 5;        // backtrack amount per phase
  double advance_success = 0.8;   // windowed episode-success threshold
  double advance_accuracy = 0.9;  // windowed next-action accuracy threshold
  int advance_window = 50;        // episodes per phase-advance decision
  bool use_imagery = true;
  uint64_t seed = 0;
};

enum class ValueTarget { ReturnToGo, OneStep };

struct RLConfig {
  double gamma = 0.99;
  double lambda = 1.0;
  double lr = 1e-4;
  int workers = 1;
  bool asynchronous = false;  // default: synchronous, reproducible updates
  double value_weight = 0.5;
  double entropy_weight = 0.01;
  int updates = 10;
  int episodes_per_update = 20;
  double clip = 5.0;
  uint64_t seed = 0;
  bool use_planned_reward = true;
  bool use_imagery = true;
  ValueTarget value_target = ValueTarget::ReturnToGo;
  double lambda_f = 0.01;  // final-reward efficiency bonus weight
  int n_max = 80;
  int planner_budget = 80;
};

/// Spawn offset (primitive actions from the target) for a curriculum phase:
/// 5, 10, 15, ... The caller caps it at each demonstration's full length.
int curriculum_offset(int phase, int step = 5);

/// Re-spawns an episode `offset` primitive actions from its end by replaying
/// the expert prefix; the expert suffix becomes the new demonstration.
/// Offsets at or beyond the demo length return the episode unchanged.
eqagen::Episode truncate_episode(const gridhouse::HouseMap& house,
                                 const eqagen::Episode& episode, int offset);

// ---- teacher forcing --------------------------------------------------------

/// Frozen inputs of one demonstration episode, ready to replay through the
/// policy graphs. Built from a demo-forced trajectory.
struct BcEpisode {
  std::vector<int> question;
  struct Step {
    ndnet::Tensor feat;    // planner input feature
    ndnet::Tensor imag_h;  // imagery hidden fed to the planner
    gridhouse::Action prev = gridhouse::Action::Stop;
    gridhouse::Action action = gridhouse::Action::Stop;
    std::vector<int> bits;                  // controller targets
    std::vector<ndnet::Tensor> ctrl_feats;  // feature per controller query
  };
  std::vector<Step> steps;
  std::array<ndnet::Tensor, 5> final_slots;
  int answer = -1;  // < 0: no QA supervision
};

BcEpisode make_bc_episode(const agent::TrajectoryRecord& traj,
                          const eqagen::Episode& episode);

/// Behavior-cloning terms for one episode. The Vars are sums (not means) so
/// batches can pool decisions; counts let the caller normalize. The `*_hit`
/// counters report greedy agreement with the demonstration for metrics.
struct BcTerms {
  ndnet::Var planner_nll = -1;  // sum over planner decisions
  ndnet::Var ctrl_bce = -1;     // sum over controller decisions (-1 if none)
  ndnet::Var qa_ce = -1;        // -1 when the episode has no answer target
  int planner_n = 0, ctrl_n = 0, qa_n = 0;
  int planner_hit = 0, ctrl_hit = 0, qa_hit = 0;
};

template <typename S>
BcTerms bc_loss_graph(ndnet::TapeT<S>& t, const agent::AgentHandles& ah,
                      const std::vector<ndnet::Var>& params,
                      const BcEpisode& ep) {
  check(!ep.steps.empty(), "bc_loss: episode has no steps");
  BcTerms out;
  ndnet::Var q = agent::encode_question_graph(t, ah, params, ep.question);
  ndnet::Var h =
      t.constant(ndnet::TensorT<S>::zeros(ndnet::Shape{ah.cfg.planner_hidden}));
  ndnet::Var c = h;
  std::vector<ndnet::Var> nll_terms, bce_terms;
  for (const auto& st : ep.steps) {
    ndnet::Var feat = t.constant(st.feat.cast<S>());
    ndnet::Var ih = t.constant(st.imag_h.cast<S>());
    auto pl = agent::planner_step_graph(t, ah, params, feat, q, st.prev, ih, h, c);
    h = pl.h;
    c = pl.c;
    nll_terms.push_back(t.neg(t.pick(pl.log_policy, static_cast<int>(st.action))));
    out.planner_n += 1;
    const auto lp = t.value(pl.log_policy);
    int arg = 0;
    for (int i = 1; i < 4; ++i)
      if (lp.at(i) > lp.at(arg)) arg = i;
    if (arg == static_cast<int>(st.action)) out.planner_hit += 1;

    check(st.bits.size() == st.ctrl_feats.size(),
          "bc_loss: controller bits and features misaligned");
    for (size_t j = 0; j < st.bits.size(); ++j) {
      ndnet::Var cf = t.constant(st.ctrl_feats[j].cast<S>());
      ndnet::Var logit =
          agent::controller_logit_graph(t, ah, params, pl.h, cf, q, st.action);
      ndnet::Var target = t.constant(ndnet::TensorT<S>::full(
          ndnet::Shape{1}, static_cast<S>(st.bits[j])));
      bce_terms.push_back(
          t.bce_with_logits(t.reshape(logit, ndnet::Shape{1}), target));
      out.ctrl_n += 1;
      const S lv = t.value(logit).item();
      if ((lv > S(0)) == (st.bits[j] == 1)) out.ctrl_hit += 1;
    }
  }
  out.planner_nll = nll_terms.size() == 1 ? nll_terms[0] : t.reduce_sum(t.concat(nll_terms));
  if (!bce_terms.empty()) {
    ndnet::Var stacked = bce_terms.size() == 1 ? bce_terms[0] : t.concat(bce_terms);
    // bce_with_logits already averages over its (single) element; sum them.
    out.ctrl_bce = bce_terms.size() == 1 ? bce_terms[0] : t.reduce_sum(stacked);
  }
  if (ep.answer >= 0) {
    std::array<ndnet::Var, 5> slots;
    for (int i = 0; i < 5; ++i)
      slots[static_cast<size_t>(i)] =
          t.constant(ep.final_slots[static_cast<size_t>(i)].cast<S>());
    ndnet::Var logits = agent::qa_logits_graph(t, ah, params, slots, q);
    check(ep.answer < static_cast<int>(t.value(logits).numel()),
          "bc_loss: answer id outside the answer head");
    ndnet::Var logp = t.log_softmax(logits);
    out.qa_ce = t.neg(t.pick(logp, ep.answer));
    out.qa_n = 1;
    const auto lv = t.value(logits);
    int arg = 0;
    for (int64_t i = 1; i < lv.numel(); ++i)
      if (lv.at(i) > lv.at(arg)) arg = static_cast<int>(i);
    if (arg == ep.answer) out.qa_hit = 1;
  }
  return out;
}

// ---- actor-critic -----------------------------------------------------------

/// Planner-level rollout view: per planner step, the frozen inputs, the taken
/// action, and the scalar environment reward R_t (progressive + planned, plus
/// the final reward on the terminal step).
struct RolloutView {
  std::vector<int> question;
  struct Step {
    ndnet::Tensor feat, imag_h;
    gridhouse::Action prev = gridhouse::Action::Stop;
    gridhouse::Action action = gridhouse::Action::Stop;
    double reward = 0.0;
  };
  std::vector<Step> steps;
  double d_delta = 0.0;  // telescoped progressive reward over the episode
  bool answer_correct = false;
  bool reached_target = false;
};

RolloutView make_rollout_view(const agent::TrajectoryRecord& traj,
                              const eqagen::Episode& episode);

/// Actor-critic loss for one episode, summed over planner steps:
///   sum_t [ -A_t * log pi(a_t) + w_v * (V_t - G_t)^2 - w_e * H_t ]
/// Advantages come from GAE over the re-computed values and are treated as
/// constants; G_t is the discounted return-to-go (or the one-step target).
struct AcLoss {
  ndnet::Var loss = -1;  // summed over steps; caller normalizes per batch
  int steps = 0;
  double policy_sum = 0.0, value_sum = 0.0, entropy_sum = 0.0;
};

/// When `fixed_adv`/`fixed_target` are null they are computed here (GAE over
/// the freshly unrolled values, return-to-go or one-step targets). Passing
/// them pins the estimator, which makes the loss a plain differentiable
/// function of the parameters — that is what finite-difference checks and
/// multi-evaluation comparisons need.
template <typename S>
AcLoss actor_critic_loss_graph(ndnet::TapeT<S>& t,
                               const agent::AgentHandles& ah,
                               const std::vector<ndnet::Var>& params,
                               const RolloutView& view, const RLConfig& cfg,
                               const std::vector<double>* fixed_adv = nullptr,
                               const std::vector<double>* fixed_target = nullptr) {
  check(!view.steps.empty(), "actor_critic: empty rollout");
  check((fixed_adv == nullptr) == (fixed_target == nullptr),
        "actor_critic: pinned advantages and targets come together");
  ndnet::Var q = agent::encode_question_graph(t, ah, params, view.question);
  ndnet::Var h =
      t.constant(ndnet::TensorT<S>::zeros(ndnet::Shape{ah.cfg.planner_hidden}));
  ndnet::Var c = h;

  std::vector<ndnet::Var> logp_taken, values, entropies;
  std::vector<double> rewards, v_now;
  for (const auto& st : view.steps) {
    auto pl = agent::planner_step_graph(t, ah, params,
                                        t.constant(st.feat.cast<S>()), q,
                                        st.prev,
                                        t.constant(st.imag_h.cast<S>()), h, c);
    h = pl.h;
    c = pl.c;
    logp_taken.push_back(t.pick(pl.log_policy, static_cast<int>(st.action)));
    values.push_back(pl.value);
    // H = -sum_a pi_a log pi_a
    entropies.push_back(
        t.neg(t.reduce_sum(t.mul(t.exp_op(pl.log_policy), pl.log_policy))));
    rewards.push_back(st.reward);
    v_now.push_back(static_cast<double>(t.value(pl.value).item()));
  }

  std::vector<double> adv, target;
  if (fixed_adv) {
    check(fixed_adv->size() == view.steps.size() &&
              fixed_target->size() == view.steps.size(),
          "actor_critic: pinned advantage/target length mismatch");
    adv = *fixed_adv;
    target = *fixed_target;
  } else {
    std::vector<double> v_boot = v_now;
    v_boot.push_back(0.0);  // terminal bootstrap
    adv = gae_advantages(rewards, v_boot, cfg.gamma, cfg.lambda);
    if (cfg.value_target == ValueTarget::ReturnToGo) {
      target = discounted_returns(rewards, cfg.gamma, 0.0);
    } else {
      target.resize(rewards.size());
      for (size_t i = 0; i < rewards.size(); ++i)
        target[i] = rewards[i] + cfg.gamma * v_boot[i + 1];
    }
  }

  AcLoss out;
  out.steps = static_cast<int>(view.steps.size());
  std::vector<ndnet::Var> terms;
  for (size_t i = 0; i < view.steps.size(); ++i) {
    ndnet::Var pol = t.scale(logp_taken[i], static_cast<S>(-adv[i]));
    ndnet::Var verr = t.add_scalar(values[i], static_cast<S>(-target[i]));
    ndnet::Var vloss = t.scale(t.mul(verr, verr), static_cast<S>(cfg.value_weight));
    ndnet::Var ent = t.scale(entropies[i], static_cast<S>(-cfg.entropy_weight));
    terms.push_back(t.add(t.add(pol, vloss), ent));
    out.policy_sum += static_cast<double>(t.value(pol).item());
    out.value_sum += static_cast<double>(t.value(vloss).item());
    out.entropy_sum += static_cast<double>(t.value(entropies[i]).item());
  }
  out.loss = terms.size() == 1 ? terms[0] : t.reduce_sum(t.concat(terms));
  return out;
}

// ---- data preparation helpers ------------------------------------------------

/// Unique frames visited by the expert demonstrations (spawn pose included).
std::vector<ndnet::Tensor> demo_frames(const WorldData& data, int frame_size);

/// Deterministic reconstruction probe: mean loss with beta = 0 and zero
/// reparameterization noise over `frames`.
double mean_recon_loss(const ModelBundle& m,
                       const std::vector<ndnet::Tensor>& frames);

/// Mean KL term of the posterior over `frames`.
double mean_kl(const ModelBundle& m, const std::vector<ndnet::Tensor>& frames);

/// One imagery training sequence per episode: posterior means at macro-step
/// boundaries, with the macro action that connects them (Stop maps a latent
/// to itself).
struct LatentTransition {
  ndnet::Tensor m_in;
  gridhouse::Action action = gridhouse::Action::Stop;
  ndnet::Tensor m_out;
};

std::vector<std::vector<LatentTransition>> demo_transitions(
    const ModelBundle& m, const WorldData& data);

/// Mean per-transition negative log-likelihood of the imagery model over the
/// given sequences (stateful across each sequence).
double imagery_nll(const ModelBundle& m,
                   const std::vector<std::vector<LatentTransition>>& seqs);

// ---- stages -----------------------------------------------------------------

StageResult train_vae(ModelBundle& m, const WorldData& data,
                      const VaeConfig& cfg, const MetricsSink& sink = {});
StageResult train_imagery(ModelBundle& m, const WorldData& data,
                          const ImageryConfig& cfg, const MetricsSink& sink = {});
StageResult train_bc(ModelBundle& m, const WorldData& data, const BCConfig& cfg,
                     const MetricsSink& sink = {});
StageResult train_rl(ModelBundle& m, const WorldData& data, const RLConfig& cfg,
                     const MetricsSink& sink = {});

}  // namespace mindhouse::trainer
