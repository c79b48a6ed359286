#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "mindhouse/eqagen/eqagen.hpp"
#include "mindhouse/gridhouse/house.hpp"
#include "mindhouse/gridhouse/render.hpp"
#include "mindhouse/mind/mind.hpp"
#include "mindhouse/ndnet/params.hpp"
#include "mindhouse/ndnet/tape.hpp"
#include "mindhouse/rewards/rewards.hpp"

namespace mindhouse::agent {

struct AgentConfig {
  int question_embed = 32;
  int q_dim = 64;             // question encoding = qenc LSTM hidden
  int planner_hidden = 128;
  int controller_hidden = 64;
  int qa_hidden = 64;
  int vocab_words = 0;        // from Vocabulary
  int num_answers = 0;        // from Vocabulary (<= 172)
  int feat_dim = 0;           // mental latent N_m (shared encoder features)
  int imagery_hidden = 0;     // imagery LSTM hidden consumed by the planner
};

/// Parameter handles. Prefixes: "qenc." question encoder, "plan." planner
/// (the only group RL fine-tunes), "ctrl." controller, "qa." answer head.
struct AgentHandles {
  AgentConfig cfg;
  ndnet::ParamId qenc_embed = -1;  // [vocab_words, question_embed]
  ndnet::LstmCell qenc_lstm;
  ndnet::LstmCell plan_lstm;
  ndnet::Linear plan_policy;   // hidden -> 4 actions
  ndnet::Linear plan_value;    // hidden -> 1
  ndnet::Linear ctrl_fc1, ctrl_fc2;
  ndnet::Linear qa_proj;       // feat -> q_dim, for similarity attention
  ndnet::Linear qa_fc1, qa_fc2;
};

AgentHandles build_agent(ndnet::ParamSet& ps, const AgentConfig& cfg, Rng& rng);

// ---- graph builders ---------------------------------------------------------

/// LSTM over token embeddings; Q = final hidden state [q_dim].
template <typename S>
ndnet::Var encode_question_graph(ndnet::TapeT<S>& t, const AgentHandles& a,
                                 const std::vector<ndnet::Var>& params,
                                 const std::vector<int>& tokens) {
  check(!tokens.empty(), "encode_question: empty token sequence");
  const int E = a.cfg.question_embed;
  ndnet::Var h = t.constant(ndnet::TensorT<S>::zeros(ndnet::Shape{a.cfg.q_dim}));
  ndnet::Var c = h;
  for (int tok : tokens) {
    check(tok >= 0 && tok < a.cfg.vocab_words,
          "encode_question: unknown token id " + std::to_string(tok));
    ndnet::Var x = t.slice(params[a.qenc_embed], tok * E, E);
    auto [h2, c2] =
        ndnet::lstm_step(t, a.qenc_lstm, params[a.qenc_lstm.w_ih],
                         params[a.qenc_lstm.w_hh], params[a.qenc_lstm.b], x, h,
                         c);
    h = h2;
    c = c2;
  }
  return h;
}

struct PlannerGraphOut {
  ndnet::Var logits = -1;      // [4]
  ndnet::Var log_policy = -1;  // log_softmax(logits)
  ndnet::Var value = -1;       // scalar
  ndnet::Var h = -1, c = -1;
};

/// One planner-LSTM step on [feat ⊕ Q ⊕ one-hot(a_prev) ⊕ imagery-h].
/// The imagery-ablated baseline passes zeros for imag_h — nothing else moves.
template <typename S>
PlannerGraphOut planner_step_graph(ndnet::TapeT<S>& t, const AgentHandles& a,
                                   const std::vector<ndnet::Var>& params,
                                   ndnet::Var feat, ndnet::Var q,
                                   gridhouse::Action a_prev, ndnet::Var imag_h,
                                   ndnet::Var h, ndnet::Var c) {
  ndnet::Var onehot = t.constant(ndnet::TensorT<S>::one_hot(
      gridhouse::kNumActions, static_cast<int>(a_prev)));
  ndnet::Var x = t.concat({feat, q, onehot, imag_h});
  auto [h2, c2] =
      ndnet::lstm_step(t, a.plan_lstm, params[a.plan_lstm.w_ih],
                       params[a.plan_lstm.w_hh], params[a.plan_lstm.b], x, h,
                       c);
  PlannerGraphOut out;
  out.h = h2;
  out.c = c2;
  out.logits = t.add(t.matmul(params[a.plan_policy.w], h2),
                     params[a.plan_policy.b]);
  out.log_policy = t.log_softmax(out.logits);
  out.value = t.pick(
      t.add(t.matmul(params[a.plan_value.w], h2), params[a.plan_value.b]), 0);
  return out;
}

/// Binary repeat/return head on [planner-h ⊕ feat ⊕ Q ⊕ one-hot(a_t)].
/// Returns the logit; the run loop applies the five-consecutive hard cap.
template <typename S>
ndnet::Var controller_logit_graph(ndnet::TapeT<S>& t, const AgentHandles& a,
                                  const std::vector<ndnet::Var>& params,
                                  ndnet::Var planner_h, ndnet::Var feat,
                                  ndnet::Var q, gridhouse::Action action) {
  ndnet::Var onehot = t.constant(ndnet::TensorT<S>::one_hot(
      gridhouse::kNumActions, static_cast<int>(action)));
  ndnet::Var x = t.concat({planner_h, feat, q, onehot});
  ndnet::Var hidden = t.relu(
      t.add(t.matmul(params[a.ctrl_fc1.w], x), params[a.ctrl_fc1.b]));
  return t.pick(
      t.add(t.matmul(params[a.ctrl_fc2.w], hidden), params[a.ctrl_fc2.b]), 0);
}

/// Five-slot attention QA head. Slot order is oldest..newest; when a mental
/// latent is present the caller passes it in slot 0 (it replaces the oldest
/// real frame). Similarities are scaled dot products of projected slots with
/// Q; the attended feature joins Q for the answer classifier. Returns answer
/// logits.
template <typename S>
ndnet::Var qa_logits_graph(ndnet::TapeT<S>& t, const AgentHandles& a,
                           const std::vector<ndnet::Var>& params,
                           const std::array<ndnet::Var, 5>& slots,
                           ndnet::Var q) {
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(a.cfg.q_dim));
  std::vector<ndnet::Var> sims;
  std::vector<ndnet::Var> feats;
  sims.reserve(5);
  feats.reserve(5);
  for (ndnet::Var s : slots) {
    ndnet::Var p =
        t.add(t.matmul(params[a.qa_proj.w], s), params[a.qa_proj.b]);
    sims.push_back(t.scale(t.dot(p, q), inv_scale));
    feats.push_back(s);
  }
  ndnet::Var attn =
      t.reshape(t.softmax(t.concat(sims)), ndnet::Shape{1, 5});
  ndnet::Var stacked =
      t.reshape(t.concat(feats), ndnet::Shape{5, a.cfg.feat_dim});
  ndnet::Var attended =
      t.reshape(t.matmul(attn, stacked), ndnet::Shape{a.cfg.feat_dim});
  ndnet::Var x = t.concat({attended, q});
  ndnet::Var hidden =
      t.relu(t.add(t.matmul(params[a.qa_fc1.w], x), params[a.qa_fc1.b]));
  return t.add(t.matmul(params[a.qa_fc2.w], hidden), params[a.qa_fc2.b]);
}

// ---- demonstrations ---------------------------------------------------------

/// A planner macro-step: one action, executed `repeats` times by the
/// controller (0 for Stop). Expert runs longer than 5 split.
struct Macro {
  gridhouse::Action action = gridhouse::Action::Stop;
  int repeats = 0;
};

/// Splits a primitive demonstration (ending in Stop) into planner macros.
std::vector<Macro> segment_macros(const std::vector<gridhouse::Action>& acts);

// ---- episode execution ------------------------------------------------------

/// Posterior features keyed by (house, pose); valid while the encoder stays
/// frozen, which holds for the whole BC/RL phase. Thread-safe.
class FeatureCache {
 public:
  std::pair<ndnet::Tensor, ndnet::Tensor> get(const ndnet::ParamSet& ps,
                                              const mind::MindHandles& mh,
                                              const gridhouse::HouseMap& house,
                                              gridhouse::AgentPose pose);
  size_t size() const;

 private:
  mutable std::mutex lock_;
  std::unordered_map<uint64_t, std::pair<ndnet::Tensor, ndnet::Tensor>> map_;
};

enum class RunMode { Greedy, Sample, DemoForced };

struct RunOptions {
  RunMode mode = RunMode::Greedy;
  uint64_t seed = 0;
  bool use_imagery = true;         // false: planner sees zeros (ablation)
  bool compute_rewards = false;    // r_p / r_m / r_f bookkeeping
  bool use_planned_reward = true;  // r_m arm switch
  rewards::RewardConfig rcfg;
  int n_max = 80;                  // primitive-action budget (forced stop)
  int planner_budget = 80;         // planner-step guard
  FeatureCache* cache = nullptr;
};

/// Everything one planner step produced. Feature vectors are recorded so the
/// training graphs can replay the episode with frozen inputs.
struct StepRecord {
  gridhouse::AgentPose pose;            // before this step
  gridhouse::Action action = gridhouse::Action::Stop;
  float log_prob = 0.f;                 // log pi(action)
  float value = 0.f;
  ndnet::Tensor feat;                   // planner input feature (mu)
  ndnet::Tensor imag_h_in;              // imagery hidden fed to the planner
  std::vector<int> bits;                // controller decisions, in order
  std::vector<ndnet::Tensor> ctrl_feats;  // feature per controller query
  int executed = 0;                     // primitive executions (0..5)
  double r_p = 0.0, r_m = 0.0, r_f = 0.0;
};

struct TrajectoryRecord {
  std::vector<StepRecord> steps;
  int primitive_actions = 0;
  bool forced_stop = false;            // hit n_max or the planner budget
  gridhouse::AgentPose final_pose;
  ndnet::Tensor question_encoding;     // Q (constant during RL)
  std::array<ndnet::Tensor, 5> final_slots;  // QA inputs at stop, oldest first
  std::vector<float> answer_dist;
  int answer_pred = -1;
  bool answer_correct = false;
};

/// Full planner/controller/imagery loop for one episode. The planner selects
/// actions; only controller 1-bits execute them (0-5 executions per step).
/// Imagery consumes the current step's action; the planner consumes the
/// hidden state produced on the previous step. QA runs once at stop.
TrajectoryRecord run_episode(const ndnet::ParamSet& ps,
                             const AgentHandles& ah,
                             const mind::MindHandles& mh,
                             const gridhouse::HouseMap& house,
                             const eqagen::Episode& episode,
                             const RunOptions& opts);

}  // namespace mindhouse::agent
