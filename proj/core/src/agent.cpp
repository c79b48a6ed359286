#include "mindhouse/agent/agent.hpp"

#include <algorithm>
#include <cmath>

namespace mindhouse::agent {

using gridhouse::Action;
using gridhouse::AgentPose;
using gridhouse::HouseMap;
using ndnet::ParamSet;
using ndnet::Shape;
using ndnet::Tape;
using ndnet::Tensor;
using ndnet::Var;

AgentHandles build_agent(ParamSet& ps, const AgentConfig& cfg, Rng& rng) {
  check(cfg.vocab_words >= 1, "agent: vocabulary must be non-empty");
  check(cfg.num_answers >= 2, "agent: need at least two answers");
  check(cfg.feat_dim >= 1 && cfg.imagery_hidden >= 1,
        "agent: feature/imagery dimensions must be positive");
  check(cfg.question_embed >= 1 && cfg.q_dim >= 1 && cfg.planner_hidden >= 1 &&
            cfg.controller_hidden >= 1 && cfg.qa_hidden >= 1,
        "agent: layer sizes must be positive");

  AgentHandles a;
  a.cfg = cfg;
  a.qenc_embed = ps.add(
      "qenc.embed",
      ndnet::fanin_uniform<float>(Shape{cfg.vocab_words, cfg.question_embed},
                                  cfg.question_embed, rng));
  a.qenc_lstm =
      ndnet::LstmCell(ps, "qenc.lstm", cfg.question_embed, cfg.q_dim, rng);

  const int plan_in = cfg.feat_dim + cfg.q_dim + gridhouse::kNumActions +
                      cfg.imagery_hidden;
  a.plan_lstm = ndnet::LstmCell(ps, "plan.lstm", plan_in, cfg.planner_hidden, rng);
  a.plan_policy = ndnet::Linear(ps, "plan.policy", cfg.planner_hidden,
                                gridhouse::kNumActions, rng);
  a.plan_value = ndnet::Linear(ps, "plan.value", cfg.planner_hidden, 1, rng);

  const int ctrl_in = cfg.planner_hidden + cfg.feat_dim + cfg.q_dim +
                      gridhouse::kNumActions;
  a.ctrl_fc1 =
      ndnet::Linear(ps, "ctrl.fc1", ctrl_in, cfg.controller_hidden, rng);
  a.ctrl_fc2 = ndnet::Linear(ps, "ctrl.fc2", cfg.controller_hidden, 1, rng);

  a.qa_proj = ndnet::Linear(ps, "qa.proj", cfg.feat_dim, cfg.q_dim, rng);
  a.qa_fc1 = ndnet::Linear(ps, "qa.fc1", cfg.feat_dim + cfg.q_dim,
                           cfg.qa_hidden, rng);
  a.qa_fc2 = ndnet::Linear(ps, "qa.fc2", cfg.qa_hidden, cfg.num_answers, rng);
  return a;
}

std::vector<Macro> segment_macros(const std::vector<Action>& acts) {
  check(!acts.empty(), "segment_macros: empty demonstration");
  check(acts.back() == Action::Stop,
        "segment_macros: demonstration must end with Stop");
  std::vector<Macro> out;
  size_t i = 0;
  while (i + 1 < acts.size()) {
    const Action a = acts[i];
    check(a != Action::Stop, "segment_macros: Stop before the final action");
    int run = 0;
    while (i + 1 < acts.size() && acts[i] == a && run < 5) {
      ++run;
      ++i;
    }
    out.push_back({a, run});
  }
  out.push_back({Action::Stop, 0});
  return out;
}

std::pair<Tensor, Tensor> FeatureCache::get(const ParamSet& ps,
                                            const mind::MindHandles& mh,
                                            const HouseMap& house,
                                            AgentPose pose) {
  const uint64_t key =
      (static_cast<uint64_t>(house.id) << 24) ^
      (static_cast<uint64_t>(house.index(pose.cell.r, pose.cell.c)) * 4 +
       static_cast<uint64_t>(pose.heading));
  {
    std::lock_guard<std::mutex> g(lock_);
    auto it = map_.find(key);
    if (it != map_.end()) return it->second;
  }
  auto obs = gridhouse::render(house, pose, mh.cfg.frame_size);
  auto feat = mind::encode(ps, mh, obs.tensor());
  std::lock_guard<std::mutex> g(lock_);
  return map_.emplace(key, std::move(feat)).first->second;
}

size_t FeatureCache::size() const {
  std::lock_guard<std::mutex> g(lock_);
  return map_.size();
}

namespace {

int argmax(const Tensor& v) {
  int best = 0;
  for (int64_t i = 1; i < v.numel(); ++i)
    if (v.at(i) > v.at(best)) best = static_cast<int>(i);
  return best;
}

}  // namespace

TrajectoryRecord run_episode(const ParamSet& ps, const AgentHandles& ah,
                             const mind::MindHandles& mh,
                             const HouseMap& house,
                             const eqagen::Episode& episode,
                             const RunOptions& opts) {
  check(house.id == episode.house_id,
        "run_episode: episode belongs to house " +
            std::to_string(episode.house_id) + ", got house " +
            std::to_string(house.id));
  check(opts.n_max >= 1 && opts.planner_budget >= 1,
        "run_episode: budgets must be positive");
  check(ah.cfg.feat_dim == mh.cfg.latent &&
            ah.cfg.imagery_hidden == mh.cfg.imagery_hidden,
        "run_episode: agent/mind dimension mismatch");

  Rng rng(opts.seed);
  Tape t;
  auto P = ndnet::emit_params(t, ps, {});
  Var q = encode_question_graph(t, ah, P, episode.question);

  auto feat_of = [&](AgentPose pose) {
    if (opts.cache) return opts.cache->get(ps, mh, house, pose);
    auto obs = gridhouse::render(house, pose, mh.cfg.frame_size);
    return mind::encode(ps, mh, obs.tensor());
  };

  // Distances for r_p come from one field per episode (fixed target).
  gridhouse::DistanceField dfield;
  if (opts.compute_rewards)
    dfield = gridhouse::compute_distance_field(house, episode.target_cell);
  auto dist_of = [&](AgentPose pose) { return dfield.at(house, pose); };

  const Tensor zero_h = Tensor::zeros(Shape{ah.cfg.imagery_hidden});
  AgentPose pose = episode.spawn;
  auto [mu, sigma] = feat_of(pose);
  std::deque<Tensor> buffer(5, mu);  // spawn frame fills the history

  Var h = t.constant(Tensor::zeros(Shape{ah.cfg.planner_hidden}));
  Var c = h;
  Tensor imag_h = zero_h, imag_c = zero_h;
  Action a_prev = Action::Stop;  // episode-start sentinel

  std::vector<Macro> macros;
  size_t macro_i = 0;
  if (opts.mode == RunMode::DemoForced)
    macros = segment_macros(episode.expert_actions);

  auto qa_dist = [&](const std::array<Var, 5>& slots) {
    return t.value(t.softmax(qa_logits_graph(t, ah, P, slots, q)));
  };
  auto buffer_slots = [&]() {
    std::array<Var, 5> slots;
    for (int i = 0; i < 5; ++i) slots[size_t(i)] = t.constant(buffer[size_t(i)]);
    return slots;
  };

  TrajectoryRecord traj;
  int n_prim = 0;
  bool stopped = false;

  while (!stopped) {
    if (static_cast<int>(traj.steps.size()) >= opts.planner_budget) {
      traj.forced_stop = true;  // planner-step guard tripped
      break;
    }
    StepRecord rec;
    rec.pose = pose;
    rec.feat = mu;
    rec.imag_h_in = opts.use_imagery ? imag_h : zero_h;

    Var feat_v = t.constant(mu);
    auto pl = planner_step_graph(t, ah, P, feat_v, q, a_prev,
                                 t.constant(rec.imag_h_in), h, c);
    h = pl.h;
    c = pl.c;
    const Tensor log_pi = t.value(pl.log_policy);

    Action act;
    switch (opts.mode) {
      case RunMode::Greedy:
        act = static_cast<Action>(argmax(log_pi));
        break;
      case RunMode::Sample: {
        std::vector<double> w(4);
        for (int i = 0; i < 4; ++i) w[size_t(i)] = std::exp(log_pi.at(i));
        act = static_cast<Action>(rng.categorical(w));
        break;
      }
      case RunMode::DemoForced:
        act = macros[macro_i].action;
        break;
    }
    rec.action = act;
    rec.log_prob = log_pi.at(static_cast<int>(act));
    rec.value = t.value(pl.value).item();

    // Imagery advances on the chosen action; its new hidden state reaches
    // the planner on the NEXT step.
    mind::MentalRep m_t = mind::sample_latent(mu, sigma, rng);
    auto [mix, imag_next] =
        mind::imagery_step(ps, mh, m_t.m, act, {imag_h, imag_c});

    if (opts.compute_rewards && opts.use_planned_reward) {
      Tensor m_pred = mind::sample_imagery(mix, rng, mh.cfg.temperature);
      auto slots_with = buffer_slots();
      slots_with[0] = t.constant(m_pred);  // mental image replaces the oldest
      const Tensor with = qa_dist(slots_with);
      const Tensor without = qa_dist(buffer_slots());
      rec.r_m = rewards::planned_reward(
          with.at(episode.answer), without.at(episode.answer));
    }
    imag_h = imag_next.h;
    imag_c = imag_next.c;

    if (act == Action::Stop) {
      stopped = true;
      traj.steps.push_back(std::move(rec));
      if (opts.mode == RunMode::DemoForced) ++macro_i;
      break;
    }

    // Controller: a 1 executes the action once; five consecutive 1s force a
    // 0 (the loop bound), returning control to the planner.
    int count = 0;
    while (count < 5 && !stopped) {
      rec.ctrl_feats.push_back(mu);
      Var logit =
          controller_logit_graph(t, ah, P, pl.h, t.constant(mu), q, act);
      const float p = t.value(t.sigmoid(logit)).item();
      int bit = 0;
      switch (opts.mode) {
        case RunMode::Greedy: bit = p > 0.5f ? 1 : 0; break;
        case RunMode::Sample: bit = rng.bernoulli(p) ? 1 : 0; break;
        case RunMode::DemoForced:
          bit = count < macros[macro_i].repeats ? 1 : 0;
          break;
      }
      rec.bits.push_back(bit);
      if (!bit) break;

      const int d_before = opts.compute_rewards ? dist_of(pose) : 0;
      pose = gridhouse::step(house, pose, act);
      ++n_prim;
      ++count;
      ++rec.executed;
      if (opts.compute_rewards)
        rec.r_p += rewards::progressive_reward(d_before, dist_of(pose));

      std::tie(mu, sigma) = feat_of(pose);
      buffer.pop_front();
      buffer.push_back(mu);

      if (n_prim >= opts.n_max) {
        stopped = true;           // budget exhausted: forced stop,
        traj.forced_stop = true;  // counted as the agent's stop
      }
    }
    traj.steps.push_back(std::move(rec));
    if (opts.mode == RunMode::DemoForced) {
      ++macro_i;
      if (macro_i >= macros.size()) {
        stopped = true;  // defensive: demos always end in Stop
        traj.forced_stop = true;
      }
    }
    a_prev = act;
  }

  check(!traj.steps.empty(), "run_episode: no planner steps recorded");

  // One QA call at stop, on the five real frames.
  const Tensor dist = qa_dist(buffer_slots());
  traj.answer_dist.assign(dist.data.begin(), dist.data.end());
  traj.answer_pred = argmax(dist);
  traj.answer_correct = traj.answer_pred == episode.answer;
  traj.primitive_actions = n_prim;
  traj.final_pose = pose;
  traj.question_encoding = t.value(q);
  for (int i = 0; i < 5; ++i) traj.final_slots[size_t(i)] = buffer[size_t(i)];

  if (opts.compute_rewards) {
    traj.steps.back().r_f =
        rewards::final_reward(traj.answer_correct, n_prim, opts.rcfg);
  }
  return traj;
}

}  // namespace mindhouse::agent
