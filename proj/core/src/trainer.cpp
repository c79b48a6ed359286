#include "mindhouse/trainer/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <deque>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "mindhouse/gridhouse/render.hpp"
#include "mindhouse/ndnet/optim.hpp"

namespace mindhouse::trainer {

using agent::RunMode;
using agent::RunOptions;
using eqagen::Episode;
using gridhouse::Action;
using gridhouse::AgentPose;
using gridhouse::HouseMap;
using ndnet::ParamId;
using ndnet::ParamSet;
using ndnet::Shape;
using ndnet::Tape;
using ndnet::Tensor;
using ndnet::Var;

ModelBundle build_model(const mind::MindConfig& mind_cfg,
                        agent::AgentConfig agent_cfg,
                        const eqagen::Vocabulary& vocab, uint64_t seed) {
  ModelBundle m;
  Rng rng(seed);
  m.mh = mind::build_mind(m.ps, mind_cfg, rng);
  agent_cfg.vocab_words = static_cast<int>(vocab.words.size());
  agent_cfg.num_answers = static_cast<int>(vocab.answers.size());
  agent_cfg.feat_dim = mind_cfg.latent;
  agent_cfg.imagery_hidden = mind_cfg.imagery_hidden;
  m.ah = agent::build_agent(m.ps, agent_cfg, rng);
  return m;
}

const HouseMap& house_by_id(const WorldData& data, int house_id) {
  for (const auto& h : data.houses)
    if (h.id == house_id) return h;
  throw ContractError("world data has no house with id " +
                      std::to_string(house_id));
}

std::string MetricsRow::to_json_line() const {
  nlohmann::json j;
  j["stage"] = stage;
  j["epoch"] = epoch;
  j["loss"] = loss;
  j["success_rate"] = success_rate;
  j["mean_d_delta"] = mean_d_delta;
  j["qa_accuracy"] = qa_accuracy;
  return j.dump();
}

int curriculum_offset(int phase, int step) {
  check(phase >= 0, "curriculum: phase must be non-negative");
  check(step >= 1, "curriculum: step must be positive");
  return step * (phase + 1);
}

Episode truncate_episode(const HouseMap& house, const Episode& episode,
                         int offset) {
  check(offset >= 0, "truncate_episode: offset must be non-negative");
  check(!episode.expert_actions.empty() &&
            episode.expert_actions.back() == Action::Stop,
        "truncate_episode: malformed demonstration");
  const int primitives = static_cast<int>(episode.expert_actions.size()) - 1;
  if (offset >= primitives) return episode;

  Episode out = episode;
  AgentPose pose = episode.spawn;
  const int prefix = primitives - offset;
  for (int i = 0; i < prefix; ++i)
    pose = gridhouse::step(house, pose, episode.expert_actions[size_t(i)]);
  out.spawn = pose;
  out.spawn_k = offset;
  out.expert_actions.assign(episode.expert_actions.begin() + prefix,
                            episode.expert_actions.end());
  return out;
}

BcEpisode make_bc_episode(const agent::TrajectoryRecord& traj,
                          const Episode& episode) {
  check(!traj.steps.empty(), "make_bc_episode: empty trajectory");
  BcEpisode out;
  out.question = episode.question;
  out.answer = episode.answer;
  out.final_slots = traj.final_slots;
  out.steps.reserve(traj.steps.size());
  for (size_t i = 0; i < traj.steps.size(); ++i) {
    const auto& rec = traj.steps[i];
    BcEpisode::Step st;
    st.feat = rec.feat;
    st.imag_h = rec.imag_h_in;
    st.prev = i == 0 ? Action::Stop : traj.steps[i - 1].action;
    st.action = rec.action;
    st.bits = rec.bits;
    st.ctrl_feats = rec.ctrl_feats;
    out.steps.push_back(std::move(st));
  }
  return out;
}

RolloutView make_rollout_view(const agent::TrajectoryRecord& traj,
                              const Episode& episode) {
  check(!traj.steps.empty(), "make_rollout_view: empty trajectory");
  RolloutView out;
  out.question = episode.question;
  out.answer_correct = traj.answer_correct;
  out.reached_target = traj.final_pose.cell == episode.target_cell;
  out.steps.reserve(traj.steps.size());
  for (size_t i = 0; i < traj.steps.size(); ++i) {
    const auto& rec = traj.steps[i];
    RolloutView::Step st;
    st.feat = rec.feat;
    st.imag_h = rec.imag_h_in;
    st.prev = i == 0 ? Action::Stop : traj.steps[i - 1].action;
    st.action = rec.action;
    const bool terminal = i + 1 == traj.steps.size();
    st.reward = rewards::total_reward(rec.r_p, rec.r_m, rec.r_f, terminal);
    out.d_delta += rec.r_p;
    out.steps.push_back(std::move(st));
  }
  return out;
}

// ---- data preparation -------------------------------------------------------

namespace {

uint64_t pose_key(const HouseMap& h, AgentPose p) {
  return (static_cast<uint64_t>(h.id) << 24) ^
         (static_cast<uint64_t>(h.index(p.cell.r, p.cell.c)) * 4 +
          static_cast<uint64_t>(p.heading));
}

}  // namespace

std::vector<Tensor> demo_frames(const WorldData& data, int frame_size) {
  std::vector<Tensor> frames;
  std::unordered_set<uint64_t> seen;
  for (const auto& ep : data.episodes) {
    const HouseMap& house = house_by_id(data, ep.house_id);
    AgentPose pose = ep.spawn;
    auto visit = [&](AgentPose p) {
      if (seen.insert(pose_key(house, p)).second)
        frames.push_back(gridhouse::render(house, p, frame_size).tensor());
    };
    visit(pose);
    for (Action a : ep.expert_actions) {
      if (a == Action::Stop) break;
      pose = gridhouse::step(house, pose, a);
      visit(pose);
    }
  }
  return frames;
}

double mean_recon_loss(const ModelBundle& m, const std::vector<Tensor>& frames) {
  check(!frames.empty(), "recon probe: no frames");
  const Tensor eps = Tensor::zeros(Shape{m.mh.cfg.latent});
  double sum = 0.0;
  for (const auto& f : frames) sum += mind::vae_loss(m.ps, m.mh, f, eps, 0.0);
  return sum / static_cast<double>(frames.size());
}

double mean_kl(const ModelBundle& m, const std::vector<Tensor>& frames) {
  check(!frames.empty(), "kl probe: no frames");
  double sum = 0.0;
  for (const auto& f : frames) {
    auto [mu, sigma] = mind::encode(m.ps, m.mh, f);
    double kl = 0.0;
    for (int64_t i = 0; i < mu.numel(); ++i) {
      const double u = mu.at(i);
      const double s = sigma.at(i);
      kl += 0.5 * (u * u + s * s - 1.0) - std::log(s);
    }
    sum += kl;
  }
  return sum / static_cast<double>(frames.size());
}

std::vector<std::vector<LatentTransition>> demo_transitions(
    const ModelBundle& m, const WorldData& data) {
  std::unordered_map<uint64_t, Tensor> mu_cache;
  auto mu_of = [&](const HouseMap& house, AgentPose pose) {
    const uint64_t key = pose_key(house, pose);
    auto it = mu_cache.find(key);
    if (it != mu_cache.end()) return it->second;
    auto obs = gridhouse::render(house, pose, m.mh.cfg.frame_size);
    Tensor mu = mind::encode(m.ps, m.mh, obs.tensor()).first;
    return mu_cache.emplace(key, std::move(mu)).first->second;
  };

  std::vector<std::vector<LatentTransition>> seqs;
  seqs.reserve(data.episodes.size());
  for (const auto& ep : data.episodes) {
    const HouseMap& house = house_by_id(data, ep.house_id);
    auto macros = agent::segment_macros(ep.expert_actions);
    std::vector<LatentTransition> seq;
    seq.reserve(macros.size());
    AgentPose pose = ep.spawn;
    Tensor mu = mu_of(house, pose);
    for (const auto& mac : macros) {
      LatentTransition tr;
      tr.m_in = mu;
      tr.action = mac.action;
      for (int r = 0; r < mac.repeats; ++r)
        pose = gridhouse::step(house, pose, mac.action);
      mu = mu_of(house, pose);  // Stop leaves the pose (and latent) in place
      tr.m_out = mu;
      seq.push_back(std::move(tr));
    }
    seqs.push_back(std::move(seq));
  }
  return seqs;
}

double imagery_nll(const ModelBundle& m,
                   const std::vector<std::vector<LatentTransition>>& seqs) {
  double sum = 0.0;
  int64_t n = 0;
  for (const auto& seq : seqs) {
    mind::ImageryState st = mind::initial_imagery_state(m.mh.cfg);
    for (const auto& tr : seq) {
      auto [mix, st2] = mind::imagery_step(m.ps, m.mh, tr.m_in, tr.action, st);
      sum += mind::mdn_nll(mix, tr.m_out);
      st = st2;
      ++n;
    }
  }
  check(n > 0, "imagery nll: no transitions");
  return sum / static_cast<double>(n);
}

// ---- shared stage plumbing ---------------------------------------------------

namespace {

std::vector<Var> leaves_of(const std::vector<Var>& P,
                           const std::vector<ParamId>& ids) {
  std::vector<Var> out;
  out.reserve(ids.size());
  for (ParamId id : ids) out.push_back(P[static_cast<size_t>(id)]);
  return out;
}

void accumulate(std::vector<Tensor>& acc, const std::vector<Tensor>& g) {
  if (acc.empty()) {
    acc = g;
    return;
  }
  check(acc.size() == g.size(), "gradient accumulation size mismatch");
  for (size_t i = 0; i < acc.size(); ++i)
    for (int64_t j = 0; j < acc[i].numel(); ++j) acc[i].at(j) += g[i].at(j);
}

void scale_grads(std::vector<Tensor>& acc, double k) {
  for (auto& g : acc)
    for (auto& v : g.data) v = static_cast<float>(v * k);
}

void emit(StageResult& res, const MetricsSink& sink, MetricsRow row) {
  if (sink) sink(row);
  res.metrics.push_back(std::move(row));
}

}  // namespace

// ---- stage: vae ---------------------------------------------------------------

StageResult train_vae(ModelBundle& m, const WorldData& data,
                      const VaeConfig& cfg, const MetricsSink& sink) {
  check(cfg.batch >= 1, "train_vae: batch must be >= 1");
  check(cfg.epochs >= 1, "train_vae: epochs must be >= 1");
  check(cfg.beta >= 0.0, "train_vae: beta must be >= 0");
  auto frames = demo_frames(data, m.mh.cfg.frame_size);
  check(!frames.empty(), "train_vae: no demonstration frames");

  const auto trainable = m.ps.ids_with_prefix({"enc.", "dec."});
  ndnet::AdamState opt(m.ps, trainable);
  Rng rng(cfg.seed);
  StageResult res;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const ParamSet snapshot = m.ps;
    std::vector<size_t> order(frames.size());
    std::iota(order.begin(), order.end(), size_t(0));
    rng.shuffle(order);

    double loss_sum = 0.0;
    int batches = 0;
    bool bad = false;
    for (size_t b0 = 0; b0 < order.size() && !bad; b0 += size_t(cfg.batch)) {
      const size_t b1 = std::min(order.size(), b0 + size_t(cfg.batch));
      // Non-finite activations/gradients throw from the tape or optimizer;
      // treat that as divergence and roll back to the epoch snapshot.
      try {
        Tape t;
        auto P = ndnet::emit_params(t, m.ps, trainable);
        std::vector<Var> losses;
        for (size_t i = b0; i < b1; ++i) {
          Tensor eps = Tensor::zeros(Shape{m.mh.cfg.latent});
          for (auto& v : eps.data) v = static_cast<float>(rng.normal());
          losses.push_back(mind::vae_loss_graph(t, m.mh, P,
                                                t.constant(frames[order[i]]),
                                                eps, cfg.beta));
        }
        Var loss = t.scale(losses.size() == 1 ? losses[0]
                                              : t.reduce_sum(t.concat(losses)),
                           1.0f / static_cast<float>(b1 - b0));
        const double lv = t.value(loss).item();
        auto grads = t.backward(loss, leaves_of(P, trainable));
        ndnet::clip_global_norm(grads, cfg.clip);
        ndnet::adam_step(m.ps, opt, grads, cfg.lr);
        loss_sum += lv;
        ++batches;
      } catch (const ContractError&) {
        bad = true;
        break;
      }
    }
    if (bad) {
      m.ps = snapshot;  // keep the last good parameters
      res.aborted = true;
      break;
    }
    MetricsRow row;
    row.stage = "vae";
    row.epoch = epoch;
    row.loss = batches ? loss_sum / batches : 0.0;
    emit(res, sink, std::move(row));
  }
  return res;
}

// ---- stage: imagery ------------------------------------------------------------

StageResult train_imagery(ModelBundle& m, const WorldData& data,
                          const ImageryConfig& cfg, const MetricsSink& sink) {
  check(cfg.batch >= 1, "train_imagery: batch must be >= 1");
  check(cfg.epochs >= 1, "train_imagery: epochs must be >= 1");
  auto seqs = demo_transitions(m, data);
  check(!seqs.empty(), "train_imagery: no demonstration sequences");

  const auto trainable = m.ps.ids_with_prefix({"imag."});
  ndnet::AdamState opt(m.ps, trainable);
  Rng rng(cfg.seed);
  StageResult res;
  const int K = m.mh.cfg.mixtures;
  const int N = m.mh.cfg.latent;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const ParamSet snapshot = m.ps;
    std::vector<size_t> order(seqs.size());
    std::iota(order.begin(), order.end(), size_t(0));
    rng.shuffle(order);

    double nll_sum = 0.0;
    int64_t transitions = 0;
    bool bad = false;
    for (size_t b0 = 0; b0 < order.size() && !bad; b0 += size_t(cfg.batch)) {
      const size_t b1 = std::min(order.size(), b0 + size_t(cfg.batch));
      try {
        Tape t;
        auto P = ndnet::emit_params(t, m.ps, trainable);
        std::vector<Var> terms;
        int64_t count = 0;
        for (size_t i = b0; i < b1; ++i) {
          Var h = t.constant(Tensor::zeros(Shape{m.mh.cfg.imagery_hidden}));
          Var c = h;
          for (const auto& tr : seqs[order[i]]) {
            auto out = mind::imagery_step_graph(t, m.mh, P,
                                                t.constant(tr.m_in), tr.action,
                                                h, c);
            h = out.h;
            c = out.c;
            terms.push_back(
                mind::mdn_nll_graph(t, out.mix, t.constant(tr.m_out), K, N));
            ++count;
          }
        }
        if (terms.empty()) continue;
        Var loss = t.scale(terms.size() == 1 ? terms[0]
                                             : t.reduce_sum(t.concat(terms)),
                           1.0f / static_cast<float>(count));
        const double lv = t.value(loss).item();
        auto grads = t.backward(loss, leaves_of(P, trainable));
        ndnet::clip_global_norm(grads, cfg.clip);
        ndnet::adam_step(m.ps, opt, grads, cfg.lr);
        nll_sum += lv * static_cast<double>(count);
        transitions += count;
      } catch (const ContractError&) {
        bad = true;
        break;
      }
    }
    if (bad) {
      m.ps = snapshot;
      res.aborted = true;
      break;
    }
    MetricsRow row;
    row.stage = "imagery";
    row.epoch = epoch;
    row.loss = transitions ? nll_sum / static_cast<double>(transitions) : 0.0;
    emit(res, sink, std::move(row));
  }
  return res;
}

// ---- stage: behavior cloning ----------------------------------------------------

StageResult train_bc(ModelBundle& m, const WorldData& data, const BCConfig& cfg,
                     const MetricsSink& sink) {
  check(cfg.batch >= 1, "train_bc: batch must be >= 1");
  check(cfg.max_epochs >= 1, "train_bc: max_epochs must be >= 1");
  check(cfg.advance_window >= 1, "train_bc: advance window must be >= 1");
  check(cfg.advance_success > 0.0 && cfg.advance_success <= 1.0 &&
            cfg.advance_accuracy > 0.0 && cfg.advance_accuracy <= 1.0,
        "train_bc: advance thresholds must lie in (0, 1]");
  check(!data.episodes.empty(), "train_bc: no episodes");

  const auto trainable =
      m.ps.ids_with_prefix({"qenc.", "plan.", "ctrl.", "qa."});
  ndnet::AdamState opt(m.ps, trainable);
  Rng rng(cfg.seed);
  agent::FeatureCache cache;
  std::map<std::pair<int, int>, gridhouse::DistanceField> dfields;
  auto d0_of = [&](const Episode& ep) {
    const HouseMap& house = house_by_id(data, ep.house_id);
    auto key = std::make_pair(ep.house_id,
                              house.index(ep.target_cell.r, ep.target_cell.c));
    auto it = dfields.find(key);
    if (it == dfields.end())
      it = dfields
               .emplace(key,
                        gridhouse::compute_distance_field(house, ep.target_cell))
               .first;
    return it->second.at(house, ep.spawn);
  };

  int phase = 0;
  struct WindowEntry {
    bool success;
    int planner_hit, planner_n;
  };
  std::deque<WindowEntry> window;
  StageResult res;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const ParamSet snapshot = m.ps;
    std::vector<size_t> order(data.episodes.size());
    std::iota(order.begin(), order.end(), size_t(0));
    rng.shuffle(order);

    double loss_sum = 0.0;
    int batches = 0;
    int ep_count = 0, ep_success = 0, qa_hits = 0;
    double d0_sum = 0.0;
    bool bad = false;

    for (size_t b0 = 0; b0 < order.size() && !bad; b0 += size_t(cfg.batch)) {
      const size_t b1 = std::min(order.size(), b0 + size_t(cfg.batch));

      // Roll out the demonstrations first (frozen parameters), then build
      // one pooled loss over every decision in the batch.
      std::vector<BcEpisode> bces;
      for (size_t i = b0; i < b1; ++i) {
        const Episode& base = data.episodes[order[i]];
        const HouseMap& house = house_by_id(data, base.house_id);
        const int primitives =
            static_cast<int>(base.expert_actions.size()) - 1;
        const int offset = std::min(
            curriculum_offset(phase, cfg.curriculum_step), primitives);
        Episode ep = truncate_episode(house, base, offset);
        RunOptions ro;
        ro.mode = RunMode::DemoForced;
        ro.seed = rng.next_u64();
        ro.use_imagery = cfg.use_imagery;
        ro.cache = &cache;
        auto traj = agent::run_episode(m.ps, m.ah, m.mh, house, ep, ro);
        bces.push_back(make_bc_episode(traj, ep));
        d0_sum += d0_of(ep);
      }

      try {
        Tape t;
        auto P = ndnet::emit_params(t, m.ps, trainable);
        std::vector<Var> terms;
        int decisions = 0;
        for (const auto& bce : bces) {
          auto bt = bc_loss_graph(t, m.ah, P, bce);
          terms.push_back(bt.planner_nll);
          decisions += bt.planner_n;
          if (bt.ctrl_n > 0) {
            terms.push_back(bt.ctrl_bce);
            decisions += bt.ctrl_n;
          }
          if (bt.qa_n > 0) {
            terms.push_back(bt.qa_ce);
            decisions += bt.qa_n;
          }
          const bool success = bt.planner_hit == bt.planner_n &&
                               bt.ctrl_hit == bt.ctrl_n;
          window.push_back({success, bt.planner_hit, bt.planner_n});
          while (static_cast<int>(window.size()) > cfg.advance_window)
            window.pop_front();
          ++ep_count;
          ep_success += success ? 1 : 0;
          qa_hits += bt.qa_hit;
        }
        Var loss = t.scale(terms.size() == 1 ? terms[0]
                                             : t.reduce_sum(t.concat(terms)),
                           1.0f / static_cast<float>(decisions));
        const double lv = t.value(loss).item();
        auto grads = t.backward(loss, leaves_of(P, trainable));
        ndnet::clip_global_norm(grads, cfg.clip);
        ndnet::adam_step(m.ps, opt, grads, cfg.lr);
        loss_sum += lv;
        ++batches;
      } catch (const ContractError&) {
        bad = true;
        break;
      }

      // The curriculum only moves forward, and only on a full window.
      if (static_cast<int>(window.size()) >= cfg.advance_window) {
        int succ = 0, hit = 0, n = 0;
        for (const auto& w : window) {
          succ += w.success ? 1 : 0;
          hit += w.planner_hit;
          n += w.planner_n;
        }
        const double srate = static_cast<double>(succ) /
                             static_cast<double>(window.size());
        const double acc =
            n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
        if (srate >= cfg.advance_success && acc >= cfg.advance_accuracy) {
          ++phase;
          window.clear();
        }
      }
    }
    if (bad) {
      m.ps = snapshot;
      res.aborted = true;
      break;
    }
    MetricsRow row;
    row.stage = "bc";
    row.epoch = epoch;
    row.loss = batches ? loss_sum / batches : 0.0;
    row.success_rate =
        ep_count ? static_cast<double>(ep_success) / ep_count : 0.0;
    row.mean_d_delta = ep_count ? d0_sum / ep_count : 0.0;
    row.qa_accuracy = ep_count ? static_cast<double>(qa_hits) / ep_count : 0.0;
    emit(res, sink, std::move(row));
    res.final_phase = phase;
  }
  return res;
}

// ---- stage: actor-critic fine-tuning ---------------------------------------------

StageResult train_rl(ModelBundle& m, const WorldData& data, const RLConfig& cfg,
                     const MetricsSink& sink) {
  check(cfg.workers >= 1, "train_rl: need at least one rollout worker");
  check(cfg.gamma >= 0.0 && cfg.gamma <= 1.0 && cfg.lambda >= 0.0 &&
            cfg.lambda <= 1.0,
        "train_rl: gamma and lambda must lie in [0, 1]");
  check(cfg.updates >= 1, "train_rl: updates must be >= 1");
  check(cfg.episodes_per_update >= 1,
        "train_rl: episodes_per_update must be >= 1");
  check(!data.episodes.empty(), "train_rl: no episodes");

  // Fine-tuning touches the planner only; everything else stays frozen.
  const auto trainable = m.ps.ids_with_prefix({"plan."});
  ndnet::AdamState opt(m.ps, trainable);
  agent::FeatureCache cache;
  std::mutex update_lock;  // serializes gradient application
  StageResult res;

  const int epu = cfg.episodes_per_update;
  Rng seeder(cfg.seed);

  auto rollout_options = [&](uint64_t seed) {
    RunOptions ro;
    ro.mode = RunMode::Sample;
    ro.seed = seed;
    ro.use_imagery = cfg.use_imagery;
    ro.compute_rewards = true;
    ro.use_planned_reward = cfg.use_planned_reward;
    ro.rcfg.lambda_f = cfg.lambda_f;
    ro.rcfg.n_max = cfg.n_max;
    ro.n_max = cfg.n_max;
    ro.planner_budget = cfg.planner_budget;
    ro.cache = &cache;
    return ro;
  };

  // Non-finite values throw from the tape's finiteness checks (or from the
  // optimizer), so divergence shows up as a ContractError here; the caller
  // turns that into an abort that restores the pre-update parameters.
  auto episode_grads = [&](const ParamSet& ps, const RolloutView& view,
                           AcLoss& ac_out, double& loss_value) {
    Tape t;
    auto P = ndnet::emit_params(t, ps, trainable);
    ac_out = actor_critic_loss_graph(t, m.ah, P, view, cfg);
    loss_value = t.value(ac_out.loss).item();
    return t.backward(ac_out.loss, leaves_of(P, trainable));
  };

  for (int u = 0; u < cfg.updates && !res.aborted; ++u) {
    const ParamSet snapshot = m.ps;
    std::vector<uint64_t> slot_seeds(static_cast<size_t>(epu));
    for (int i = 0; i < epu; ++i)
      slot_seeds[size_t(i)] =
          seeder.derive(static_cast<uint64_t>(u) * static_cast<uint64_t>(epu) +
                        static_cast<uint64_t>(i) + 1)
              .next_u64();

    double loss_sum = 0.0, d_delta_sum = 0.0;
    int64_t step_sum = 0;
    int reached = 0, correct = 0;

    if (!cfg.asynchronous) {
      // Synchronous mode: workers share the frozen parameters, slots are
      // seeded individually, and aggregation runs in slot order, so the
      // result is independent of the worker count.
      std::vector<RolloutView> views(static_cast<size_t>(epu));
      const int nthreads = std::max(1, std::min(cfg.workers, epu));
      std::atomic<int> next{0};
      auto work = [&]() {
        for (int slot = next.fetch_add(1); slot < epu;
             slot = next.fetch_add(1)) {
          const Episode& ep =
              data.episodes[(static_cast<size_t>(u) * size_t(epu) +
                             static_cast<size_t>(slot)) %
                            data.episodes.size()];
          const HouseMap& house = house_by_id(data, ep.house_id);
          auto traj = agent::run_episode(m.ps, m.ah, m.mh, house, ep,
                                         rollout_options(slot_seeds[size_t(slot)]));
          views[size_t(slot)] = make_rollout_view(traj, ep);
        }
      };
      std::vector<std::thread> pool;
      for (int w = 1; w < nthreads; ++w) pool.emplace_back(work);
      work();
      for (auto& th : pool) th.join();

      std::vector<Tensor> acc;
      bool bad = false;
      try {
        for (const auto& view : views) {
          AcLoss ac;
          double lv = 0.0;
          auto g = episode_grads(m.ps, view, ac, lv);
          accumulate(acc, g);
          loss_sum += lv;
          step_sum += ac.steps;
          d_delta_sum += view.d_delta;
          reached += view.reached_target ? 1 : 0;
          correct += view.answer_correct ? 1 : 0;
        }
        if (step_sum > 0) {
          scale_grads(acc, 1.0 / static_cast<double>(step_sum));
          ndnet::clip_global_norm(acc, cfg.clip);
          ndnet::adam_step(m.ps, opt, acc, cfg.lr);
        }
      } catch (const ContractError&) {
        bad = true;
      }
      if (bad) {
        m.ps = snapshot;
        res.aborted = true;
        break;
      }
    } else {
      // Asynchronous mode: each worker snapshots the parameters, rolls out
      // one episode, and applies its own update under the lock (bounded
      // staleness of one in-flight update per worker).
      std::atomic<int> next{0};
      std::atomic<bool> bad{false};
      const int nthreads = std::max(1, std::min(cfg.workers, epu));
      std::mutex stat_lock;
      auto work = [&]() {
        for (int slot = next.fetch_add(1); slot < epu && !bad.load();
             slot = next.fetch_add(1)) {
          ParamSet snap;
          {
            std::lock_guard<std::mutex> g(update_lock);
            snap = m.ps;
          }
          const Episode& ep =
              data.episodes[(static_cast<size_t>(u) * size_t(epu) +
                             static_cast<size_t>(slot)) %
                            data.episodes.size()];
          const HouseMap& house = house_by_id(data, ep.house_id);
          AcLoss ac;
          double lv = 0.0;
          std::vector<Tensor> g;
          RolloutView view;
          try {
            auto traj = agent::run_episode(
                snap, m.ah, m.mh, house, ep,
                rollout_options(slot_seeds[size_t(slot)]));
            view = make_rollout_view(traj, ep);
            g = episode_grads(snap, view, ac, lv);
            scale_grads(g, 1.0 / std::max(1, ac.steps));
            ndnet::clip_global_norm(g, cfg.clip);
            std::lock_guard<std::mutex> lk(update_lock);
            ndnet::adam_step(m.ps, opt, g, cfg.lr);
          } catch (const ContractError&) {
            bad.store(true);
            return;
          }
          {
            std::lock_guard<std::mutex> lk(stat_lock);
            loss_sum += lv;
            step_sum += ac.steps;
            d_delta_sum += view.d_delta;
            reached += view.reached_target ? 1 : 0;
            correct += view.answer_correct ? 1 : 0;
          }
        }
      };
      std::vector<std::thread> pool;
      for (int w = 1; w < nthreads; ++w) pool.emplace_back(work);
      work();
      for (auto& th : pool) th.join();
      if (bad.load()) {
        m.ps = snapshot;
        res.aborted = true;
        break;
      }
    }

    MetricsRow row;
    row.stage = "rl";
    row.epoch = u;
    row.loss = step_sum ? loss_sum / static_cast<double>(step_sum) : 0.0;
    row.success_rate = static_cast<double>(reached) / epu;
    row.mean_d_delta = d_delta_sum / epu;
    row.qa_accuracy = static_cast<double>(correct) / epu;
    emit(res, sink, std::move(row));
  }
  return res;
}

}  // namespace mindhouse::trainer
