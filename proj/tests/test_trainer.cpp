#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mindhouse/ndnet/grad_check.hpp"
#include "mindhouse/ndnet/optim.hpp"
#include "mindhouse/trainer/train.hpp"

using namespace mindhouse;
using namespace mindhouse::trainer;
using agent::RunMode;
using agent::RunOptions;
using gridhouse::Action;
using ndnet::ParamSet;
using ndnet::Shape;
using ndnet::Tensor;
using ndnet::Var;

namespace {

mind::MindConfig tiny_mind_cfg() {
  mind::MindConfig cfg;
  cfg.frame_size = 8;
  cfg.latent = 4;
  cfg.enc_channels = {4, 6, 6, 8};
  cfg.dec_base = 8;
  cfg.imagery_hidden = 6;
  cfg.mixtures = 3;
  return cfg;
}

agent::AgentConfig tiny_agent_cfg() {
  agent::AgentConfig cfg;
  cfg.question_embed = 4;
  cfg.q_dim = 6;
  cfg.planner_hidden = 8;
  cfg.controller_hidden = 6;
  cfg.qa_hidden = 6;
  return cfg;
}

WorldData tiny_world(uint64_t house_seed, int episodes, int spawn_k) {
  WorldData data;
  data.houses.push_back(gridhouse::generate_house(house_seed, 2, 9));
  data.vocab = eqagen::build_vocabulary(data.houses);
  for (int i = 0; i < episodes; ++i)
    data.episodes.push_back(
        eqagen::generate_episode(data.houses[0], data.vocab,
                                 static_cast<uint64_t>(i) + 1, spawn_k));
  return data;
}

ModelBundle tiny_model(const WorldData& data, uint64_t seed = 99) {
  return build_model(tiny_mind_cfg(), tiny_agent_cfg(), data.vocab, seed);
}

}  // namespace

TEST_CASE("gae: frozen three-step oracle") {
  auto adv = gae_advantages({1.0, 0.0, 1.0}, {0.5, 0.5, 0.5, 0.0}, 0.9, 0.8);
  REQUIRE(adv.size() == 3);
  CHECK(adv[0] == doctest::Approx(1.1732).epsilon(1e-12));
  CHECK(adv[1] == doctest::Approx(0.31).epsilon(1e-12));
  CHECK(adv[2] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("gae: reward-to-go identity and single-step case") {
  std::vector<double> r = {2.0, -1.0, 0.5, 3.0};
  auto adv = gae_advantages(r, {0, 0, 0, 0, 0}, 1.0, 1.0);
  double togo = 0;
  for (size_t i = r.size(); i-- > 0;) {
    togo += r[i];
    CHECK(adv[i] == togo);  // bitwise: same accumulation order
  }
  auto one = gae_advantages({2.5}, {0.7, 0.0}, 0.99, 0.95);
  CHECK(one[0] == doctest::Approx(2.5 - 0.7).epsilon(1e-15));
}

TEST_CASE("gae: recursion equals the direct double sum") {
  Rng rng(404);
  for (int trial = 0; trial < 200; ++trial) {
    const size_t n = 1 + rng.uniform_index(20);
    std::vector<double> r(n), v(n + 1);
    for (auto& x : r) x = rng.normal();
    for (auto& x : v) x = rng.normal();
    const double gamma = rng.uniform();
    const double lambda = rng.uniform();
    auto adv = gae_advantages(r, v, gamma, lambda);
    for (size_t t = 0; t < n; ++t) {
      double direct = 0.0;
      for (size_t l = t; l < n; ++l) {
        const double delta = r[l] + gamma * v[l + 1] - v[l];
        direct += std::pow(gamma * lambda, static_cast<double>(l - t)) * delta;
      }
      CHECK(std::abs(adv[t] - direct) < 1e-10);
    }
  }
}

TEST_CASE("gae: input validation") {
  CHECK_THROWS_AS(gae_advantages({1.0}, {0.0}, 0.9, 0.9), ContractError);
  CHECK_THROWS_AS(gae_advantages({1.0}, {0.0, 0.0}, 1.5, 0.9), ContractError);
  CHECK_THROWS_AS(gae_advantages({1.0}, {0.0, 0.0}, 0.9, -0.1), ContractError);
}

TEST_CASE("discounted returns oracle") {
  auto g = discounted_returns({1.0, 2.0, 3.0}, 0.5, 0.0);
  CHECK(g[0] == doctest::Approx(2.75).epsilon(1e-15));
  CHECK(g[1] == doctest::Approx(3.5).epsilon(1e-15));
  CHECK(g[2] == doctest::Approx(3.0).epsilon(1e-15));
  auto boot = discounted_returns({1.0}, 0.9, 10.0);
  CHECK(boot[0] == doctest::Approx(10.0).epsilon(1e-15));
}

TEST_CASE("curriculum offsets: multiples of the backtrack step") {
  CHECK(curriculum_offset(0) == 5);
  CHECK(curriculum_offset(3) == 20);
  CHECK(curriculum_offset(1, 3) == 6);
  for (int p = 0; p < 10; ++p) CHECK(curriculum_offset(p) % 5 == 0);
  CHECK_THROWS_AS(curriculum_offset(-1), ContractError);
}

TEST_CASE("truncate_episode: re-spawn along the expert path") {
  WorldData data = tiny_world(3, 1, 10);
  const auto& house = data.houses[0];
  const auto& ep = data.episodes[0];
  const int primitives = static_cast<int>(ep.expert_actions.size()) - 1;
  REQUIRE(primitives >= 6);

  auto cut = truncate_episode(house, ep, 5);
  CHECK(static_cast<int>(cut.expert_actions.size()) == 6);  // 5 + Stop
  CHECK(cut.spawn_k == 5);
  CHECK(cut.expert_actions.back() == Action::Stop);

  // Replaying the suffix from the new spawn lands on the target pose.
  gridhouse::AgentPose pose = cut.spawn;
  for (Action a : cut.expert_actions)
    if (a != Action::Stop) pose = gridhouse::step(house, pose, a);
  CHECK(pose.cell == ep.target_cell);
  CHECK(pose.heading == ep.target_heading);

  // Offsets at or past the full length leave the episode unchanged.
  CHECK(truncate_episode(house, ep, primitives) == ep);
  CHECK(truncate_episode(house, ep, primitives + 7) == ep);

  auto zero = truncate_episode(house, ep, 0);
  CHECK(zero.expert_actions.size() == 1);
  CHECK(zero.spawn.cell == ep.target_cell);
  CHECK_THROWS_AS(truncate_episode(house, ep, -1), ContractError);
}

TEST_CASE("bc loss: uniform-policy oracles with zeroed parameters") {
  WorldData data = tiny_world(5, 1, 4);
  ModelBundle m = tiny_model(data);
  for (ndnet::ParamId id :
       m.ps.ids_with_prefix({"qenc.", "plan.", "ctrl.", "qa."}))
    for (auto& v : m.ps.value(id).data) v = 0.f;

  BcEpisode ep;
  ep.question = {0, 1};
  ep.answer = 1;
  Rng d(8);
  auto rand_feat = [&]() {
    Tensor f = Tensor::zeros(Shape{m.ah.cfg.feat_dim});
    for (auto& v : f.data) v = static_cast<float>(d.normal());
    return f;
  };
  BcEpisode::Step s0;
  s0.feat = rand_feat();
  s0.imag_h = Tensor::zeros(Shape{m.ah.cfg.imagery_hidden});
  s0.prev = Action::Stop;
  s0.action = Action::Forward;
  s0.bits = {1, 0};
  s0.ctrl_feats = {rand_feat(), rand_feat()};
  BcEpisode::Step s1 = s0;
  s1.prev = Action::Forward;
  s1.action = Action::Stop;
  s1.bits.clear();
  s1.ctrl_feats.clear();
  ep.steps = {s0, s1};
  for (auto& s : ep.final_slots) s = rand_feat();

  ndnet::Tape t;
  auto P = ndnet::emit_params(t, m.ps, {});
  auto terms = bc_loss_graph(t, m.ah, P, ep);
  CHECK(terms.planner_n == 2);
  CHECK(terms.ctrl_n == 2);
  CHECK(terms.qa_n == 1);
  const double ln4 = std::log(4.0), ln2 = std::log(2.0);
  CHECK(t.value(terms.planner_nll).item() ==
        doctest::Approx(2 * ln4).epsilon(1e-6));
  CHECK(t.value(terms.ctrl_bce).item() ==
        doctest::Approx(2 * ln2).epsilon(1e-6));
  CHECK(t.value(terms.qa_ce).item() ==
        doctest::Approx(std::log(static_cast<double>(m.ah.cfg.num_answers)))
            .epsilon(1e-6));
}

TEST_CASE("bc loss: finite-difference gradient check") {
  ParamSet psf;
  Rng rng(41);
  agent::AgentConfig cfg = tiny_agent_cfg();
  cfg.question_embed = 3;
  cfg.q_dim = 4;
  cfg.planner_hidden = 5;
  cfg.controller_hidden = 4;
  cfg.qa_hidden = 4;
  cfg.vocab_words = 5;
  cfg.num_answers = 3;
  cfg.feat_dim = 3;
  cfg.imagery_hidden = 3;
  agent::AgentHandles ah = agent::build_agent(psf, cfg, rng);
  auto ps = psf.cast<double>();

  Rng d(6);
  auto rf = [&](int n) {
    Tensor f = Tensor::zeros(Shape{n});
    for (auto& v : f.data) v = static_cast<float>(d.normal());
    return f;
  };
  BcEpisode ep;
  ep.question = {0, 3, 1};
  ep.answer = 2;
  BcEpisode::Step s0;
  s0.feat = rf(3);
  s0.imag_h = rf(3);
  s0.prev = Action::Stop;
  s0.action = Action::TurnLeft;
  s0.bits = {1, 1, 0};
  s0.ctrl_feats = {rf(3), rf(3), rf(3)};
  BcEpisode::Step s1;
  s1.feat = rf(3);
  s1.imag_h = rf(3);
  s1.prev = Action::TurnLeft;
  s1.action = Action::Stop;
  ep.steps = {s0, s1};
  for (auto& s : ep.final_slots) s = rf(3);

  auto rep = ndnet::grad_check(
      ps, ps.ids_with_prefix({"qenc.", "plan.", "ctrl.", "qa."}),
      [&](ndnet::TapeT<double>& t, std::vector<Var>& vars) {
        auto terms = bc_loss_graph(t, ah, vars, ep);
        const double n =
            static_cast<double>(terms.planner_n + terms.ctrl_n + terms.qa_n);
        return t.scale(
            t.add(t.add(terms.planner_nll, terms.ctrl_bce), terms.qa_ce),
            1.0 / n);
      },
      1e-5);
  INFO(rep.worst_param, " rel err ", rep.max_rel_error);
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("rollout view: reward wiring and the zero-reward case") {
  WorldData data = tiny_world(7, 1, 5);
  ModelBundle m = tiny_model(data);
  const auto& house = data.houses[0];
  const auto& ep = data.episodes[0];

  RunOptions ro;
  ro.mode = RunMode::DemoForced;
  ro.compute_rewards = true;
  auto traj = agent::run_episode(m.ps, m.ah, m.mh, house, ep, ro);
  auto view = make_rollout_view(traj, ep);
  REQUIRE(view.steps.size() == traj.steps.size());
  CHECK(view.reached_target);
  double rp = 0;
  for (size_t i = 0; i < view.steps.size(); ++i) {
    const auto& rec = traj.steps[i];
    const bool last = i + 1 == view.steps.size();
    CHECK(view.steps[i].reward ==
          doctest::Approx(rec.r_p + rec.r_m + (last ? rec.r_f : 0.0)));
    if (i > 0) CHECK(view.steps[i].prev == traj.steps[i - 1].action);
    rp += rec.r_p;
  }
  CHECK(view.d_delta == doctest::Approx(rp));

  // Zeroed progressive/planned rewards and an incorrect answer leave every
  // total reward at exactly zero.
  agent::TrajectoryRecord stub = traj;
  for (auto& st : stub.steps) {
    st.r_p = 0;
    st.r_m = 0;
    st.r_f = 0;
  }
  auto zero_view = make_rollout_view(stub, ep);
  for (const auto& st : zero_view.steps) CHECK(st.reward == 0.0);
}

TEST_CASE("actor-critic loss: pinned-estimator gradient check") {
  ParamSet psf;
  Rng rng(17);
  agent::AgentConfig cfg = tiny_agent_cfg();
  cfg.question_embed = 3;
  cfg.q_dim = 4;
  cfg.planner_hidden = 5;
  cfg.controller_hidden = 4;
  cfg.qa_hidden = 4;
  cfg.vocab_words = 5;
  cfg.num_answers = 3;
  cfg.feat_dim = 3;
  cfg.imagery_hidden = 3;
  agent::AgentHandles ah = agent::build_agent(psf, cfg, rng);
  auto ps = psf.cast<double>();

  Rng d(21);
  auto rf = [&](int n) {
    Tensor f = Tensor::zeros(Shape{n});
    for (auto& v : f.data) v = static_cast<float>(d.normal());
    return f;
  };
  RolloutView view;
  view.question = {1, 2};
  for (int i = 0; i < 3; ++i) {
    RolloutView::Step st;
    st.feat = rf(3);
    st.imag_h = rf(3);
    st.prev = i == 0 ? Action::Stop : Action::Forward;
    st.action = i == 2 ? Action::Stop : Action::Forward;
    st.reward = 0.5 * i;
    view.steps.push_back(std::move(st));
  }
  const std::vector<double> adv = {0.4, -0.3, 1.1};
  const std::vector<double> target = {0.9, 0.2, -0.1};
  RLConfig rl;
  rl.value_weight = 0.5;
  rl.entropy_weight = 0.01;

  auto rep = ndnet::grad_check(
      ps, ps.ids_with_prefix({"qenc.", "plan."}),
      [&](ndnet::TapeT<double>& t, std::vector<Var>& vars) {
        auto ac = actor_critic_loss_graph(t, ah, vars, view, rl, &adv, &target);
        return t.scale(ac.loss, 1.0 / ac.steps);
      },
      1e-5);
  INFO(rep.worst_param, " rel err ", rep.max_rel_error);
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("actor-critic: positive advantage raises the action's probability "
          "and leaves the value head out of the policy term") {
  WorldData data = tiny_world(9, 1, 4);
  ModelBundle m = tiny_model(data);
  const std::vector<int> question = {0, 2};

  Rng d(33);
  Tensor feat = Tensor::zeros(Shape{m.ah.cfg.feat_dim});
  for (auto& v : feat.data) v = static_cast<float>(d.normal());
  Tensor ih = Tensor::zeros(Shape{m.ah.cfg.imagery_hidden});

  auto probe = [&]() {
    ndnet::Tape t;
    auto P = ndnet::emit_params(t, m.ps, {});
    Var q = agent::encode_question_graph(t, m.ah, P, question);
    Var h = t.constant(Tensor::zeros(Shape{m.ah.cfg.planner_hidden}));
    auto pl = agent::planner_step_graph(t, m.ah, P, t.constant(feat), q,
                                        Action::Stop, t.constant(ih), h, h);
    return std::make_pair(t.value(pl.log_policy).at(0),
                          t.value(pl.value).item());
  };
  auto [logp_before, v0] = probe();

  RolloutView view;
  view.question = question;
  RolloutView::Step st;
  st.feat = feat;
  st.imag_h = ih;
  st.prev = Action::Stop;
  st.action = Action::Forward;
  st.reward = static_cast<double>(v0) + 1.0;  // A_0 = +1 exactly
  view.steps.push_back(st);

  RLConfig rl;
  rl.value_weight = 0.0;
  rl.entropy_weight = 0.0;
  rl.gamma = 1.0;
  rl.lambda = 1.0;

  const auto plan_ids = m.ps.ids_with_prefix({"plan."});
  ndnet::Tape t;
  auto P = ndnet::emit_params(t, m.ps, plan_ids);
  auto ac = actor_critic_loss_graph(t, m.ah, P, view, rl);
  std::vector<Var> leaves;
  for (auto id : plan_ids) leaves.push_back(P[static_cast<size_t>(id)]);
  auto grads = t.backward(ac.loss, leaves);

  bool any_policy_grad = false;
  for (size_t i = 0; i < plan_ids.size(); ++i) {
    const bool is_value_head = plan_ids[i] == m.ah.plan_value.w ||
                               plan_ids[i] == m.ah.plan_value.b;
    double norm = 0;
    for (float g : grads[i].data) norm += std::abs(g);
    if (is_value_head) {
      CHECK(norm == 0.0);  // advantage is a constant in the policy term
    } else {
      any_policy_grad = any_policy_grad || norm > 0;
    }
  }
  CHECK(any_policy_grad);

  for (size_t i = 0; i < plan_ids.size(); ++i) {
    auto& p = m.ps.value(plan_ids[i]);
    for (int64_t j = 0; j < p.numel(); ++j)
      p.at(j) -= 0.05f * grads[i].at(j);
  }
  auto [logp_after, v1] = probe();
  CHECK(logp_after > logp_before);
}

TEST_CASE("train_vae: runs, logs metrics, and is deterministic") {
  WorldData data = tiny_world(11, 4, 4);
  VaeConfig cfg;
  cfg.epochs = 2;
  cfg.batch = 8;
  cfg.seed = 5;

  ModelBundle a = tiny_model(data);
  int sunk = 0;
  auto res1 = train_vae(a, data, cfg, [&](const MetricsRow&) { ++sunk; });
  REQUIRE(res1.metrics.size() == 2);
  CHECK(sunk == 2);
  CHECK_FALSE(res1.aborted);
  for (const auto& row : res1.metrics) {
    CHECK(row.stage == "vae");
    CHECK(std::isfinite(row.loss));
    CHECK(row.loss > 0.0);
  }
  CHECK(std::isfinite(mean_recon_loss(a, demo_frames(data, 8))));

  ModelBundle b = tiny_model(data);
  auto res2 = train_vae(b, data, cfg);
  REQUIRE(res2.metrics.size() == res1.metrics.size());
  for (size_t i = 0; i < res1.metrics.size(); ++i)
    CHECK(res1.metrics[i].loss == res2.metrics[i].loss);

  CHECK(res1.metrics[0].to_json_line().find("\"stage\":\"vae\"") !=
        std::string::npos);
}

TEST_CASE("train_vae: divergence aborts and rolls back") {
  WorldData data = tiny_world(11, 2, 3);
  ModelBundle m = tiny_model(data);
  const Tensor before = m.ps.value(m.ps.ids_with_prefix({"enc."})[0]);
  VaeConfig cfg;
  cfg.epochs = 3;
  cfg.batch = 2;
  cfg.lr = 1e14;  // guarantees an overflow within the first epochs
  auto res = train_vae(m, data, cfg);
  CHECK(res.aborted);
  for (auto id : m.ps.ids_with_prefix({"enc.", "dec."}))
    CHECK(m.ps.value(id).all_finite());
  (void)before;
}

TEST_CASE("train_imagery: runs and is deterministic") {
  WorldData data = tiny_world(13, 4, 5);
  ImageryConfig cfg;
  cfg.epochs = 2;
  cfg.batch = 2;
  cfg.seed = 9;

  ModelBundle a = tiny_model(data);
  auto seqs = demo_transitions(a, data);
  REQUIRE(seqs.size() == 4);
  for (const auto& s : seqs) CHECK(!s.empty());
  const double before = imagery_nll(a, seqs);

  auto res1 = train_imagery(a, data, cfg);
  REQUIRE(res1.metrics.size() == 2);
  CHECK_FALSE(res1.aborted);
  for (const auto& row : res1.metrics) CHECK(std::isfinite(row.loss));
  CHECK(std::isfinite(imagery_nll(a, demo_transitions(a, data))));
  CHECK(std::isfinite(before));

  ModelBundle b = tiny_model(data);
  auto res2 = train_imagery(b, data, cfg);
  for (size_t i = 0; i < res1.metrics.size(); ++i)
    CHECK(res1.metrics[i].loss == res2.metrics[i].loss);
}

TEST_CASE("train_bc: runs the curriculum and is deterministic") {
  WorldData data = tiny_world(15, 6, 6);
  BCConfig cfg;
  cfg.max_epochs = 2;
  cfg.batch = 3;
  cfg.advance_window = 6;
  cfg.seed = 3;

  ModelBundle a = tiny_model(data);
  auto res1 = train_bc(a, data, cfg);
  REQUIRE(res1.metrics.size() == 2);
  CHECK_FALSE(res1.aborted);
  CHECK(res1.final_phase >= 0);
  for (const auto& row : res1.metrics) {
    CHECK(row.stage == "bc");
    CHECK(std::isfinite(row.loss));
    CHECK(row.success_rate >= 0.0);
    CHECK(row.success_rate <= 1.0);
    CHECK(row.qa_accuracy >= 0.0);
    CHECK(row.qa_accuracy <= 1.0);
    CHECK(row.mean_d_delta >= 0.0);
  }

  ModelBundle b = tiny_model(data);
  auto res2 = train_bc(b, data, cfg);
  for (size_t i = 0; i < res1.metrics.size(); ++i) {
    CHECK(res1.metrics[i].loss == res2.metrics[i].loss);
    CHECK(res1.metrics[i].success_rate == res2.metrics[i].success_rate);
  }
}

TEST_CASE("train_rl: deterministic across runs and worker counts") {
  WorldData data = tiny_world(17, 3, 4);
  RLConfig cfg;
  cfg.updates = 2;
  cfg.episodes_per_update = 4;
  cfg.n_max = 10;
  cfg.planner_budget = 10;
  cfg.seed = 21;
  cfg.workers = 1;

  ModelBundle a = tiny_model(data);
  auto res1 = train_rl(a, data, cfg);
  REQUIRE(res1.metrics.size() == 2);
  CHECK_FALSE(res1.aborted);
  for (const auto& row : res1.metrics) {
    CHECK(row.stage == "rl");
    CHECK(std::isfinite(row.loss));
    CHECK(row.success_rate >= 0.0);
    CHECK(row.qa_accuracy <= 1.0);
  }

  ModelBundle b = tiny_model(data);
  auto res2 = train_rl(b, data, cfg);
  ModelBundle c = tiny_model(data);
  RLConfig threaded = cfg;
  threaded.workers = 3;
  auto res3 = train_rl(c, data, threaded);
  for (size_t i = 0; i < res1.metrics.size(); ++i) {
    CHECK(res1.metrics[i].loss == res2.metrics[i].loss);
    CHECK(res1.metrics[i].mean_d_delta == res2.metrics[i].mean_d_delta);
    CHECK(res1.metrics[i].loss == res3.metrics[i].loss);
    CHECK(res1.metrics[i].mean_d_delta == res3.metrics[i].mean_d_delta);
  }

  RLConfig bad = cfg;
  bad.workers = 0;
  ModelBundle d = tiny_model(data);
  CHECK_THROWS_AS(train_rl(d, data, bad), ContractError);
  bad = cfg;
  bad.gamma = 1.5;
  CHECK_THROWS_AS(train_rl(d, data, bad), ContractError);
}

TEST_CASE("train_rl: asynchronous mode completes with finite metrics") {
  WorldData data = tiny_world(19, 2, 3);
  RLConfig cfg;
  cfg.updates = 1;
  cfg.episodes_per_update = 3;
  cfg.n_max = 8;
  cfg.planner_budget = 8;
  cfg.workers = 2;
  cfg.asynchronous = true;
  ModelBundle m = tiny_model(data);
  auto res = train_rl(m, data, cfg);
  REQUIRE(res.metrics.size() == 1);
  CHECK(std::isfinite(res.metrics[0].loss));
  for (auto id : m.ps.ids_with_prefix({"plan."}))
    CHECK(m.ps.value(id).all_finite());
}

TEST_CASE("world data: missing house id throws") {
  WorldData data = tiny_world(23, 1, 3);
  CHECK_THROWS_AS(house_by_id(data, 999), ContractError);
}
