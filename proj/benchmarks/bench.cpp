// Microbenchmarks for the hot paths: first-person rendering, pose-graph BFS,
// the encoder forward pass, one VAE training step (forward + backward), one
// imagery step, and a full greedy episode.

#include <benchmark/benchmark.h>

#include "mindhouse/agent/agent.hpp"
#include "mindhouse/eqagen/eqagen.hpp"
#include "mindhouse/gridhouse/render.hpp"
#include "mindhouse/mind/mind.hpp"
#include "mindhouse/ndnet/optim.hpp"
#include "mindhouse/trainer/train.hpp"

using namespace mindhouse;

namespace {

struct Fixture {
  gridhouse::HouseMap house = gridhouse::generate_house(21, 4, 15);
  eqagen::Vocabulary vocab = eqagen::build_vocabulary({house});
  eqagen::Episode episode = eqagen::generate_episode(house, vocab, 3, 10);
  trainer::ModelBundle model;

  Fixture() {
    mind::MindConfig mc;
    mc.frame_size = 32;
    mc.latent = 16;
    mc.enc_channels = {8, 16, 16, 32};
    mc.dec_base = 32;
    mc.imagery_hidden = 32;
    mc.mixtures = 5;
    agent::AgentConfig ac;
    ac.question_embed = 16;
    ac.q_dim = 32;
    ac.planner_hidden = 64;
    ac.controller_hidden = 32;
    ac.qa_hidden = 32;
    model = trainer::build_model(mc, ac, vocab, 7);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

static void BM_Render(benchmark::State& state) {
  auto& f = fixture();
  const gridhouse::AgentPose pose = f.episode.spawn;
  for (auto _ : state) {
    auto obs = gridhouse::render(f.house, pose,
                                 static_cast<int>(state.range(0)));
    benchmark::DoNotOptimize(obs.rgb.data());
  }
}
BENCHMARK(BM_Render)->Arg(32)->Arg(64);

static void BM_DistanceFieldBfs(benchmark::State& state) {
  auto& f = fixture();
  for (auto _ : state) {
    auto field = gridhouse::compute_distance_field(f.house,
                                                   f.episode.target_cell);
    benchmark::DoNotOptimize(field.dist.data());
  }
}
BENCHMARK(BM_DistanceFieldBfs);

static void BM_ShortestPath(benchmark::State& state) {
  auto& f = fixture();
  for (auto _ : state) {
    auto path = gridhouse::shortest_path(f.house, f.episode.spawn,
                                         f.episode.target_cell,
                                         f.episode.target_heading);
    benchmark::DoNotOptimize(path.data());
  }
}
BENCHMARK(BM_ShortestPath);

static void BM_EncodeForward(benchmark::State& state) {
  auto& f = fixture();
  const auto frame =
      gridhouse::render(f.house, f.episode.spawn, f.model.mh.cfg.frame_size)
          .tensor();
  for (auto _ : state) {
    auto post = mind::encode(f.model.ps, f.model.mh, frame);
    benchmark::DoNotOptimize(post.first.data.data());
  }
}
BENCHMARK(BM_EncodeForward);

static void BM_VaeForwardBackward(benchmark::State& state) {
  auto& f = fixture();
  const auto frame =
      gridhouse::render(f.house, f.episode.spawn, f.model.mh.cfg.frame_size)
          .tensor();
  const auto ids = f.model.ps.ids_with_prefix({"enc.", "dec."});
  Rng rng(11);
  auto eps = ndnet::Tensor::zeros(ndnet::Shape{f.model.mh.cfg.latent});
  for (auto& v : eps.data) v = static_cast<float>(rng.normal());
  for (auto _ : state) {
    ndnet::Tape t;
    auto params = ndnet::emit_params(t, f.model.ps, ids);
    auto loss = mind::vae_loss_graph(t, f.model.mh, params,
                                     t.constant(frame), eps, 4.0);
    std::vector<ndnet::Var> leaves;
    for (auto id : ids) leaves.push_back(params[static_cast<size_t>(id)]);
    auto grads = t.backward(loss, leaves);
    benchmark::DoNotOptimize(grads.data());
  }
}
BENCHMARK(BM_VaeForwardBackward);

static void BM_ImageryStep(benchmark::State& state) {
  auto& f = fixture();
  const auto frame =
      gridhouse::render(f.house, f.episode.spawn, f.model.mh.cfg.frame_size)
          .tensor();
  const auto post = mind::encode(f.model.ps, f.model.mh, frame);
  auto st = mind::initial_imagery_state(f.model.mh.cfg);
  for (auto _ : state) {
    auto out = mind::imagery_step(f.model.ps, f.model.mh, post.first,
                                  gridhouse::Action::Forward, st);
    benchmark::DoNotOptimize(out.first.pi.data());
  }
}
BENCHMARK(BM_ImageryStep);

static void BM_GreedyEpisode(benchmark::State& state) {
  auto& f = fixture();
  agent::FeatureCache cache;
  agent::RunOptions ro;
  ro.mode = agent::RunMode::Greedy;
  ro.seed = 17;
  ro.n_max = 40;
  ro.planner_budget = 40;
  ro.cache = &cache;
  for (auto _ : state) {
    auto traj = agent::run_episode(f.model.ps, f.model.ah, f.model.mh,
                                   f.house, f.episode, ro);
    benchmark::DoNotOptimize(traj.steps.data());
  }
}
BENCHMARK(BM_GreedyEpisode);

BENCHMARK_MAIN();
