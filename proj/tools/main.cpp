// mindhouse CLI: world/dataset generation, staged training, evaluation,
// visual dumps, and gradient self-checks. Every run is reproducible from
// (config, seed); all artifacts land in --out.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mindhouse/harness/checkpoint.hpp"
#include "mindhouse/harness/config.hpp"
#include "mindhouse/harness/dumps.hpp"
#include "mindhouse/harness/eval.hpp"
#include "mindhouse/ndnet/grad_check.hpp"
#include "mindhouse/trainer/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mindhouse;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  check(os.good(), "cannot open '" + path + "' for writing");
  os << text;
  check(os.good(), "write failed for '" + path + "'");
}

harness::RunConfig resolve_config(const std::string& config_path,
                                  bool seed_set, uint64_t seed) {
  json j = json::object();
  if (!config_path.empty()) {
    try {
      j = json::parse(slurp(config_path));
    } catch (const json::exception& e) {
      throw ContractError(std::string("config: invalid JSON: ") + e.what());
    }
  }
  if (seed_set) j["seed"] = seed;
  return harness::parse_run_config(j.dump());
}

void write_resolved_config(const harness::RunConfig& cfg, const fs::path& out) {
  fs::create_directories(out);
  spit((out / "config.json").string(), harness::run_config_to_json(cfg));
}

// ---- artifact IO ------------------------------------------------------------

std::vector<gridhouse::HouseMap> load_worlds(const fs::path& out) {
  const fs::path p = out / "worlds.json";
  check(fs::exists(p), "missing " + p.string() + " (run gen-world first)");
  return gridhouse::houses_from_json(slurp(p.string()));
}

struct Dataset {
  std::vector<gridhouse::HouseMap> houses;
  eqagen::Vocabulary vocab;
  std::vector<eqagen::Episode> episodes;
  std::vector<size_t> train_idx, eval_idx;
};

Dataset load_dataset(const fs::path& out) {
  Dataset d;
  d.houses = load_worlds(out);
  const fs::path vp = out / "vocab.json", ep = out / "episodes.jsonl";
  check(fs::exists(vp) && fs::exists(ep),
        "missing dataset in " + out.string() + " (run gen-dataset first)");
  d.vocab = eqagen::vocab_from_json(slurp(vp.string()));
  d.episodes = eqagen::read_dataset(ep.string());

  const fs::path sp = out / "splits.json";
  if (fs::exists(sp)) {
    json j = json::parse(slurp(sp.string()));
    j.at("train").get_to(d.train_idx);
    j.at("eval").get_to(d.eval_idx);
    for (size_t i : d.train_idx)
      check(i < d.episodes.size(), "splits.json: train index out of range");
    for (size_t i : d.eval_idx)
      check(i < d.episodes.size(), "splits.json: eval index out of range");
  } else {
    for (size_t i = 0; i < d.episodes.size(); ++i) {
      d.train_idx.push_back(i);
      d.eval_idx.push_back(i);
    }
  }
  return d;
}

std::vector<eqagen::Episode> pick(const std::vector<eqagen::Episode>& eps,
                                  const std::vector<size_t>& idx) {
  std::vector<eqagen::Episode> out;
  out.reserve(idx.size());
  for (size_t i : idx) out.push_back(eps[i]);
  return out;
}

// ---- subcommands ------------------------------------------------------------

void cmd_gen_world(const harness::RunConfig& cfg, const fs::path& out) {
  check(cfg.world.houses >= 1, "world.houses must be >= 1");
  const Rng seeder(cfg.seed);
  std::vector<gridhouse::HouseMap> houses;
  for (int i = 0; i < cfg.world.houses; ++i) {
    auto h = gridhouse::generate_house(
        seeder.derive(200 + static_cast<uint64_t>(i)).next_u64(),
        cfg.world.rooms, cfg.world.grid_size);
    h.id = i;
    houses.push_back(std::move(h));
  }
  fs::create_directories(out);
  spit((out / "worlds.json").string(), gridhouse::houses_to_json(houses));
  write_resolved_config(cfg, out);
  std::cout << "wrote " << houses.size() << " house(s) to "
            << (out / "worlds.json").string() << "\n";
}

void cmd_gen_dataset(const harness::RunConfig& cfg, const fs::path& out) {
  check(cfg.data.episodes_per_house >= 1, "data.episodes_per_house must be >= 1");
  check(cfg.data.eval_fraction >= 0.0 && cfg.data.eval_fraction < 1.0,
        "data.eval_fraction must be in [0, 1)");
  auto houses = load_worlds(out);
  auto vocab = eqagen::build_vocabulary(houses);
  const Rng seeder(cfg.seed);
  std::vector<eqagen::Episode> episodes;
  for (size_t i = 0; i < houses.size(); ++i)
    for (int e = 0; e < cfg.data.episodes_per_house; ++e)
      episodes.push_back(eqagen::generate_episode(
          houses[i], vocab,
          seeder.derive(300 + i * 100003 + static_cast<uint64_t>(e))
              .next_u64(),
          cfg.data.spawn_k));

  const size_t n = episodes.size();
  const size_t eval_n =
      static_cast<size_t>(cfg.data.eval_fraction * static_cast<double>(n));
  json sj;
  sj["train"] = json::array();
  sj["eval"] = json::array();
  for (size_t i = 0; i < n - eval_n; ++i) sj["train"].push_back(i);
  for (size_t i = n - eval_n; i < n; ++i) sj["eval"].push_back(i);

  eqagen::write_dataset(episodes, (out / "episodes.jsonl").string());
  spit((out / "vocab.json").string(), eqagen::vocab_to_json(vocab));
  spit((out / "splits.json").string(), sj.dump(2) + "\n");
  write_resolved_config(cfg, out);
  std::cout << "wrote " << n << " episode(s) (" << (n - eval_n) << " train, "
            << eval_n << " eval) to " << (out / "episodes.jsonl").string()
            << "\n";
}

void cmd_train(const harness::RunConfig& cfg, const fs::path& out,
               const std::string& stage, const std::string& ckpt_override) {
  Dataset d = load_dataset(out);
  trainer::WorldData data{d.houses, d.vocab, pick(d.episodes, d.train_idx)};
  check(!data.episodes.empty(), "train split is empty");
  auto m = trainer::build_model(cfg.mind, cfg.agent, data.vocab, cfg.seed);

  const uint64_t hash = harness::config_hash(cfg);
  std::vector<std::string> stages_done;
  const auto prereqs = harness::stage_prerequisites(stage);
  if (!prereqs.empty()) {
    const std::string in_ckpt =
        ckpt_override.empty() ? (out / (prereqs.back() + ".ckpt")).string()
                              : ckpt_override;
    auto res = harness::load_checkpoint(m.ps, in_ckpt, hash);
    harness::require_stages(res.manifest, prereqs);
    if (!res.config_hash_matched) {
      json w;
      w["warning"] = "checkpoint '" + in_ckpt +
                     "' was written under a different config (hash " +
                     harness::hash_hex(res.manifest.config_hash) + " vs " +
                     harness::hash_hex(hash) + ")";
      std::cerr << w.dump() << "\n";
    }
    stages_done = res.manifest.stages_completed;
  }

  fs::create_directories(out);
  const std::string metrics_path =
      (out / ("metrics_" + stage + ".jsonl")).string();
  std::ofstream metrics(metrics_path, std::ios::trunc);
  check(metrics.good(), "cannot open '" + metrics_path + "'");
  auto sink = [&](const trainer::MetricsRow& row) {
    metrics << row.to_json_line() << "\n";
    metrics.flush();
    std::cout << row.to_json_line() << "\n";
  };

  trainer::StageResult res;
  if (stage == "vae") {
    res = trainer::train_vae(m, data, cfg.vae, sink);
  } else if (stage == "imagery") {
    res = trainer::train_imagery(m, data, cfg.imagery, sink);
  } else if (stage == "bc") {
    res = trainer::train_bc(m, data, cfg.bc, sink);
  } else {  // "rl" (the stage name is validated by the CLI)
    trainer::RLConfig rl = cfg.rl;
    rl.lambda_f = cfg.rewards.lambda_f;
    res = trainer::train_rl(m, data, rl, sink);
  }

  if (std::find(stages_done.begin(), stages_done.end(), stage) ==
      stages_done.end())
    stages_done.push_back(stage);
  harness::CheckpointManifest man;
  man.config_hash = hash;
  man.stages_completed = stages_done;
  const std::string ckpt_path = (out / (stage + ".ckpt")).string();
  harness::save_checkpoint(m.ps, man, ckpt_path);
  write_resolved_config(cfg, out);

  if (res.aborted)
    throw ContractError("training stage '" + stage +
                        "' aborted on a non-finite loss; last finite "
                        "parameters were written to " + ckpt_path);
  std::cout << "wrote " << ckpt_path << "\n";
}

void cmd_eval(const harness::RunConfig& cfg, const fs::path& out,
              const std::string& ckpt_path) {
  Dataset d = load_dataset(out);
  trainer::WorldData data{d.houses, d.vocab, d.episodes};
  auto split = pick(d.episodes, d.eval_idx);
  check(!split.empty(), "eval split is empty");
  auto m = trainer::build_model(cfg.mind, cfg.agent, data.vocab, cfg.seed);

  const uint64_t hash = harness::config_hash(cfg);
  auto res = harness::load_checkpoint(m.ps, ckpt_path, hash);
  if (!res.config_hash_matched) {
    json w;
    w["warning"] = "checkpoint config hash " +
                   harness::hash_hex(res.manifest.config_hash) +
                   " differs from the current config " +
                   harness::hash_hex(hash);
    std::cerr << w.dump() << "\n";
  }

  harness::EvalOptions opts;
  opts.tiers = cfg.eval.tiers;
  opts.n_max = cfg.eval.n_max;
  opts.planner_budget = cfg.eval.planner_budget;
  opts.use_imagery = cfg.eval.use_imagery;
  opts.seed = Rng(cfg.seed).derive(105).next_u64();
  opts.rcfg = cfg.rewards;
  opts.config_hash = hash;

  auto rep = harness::evaluate(m, data, split, opts);
  const std::string text = rep.to_json_string();
  spit((out / "eval_report.json").string(), text);
  write_resolved_config(cfg, out);
  std::cout << text;
}

std::vector<gridhouse::AgentPose> expert_poses(
    const gridhouse::HouseMap& house, const eqagen::Episode& ep) {
  std::vector<gridhouse::AgentPose> poses = {ep.spawn};
  for (auto a : ep.expert_actions)
    if (a != gridhouse::Action::Stop)
      poses.push_back(gridhouse::step(house, poses.back(), a));
  return poses;
}

void cmd_dump_topdown(const harness::RunConfig& cfg, const fs::path& out,
                      const std::string& ckpt_path, int episode_idx) {
  Dataset d = load_dataset(out);
  check(episode_idx >= 0 &&
            static_cast<size_t>(episode_idx) < d.episodes.size(),
        "episode index out of range (have " +
            std::to_string(d.episodes.size()) + ")");
  const auto& ep = d.episodes[static_cast<size_t>(episode_idx)];
  trainer::WorldData data{d.houses, d.vocab, d.episodes};
  const auto& house = trainer::house_by_id(data, ep.house_id);

  std::vector<std::vector<gridhouse::AgentPose>> trajs = {
      expert_poses(house, ep)};
  if (!ckpt_path.empty()) {
    auto m = trainer::build_model(cfg.mind, cfg.agent, d.vocab, cfg.seed);
    harness::load_checkpoint(m.ps, ckpt_path, harness::config_hash(cfg));
    agent::RunOptions ro;
    ro.mode = agent::RunMode::Greedy;
    ro.seed = Rng(cfg.seed).derive(106).next_u64();
    ro.use_imagery = cfg.eval.use_imagery;
    ro.n_max = cfg.eval.n_max;
    ro.planner_budget = cfg.eval.planner_budget;
    auto traj = agent::run_episode(m.ps, m.ah, m.mh, house, ep, ro);
    std::vector<gridhouse::AgentPose> greedy;
    for (const auto& st : traj.steps) greedy.push_back(st.pose);
    greedy.push_back(traj.final_pose);
    trajs.push_back(std::move(greedy));
  }
  fs::create_directories(out);
  const std::string path =
      (out / ("topdown_ep" + std::to_string(episode_idx) + ".ppm")).string();
  harness::dump_topdown(house, trajs, path);
  std::cout << "wrote " << path << "\n";
}

void cmd_dump_imagery(const harness::RunConfig& cfg, const fs::path& out,
                      const std::string& ckpt_path, int episode_idx,
                      int step) {
  Dataset d = load_dataset(out);
  check(episode_idx >= 0 &&
            static_cast<size_t>(episode_idx) < d.episodes.size(),
        "episode index out of range (have " +
            std::to_string(d.episodes.size()) + ")");
  const auto& ep = d.episodes[static_cast<size_t>(episode_idx)];
  trainer::WorldData data{d.houses, d.vocab, d.episodes};
  const auto& house = trainer::house_by_id(data, ep.house_id);

  auto m = trainer::build_model(cfg.mind, cfg.agent, d.vocab, cfg.seed);
  auto res =
      harness::load_checkpoint(m.ps, ckpt_path, harness::config_hash(cfg));
  harness::require_stages(res.manifest, {"vae", "imagery"});

  agent::RunOptions ro;
  ro.mode = agent::RunMode::Greedy;
  ro.seed = Rng(cfg.seed).derive(107).next_u64();
  ro.use_imagery = cfg.eval.use_imagery;
  ro.n_max = cfg.eval.n_max;
  ro.planner_budget = cfg.eval.planner_budget;
  auto traj = agent::run_episode(m.ps, m.ah, m.mh, house, ep, ro);

  const std::string dir =
      (out / ("imagery_ep" + std::to_string(episode_idx) + "_step" +
              std::to_string(step)))
          .string();
  auto files = harness::dump_mental_rollout(
      m.ps, m.mh, house, traj, step, dir, Rng(cfg.seed).derive(108).next_u64());
  std::cout << "wrote " << files.size() << " frame(s) to " << dir << "\n";
}

// ---- gradient self-check ----------------------------------------------------

int cmd_grad_check() {
  using DTape = ndnet::TapeT<double>;
  using DTensor = ndnet::TensorT<double>;
  using ndnet::Shape;
  using ndnet::Var;
  constexpr double kTol = 1e-4;

  mind::MindConfig mc;
  mc.frame_size = 8;
  mc.latent = 4;
  mc.enc_channels = {4, 6, 6, 8};
  mc.dec_base = 8;
  mc.imagery_hidden = 6;
  mc.mixtures = 3;

  agent::AgentConfig ac;
  ac.question_embed = 3;
  ac.q_dim = 4;
  ac.planner_hidden = 5;
  ac.controller_hidden = 4;
  ac.qa_hidden = 4;
  ac.vocab_words = 5;
  ac.num_answers = 3;
  ac.feat_dim = 3;
  ac.imagery_hidden = 3;

  ndnet::ParamSet mind_f, agent_f;
  Rng rng(12);
  auto mh = mind::build_mind(mind_f, mc, rng);
  auto ah = agent::build_agent(agent_f, ac, rng);
  auto mind_d = mind_f.cast<double>();
  auto agent_d = agent_f.cast<double>();

  Rng draws(34);
  auto rand_tensor = [&](Shape shape, bool unit_interval) {
    auto t = DTensor::zeros(std::move(shape));
    for (auto& v : t.data)
      v = unit_interval ? draws.uniform() * 0.98 + 0.01 : draws.normal();
    return t;
  };

  const DTensor frame = rand_tensor(Shape{3, 8, 8}, true);
  const DTensor eps = rand_tensor(Shape{4}, false);
  const DTensor m_in = rand_tensor(Shape{4}, false);
  const DTensor m_target = rand_tensor(Shape{4}, false);

  trainer::BcEpisode bce;
  bce.question = {0, 3, 1};
  bce.answer = 2;
  {
    auto rf = [&]() {
      auto f = rand_tensor(Shape{3}, false);
      return f.cast<float>();
    };
    trainer::BcEpisode::Step s0;
    s0.feat = rf();
    s0.imag_h = rf();
    s0.prev = gridhouse::Action::Stop;
    s0.action = gridhouse::Action::Forward;
    s0.bits = {1, 1, 0};
    s0.ctrl_feats = {rf(), rf(), rf()};
    trainer::BcEpisode::Step s1;
    s1.feat = rf();
    s1.imag_h = rf();
    s1.prev = gridhouse::Action::Forward;
    s1.action = gridhouse::Action::Stop;
    bce.steps = {s0, s1};
    for (auto& s : bce.final_slots) s = rf();
  }

  trainer::RolloutView view;
  view.question = {1, 2};
  {
    auto rf = [&]() { return rand_tensor(Shape{3}, false).cast<float>(); };
    for (int i = 0; i < 3; ++i) {
      trainer::RolloutView::Step st;
      st.feat = rf();
      st.imag_h = rf();
      st.prev = i == 0 ? gridhouse::Action::Stop : gridhouse::Action::Forward;
      st.action =
          i == 2 ? gridhouse::Action::Stop : gridhouse::Action::Forward;
      st.reward = 0.5 * i;
      view.steps.push_back(std::move(st));
    }
  }
  const std::vector<double> adv = {0.4, -0.3, 1.1};
  const std::vector<double> target = {0.9, 0.2, -0.1};
  trainer::RLConfig rl;

  struct Check {
    const char* name;
    ndnet::GradCheckReport report;
  };
  std::vector<Check> checks;

  checks.push_back(
      {"vae_loss", ndnet::grad_check(
                       mind_d, mind_d.ids_with_prefix({"enc.", "dec."}),
                       [&](DTape& t, std::vector<Var>& vars) {
                         return mind::vae_loss_graph(
                             t, mh, vars, t.constant(frame), eps, 4.0);
                       },
                       1e-5)});
  checks.push_back(
      {"mdn_nll", ndnet::grad_check(
                      mind_d, mind_d.ids_with_prefix({"imag."}),
                      [&](DTape& t, std::vector<Var>& vars) {
                        Var h0 = t.constant(DTensor::zeros(Shape{6}));
                        auto out = mind::imagery_step_graph(
                            t, mh, vars, t.constant(m_in),
                            gridhouse::Action::Forward, h0, h0);
                        return mind::mdn_nll_graph(
                            t, out.mix, t.constant(m_target), 3, 4);
                      },
                      1e-5)});
  checks.push_back(
      {"bc_loss",
       ndnet::grad_check(
           agent_d,
           agent_d.ids_with_prefix({"qenc.", "plan.", "ctrl.", "qa."}),
           [&](DTape& t, std::vector<Var>& vars) {
             auto terms = trainer::bc_loss_graph(t, ah, vars, bce);
             const double n = static_cast<double>(
                 terms.planner_n + terms.ctrl_n + terms.qa_n);
             return t.scale(
                 t.add(t.add(terms.planner_nll, terms.ctrl_bce), terms.qa_ce),
                 1.0 / n);
           },
           1e-5)});
  checks.push_back(
      {"actor_critic",
       ndnet::grad_check(
           agent_d, agent_d.ids_with_prefix({"qenc.", "plan."}),
           [&](DTape& t, std::vector<Var>& vars) {
             auto out = trainer::actor_critic_loss_graph(t, ah, vars, view, rl,
                                                         &adv, &target);
             return t.scale(out.loss, 1.0 / out.steps);
           },
           1e-5)});

  bool all_ok = true;
  for (const auto& c : checks) {
    const bool ok = c.report.max_rel_error < kTol;
    all_ok = all_ok && ok;
    std::printf("%-12s max_rel_error %.3e (worst: %s)  %s\n", c.name,
                c.report.max_rel_error, c.report.worst_param.c_str(),
                ok ? "PASS" : "FAIL");
  }
  if (!all_ok) {
    json err;
    err["error"] = "gradient check failed (see lines above)";
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mindhouse: grid-world embodied-QA training pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_str = "out";
  uint64_t seed = 0;
  auto* seed_opt =
      app.add_option("--seed", seed, "override the config's top-level seed");
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--out", out_str, "artifact directory (default: out)");

  auto* gen_world = app.add_subcommand("gen-world", "generate houses");
  auto* gen_dataset =
      app.add_subcommand("gen-dataset", "generate episodes/vocab/splits");

  std::string stage;
  auto* train = app.add_subcommand("train", "train one stage");
  train->add_option("stage", stage, "vae | imagery | bc | rl")
      ->required()
      ->check(CLI::IsMember({"vae", "imagery", "bc", "rl"}));
  std::string train_ckpt;
  train->add_option("--ckpt", train_ckpt,
                    "input checkpoint (default: <out>/<previous stage>.ckpt)");

  std::string eval_ckpt;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint per tier");
  eval->add_option("--ckpt", eval_ckpt, "checkpoint to evaluate")->required();

  std::string td_ckpt;
  int td_episode = 0;
  auto* dump_td = app.add_subcommand("dump-topdown",
                                     "render a top-down trajectory map");
  dump_td->add_option("--ckpt", td_ckpt,
                      "draw the greedy trajectory of this checkpoint");
  dump_td->add_option("--episode", td_episode, "episode index (default 0)");

  std::string im_ckpt;
  int im_episode = 0, im_step = 0;
  auto* dump_im = app.add_subcommand(
      "dump-imagery", "decode the imagery rollout at one planner step");
  dump_im->add_option("--ckpt", im_ckpt, "checkpoint (needs vae+imagery)")
      ->required();
  dump_im->add_option("--episode", im_episode, "episode index (default 0)");
  dump_im->add_option("--step", im_step, "planner step (default 0)");

  auto* grad = app.add_subcommand(
      "grad-check", "finite-difference checks for every loss");

  for (auto* sub : {gen_world, gen_dataset, train, eval, dump_td, dump_im, grad})
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    json err;
    err["error"] = std::string("usage: ") + e.what();
    std::cerr << err.dump() << "\n" << app.help();
    return 2;
  }

  try {
    const fs::path out(out_str);
    const harness::RunConfig cfg =
        resolve_config(config_path, seed_opt->count() > 0, seed);
    if (*gen_world) {
      cmd_gen_world(cfg, out);
    } else if (*gen_dataset) {
      cmd_gen_dataset(cfg, out);
    } else if (*train) {
      cmd_train(cfg, out, stage, train_ckpt);
    } else if (*eval) {
      cmd_eval(cfg, out, eval_ckpt);
    } else if (*dump_td) {
      cmd_dump_topdown(cfg, out, td_ckpt, td_episode);
    } else if (*dump_im) {
      cmd_dump_imagery(cfg, out, im_ckpt, im_episode, im_step);
    } else if (*grad) {
      return cmd_grad_check();
    }
    return 0;
  } catch (const std::exception& e) {
    json err;
    err["error"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
}
