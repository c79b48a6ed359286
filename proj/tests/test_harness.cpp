#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mindhouse/harness/checkpoint.hpp"
#include "mindhouse/harness/config.hpp"
#include "mindhouse/harness/dumps.hpp"
#include "mindhouse/harness/eval.hpp"
#include "mindhouse/trainer/train.hpp"

using namespace mindhouse;
using namespace mindhouse::harness;
using gridhouse::Action;
using ndnet::ParamSet;
using ndnet::Shape;
using ndnet::Tensor;

namespace {

namespace fs = std::filesystem;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

fs::path temp_dir(const char* tag) {
  fs::path dir = fs::temp_directory_path() /
                 (std::string("mindhouse_test_") + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ParamSet random_params(uint64_t seed) {
  ParamSet ps;
  Rng rng(seed);
  ps.add("a.w", ndnet::fanin_uniform<float>(Shape{3, 2}, 2, rng));
  ps.add("a.b", ndnet::fanin_uniform<float>(Shape{3}, 3, rng));
  ps.add("b.w", ndnet::fanin_uniform<float>(Shape{4}, 4, rng));
  return ps;
}

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

trainer::WorldData tiny_world(uint64_t house_seed, int episodes, int spawn_k) {
  trainer::WorldData data;
  data.houses.push_back(gridhouse::generate_house(house_seed, 2, 9));
  data.vocab = eqagen::build_vocabulary(data.houses);
  for (int i = 0; i < episodes; ++i)
    data.episodes.push_back(
        eqagen::generate_episode(data.houses[0], data.vocab,
                                 static_cast<uint64_t>(i) + 1, spawn_k));
  return data;
}

}  // namespace

TEST_CASE("fnv1a64 matches the published test vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
  CHECK(hash_hex(0) == "0000000000000000");
  CHECK(hash_hex(0xdeadbeefull) == "00000000deadbeef");
}

TEST_CASE("checkpoint: bit-exact round trip with manifest metadata") {
  auto dir = temp_dir("ckpt");
  const std::string path = (dir / "model.ckpt").string();

  ParamSet original = random_params(7);
  CheckpointManifest man;
  man.model = "probe";
  man.config_hash = 0xfeedface12345678ull;
  man.stages_completed = {"vae", "imagery"};
  save_checkpoint(original, man, path);

  ParamSet other = random_params(8);  // same names/shapes, different values
  bool differs = false;
  for (auto id : original.all_ids())
    differs |= original.value(id).data != other.value(id).data;
  REQUIRE(differs);

  auto res = load_checkpoint(other, path, man.config_hash);
  CHECK(res.config_hash_matched);
  CHECK(res.manifest.model == "probe");
  CHECK(res.manifest.config_hash == man.config_hash);
  CHECK(res.manifest.stages_completed ==
        std::vector<std::string>{"vae", "imagery"});
  for (auto id : original.all_ids())
    CHECK(original.value(id).data == other.value(id).data);  // bitwise

  // A differing config hash is reported, not thrown.
  ParamSet third = random_params(9);
  auto warn = load_checkpoint(third, path, 1);
  CHECK_FALSE(warn.config_hash_matched);
  CHECK(read_manifest(path).has_stage("vae"));
  CHECK_FALSE(read_manifest(path).has_stage("rl"));
}

TEST_CASE("checkpoint: named errors for damaged or mismatched files") {
  auto dir = temp_dir("ckpt_bad");
  const std::string path = (dir / "model.ckpt").string();
  ParamSet ps = random_params(7);
  CheckpointManifest man;
  save_checkpoint(ps, man, path);
  const std::string good = slurp(path);

  const std::string trunc_hdr = (dir / "hdr.ckpt").string();
  spit(trunc_hdr, good.substr(0, 10));
  CHECK_THROWS_WITH_AS(load_checkpoint(ps, trunc_hdr, 0),
                       doctest::Contains("truncated"), ContractError);

  const std::string trunc_payload = (dir / "pay.ckpt").string();
  spit(trunc_payload, good.substr(0, good.size() - 4));
  CHECK_THROWS_WITH_AS(load_checkpoint(ps, trunc_payload, 0),
                       doctest::Contains("truncated"), ContractError);

  std::string magic = good;
  magic[0] = 'X';
  const std::string bad_magic = (dir / "magic.ckpt").string();
  spit(bad_magic, magic);
  CHECK_THROWS_WITH_AS(load_checkpoint(ps, bad_magic, 0),
                       doctest::Contains("bad magic"), ContractError);

  // Hand-built header whose manifest bytes are not JSON.
  std::string corrupt;
  corrupt.append("MHCKPT01", 8);
  const char ver[4] = {1, 0, 0, 0};
  corrupt.append(ver, 4);
  const std::string garbage = "not json";
  char len[8] = {static_cast<char>(garbage.size()), 0, 0, 0, 0, 0, 0, 0};
  corrupt.append(len, 8);
  corrupt += garbage;
  const std::string bad_manifest = (dir / "manifest.ckpt").string();
  spit(bad_manifest, corrupt);
  CHECK_THROWS_WITH_AS(load_checkpoint(ps, bad_manifest, 0),
                       doctest::Contains("corrupt manifest"), ContractError);

  ParamSet wrong_shape;
  Rng rng(1);
  wrong_shape.add("a.w", ndnet::fanin_uniform<float>(Shape{3, 3}, 3, rng));
  wrong_shape.add("a.b", ndnet::fanin_uniform<float>(Shape{3}, 3, rng));
  wrong_shape.add("b.w", ndnet::fanin_uniform<float>(Shape{4}, 4, rng));
  CHECK_THROWS_WITH_AS(load_checkpoint(wrong_shape, path, 0),
                       doctest::Contains("shape mismatch"), ContractError);

  ParamSet extra = random_params(7);
  extra.add("c.w", Tensor::zeros(Shape{2}));
  CHECK_THROWS_WITH_AS(load_checkpoint(extra, path, 0),
                       doctest::Contains("missing tensor"), ContractError);

  ParamSet fewer;
  fewer.add("a.w", Tensor::zeros(Shape{3, 2}));
  CHECK_THROWS_WITH_AS(load_checkpoint(fewer, path, 0),
                       doctest::Contains("not a parameter"), ContractError);

  CHECK_THROWS_AS(read_manifest((dir / "nope.ckpt").string()), ContractError);
}

TEST_CASE("stage prerequisites gate the training order") {
  CHECK(stage_prerequisites("vae").empty());
  CHECK(stage_prerequisites("imagery") == std::vector<std::string>{"vae"});
  CHECK(stage_prerequisites("bc") ==
        (std::vector<std::string>{"vae", "imagery"}));
  CHECK(stage_prerequisites("rl") ==
        (std::vector<std::string>{"vae", "imagery", "bc"}));
  CHECK_THROWS_AS(stage_prerequisites("warmup"), ContractError);

  CheckpointManifest man;
  man.stages_completed = {"vae"};
  CHECK_NOTHROW(require_stages(man, {"vae"}));
  CHECK_NOTHROW(require_stages(man, {}));
  CHECK_THROWS_WITH_AS(require_stages(man, {"vae", "imagery", "bc"}),
                       doctest::Contains("imagery, bc"), ContractError);
}

TEST_CASE("config: defaults, strict keys, and overrides") {
  RunConfig def = parse_run_config("{}");
  CHECK(def.seed == 1);
  CHECK(def.world.grid_size == 15);
  CHECK(def.vae.batch == 20);
  CHECK(def.vae.beta == 4.0);
  CHECK(def.imagery.lr == 1e-5);
  CHECK(def.bc.curriculum_step == 5);
  CHECK(def.rl.gamma == 0.99);
  CHECK(def.rl.lambda == 1.0);
  CHECK(def.rl.entropy_weight == 0.01);
  CHECK(def.rewards.lambda_f == 0.01);
  CHECK(def.rewards.n_max == 80);
  CHECK(def.eval.tiers == std::vector<int>{10, 30, 50});
  // Derived stage seeds: deterministic, distinct, reproducible.
  RunConfig again = parse_run_config("{}");
  CHECK(def.vae.seed == again.vae.seed);
  CHECK(def.vae.seed != def.imagery.seed);
  CHECK(def.bc.seed != def.rl.seed);

  RunConfig o = parse_run_config(R"({
    "seed": 7,
    "vae": {"beta": 1.5, "seed": 42},
    "rl": {"value_target": "one_step", "workers": 3}
  })");
  CHECK(o.seed == 7);
  CHECK(o.vae.beta == 1.5);
  CHECK(o.vae.seed == 42);  // explicit seed wins over derivation
  CHECK(o.rl.value_target == trainer::ValueTarget::OneStep);
  CHECK(o.rl.workers == 3);

  CHECK_THROWS_WITH_AS(parse_run_config(R"({"wrld": {}})"),
                       doctest::Contains("unknown key 'wrld'"), ContractError);
  CHECK_THROWS_WITH_AS(parse_run_config(R"({"vae": {"betaa": 2}})"),
                       doctest::Contains("unknown key 'betaa'"),
                       ContractError);
  CHECK_THROWS_WITH_AS(parse_run_config(R"({"rl": {"value_target": "mc"}})"),
                       doctest::Contains("value_target"), ContractError);
  CHECK_THROWS_WITH_AS(parse_run_config("{"),
                       doctest::Contains("invalid JSON"), ContractError);
  CHECK_THROWS_AS(parse_run_config(R"({"vae": 3})"), ContractError);
}

TEST_CASE("config: resolved dump round-trips byte-identically") {
  RunConfig cfg = parse_run_config(R"({"seed": 11, "bc": {"batch": 4}})");
  const std::string dumped = run_config_to_json(cfg);
  RunConfig re = parse_run_config(dumped);
  CHECK(run_config_to_json(re) == dumped);
  CHECK(config_hash(re) == config_hash(cfg));

  RunConfig changed = cfg;
  changed.rl.lr = 5e-4;
  CHECK(config_hash(changed) != config_hash(cfg));
}

TEST_CASE("ppm writer and frame conversion") {
  auto dir = temp_dir("ppm");
  const std::string path = (dir / "img.ppm").string();
  std::vector<uint8_t> rgb(2 * 2 * 3, 7);
  write_ppm(path, 2, 2, rgb);
  const std::string bytes = slurp(path);
  CHECK(bytes.substr(0, 11) == "P6\n2 2\n255\n");
  CHECK(bytes.size() == 11 + 12);
  CHECK(static_cast<unsigned char>(bytes[11]) == 7);

  CHECK_THROWS_AS(write_ppm(path, 2, 3, rgb), ContractError);

  Tensor frame = Tensor::zeros(Shape{3, 1, 2});
  frame.data = {0.f, 0.5f, 1.f, -1.f, 0.25f, 2.f};
  auto out = frame_to_rgb(frame);
  REQUIRE(out.size() == 6);
  CHECK(out[0] == 0);    // ch0 @ (0,0)
  CHECK(out[1] == 255);  // ch1 clamps at 1
  CHECK(out[2] == 64);   // ch2 0.25 -> 63.75 -> 64
  CHECK(out[3] == 128);  // ch0 @ (0,1) 0.5 -> 127.5 -> 128
  CHECK(out[4] == 0);    // ch1 clamps at 0
  CHECK(out[5] == 255);
  CHECK_THROWS_AS(frame_to_rgb(Tensor::zeros(Shape{2, 4, 4})), ContractError);
}

TEST_CASE("top-down dump: palette, markers, and bounds checks") {
  auto house = gridhouse::from_ascii(
      "#####\n"
      "#...#\n"
      "#.#.#\n"
      "#...#\n"
      "#####");
  const int s = 8;
  auto px = [&](const std::vector<uint8_t>& img, int y, int x, int ch) {
    return img[(static_cast<size_t>(y) * house.cols * s + x) * 3 +
               static_cast<size_t>(ch)];
  };

  auto plain = render_topdown(house, {}, s);
  REQUIRE(plain.size() == static_cast<size_t>(5 * s) * (5 * s) * 3);
  CHECK(px(plain, 0, 0, 0) == 0);                    // wall black
  CHECK(px(plain, s + 1, s + 1, 0) == 255);          // floor white
  CHECK(px(plain, s + 1, s + 1, 1) == 255);

  std::vector<gridhouse::AgentPose> traj = {
      {{1, 1}, gridhouse::Heading::E},
      {{1, 2}, gridhouse::Heading::E},
      {{1, 3}, gridhouse::Heading::E},
  };
  auto img = render_topdown(house, {traj}, s);
  // Middle cell: pure first-palette trajectory color.
  CHECK(px(img, s + 3, 2 * s + 3, 0) == 220);
  CHECK(px(img, s + 3, 2 * s + 3, 1) == 40);
  CHECK(px(img, s + 3, 2 * s + 3, 2) == 40);
  // Start cell: darker inset; final cell: black inset.
  CHECK(px(img, s + 3, s + 3, 0) == 110);
  CHECK(px(img, s + 3, 3 * s + 3, 0) == 0);
  // Untouched floor stays white.
  CHECK(px(img, 3 * s + 3, s + 3, 0) == 255);

  std::vector<gridhouse::AgentPose> outside = {
      {{9, 9}, gridhouse::Heading::N}};
  CHECK_THROWS_AS(render_topdown(house, {outside}, s), ContractError);

  auto dir = temp_dir("topdown");
  const std::string path = (dir / "map.ppm").string();
  dump_topdown(house, {traj}, path, s);
  CHECK(slurp(path).size() ==
        std::string("P6\n40 40\n255\n").size() + img.size());
}

TEST_CASE("evaluate: tier accounting, bounds, and byte-stable reports") {
  trainer::WorldData data = tiny_world(11, 4, 5);
  auto m = trainer::build_model(tiny_mind_cfg(), tiny_agent_cfg(), data.vocab,
                                99);

  EvalOptions opts;
  opts.tiers = {2, 99};  // 99 is unattainable in a 9x9 house
  opts.n_max = 16;
  opts.planner_budget = 16;
  opts.seed = 5;
  opts.config_hash = 0xabcull;

  auto rep = evaluate(m, data, data.episodes, opts);
  REQUIRE(rep.tiers.size() == 2);
  CHECK(rep.config_fingerprint == hash_hex(0xabcull));

  const auto& near = rep.tiers[0];
  CHECK(near.offset == 2);
  CHECK(near.episodes + near.excluded ==
        static_cast<int>(data.episodes.size()));
  CHECK(near.episodes > 0);
  CHECK(near.mean_d_delta <= 2.0 + 1e-12);
  CHECK(near.qa_accuracy >= 0.0);
  CHECK(near.qa_accuracy <= 1.0);
  CHECK(near.mean_steps >= 0.0);

  const auto& far = rep.tiers[1];
  CHECK(far.offset == 99);
  CHECK(far.episodes == 0);
  CHECK(far.excluded == static_cast<int>(data.episodes.size()));
  CHECK(far.mean_d_delta == 0.0);

  auto rep2 = evaluate(m, data, data.episodes, opts);
  CHECK(rep.to_json_string() == rep2.to_json_string());
  CHECK(rep.to_json_string().find("\"tiers\"") != std::string::npos);

  CHECK_THROWS_AS(evaluate(m, data, {}, opts), ContractError);
  EvalOptions bad = opts;
  bad.tiers = {0};
  CHECK_THROWS_AS(evaluate(m, data, data.episodes, bad), ContractError);
}

TEST_CASE("mental rollout dump: frames, lengths, and determinism") {
  trainer::WorldData data = tiny_world(13, 1, 6);
  auto m = trainer::build_model(tiny_mind_cfg(), tiny_agent_cfg(), data.vocab,
                                42);
  const auto& house = data.houses[0];
  const auto& ep = data.episodes[0];

  agent::RunOptions ro;
  ro.mode = agent::RunMode::DemoForced;
  ro.seed = 3;
  auto traj = agent::run_episode(m.ps, m.ah, m.mh, house, ep, ro);
  REQUIRE(traj.steps.size() >= 2);
  REQUIRE(traj.steps[0].action != Action::Stop);

  // Pending non-Stop planner actions from step 0.
  int runlen = 0;
  while (runlen < static_cast<int>(traj.steps.size()) &&
         traj.steps[static_cast<size_t>(runlen)].action != Action::Stop)
    ++runlen;

  auto dir = temp_dir("imagery");
  auto files =
      dump_mental_rollout(m.ps, m.mh, house, traj, 0, dir.string(), 17);
  CHECK(files.size() == 1 + 2 * static_cast<size_t>(runlen));
  const size_t frame_bytes =
      std::string("P6\n8 8\n255\n").size() + 8 * 8 * 3;
  for (const auto& f : files) {
    CHECK(fs::exists(f));
    CHECK(slurp(f).size() == frame_bytes);
  }
  CHECK(files[0].find("real_00.ppm") != std::string::npos);

  // The final planner step is the Stop decision: rollout of length zero.
  const int stop_step = static_cast<int>(traj.steps.size()) - 1;
  if (traj.steps[static_cast<size_t>(stop_step)].action == Action::Stop) {
    auto dir2 = temp_dir("imagery_stop");
    auto only = dump_mental_rollout(m.ps, m.mh, house, traj, stop_step,
                                    dir2.string(), 17);
    CHECK(only.size() == 1);
  }

  auto dir3 = temp_dir("imagery_repeat");
  auto files3 =
      dump_mental_rollout(m.ps, m.mh, house, traj, 0, dir3.string(), 17);
  REQUIRE(files3.size() == files.size());
  for (size_t i = 0; i < files.size(); ++i)
    CHECK(slurp(files[i]) == slurp(files3[i]));  // byte-identical

  CHECK_THROWS_AS(dump_mental_rollout(m.ps, m.mh, house, traj,
                                      static_cast<int>(traj.steps.size()),
                                      dir.string(), 0),
                  ContractError);
  CHECK_THROWS_AS(
      dump_mental_rollout(m.ps, m.mh, house, traj, -1, dir.string(), 0),
      ContractError);
}
