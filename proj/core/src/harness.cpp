#include "mindhouse/harness/checkpoint.hpp"
#include "mindhouse/harness/config.hpp"
#include "mindhouse/harness/dumps.hpp"
#include "mindhouse/harness/eval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "mindhouse/gridhouse/render.hpp"
#include "mindhouse/util/check.hpp"
#include "mindhouse/util/rng.hpp"

namespace mindhouse::harness {

using nlohmann::json;

// ---- hashing ----------------------------------------------------------------

uint64_t fnv1a64(std::string_view bytes) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hash_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---- checkpoint -------------------------------------------------------------

namespace {

constexpr char kMagic[9] = "MHCKPT01";  // 8 payload bytes + NUL
constexpr uint32_t kFormatVersion = 1;
constexpr size_t kHeaderBytes = 8 + 4 + 8;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}
void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}
uint32_t get_u32(const std::string& b, size_t off) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<uint32_t>(static_cast<unsigned char>(b[off + i])) << (8 * i);
  return v;
}
uint64_t get_u64(const std::string& b, size_t off) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<uint64_t>(static_cast<unsigned char>(b[off + i])) << (8 * i);
  return v;
}

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct ParsedManifest {
  CheckpointManifest man;
  struct Entry {
    std::string name;
    std::vector<int> dims;
    uint64_t offset = 0;  // in floats from payload start
  };
  std::vector<Entry> entries;
  uint64_t total_floats = 0;
};

json manifest_to_json(const CheckpointManifest& man) {
  json j;
  j["model"] = man.model;
  j["version"] = man.version;
  j["config_hash"] = hash_hex(man.config_hash);
  j["stages_completed"] = man.stages_completed;
  return j;
}

ParsedManifest parse_manifest(const std::string& bytes, const std::string& path) {
  check(bytes.size() >= kHeaderBytes,
        "checkpoint truncated (header) in '" + path + "'");
  check(std::memcmp(bytes.data(), kMagic, 8) == 0,
        "checkpoint '" + path + "': bad magic");
  const uint32_t version = get_u32(bytes, 8);
  check(version == kFormatVersion,
        "checkpoint '" + path + "': unsupported format version " +
            std::to_string(version));
  const uint64_t msize = get_u64(bytes, 12);
  check(bytes.size() >= kHeaderBytes + msize,
        "checkpoint truncated (manifest) in '" + path + "'");

  json j;
  try {
    j = json::parse(bytes.substr(kHeaderBytes, msize));
  } catch (const json::exception& e) {
    throw ContractError("checkpoint '" + path +
                        "': corrupt manifest: " + e.what());
  }
  ParsedManifest out;
  try {
    j.at("model").get_to(out.man.model);
    j.at("version").get_to(out.man.version);
    out.man.config_hash =
        std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
    j.at("stages_completed").get_to(out.man.stages_completed);
    for (const auto& tj : j.at("tensors")) {
      ParsedManifest::Entry e;
      tj.at("name").get_to(e.name);
      tj.at("shape").get_to(e.dims);
      tj.at("offset").get_to(e.offset);
      out.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw ContractError("checkpoint '" + path +
                        "': corrupt manifest: " + e.what());
  }
  for (const auto& e : out.entries) {
    uint64_t n = 1;
    for (int d : e.dims) {
      check(d > 0, "checkpoint '" + path + "': bad shape for '" + e.name + "'");
      n *= static_cast<uint64_t>(d);
    }
    check(e.offset == out.total_floats,
          "checkpoint '" + path + "': non-contiguous tensor index");
    out.total_floats += n;
  }
  const size_t expected = kHeaderBytes + msize + out.total_floats * 4;
  check(bytes.size() >= expected,
        "checkpoint truncated (payload) in '" + path + "'");
  check(bytes.size() == expected,
        "checkpoint '" + path + "': trailing bytes after payload");
  return out;
}

}  // namespace

bool CheckpointManifest::has_stage(const std::string& stage) const {
  return std::find(stages_completed.begin(), stages_completed.end(), stage) !=
         stages_completed.end();
}

void save_checkpoint(const ndnet::ParamSet& ps, const CheckpointManifest& man,
                     const std::string& path) {
  json mj = manifest_to_json(man);
  json tensors = json::array();
  uint64_t offset = 0;
  for (ndnet::ParamId id : ps.all_ids()) {
    const auto& v = ps.value(id);
    json tj;
    tj["name"] = ps.name(id);
    tj["shape"] = v.shape.dims;
    tj["offset"] = offset;
    tensors.push_back(std::move(tj));
    offset += static_cast<uint64_t>(v.numel());
  }
  mj["tensors"] = std::move(tensors);
  const std::string manifest = mj.dump();

  std::string out;
  out.reserve(kHeaderBytes + manifest.size() + offset * 4);
  out.append(kMagic, 8);
  put_u32(out, kFormatVersion);
  put_u64(out, manifest.size());
  out += manifest;
  for (ndnet::ParamId id : ps.all_ids())
    for (float f : ps.value(id).data) put_u32(out, std::bit_cast<uint32_t>(f));

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  check(os.good(), "save_checkpoint: cannot open '" + path + "'");
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  check(os.good(), "save_checkpoint: write failed for '" + path + "'");
}

LoadResult load_checkpoint(ndnet::ParamSet& ps, const std::string& path,
                           uint64_t expected_config_hash) {
  const std::string bytes = read_file_bytes(path);
  ParsedManifest pm = parse_manifest(bytes, path);
  const size_t payload =
      kHeaderBytes + get_u64(bytes, 12);  // first float's byte offset

  std::unordered_set<std::string> seen;
  for (const auto& e : pm.entries) {
    check(seen.insert(e.name).second,
          "checkpoint '" + path + "': duplicate tensor '" + e.name + "'");
    check(ps.has(e.name), "checkpoint '" + path + "': tensor '" + e.name +
                              "' is not a parameter of the current model");
    auto& v = ps.value(ps.id(e.name));
    check(v.shape.dims == e.dims,
          "checkpoint '" + path + "': shape mismatch for '" + e.name +
              "': file " + ndnet::Shape(e.dims).str() + " vs model " +
              v.shape.str());
    const size_t base = payload + static_cast<size_t>(e.offset) * 4;
    for (int64_t i = 0; i < v.numel(); ++i)
      v.data[static_cast<size_t>(i)] = std::bit_cast<float>(
          get_u32(bytes, base + static_cast<size_t>(i) * 4));
  }
  for (ndnet::ParamId id : ps.all_ids())
    check(seen.count(ps.name(id)) == 1, "checkpoint '" + path +
                                            "': missing tensor '" +
                                            ps.name(id) + "'");

  LoadResult res;
  res.manifest = std::move(pm.man);
  res.config_hash_matched = res.manifest.config_hash == expected_config_hash;
  return res;
}

CheckpointManifest read_manifest(const std::string& path) {
  return parse_manifest(read_file_bytes(path), path).man;
}

std::vector<std::string> stage_prerequisites(const std::string& stage) {
  if (stage == "vae") return {};
  if (stage == "imagery") return {"vae"};
  if (stage == "bc") return {"vae", "imagery"};
  if (stage == "rl") return {"vae", "imagery", "bc"};
  throw ContractError("unknown training stage '" + stage + "'");
}

void require_stages(const CheckpointManifest& man,
                    const std::vector<std::string>& needed) {
  std::string missing;
  for (const auto& s : needed)
    if (!man.has_stage(s)) missing += missing.empty() ? s : ", " + s;
  if (missing.empty()) return;
  std::string have;
  for (const auto& s : man.stages_completed)
    have += have.empty() ? s : ", " + s;
  throw ContractError("checkpoint missing prerequisite stage(s): " + missing +
                      " (completed: " + (have.empty() ? "none" : have) + ")");
}

// ---- config -----------------------------------------------------------------

namespace {

void check_keys(const json& j, const std::string& section,
                const std::set<std::string>& allowed) {
  check(j.is_object(), "config: '" + section + "' must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    check(allowed.count(it.key()) == 1,
          "config: unknown key '" + it.key() + "' in '" + section + "'");
}

template <typename T>
void opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      j.at(key).get_to(out);
    } catch (const json::exception& e) {
      throw ContractError(std::string("config: bad value for '") + key +
                          "': " + e.what());
    }
  }
}

std::string value_target_name(trainer::ValueTarget v) {
  return v == trainer::ValueTarget::ReturnToGo ? "return_to_go" : "one_step";
}

trainer::ValueTarget value_target_from_name(const std::string& s) {
  if (s == "return_to_go") return trainer::ValueTarget::ReturnToGo;
  if (s == "one_step") return trainer::ValueTarget::OneStep;
  throw ContractError("config: rl.value_target must be 'return_to_go' or "
                      "'one_step', got '" + s + "'");
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ContractError(std::string("config: invalid JSON: ") + e.what());
  }
  check_keys(j, "<top-level>",
             {"seed", "world", "data", "mind", "agent", "vae", "imagery", "bc",
              "rl", "rewards", "eval"});
  RunConfig cfg;
  opt(j, "seed", cfg.seed);

  if (j.contains("world")) {
    const json& s = j["world"];
    check_keys(s, "world", {"houses", "rooms", "grid_size"});
    opt(s, "houses", cfg.world.houses);
    opt(s, "rooms", cfg.world.rooms);
    opt(s, "grid_size", cfg.world.grid_size);
  }
  if (j.contains("data")) {
    const json& s = j["data"];
    check_keys(s, "data", {"episodes_per_house", "spawn_k", "eval_fraction"});
    opt(s, "episodes_per_house", cfg.data.episodes_per_house);
    opt(s, "spawn_k", cfg.data.spawn_k);
    opt(s, "eval_fraction", cfg.data.eval_fraction);
  }
  if (j.contains("mind")) {
    const json& s = j["mind"];
    check_keys(s, "mind",
               {"frame_size", "latent", "enc_channels", "dec_base",
                "imagery_hidden", "mixtures"});
    opt(s, "frame_size", cfg.mind.frame_size);
    opt(s, "latent", cfg.mind.latent);
    opt(s, "enc_channels", cfg.mind.enc_channels);
    opt(s, "dec_base", cfg.mind.dec_base);
    opt(s, "imagery_hidden", cfg.mind.imagery_hidden);
    opt(s, "mixtures", cfg.mind.mixtures);
  }
  if (j.contains("agent")) {
    const json& s = j["agent"];
    check_keys(s, "agent",
               {"question_embed", "q_dim", "planner_hidden",
                "controller_hidden", "qa_hidden"});
    opt(s, "question_embed", cfg.agent.question_embed);
    opt(s, "q_dim", cfg.agent.q_dim);
    opt(s, "planner_hidden", cfg.agent.planner_hidden);
    opt(s, "controller_hidden", cfg.agent.controller_hidden);
    opt(s, "qa_hidden", cfg.agent.qa_hidden);
  }
  if (j.contains("vae")) {
    const json& s = j["vae"];
    check_keys(s, "vae", {"batch", "lr", "beta", "clip", "epochs", "seed"});
    opt(s, "batch", cfg.vae.batch);
    opt(s, "lr", cfg.vae.lr);
    opt(s, "beta", cfg.vae.beta);
    opt(s, "clip", cfg.vae.clip);
    opt(s, "epochs", cfg.vae.epochs);
    opt(s, "seed", cfg.vae.seed);
  }
  if (j.contains("imagery")) {
    const json& s = j["imagery"];
    check_keys(s, "imagery", {"batch", "lr", "clip", "epochs", "seed"});
    opt(s, "batch", cfg.imagery.batch);
    opt(s, "lr", cfg.imagery.lr);
    opt(s, "clip", cfg.imagery.clip);
    opt(s, "epochs", cfg.imagery.epochs);
    opt(s, "seed", cfg.imagery.seed);
  }
  if (j.contains("bc")) {
    const json& s = j["bc"];
    check_keys(s, "bc",
               {"batch", "lr", "clip", "max_epochs", "curriculum_step",
                "advance_success", "advance_accuracy", "advance_window",
                "use_imagery", "seed"});
    opt(s, "batch", cfg.bc.batch);
    opt(s, "lr", cfg.bc.lr);
    opt(s, "clip", cfg.bc.clip);
    opt(s, "max_epochs", cfg.bc.max_epochs);
    opt(s, "curriculum_step", cfg.bc.curriculum_step);
    opt(s, "advance_success", cfg.bc.advance_success);
    opt(s, "advance_accuracy", cfg.bc.advance_accuracy);
    opt(s, "advance_window", cfg.bc.advance_window);
    opt(s, "use_imagery", cfg.bc.use_imagery);
    opt(s, "seed", cfg.bc.seed);
  }
  if (j.contains("rl")) {
    const json& s = j["rl"];
    check_keys(s, "rl",
               {"gamma", "lambda", "lr", "workers", "asynchronous",
                "value_weight", "entropy_weight", "updates",
                "episodes_per_update", "clip", "seed", "use_planned_reward",
                "use_imagery", "value_target", "n_max", "planner_budget"});
    opt(s, "gamma", cfg.rl.gamma);
    opt(s, "lambda", cfg.rl.lambda);
    opt(s, "lr", cfg.rl.lr);
    opt(s, "workers", cfg.rl.workers);
    opt(s, "asynchronous", cfg.rl.asynchronous);
    opt(s, "value_weight", cfg.rl.value_weight);
    opt(s, "entropy_weight", cfg.rl.entropy_weight);
    opt(s, "updates", cfg.rl.updates);
    opt(s, "episodes_per_update", cfg.rl.episodes_per_update);
    opt(s, "clip", cfg.rl.clip);
    opt(s, "seed", cfg.rl.seed);
    opt(s, "use_planned_reward", cfg.rl.use_planned_reward);
    opt(s, "use_imagery", cfg.rl.use_imagery);
    if (s.contains("value_target"))
      cfg.rl.value_target =
          value_target_from_name(s.at("value_target").get<std::string>());
    opt(s, "n_max", cfg.rl.n_max);
    opt(s, "planner_budget", cfg.rl.planner_budget);
  }
  if (j.contains("rewards")) {
    const json& s = j["rewards"];
    check_keys(s, "rewards", {"lambda_f", "n_max"});
    opt(s, "lambda_f", cfg.rewards.lambda_f);
    opt(s, "n_max", cfg.rewards.n_max);
  }
  if (j.contains("eval")) {
    const json& s = j["eval"];
    check_keys(s, "eval", {"tiers", "n_max", "planner_budget", "use_imagery"});
    opt(s, "tiers", cfg.eval.tiers);
    opt(s, "n_max", cfg.eval.n_max);
    opt(s, "planner_budget", cfg.eval.planner_budget);
    opt(s, "use_imagery", cfg.eval.use_imagery);
  }

  // Stage seeds not given explicitly derive from the top-level seed, so one
  // number reproduces the whole pipeline while stages stay decorrelated.
  const Rng seeder(cfg.seed);
  if (!j.contains("vae") || !j["vae"].contains("seed"))
    cfg.vae.seed = seeder.derive(101).next_u64();
  if (!j.contains("imagery") || !j["imagery"].contains("seed"))
    cfg.imagery.seed = seeder.derive(102).next_u64();
  if (!j.contains("bc") || !j["bc"].contains("seed"))
    cfg.bc.seed = seeder.derive(103).next_u64();
  if (!j.contains("rl") || !j["rl"].contains("seed"))
    cfg.rl.seed = seeder.derive(104).next_u64();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(read_file_bytes(path));
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["world"] = {{"houses", cfg.world.houses},
                {"rooms", cfg.world.rooms},
                {"grid_size", cfg.world.grid_size}};
  j["data"] = {{"episodes_per_house", cfg.data.episodes_per_house},
               {"spawn_k", cfg.data.spawn_k},
               {"eval_fraction", cfg.data.eval_fraction}};
  j["mind"] = {{"frame_size", cfg.mind.frame_size},
               {"latent", cfg.mind.latent},
               {"enc_channels", cfg.mind.enc_channels},
               {"dec_base", cfg.mind.dec_base},
               {"imagery_hidden", cfg.mind.imagery_hidden},
               {"mixtures", cfg.mind.mixtures}};
  j["agent"] = {{"question_embed", cfg.agent.question_embed},
                {"q_dim", cfg.agent.q_dim},
                {"planner_hidden", cfg.agent.planner_hidden},
                {"controller_hidden", cfg.agent.controller_hidden},
                {"qa_hidden", cfg.agent.qa_hidden}};
  j["vae"] = {{"batch", cfg.vae.batch}, {"lr", cfg.vae.lr},
              {"beta", cfg.vae.beta},   {"clip", cfg.vae.clip},
              {"epochs", cfg.vae.epochs}, {"seed", cfg.vae.seed}};
  j["imagery"] = {{"batch", cfg.imagery.batch},
                  {"lr", cfg.imagery.lr},
                  {"clip", cfg.imagery.clip},
                  {"epochs", cfg.imagery.epochs},
                  {"seed", cfg.imagery.seed}};
  j["bc"] = {{"batch", cfg.bc.batch},
             {"lr", cfg.bc.lr},
             {"clip", cfg.bc.clip},
             {"max_epochs", cfg.bc.max_epochs},
             {"curriculum_step", cfg.bc.curriculum_step},
             {"advance_success", cfg.bc.advance_success},
             {"advance_accuracy", cfg.bc.advance_accuracy},
             {"advance_window", cfg.bc.advance_window},
             {"use_imagery", cfg.bc.use_imagery},
             {"seed", cfg.bc.seed}};
  j["rl"] = {{"gamma", cfg.rl.gamma},
             {"lambda", cfg.rl.lambda},
             {"lr", cfg.rl.lr},
             {"workers", cfg.rl.workers},
             {"asynchronous", cfg.rl.asynchronous},
             {"value_weight", cfg.rl.value_weight},
             {"entropy_weight", cfg.rl.entropy_weight},
             {"updates", cfg.rl.updates},
             {"episodes_per_update", cfg.rl.episodes_per_update},
             {"clip", cfg.rl.clip},
             {"seed", cfg.rl.seed},
             {"use_planned_reward", cfg.rl.use_planned_reward},
             {"use_imagery", cfg.rl.use_imagery},
             {"value_target", value_target_name(cfg.rl.value_target)},
             {"n_max", cfg.rl.n_max},
             {"planner_budget", cfg.rl.planner_budget}};
  j["rewards"] = {{"lambda_f", cfg.rewards.lambda_f},
                  {"n_max", cfg.rewards.n_max}};
  j["eval"] = {{"tiers", cfg.eval.tiers},
               {"n_max", cfg.eval.n_max},
               {"planner_budget", cfg.eval.planner_budget},
               {"use_imagery", cfg.eval.use_imagery}};
  return j.dump(2) + "\n";
}

uint64_t config_hash(const RunConfig& cfg) {
  return fnv1a64(run_config_to_json(cfg));
}

// ---- evaluation -------------------------------------------------------------

EvalReport evaluate(const trainer::ModelBundle& m,
                    const trainer::WorldData& data,
                    const std::vector<eqagen::Episode>& split,
                    const EvalOptions& opts) {
  check(!split.empty(), "evaluate: split must be non-empty");
  check(!opts.tiers.empty(), "evaluate: at least one tier required");

  EvalReport rep;
  rep.config_fingerprint = hash_hex(opts.config_hash);
  rep.notes =
      "greedy policy; fallback spawns excluded from tier means; step-budget "
      "timeouts included (the forced Stop defines d_T)";

  agent::FeatureCache cache;
  const Rng seeder(opts.seed);
  for (size_t ti = 0; ti < opts.tiers.size(); ++ti) {
    const int offset = opts.tiers[ti];
    check(offset > 0, "evaluate: tier offsets must be positive");
    TierResult tr;
    tr.offset = offset;
    double d_sum = 0.0;
    int correct = 0;
    int64_t step_sum = 0;
    for (size_t ei = 0; ei < split.size(); ++ei) {
      const auto& base = split[ei];
      const auto& house = trainer::house_by_id(data, base.house_id);
      const uint64_t tag = (ti * split.size() + ei) * 2;
      auto spawn = gridhouse::spawn_at_distance(
          house, base.target_cell, offset, seeder.derive(tag).next_u64());
      if (spawn.fallback || spawn.distance != offset) {
        tr.excluded += 1;
        continue;
      }
      eqagen::Episode ep = base;
      ep.spawn = spawn.pose;
      ep.spawn_k = offset;
      ep.spawn_fallback = false;

      agent::RunOptions ro;
      ro.mode = agent::RunMode::Greedy;
      ro.seed = seeder.derive(tag + 1).next_u64();
      ro.use_imagery = opts.use_imagery;
      ro.compute_rewards = true;
      ro.use_planned_reward = false;  // not needed for d_delta / accuracy
      ro.rcfg = opts.rcfg;
      ro.n_max = opts.n_max;
      ro.planner_budget = opts.planner_budget;
      ro.cache = &cache;
      auto traj = agent::run_episode(m.ps, m.ah, m.mh, house, ep, ro);

      const int d0 = spawn.distance;
      const int dT =
          gridhouse::geodesic_dist(house, traj.final_pose, ep.target_cell);
      d_sum += static_cast<double>(d0 - dT);
      correct += traj.answer_correct ? 1 : 0;
      step_sum += traj.primitive_actions;
      tr.timeouts += traj.forced_stop ? 1 : 0;
      tr.episodes += 1;
    }
    if (tr.episodes > 0) {
      tr.mean_d_delta = d_sum / tr.episodes;
      tr.qa_accuracy = static_cast<double>(correct) / tr.episodes;
      tr.mean_steps = static_cast<double>(step_sum) / tr.episodes;
    }
    rep.tiers.push_back(tr);
  }
  return rep;
}

std::string EvalReport::to_json_string() const {
  json j;
  j["config_fingerprint"] = config_fingerprint;
  j["notes"] = notes;
  json arr = json::array();
  for (const auto& t : tiers) {
    json tj;
    tj["offset"] = t.offset;
    tj["episodes"] = t.episodes;
    tj["excluded"] = t.excluded;
    tj["timeouts"] = t.timeouts;
    tj["mean_d_delta"] = t.mean_d_delta;
    tj["qa_accuracy"] = t.qa_accuracy;
    tj["mean_steps"] = t.mean_steps;
    arr.push_back(std::move(tj));
  }
  j["tiers"] = std::move(arr);
  return j.dump(2) + "\n";
}

// ---- visual dumps -----------------------------------------------------------

void write_ppm(const std::string& path, int width, int height,
               const std::vector<uint8_t>& rgb) {
  check(width >= 1 && height >= 1, "write_ppm: empty image");
  check(rgb.size() == static_cast<size_t>(width) * height * 3,
        "write_ppm: buffer size does not match dimensions");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  check(os.good(), "write_ppm: cannot open '" + path + "'");
  os << "P6\n" << width << ' ' << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(rgb.data()),
           static_cast<std::streamsize>(rgb.size()));
  check(os.good(), "write_ppm: write failed for '" + path + "'");
}

std::vector<uint8_t> frame_to_rgb(const ndnet::Tensor& frame) {
  check(frame.shape.rank() == 3 && frame.shape.dims[0] == 3,
        "frame_to_rgb: expected [3,H,W], got " + frame.shape.str());
  const int h = frame.shape.dims[1], w = frame.shape.dims[2];
  std::vector<uint8_t> rgb(static_cast<size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        float v = frame.data[(static_cast<size_t>(ch) * h + y) * w + x];
        v = std::min(1.f, std::max(0.f, v));
        rgb[(static_cast<size_t>(y) * w + x) * 3 + ch] =
            static_cast<uint8_t>(std::lround(v * 255.f));
      }
  return rgb;
}

namespace {
struct Px {
  uint8_t r, g, b;
};
constexpr Px kTrajColors[6] = {{220, 40, 40},  {40, 150, 60},  {50, 90, 220},
                               {235, 150, 40}, {160, 60, 190}, {30, 170, 170}};
}  // namespace

std::vector<uint8_t> render_topdown(
    const gridhouse::HouseMap& house,
    const std::vector<std::vector<gridhouse::AgentPose>>& trajectories,
    int cell_scale) {
  check(cell_scale >= 4, "render_topdown: cell_scale must be >= 4");
  const int s = cell_scale;
  const int W = house.cols * s, H = house.rows * s;
  std::vector<uint8_t> img(static_cast<size_t>(W) * H * 3);

  auto fill = [&](int r, int c, int margin, Px px) {
    for (int dy = margin; dy < s - margin; ++dy)
      for (int dx = margin; dx < s - margin; ++dx) {
        const size_t at =
            (static_cast<size_t>(r * s + dy) * W + (c * s + dx)) * 3;
        img[at] = px.r;
        img[at + 1] = px.g;
        img[at + 2] = px.b;
      }
  };

  for (int r = 0; r < house.rows; ++r)
    for (int c = 0; c < house.cols; ++c) {
      switch (house.cell(r, c)) {
        case gridhouse::Cell::Wall: fill(r, c, 0, {0, 0, 0}); break;
        case gridhouse::Cell::Floor: fill(r, c, 0, {255, 255, 255}); break;
        case gridhouse::Cell::Door: fill(r, c, 0, {190, 190, 190}); break;
      }
    }
  for (const auto& obj : house.objects) {
    const auto col =
        gridhouse::palette_color(gridhouse::palette_index(obj.kind, obj.color));
    fill(obj.cell.r, obj.cell.c, 1,
         {static_cast<uint8_t>(std::lround(col[0] * 255)),
          static_cast<uint8_t>(std::lround(col[1] * 255)),
          static_cast<uint8_t>(std::lround(col[2] * 255))});
  }

  for (size_t i = 0; i < trajectories.size(); ++i) {
    const auto& traj = trajectories[i];
    if (traj.empty()) continue;
    const Px px = kTrajColors[i % 6];
    for (const auto& pose : traj) {
      check(house.in_bounds(pose.cell.r, pose.cell.c),
            "render_topdown: trajectory pose outside the grid");
      fill(pose.cell.r, pose.cell.c, 2, px);
    }
    const Px dark = {static_cast<uint8_t>(px.r / 2),
                     static_cast<uint8_t>(px.g / 2),
                     static_cast<uint8_t>(px.b / 2)};
    fill(traj.front().cell.r, traj.front().cell.c, s / 3, dark);
    fill(traj.back().cell.r, traj.back().cell.c, s / 3, {0, 0, 0});
  }
  return img;
}

void dump_topdown(
    const gridhouse::HouseMap& house,
    const std::vector<std::vector<gridhouse::AgentPose>>& trajectories,
    const std::string& path, int cell_scale) {
  write_ppm(path, house.cols * cell_scale, house.rows * cell_scale,
            render_topdown(house, trajectories, cell_scale));
}

std::vector<std::string> dump_mental_rollout(
    const ndnet::ParamSet& ps, const mind::MindHandles& mh,
    const gridhouse::HouseMap& house, const agent::TrajectoryRecord& traj,
    int step_index, const std::string& out_dir, uint64_t seed,
    double temperature) {
  check(step_index >= 0 &&
            static_cast<size_t>(step_index) < traj.steps.size(),
        "dump_mental_rollout: step index out of range");
  std::filesystem::create_directories(out_dir);
  const int F = mh.cfg.frame_size;
  std::vector<std::string> written;
  auto emit = [&](const ndnet::Tensor& frame, const char* stem, int n) {
    char name[32];
    std::snprintf(name, sizeof name, "%s_%02d.ppm", stem, n);
    const std::string path = out_dir + "/" + name;
    write_ppm(path, F, F, frame_to_rgb(frame));
    written.push_back(path);
  };

  const auto& st0 = traj.steps[static_cast<size_t>(step_index)];
  emit(gridhouse::render(house, st0.pose, F).tensor(), "real", 0);

  // The planner's pending action run, one macro-step per imagery transition.
  std::vector<gridhouse::Action> actions;
  std::vector<gridhouse::AgentPose> reached;
  for (size_t j = static_cast<size_t>(step_index);
       j < traj.steps.size() &&
       traj.steps[j].action != gridhouse::Action::Stop;
       ++j) {
    actions.push_back(traj.steps[j].action);
    reached.push_back(j + 1 < traj.steps.size() ? traj.steps[j + 1].pose
                                                : traj.final_pose);
  }
  Rng rng(seed);
  std::vector<mind::RolloutStep> roll;
  if (!actions.empty())
    roll = mind::imagine_rollout(ps, mh, st0.feat,
                                 mind::initial_imagery_state(mh.cfg), actions,
                                 rng, temperature);
  for (size_t i = 0; i < roll.size(); ++i) {
    emit(mind::decode(ps, mh, roll[i].sample), "mental",
         static_cast<int>(i) + 1);
    emit(gridhouse::render(house, reached[i], F).tensor(), "real",
         static_cast<int>(i) + 1);
  }
  return written;
}

}  // namespace mindhouse::harness
