#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mindhouse/ndnet/params.hpp"

namespace mindhouse::harness {

/// FNV-1a 64-bit over raw bytes; used for config fingerprints.
uint64_t fnv1a64(std::string_view bytes);

/// Lowercase 16-hex-digit rendering (JSON cannot hold a u64 exactly).
std::string hash_hex(uint64_t h);

/// Checkpoint file layout (little-endian throughout):
///   bytes 0..7   magic "MHCKPT01"
///   u32          manifest format version (currently 1)
///   u64          manifest byte length
///   ...          manifest JSON: model, config_hash (hex), stages_completed,
///                and a tensor index {name, shape, offset} in creation order
///   ...          all tensor payloads, raw 32-bit floats, concatenated
struct CheckpointManifest {
  std::string model = "mindhouse";
  uint32_t version = 1;
  uint64_t config_hash = 0;
  std::vector<std::string> stages_completed;  // e.g. {"vae","imagery","bc"}

  bool has_stage(const std::string& stage) const;
};

/// Serializes every parameter (named exactly once) plus the manifest.
void save_checkpoint(const ndnet::ParamSet& ps, const CheckpointManifest& man,
                     const std::string& path);

struct LoadResult {
  CheckpointManifest manifest;
  bool config_hash_matched = true;  // false is a warning, not an error
};

/// Restores every parameter of `ps` by name from the file. Errors: missing
/// file, truncated payload, corrupt manifest, tensor missing on either side,
/// or a shape mismatch against the currently built model. A config-hash
/// mismatch against `expected_config_hash` is only reported in the result.
LoadResult load_checkpoint(ndnet::ParamSet& ps, const std::string& path,
                           uint64_t expected_config_hash);

/// Reads just the manifest (stage gating, inspection).
CheckpointManifest read_manifest(const std::string& path);

/// Stages that must already be in a checkpoint before training `stage`:
/// vae -> {}, imagery -> {vae}, bc -> {vae, imagery}, rl -> {vae, imagery, bc}.
std::vector<std::string> stage_prerequisites(const std::string& stage);

/// Throws naming every prerequisite missing from the manifest.
void require_stages(const CheckpointManifest& man,
                    const std::vector<std::string>& needed);

}  // namespace mindhouse::harness
