#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "a3rnn/env.hpp"

// On-disk layout of a demonstration set:
//
//   DIR/manifest.json         seed, environment config and its hash, joint
//                             limits, slot counts, one entry per episode
//   DIR/episode_NNN.bin       one binary file per episode
//
// Episode file, little-endian:
//   char[4]  magic "A3EP"
//   u32      format version (1)
//   u32      T, C, H, W, D_J
//   u8       frame dtype tag (1 = uint8), u8 joint dtype tag (2 = float32), u16 reserved
//   u32      slot
//   f64      box center x, y (pixels)
//   u64      episode seed
//   u8[T*C*H*W]   frames, row-major, value = byte / 255
//   f32[T*D_J]    joints, row-major

namespace a3rnn::data {

struct EpisodeRef {
  std::string file;
  int slot = 0;
  std::uint64_t seed = 0;
  std::uint64_t content_hash = 0;  ///< FNV-1a of the episode file bytes
};

struct DatasetManifest {
  int format_version = 1;
  std::uint64_t seed = 0;
  env::EnvConfig env;
  std::uint64_t config_hash = 0;
  std::array<int, 3> slot_counts{};
  std::vector<EpisodeRef> episodes;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<env::Episode> episodes;
};

/// `per_slot` seeded episodes for each of `slots` box positions.
Dataset generate_dataset(int slots, int per_slot, std::uint64_t seed, const env::EnvConfig& config);

void save_dataset(const std::filesystem::path& dir, Dataset& dataset);
/// Throws CorruptDatasetError on hash mismatch or malformed files.
Dataset load_dataset(const std::filesystem::path& dir);

std::vector<unsigned char> encode_episode(const env::Episode& episode);
env::Episode decode_episode(std::span<const unsigned char> bytes);

}  // namespace a3rnn::data
