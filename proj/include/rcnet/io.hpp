#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rcnet/eval.hpp"
#include "rcnet/grid.hpp"
#include "rcnet/heads.hpp"
#include "rcnet/mesh.hpp"
#include "rcnet/synth.hpp"

namespace rcnet::io {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

inline constexpr std::uint32_t kImageMagic = 0x4D494352;  // "RCIM"
inline constexpr std::uint32_t kBankMagic = 0x424E4352;   // "RCNB"
inline constexpr std::uint32_t kHeadsMagic = 0x44484352;  // "RCHD"
inline constexpr int kImageVersion = 1;
inline constexpr int kHeadsVersion = 1;
inline constexpr int kManifestSchema = 1;
inline constexpr int kLogSchema = 1;

std::string read_text(const fs::path& path);
// Creates parent directories as needed.
void write_text(const fs::path& path, const std::string& content);

// Header: five little-endian 32-bit values {magic, version, H, W, C}, then
// H*W*C float32 values, row-major, channel-fastest.
void write_image(const fs::path& path, const Image& image);
Image read_image(const fs::path& path);

// Bank layout (little-endian): int32 magic, format_version, Y, R_0..R_{Y-1}, c;
// per class: float32 extents[3], vertices R x 3, textures R x c; float32
// background mean[c], sigma; int32 in_dim, out_dim, stride, normalize,
// use_conv; float32 weight (out x in, row-major), bias, conv taps (if used);
// int32 trained_epochs.
void write_bank(const fs::path& path, const ModelBank& bank);
ModelBank read_bank(const fs::path& path);

void write_heads(const fs::path& path, const FeedForwardHeads& heads);
FeedForwardHeads read_heads(const fs::path& path);

Json world_to_json(const WorldConfig& world);
WorldConfig world_from_json(const Json& j);
Json pose_to_json(const Pose& pose);
Pose pose_from_json(const Json& j);

struct ManifestEntry {
  std::string id;
  std::string file;
  std::string mask_file;  // empty when the record is unoccluded
  std::string split;
  int class_id = 0;
  Pose pose;
  std::string level;
  std::vector<std::string> nuisances;
  double occlusion_ratio = 0.0;
  bool occlusion_flag = false;
  std::uint64_t seed = 0;
};

struct Manifest {
  WorldConfig world;
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> records;
};

// Writes dir/manifest.json, dir/images/<id>.rcim and, for occluded records,
// dir/masks/<id>.rcim (channel 0 foreground, channel 1 occluder).
void write_dataset(const fs::path& dir, const Dataset& dataset, std::uint64_t seed);
Manifest read_manifest(const fs::path& path);
std::string manifest_json(const Manifest& manifest);
// Image (and masks, when present) for one entry; paths relative to `dir`.
SceneRecord load_record(const fs::path& dir, const ManifestEntry& entry);

Json log_to_json(const LogRecord& log);
LogRecord log_from_json(const Json& j);
std::string logs_jsonl(std::span<const LogRecord> logs);
void write_logs(const fs::path& path, std::span<const LogRecord> logs);
std::vector<LogRecord> read_logs(const fs::path& path);

}  // namespace rcnet::io
