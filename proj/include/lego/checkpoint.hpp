#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lego/model.hpp"

namespace lego {

using Model = TransformerModel<float>;

// Where and when a snapshot was taken. Epoch and experience are 1-based;
// epoch 0 means "before any training".
struct CheckpointInfo {
  int global_epoch = 0;
  int experience = 0;
};

struct CheckpointEntry {
  int global_epoch = 0;
  int experience = 0;
  std::string path;    // relative to the run directory; empty for in-memory snapshots
  std::string digest;  // SHA-256 of the serialized bytes, lowercase hex
};

using CheckpointManifest = std::vector<CheckpointEntry>;

std::string sha256_hex(std::string_view bytes);

// Binary layout:
//   "LEGOCKPT" magic, u32 version, u64 header length, JSON header
//   (model config + info + parameter table), then float32 parameter payloads
//   in header order, little endian.
std::string serialize_checkpoint(const Model& model, const CheckpointInfo& info);

struct LoadedCheckpoint {
  ModelConfig config;
  CheckpointInfo info;
  Model model;
};

// Throws CheckpointError on malformed bytes or when `expected_digest` is
// non-empty and does not match.
LoadedCheckpoint deserialize_checkpoint(std::string_view bytes, const std::string& expected_digest = {});

// Copies parameters by name into `model`. The stored config must equal the
// model's config.
void load_parameters(Model& model, std::string_view bytes, const std::string& expected_digest = {});

// Writes to `path` and returns the manifest entry (path as given).
CheckpointEntry save_checkpoint(const Model& model, const CheckpointInfo& info, const std::filesystem::path& path);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_digest = {});
void load_checkpoint_into(Model& model, const std::filesystem::path& path, const std::string& expected_digest = {});

// CSV with header "global_epoch,experience,path,sha256".
void write_manifest(const CheckpointManifest& manifest, const std::filesystem::path& path);
CheckpointManifest read_manifest(const std::filesystem::path& path);

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::string_view bytes);

}  // namespace lego
