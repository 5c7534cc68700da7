// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

// File formats: PPM and STFR images, STCK checkpoints, dataset manifests
// and key = value training configs.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stran/backbone.hpp"
#include "stran/image_ops.hpp"
#include "stran/training.hpp"

namespace stran::io {

namespace fs = std::filesystem;

/// A file or directory that is missing or cannot be read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A training config that names unknown keys or holds invalid values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content. The message carries the path and byte offset.
class FormatError : public Error {
 public:
  FormatError(const fs::path& path, std::uint64_t offset, const std::string& what);
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

// ---- Images -----------------------------------------------------------------

/// Binary PPM (P6, maxval 255) -> [1,3,h,w] F32 in [0,1].
Tensor read_ppm(const fs::path& path);
/// Values are clamped to [0,1] and stored as round(x*255).
void write_ppm(const fs::path& path, const Tensor& img);

/// "STFR", u32 width, height, channels (little endian), then f32 planes.
Tensor read_stfr(const fs::path& path);
void write_stfr(const fs::path& path, const Tensor& img);

/// Dispatches on the extension (.ppm or .stfr).
Tensor read_image(const fs::path& path);
void write_image(const fs::path& path, const Tensor& img);
bool is_image_path(const fs::path& path);

/// Image files of a directory ordered by the number in their stem, then by
/// name.
std::vector<fs::path> list_frames(const fs::path& dir);

// ---- Checkpoints -------------------------------------------------------------

struct NamedTensor {
  std::string name;
  Tensor value;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "STCK", u32 version, u32 count, then per entry: u32 name length, name,
/// u32 rank, u32 dims, f32 payload; finally the FNV-1a 64 of all preceding
/// bytes. Written to a temporary file and renamed into place.
void save_checkpoint(const fs::path& path, const std::vector<NamedTensor>& entries);
/// Verifies magic, version and checksum before returning anything.
std::vector<NamedTensor> load_checkpoint(const fs::path& path);

/// Generator configuration and weights ("config.*", "gen.*").
std::vector<NamedTensor> generator_entries(const backbone::Generator& gen);
backbone::Generator generator_from_entries(const std::vector<NamedTensor>& entries);

/// Full training state: generator, critic, optimizer moments and counters.
std::vector<NamedTensor> trainer_entries(const train::Trainer& t);
/// Restores state into a trainer built with the same configuration.
void restore_trainer(train::Trainer& t, const std::vector<NamedTensor>& entries);

// ---- Manifest -----------------------------------------------------------------

struct ManifestFrame {
  fs::path lr;
  fs::path hr;
};

struct ManifestClip {
  std::string id;
  fs::path reference;
  std::vector<ManifestFrame> frames;
};

/// Text manifest. Paths are stored relative to the manifest's directory.
///   stran-manifest,1
///   degrade,<canonical degrade config>,<hash hex>
///   clip,<id>,<frame count>,<reference>
///   frame,<lr>,<hr>          (one per frame, in order)
struct Manifest {
  image::DegradeConfig degrade;
  std::vector<ManifestClip> clips;

  const ManifestClip* find(const std::string& id) const;
};

void write_manifest(const fs::path& path, const Manifest& m);
/// Checks structure, the degrade hash and that every referenced file exists.
Manifest read_manifest(const fs::path& path);

/// Loads the frames of every clip; failures name the entry path.
std::vector<train::Clip> load_dataset(const Manifest& m);

// ---- Training config ------------------------------------------------------------

struct RunConfig {
  train::TrainConfig train = train::desk_preset();
  backbone::BackboneConfig model;
  std::string preset = "desk";
};

/// "key = value" lines; '#' starts a comment. "preset = desk|full" is
/// applied before the other keys. Unknown keys are reported together.
RunConfig parse_config(const std::string& text, const std::string& origin = "config");
RunConfig read_config(const fs::path& path);
/// One "key = value" line per setting.
std::string echo_config(const RunConfig& cfg);

}  // namespace stran::io
