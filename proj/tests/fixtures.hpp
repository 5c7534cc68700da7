// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

// Scratch directories and toy clips for file and pipeline tests.

#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "metric_oracles.hpp"
#include "stran/io.hpp"

namespace fixture {

namespace fs = std::filesystem;
using stran::Shape;
using stran::Tensor;

/// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("stran_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline std::vector<unsigned char> bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << s;
}

/// Every file below `dir`, relative path -> bytes, in sorted order.
inline std::vector<std::pair<std::string, std::vector<unsigned char>>> tree(const fs::path& dir) {
  std::vector<std::pair<std::string, std::vector<unsigned char>>> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out.emplace_back(fs::relative(e.path(), dir).string(), bytes(e.path()));
  std::sort(out.begin(), out.end());
  return out;
}

/// Writes `frames` smooth h x w PPM frames into dir/<clip>/frame_NNNN.ppm.
inline void write_clip(const fs::path& dir, const std::string& clip, int frames, int h, int w,
                       std::uint64_t seed) {
  fs::create_directories(dir / clip);
  for (int i = 0; i < frames; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04d.ppm", i);
    stran::io::write_ppm(dir / clip / name,
                         oracle::smooth_image({1, 3, h, w}, seed * 1000 + i).to(stran::DType::F32));
  }
}

}  // namespace fixture
