// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end commands: dataset preparation, training, clip enhancement and
// evaluation. Each is deterministic for fixed inputs and seed.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include "stran/io.hpp"
#include "stran/metrics.hpp"

namespace stran::pipeline {

namespace fs = std::filesystem;

/// Raised for invalid arguments (as opposed to failures while running).
class UsageError : public Error {
 public:
  using Error::Error;
};

using MessageFn = std::function<void(const std::string&)>;

struct PrepareOptions {
  fs::path input;  // one subdirectory of numbered frames per clip
  fs::path out;
  image::DegradeConfig degrade;
};

/// Writes <out>/<clip>/lr_NNNN.stfr per frame and <out>/manifest.csv. The
/// first HR frame of each clip is its reference.
fs::path prepare(const PrepareOptions& opt);

struct TrainOptions {
  fs::path manifest;
  fs::path config;
  fs::path out;
  fs::path resume;  // optional checkpoint to continue from
};

/// Runs the training loop. Writes <out>/config.txt (the echo),
/// <out>/train_log.csv, <out>/ckpt_eNNNN.stck every ckpt_every epochs and
/// <out>/final.stck. Inputs are validated before <out> is touched.
fs::path train(const TrainOptions& opt, const MessageFn& message = {});

struct EnhanceOptions {
  fs::path manifest;
  fs::path ckpt;
  std::string clip;
  fs::path out;
  fs::path ref;  // optional replacement reference image
};

/// Writes one <out>/frame_NNNN.ppm per clip frame. Returns the frame count.
int enhance(const EnhanceOptions& opt);

struct EvalOptions {
  fs::path pred;
  fs::path gt;
  fs::path out;
};

/// Pairs frames of the two directories in order and writes the report.
std::vector<metrics::FrameMetrics> evaluate(const EvalOptions& opt);

}  // namespace stran::pipeline
