// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end over the C interface.
//
//   stran prepare --input <dir> --out <dir> [--factor 4] [--q 0] [--seed 0]
//   stran train   --manifest <file> --config <file> --out <dir> [--resume <ckpt>]
//   stran enhance --manifest <file> --ckpt <file> --clip <id> --out <dir> [--ref <img>]
//   stran eval    --pred <dir> --gt <dir> --out <file>
//
// Exit status: 0 on success, 2 on usage errors, 1 on runtime errors.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <string>

#include "stran/stran.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

int report(stran_status s, const char* verb) {
  if (s == STRAN_OK) return kExitOk;
  std::fprintf(stderr, "stran %s: %s: %s\n", verb, stran_status_name(s), stran_last_error());
  return s == STRAN_ERR_INVALID_ARGUMENT ? kExitUsage : kExitRuntime;
}

void print_line(const char* line, void*) {
  std::fputs(line, stdout);
  const std::size_t n = std::char_traits<char>::length(line);
  if (n == 0 || line[n - 1] != '\n') std::fputc('\n', stdout);
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reference-guided video super-resolution and artifact removal"};
  app.require_subcommand(1);
  unsigned threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: STRAN_THREADS or all cores)");

  std::string input, out, manifest, config, resume, ckpt, clip, ref, pred, gt;
  int factor = 4;
  double q = 0.0;
  std::uint64_t seed = 0;

  auto* prep = app.add_subcommand("prepare", "Degrade HR clips and write a manifest");
  prep->add_option("--input", input, "Directory with one subdirectory of frames per clip")
      ->required();
  prep->add_option("--out", out, "Output directory")->required();
  prep->add_option("--factor", factor, "Downscale factor")->capture_default_str();
  prep->add_option("--q", q, "Block DCT quantisation step (0 disables)")->capture_default_str();
  prep->add_option("--seed", seed, "Seed recorded with the degradation settings")
      ->capture_default_str();

  auto* tr = app.add_subcommand("train", "Train a model from a manifest");
  tr->add_option("--manifest", manifest, "Manifest written by prepare")->required();
  tr->add_option("--config", config, "key = value training config")->required();
  tr->add_option("--out", out, "Output directory for checkpoints and logs")->required();
  tr->add_option("--resume", resume, "Checkpoint to continue from");

  auto* en = app.add_subcommand("enhance", "Enhance one clip with a trained checkpoint");
  en->add_option("--manifest", manifest, "Manifest written by prepare")->required();
  en->add_option("--ckpt", ckpt, "Checkpoint")->required();
  en->add_option("--clip", clip, "Clip id")->required();
  en->add_option("--out", out, "Output directory for frames")->required();
  en->add_option("--ref", ref, "Replacement reference image");

  auto* ev = app.add_subcommand("eval", "Compute PSNR, SSIM and feature distance");
  ev->add_option("--pred", pred, "Directory of predicted frames")->required();
  ev->add_option("--gt", gt, "Directory of ground-truth frames")->required();
  ev->add_option("--out", out, "Report file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  stran_set_threads(threads);

  if (*prep) return report(stran_prepare(input.c_str(), out.c_str(), factor, q, seed), "prepare");
  if (*tr)
    return report(stran_train(manifest.c_str(), config.c_str(), out.c_str(),
                              resume.empty() ? nullptr : resume.c_str(), print_line, nullptr),
                  "train");
  if (*en) {
    int frames = 0;
    const int code = report(stran_enhance(manifest.c_str(), ckpt.c_str(), clip.c_str(),
                                          out.c_str(), ref.empty() ? nullptr : ref.c_str(),
                                          &frames),
                            "enhance");
    if (code == kExitOk) std::printf("wrote %d frames to %s\n", frames, out.c_str());
    return code;
  }
  if (*ev) {
    const int code = report(stran_eval(pred.c_str(), gt.c_str(), out.c_str()), "eval");
    if (code == kExitOk) std::printf("wrote %s\n", out.c_str());
    return code;
  }
  return kExitUsage;
}
