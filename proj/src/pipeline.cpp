// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

#include "stran/pipeline.hpp"

#include <cstdio>
#include <fstream>

#include "stran/parallel.hpp"

namespace stran::pipeline {

namespace {

std::string numbered(const char* prefix, int i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%04d%s", prefix, i, ext);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw io::IoError("cannot create directory " + dir.string() + (ec ? ": " + ec.message() : ""));
}

}  // namespace

fs::path prepare(const PrepareOptions& opt) {
  try {
    opt.degrade.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  if (!fs::is_directory(opt.input)) throw io::IoError("input directory not found: " + opt.input.string());
  std::vector<fs::path> clip_dirs;
  for (const auto& e : fs::directory_iterator(opt.input))
    if (e.is_directory()) clip_dirs.push_back(e.path());
  std::sort(clip_dirs.begin(), clip_dirs.end());
  if (clip_dirs.empty()) throw Error("no clip subdirectories in " + opt.input.string());

  io::Manifest manifest;
  manifest.degrade = opt.degrade;
  for (const auto& dir : clip_dirs) {
    const auto frames = io::list_frames(dir);
    if (frames.empty()) throw Error("clip directory has no frames: " + dir.string());
    io::ManifestClip clip;
    clip.id = dir.filename().string();
    clip.reference = frames.front();
    for (std::size_t i = 0; i < frames.size(); ++i)
      clip.frames.push_back({opt.out / clip.id / numbered("lr_", static_cast<int>(i), ".stfr"),
                             frames[i]});
    manifest.clips.push_back(std::move(clip));
  }

  for (const auto& clip : manifest.clips) {
    ensure_dir(opt.out / clip.id);
    // Every task writes its own file, so output bytes do not depend on
    // scheduling.
    parallel_for(clip.frames.size(), [&](std::size_t i) {
      const auto& f = clip.frames[i];
      Tensor hr;
      try {
        hr = io::read_image(f.hr);
      } catch (const io::FormatError&) {
        throw;
      } catch (const Error& e) {
        throw io::IoError("cannot read frame " + f.hr.string() + ": " + e.what());
      }
      try {
        io::write_stfr(f.lr, image::degrade(hr, opt.degrade));
      } catch (const ShapeError& e) {
        throw Error("frame " + f.hr.string() + ": " + e.what());
      }
    });
  }
  const fs::path path = opt.out / "manifest.csv";
  io::write_manifest(path, manifest);
  return path;
}

fs::path train(const TrainOptions& opt, const MessageFn& message) {
  // Everything that can fail on bad input happens before <out> is touched.
  const io::Manifest manifest = io::read_manifest(opt.manifest);
  io::RunConfig cfg = io::read_config(opt.config);
  cfg.model.factor = manifest.degrade.factor;
  cfg.model.validate();
  const auto data = io::load_dataset(manifest);
  std::size_t frames = 0;
  for (const auto& c : data) frames += c.lr.size();
  if (frames == 0) throw Error("manifest " + opt.manifest.string() + " lists no frames");
  auto trainer = train::Trainer::create(cfg.train, cfg.model, DType::F32);
  if (!opt.resume.empty()) io::restore_trainer(trainer, io::load_checkpoint(opt.resume));

  ensure_dir(opt.out);
  const std::string echo = io::echo_config(cfg);
  {
    std::ofstream f(opt.out / "config.txt", std::ios::trunc);
    f << echo;
  }
  if (message) message(echo);

  const fs::path log_path = opt.out / "train_log.csv";
  const bool append = !opt.resume.empty() && fs::exists(log_path);
  std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
  if (!log) throw io::IoError("cannot write " + log_path.string());
  if (!append) log << train::log_header() << '\n';

  trainer.run(data, &log, [&](train::Trainer& t) {
    if (t.epoch % t.cfg.ckpt_every == 0) {
      const fs::path p = opt.out / numbered("ckpt_e", t.epoch, ".stck");
      io::save_checkpoint(p, io::trainer_entries(t));
      if (message) message("epoch " + std::to_string(t.epoch) + ": wrote " + p.string());
    }
  });
  const fs::path final_path = opt.out / "final.stck";
  io::save_checkpoint(final_path, io::trainer_entries(trainer));
  if (message) message("wrote " + final_path.string());
  return final_path;
}

int enhance(const EnhanceOptions& opt) {
  const io::Manifest manifest = io::read_manifest(opt.manifest);
  const io::ManifestClip* clip = manifest.find(opt.clip);
  if (!clip) throw Error("unknown clip '" + opt.clip + "' in " + opt.manifest.string());
  auto gen = io::generator_from_entries(io::load_checkpoint(opt.ckpt));
  const int f = gen.cfg.factor;
  if (f != manifest.degrade.factor)
    throw Error("checkpoint factor " + std::to_string(f) + " does not match the manifest factor " +
                std::to_string(manifest.degrade.factor));
  std::vector<Tensor> lr;
  for (const auto& fr : clip->frames) lr.push_back(io::read_image(fr.lr));
  const Shape ls = lr.front().shape();
  for (std::size_t i = 0; i < lr.size(); ++i)
    if (lr[i].shape() != ls)
      throw ShapeError("clip '" + clip->id + "': frame " + clip->frames[i].lr.string() +
                           " differs in size",
                       lr[i].shape(), ls);
  Tensor ref = io::read_image(opt.ref.empty() ? clip->reference : opt.ref);
  if (ref.shape().c != 3) throw ShapeError("reference must have 3 channels", ref.shape());
  // A gallery reference of another size is resampled to the output extent.
  if (ref.shape().h != ls.h * f || ref.shape().w != ls.w * f)
    ref = kernels::clamp(image::resize(ref, ls.h * f, ls.w * f, image::Kernel::Bicubic), 0, 1);

  ensure_dir(opt.out);
  for (std::size_t t = 0; t < lr.size(); ++t) {
    const Tensor window = backbone::assemble_window(lr, static_cast<int>(t), gen.cfg.radius);
    io::write_ppm(opt.out / numbered("frame_", static_cast<int>(t), ".ppm"),
                  backbone::enhance(gen, window, ref));
  }
  return static_cast<int>(lr.size());
}

std::vector<metrics::FrameMetrics> evaluate(const EvalOptions& opt) {
  const auto pred = io::list_frames(opt.pred);
  const auto gt = io::list_frames(opt.gt);
  if (pred.size() != gt.size())
    throw Error("frame count mismatch: " + opt.pred.string() + " has " +
                std::to_string(pred.size()) + ", " + opt.gt.string() + " has " +
                std::to_string(gt.size()));
  if (pred.empty()) throw Error("no frames in " + opt.pred.string());
  const std::string video =
      fs::absolute(opt.gt).lexically_normal().filename().string().empty()
          ? fs::absolute(opt.gt).lexically_normal().parent_path().filename().string()
          : fs::absolute(opt.gt).lexically_normal().filename().string();
  auto ext = train::FeatureExtractor::make(train::ExtractorRole::Perceptual, DType::F64);
  std::vector<metrics::FrameMetrics> rows(pred.size());
  parallel_for(pred.size(), [&](std::size_t i) {
    const Tensor p = io::read_image(pred[i]), g = io::read_image(gt[i]);
    if (p.shape() != g.shape())
      throw ShapeError("frame size mismatch: " + pred[i].string() + " vs " + gt[i].string(),
                       p.shape(), g.shape());
    rows[i] = metrics::evaluate_frame(p.to(DType::F64), g.to(DType::F64), ext);
    rows[i].video_id = video;
    rows[i].frame_idx = static_cast<int>(i);
  });
  if (opt.out.has_parent_path()) ensure_dir(opt.out.parent_path());
  std::ofstream out(opt.out, std::ios::trunc | std::ios::binary);
  if (!out) throw io::IoError("cannot write " + opt.out.string());
  out << metrics::format_report(rows);
  return rows;
}

}  // namespace stran::pipeline
