// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

#include "stran/stran.h"

#include <cstring>
#include <exception>
#include <filesystem>
#include <new>
#include <string>

#include "stran/parallel.hpp"
#include "stran/pipeline.hpp"

struct stran_model {
  stran::backbone::Generator gen;
};

namespace {

thread_local std::string g_error;

stran_status fail(stran_status s, const std::string& msg) {
  g_error = msg;
  return s;
}

// Maps exceptions onto status codes; the message is kept per thread.
template <typename Fn>
stran_status guarded(Fn&& fn) {
  g_error.clear();
  try {
    fn();
    return STRAN_OK;
  } catch (const stran::pipeline::UsageError& e) {
    return fail(STRAN_ERR_INVALID_ARGUMENT, e.what());
  } catch (const stran::io::ConfigError& e) {
    return fail(STRAN_ERR_INVALID_ARGUMENT, e.what());
  } catch (const stran::io::FormatError& e) {
    return fail(STRAN_ERR_FORMAT, e.what());
  } catch (const stran::ShapeError& e) {
    return fail(STRAN_ERR_SHAPE, e.what());
  } catch (const stran::io::IoError& e) {
    return fail(STRAN_ERR_IO, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(STRAN_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(STRAN_ERR_RUNTIME, "out of memory");
  } catch (const std::exception& e) {
    return fail(STRAN_ERR_RUNTIME, e.what());
  } catch (...) {
    return fail(STRAN_ERR_RUNTIME, "unknown error");
  }
}

bool missing(const char* s) { return s == nullptr || *s == '\0'; }

}  // namespace

extern "C" {

const char* stran_version(void) { return "1.0.0"; }

const char* stran_last_error(void) { return g_error.c_str(); }

const char* stran_status_name(stran_status status) {
  switch (status) {
    case STRAN_OK: return "ok";
    case STRAN_ERR_INVALID_ARGUMENT: return "invalid argument";
    case STRAN_ERR_IO: return "i/o error";
    case STRAN_ERR_FORMAT: return "format error";
    case STRAN_ERR_SHAPE: return "shape error";
    case STRAN_ERR_RUNTIME: return "runtime error";
  }
  return "unknown status";
}

void stran_set_threads(unsigned n) { stran::set_worker_count(n); }

stran_status stran_prepare(const char* input_dir, const char* out_dir, int factor, double q,
                           uint64_t seed) {
  if (missing(input_dir) || missing(out_dir))
    return fail(STRAN_ERR_INVALID_ARGUMENT, "prepare: input and output directories are required");
  return guarded([&] {
    stran::pipeline::PrepareOptions o;
    o.input = input_dir;
    o.out = out_dir;
    o.degrade.factor = factor;
    o.degrade.q = q;
    o.degrade.seed = seed;
    stran::pipeline::prepare(o);
  });
}

stran_status stran_train(const char* manifest, const char* config, const char* out_dir,
                         const char* resume, stran_message_fn message, void* user) {
  if (missing(manifest) || missing(config) || missing(out_dir))
    return fail(STRAN_ERR_INVALID_ARGUMENT, "train: manifest, config and output are required");
  return guarded([&] {
    stran::pipeline::TrainOptions o;
    o.manifest = manifest;
    o.config = config;
    o.out = out_dir;
    if (!missing(resume)) o.resume = resume;
    stran::pipeline::MessageFn fn;
    if (message) fn = [&](const std::string& s) { message(s.c_str(), user); };
    stran::pipeline::train(o, fn);
  });
}

stran_status stran_config_echo(const char* config, char* buf, size_t cap, size_t* needed) {
  if (missing(config)) return fail(STRAN_ERR_INVALID_ARGUMENT, "config path is required");
  return guarded([&] {
    const std::string echo = stran::io::echo_config(stran::io::read_config(config));
    if (needed) *needed = echo.size() + 1;
    if (buf && cap > 0) {
      const std::size_t n = std::min(cap - 1, echo.size());
      std::memcpy(buf, echo.data(), n);
      buf[n] = '\0';
    }
  });
}

stran_status stran_enhance(const char* manifest, const char* ckpt, const char* clip,
                           const char* out_dir, const char* ref, int* frames_written) {
  if (missing(manifest) || missing(ckpt) || missing(clip) || missing(out_dir))
    return fail(STRAN_ERR_INVALID_ARGUMENT,
                "enhance: manifest, checkpoint, clip and output are required");
  return guarded([&] {
    stran::pipeline::EnhanceOptions o;
    o.manifest = manifest;
    o.ckpt = ckpt;
    o.clip = clip;
    o.out = out_dir;
    if (!missing(ref)) o.ref = ref;
    const int n = stran::pipeline::enhance(o);
    if (frames_written) *frames_written = n;
  });
}

stran_status stran_eval(const char* pred_dir, const char* gt_dir, const char* report) {
  if (missing(pred_dir) || missing(gt_dir) || missing(report))
    return fail(STRAN_ERR_INVALID_ARGUMENT, "eval: pred, gt and output are required");
  return guarded([&] { stran::pipeline::evaluate({pred_dir, gt_dir, report}); });
}

stran_status stran_model_load(const char* ckpt, stran_model** out) {
  if (missing(ckpt) || out == nullptr)
    return fail(STRAN_ERR_INVALID_ARGUMENT, "model_load: path and output handle are required");
  *out = nullptr;
  return guarded([&] {
    auto gen = stran::io::generator_from_entries(stran::io::load_checkpoint(ckpt));
    *out = new stran_model{std::move(gen)};
  });
}

void stran_model_free(stran_model* model) { delete model; }

size_t stran_model_param_count(const stran_model* model) {
  return model ? model->gen.count_params() : 0;
}

int stran_model_factor(const stran_model* model) { return model ? model->gen.cfg.factor : 0; }

int stran_model_window(const stran_model* model) { return model ? model->gen.cfg.frames() : 0; }

stran_status stran_model_enhance(stran_model* model, const float* window, int h, int w,
                                 const float* ref, float* out) {
  if (!model || !window || !ref || !out)
    return fail(STRAN_ERR_INVALID_ARGUMENT, "model_enhance: null argument");
  if (h < 1 || w < 1) return fail(STRAN_ERR_INVALID_ARGUMENT, "model_enhance: empty image");
  return guarded([&] {
    const auto& cfg = model->gen.cfg;
    const int f = cfg.factor;
    const stran::Shape ws{1, cfg.frames() * 3, h, w}, rs{1, 3, h * f, w * f};
    stran::Tensor win(ws, stran::DType::F32), r(rs, stran::DType::F32);
    std::memcpy(win.data<float>().data(), window, ws.numel() * sizeof(float));
    std::memcpy(r.data<float>().data(), ref, rs.numel() * sizeof(float));
    const stran::Tensor y = stran::backbone::enhance(model->gen, win, r).to(stran::DType::F32);
    std::memcpy(out, y.data<float>().data(), rs.numel() * sizeof(float));
  });
}

}  // extern "C"
