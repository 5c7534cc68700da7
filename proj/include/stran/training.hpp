// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

// Objective, critic, optimizer and training loop.
//
// The generator loss is a weighted sum of L1 reconstruction, a Wasserstein
// adversarial term, a feature-space perceptual term (which also pulls the
// output's texture features towards the transferred textures) and a texture
// term. The critic is trained with a gradient-norm penalty, which needs the
// second-order path through the autodiff graph.

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "stran/autodiff.hpp"
#include "stran/backbone.hpp"

namespace stran::train {

struct LossWeights {
  double rec = 1.0;
  double adv = 5e-4;
  double per = 1e-2;
  double tex = 1e-2;
  double gp_lambda = 10.0;

  void validate() const;
};

enum class ExtractorRole { Perceptual, Texture };

/// Fixed random conv stack (3->16 s1, 16->32 s2, 32->32 s1, 32->64 s2, each
/// followed by leaky ReLU). Parameters are frozen; gradients reach only the
/// image.
struct FeatureExtractor {
  ExtractorRole role = ExtractorRole::Perceptual;
  ag::ParamSet params;
  std::vector<int> taps;  // 1-based layer indices

  static std::uint64_t default_seed(ExtractorRole role);
  static FeatureExtractor make(ExtractorRole role, DType dtype);
  static FeatureExtractor make(ExtractorRole role, DType dtype, std::uint64_t seed);

  std::vector<ag::Var> features(ag::Graph& g, const ag::Var& img);
  std::vector<Tensor> features(const Tensor& img);
};

/// Strided conv critic without normalisation: three stride-2 convs with
/// leaky ReLU, a 1-channel conv, then the per-sample spatial mean.
struct Discriminator {
  ag::ParamSet params;

  static Discriminator init(std::uint64_t seed, DType dtype = DType::F32,
                            int width = 32);
  ag::Var forward(ag::Graph& g, const ag::Var& x);  // -> [n,1,1,1]
};

using Critic = std::function<ag::Var(ag::Graph&, const ag::Var&)>;

ag::Var loss_rec(const ag::Var& gt, const ag::Var& out);

/// mean_n (||grad_x D(x_hat_n)|| - 1)^2 with x_hat = u*real + (1-u)*fake and
/// one u ~ U(0,1) per sample drawn from rng. Differentiable in the critic's
/// parameters.
ag::Var gradient_penalty(ag::Graph& g, const Critic& critic, const Tensor& real,
                         const Tensor& fake, std::mt19937_64& rng);
/// Same penalty for explicit interpolation coefficients.
ag::Var gradient_penalty(ag::Graph& g, const Critic& critic, const Tensor& real,
                         const Tensor& fake, const std::vector<double>& u);

/// mean D(fake) - mean D(real) + gp_lambda * penalty.
ag::Var loss_d(ag::Graph& g, const Critic& critic, const Tensor& real,
               const Tensor& fake, double gp_lambda, std::mt19937_64& rng);
/// -mean D(fake).
ag::Var loss_adv(ag::Graph& g, const Critic& critic, const ag::Var& fake);

/// Sum over taps of the mean squared feature difference, plus the mean
/// squared difference between the coarsest texture-extractor features of the
/// output and `texture` (skipped when `texture` is undefined).
ag::Var loss_per(ag::Graph& g, FeatureExtractor& ext, ag::ParamSet& lte,
                 const ag::Var& out, const ag::Var& gt, const Tensor& texture);
ag::Var loss_tex(ag::Graph& g, FeatureExtractor& ext, const ag::Var& out,
                 const ag::Var& gt);

struct LossParts {
  double rec = 0, adv = 0, per = 0, tex = 0;
};
/// Weighted sum; during warmup only the reconstruction term counts.
double total_loss(const LossParts& parts, const LossWeights& w, bool warmup = false);

class Adam {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  /// Moments are sized from `ps` on first use. Frozen parameters are skipped.
  void step(ag::ParamSet& ps, double lr);
  std::int64_t steps() const { return t_; }

  /// Moment tensors in parameter order; exposed for checkpointing.
  std::vector<Tensor>& m() { return m_; }
  std::vector<Tensor>& v() { return v_; }
  const std::vector<Tensor>& m() const { return m_; }
  const std::vector<Tensor>& v() const { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }
  void ensure(const ag::ParamSet& ps);

 private:
  std::vector<Tensor> m_, v_;
  std::int64_t t_ = 0;
};

struct TrainSchedule {
  int epochs = 30;
  int warmup = 3;
  int halve_at = 20;
  double lr0 = 1e-3;

  void validate() const;
  /// Epochs are 1-based.
  double lr(int epoch) const { return epoch <= halve_at ? lr0 : lr0 / 2; }
  bool adversarial(int epoch) const { return epoch > warmup; }
};

struct TrainConfig {
  TrainSchedule schedule;
  LossWeights weights;
  int batch = 4;
  int lr_patch = 24;
  int ckpt_every = 5;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Small-machine defaults (the member initialisers).
TrainConfig desk_preset();
/// Full-length recipe: 500 epochs, 20 reconstruction-only warmup epochs,
/// learning rate halved after epoch 300.
TrainConfig full_preset();

struct Clip {
  std::string id;
  std::vector<Tensor> lr;  // [1,3,h,w] each
  std::vector<Tensor> hr;  // [1,3,f*h,f*w] each
  Tensor ref;              // [1,3,f*h,f*w]
};

struct Batch {
  Tensor window;  // [b, frames*3, p, p]
  Tensor ref;     // [b, 3, f*p, f*p]
  Tensor gt;      // [b, 3, f*p, f*p]

  static Batch stack(const std::vector<Batch>& items);
};

/// Random crop of one frame and its window; the reference is cropped at
/// the co-located window.
Batch sample_triple(const Clip& clip, int t, int radius, int factor, int lr_patch,
                    std::mt19937_64& rng);

/// Independent engine for (seed, epoch, step): runs are resumable.
std::mt19937_64 step_rng(std::uint64_t seed, int epoch, std::int64_t step);

struct LossReport {
  int epoch = 0;
  std::int64_t step = 0;
  LossParts parts;
  double total = 0;
  double d_loss = 0;
  double lr = 0;
  bool adversarial = false;
};

/// Everything that evolves during training. Not copyable.
struct Trainer {
  TrainConfig cfg;
  backbone::Generator gen;
  Discriminator disc;
  FeatureExtractor per_ext;
  FeatureExtractor tex_ext;
  Adam opt_g;
  Adam opt_d;
  int epoch = 0;          // completed epochs
  std::int64_t step = 0;  // completed steps

  static Trainer create(const TrainConfig& cfg, const backbone::BackboneConfig& bcfg,
                        DType dtype = DType::F32);

  /// One critic update (after warmup) then one generator update.
  LossReport train_step(const Batch& batch, int epoch, std::mt19937_64& rng);

  /// Steps per epoch for a dataset: ceil(frames / batch).
  int steps_per_epoch(const std::vector<Clip>& data) const;

  /// Runs the remaining epochs. Appends one log line per step and calls
  /// `on_epoch` after each completed epoch.
  void run(const std::vector<Clip>& data, std::ostream* log,
           const std::function<void(Trainer&)>& on_epoch = {});
};

/// "epoch,step,l_rec,l_adv,l_per,l_tex,lr"
std::string log_header();
std::string log_line(const LossReport& r);

}  // namespace stran::train
