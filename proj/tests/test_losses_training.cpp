// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "stran/hash.hpp"
#include "stran/image_ops.hpp"
#include "stran/layers.hpp"
#include "stran/training.hpp"

using namespace stran;
namespace tr = stran::train;

namespace {

std::uint64_t params_hash(const ag::ParamSet& ps) {
  std::uint64_t h = kFnvOffset;
  for (const auto* p : ps.list()) h = tensor_hash(p->value, h);
  return h;
}

// Linear critic with per-sample input gradient of norm `gain`.
tr::Critic linear_critic(double gain) {
  return [gain](ag::Graph&, const ag::Var& x) {
    const double n = static_cast<double>(x.shape().numel() / x.shape().n);
    return ag::scale(ag::sample_sum(x), gain / std::sqrt(n));
  };
}

tr::Critic constant_critic(double c) {
  return [c](ag::Graph&, const ag::Var& x) {
    return ag::Var(Tensor::full({x.shape().n, 1, 1, 1}, c, x.dtype()));
  };
}

// Small clip: HR frames are smooth random fields, LR frames their
// bilinear downscales.
tr::Clip toy_clip(const std::string& id, int frames, int lr_size, std::uint64_t seed) {
  tr::Clip c;
  c.id = id;
  const int hr = 4 * lr_size;
  for (int t = 0; t < frames; ++t) {
    Tensor coarse = oracle::random_tensor({1, 3, hr / 8, hr / 8}, seed + t, 0, 1, DType::F32);
    Tensor h = image::resize(coarse, hr, hr, image::Kernel::Bicubic);
    h = kernels::clamp(h, 0, 1);
    c.hr.push_back(h);
    c.lr.push_back(image::resize(h, lr_size, lr_size, image::Kernel::Bilinear));
  }
  c.ref = c.hr[0];
  return c;
}

tr::TrainConfig small_config() {
  tr::TrainConfig cfg;
  cfg.schedule = {4, 2, 3, 1e-3};
  cfg.batch = 2;
  cfg.lr_patch = 16;
  cfg.seed = 5;
  return cfg;
}

backbone::BackboneConfig small_backbone() {
  backbone::BackboneConfig b;
  b.channels = 8;
  b.blocks = 6;
  b.head_channels = 8;
  b.inject = {1, 3, 5};
  b.taps = {4, 6};
  return b;
}

}  // namespace

TEST_CASE("reconstruction loss") {
  Tensor a = oracle::random_tensor({2, 3, 5, 7}, 1, 0, 1);
  CHECK(tr::loss_rec(ag::Var(a), ag::Var(a)).value().item() == 0.0);
  Tensor b = Tensor::full({2, 3, 5, 7}, 0.25, DType::F64);
  Tensor b5 = Tensor::full({2, 3, 5, 7}, 0.75, DType::F64);
  CHECK(tr::loss_rec(ag::Var(b), ag::Var(b5)).value().item() == doctest::Approx(0.5).epsilon(1e-15));
  Tensor c = oracle::random_tensor({2, 3, 5, 7}, 2, 0, 1);
  double direct = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) direct += std::abs(a.at(i) - c.at(i));
  direct /= static_cast<double>(a.numel());
  CHECK(std::abs(tr::loss_rec(ag::Var(a), ag::Var(c)).value().item() - direct) <= 1e-7);
  CHECK_THROWS_AS(tr::loss_rec(ag::Var(a), ag::Var(Tensor({2, 3, 5, 6}, DType::F64))), ShapeError);
}

TEST_CASE("gradient penalty analytic cases") {
  Tensor real = oracle::random_tensor({3, 3, 8, 8}, 3);
  Tensor fake = oracle::random_tensor({3, 3, 8, 8}, 4);
  std::mt19937_64 rng(1);
  {
    ag::Graph g;
    CHECK(std::abs(tr::gradient_penalty(g, linear_critic(1), real, fake, rng).value().item()) <= 1e-12);
  }
  {
    ag::Graph g;
    CHECK(tr::gradient_penalty(g, linear_critic(2), real, fake, rng).value().item() ==
          doctest::Approx(1.0).epsilon(1e-12));
  }
  {
    ag::Graph g;
    CHECK(tr::gradient_penalty(g, constant_critic(0.3), real, fake, rng).value().item() ==
          doctest::Approx(1.0).epsilon(1e-9));
  }
  {
    ag::Graph g;
    CHECK(std::abs(tr::loss_d(g, linear_critic(1), real, real, 10, rng).value().item()) <= 1e-12);
  }
  {
    ag::Graph g;
    CHECK(tr::loss_d(g, constant_critic(0.3), real, fake, 10, rng).value().item() ==
          doctest::Approx(10.0).epsilon(1e-9));
    CHECK(tr::loss_adv(g, constant_critic(0.3), ag::Var(fake)).value().item() == doctest::Approx(-0.3));
  }
}

TEST_CASE("gradient penalty is differentiable in the critic parameters") {
  auto d = tr::Discriminator::init(7, DType::F64, 2);
  for (auto* p : d.params.list())
    p->value = oracle::random_tensor(p->value.shape(), 30 + p->value.numel(), -0.6, 0.6);
  Tensor real = oracle::random_tensor({2, 3, 8, 8}, 5, 0, 1);
  Tensor fake = oracle::random_tensor({2, 3, 8, 8}, 6, 0, 1);
  const std::vector<double> u{0.3, 0.8};
  tr::Critic critic = [&](ag::Graph& g, const ag::Var& x) { return d.forward(g, x); };
  auto f = [&](ag::Graph& g) { return tr::gradient_penalty(g, critic, real, fake, u); };
  auto list = d.params.list();
  auto rep = ag::grad_check(f, list);
  INFO(rep.worst_param << "[" << rep.worst_index << "]");
  CHECK(rep.max_rel_error <= 1e-3);
}

TEST_CASE("critic training separates toy data") {
  // 1-D samples: real near +1, fake near -1.
  const int n = 16;
  Tensor real({n, 1, 1, 1}, DType::F64), fake({n, 1, 1, 1}, DType::F64);
  std::mt19937_64 data_rng(11);
  std::normal_distribution<double> noise(0, 0.05);
  for (int i = 0; i < n; ++i) {
    real.set(i, 1.0 + noise(data_rng));
    fake.set(i, -1.0 + noise(data_rng));
  }
  ag::ParamSet ps;
  std::mt19937_64 init(12);
  nn::add_conv(ps, "a", {1, 8, 1}, init, DType::F64);
  // Zero output layer: the critic starts indifferent (gap 0).
  nn::add_conv(ps, "b", {8, 1, 1, true, nn::Init::Zero}, init, DType::F64);
  tr::Critic critic = [&](ag::Graph& g, const ag::Var& x) {
    return ag::sample_mean(nn::conv(g, ps, "b", ag::leaky_relu(nn::conv(g, ps, "a", x), 0.2)));
  };
  auto gap = [&] {
    ag::Graph g(false);
    return ag::mean(critic(g, ag::Var(real))).value().item() -
           ag::mean(critic(g, ag::Var(fake))).value().item();
  };
  tr::Adam opt;
  std::mt19937_64 rng(13);
  double prev = gap();
  const double first = prev;
  bool monotone = true;
  int broke = -1;
  for (int s = 0; s < 200; ++s) {
    ag::Graph g;
    ps.zero_grad();
    g.backward(tr::loss_d(g, critic, real, fake, 10, rng));
    opt.step(ps, 1e-3);
    const double now = gap();
    if (monotone && !(now > prev)) broke = s;
    monotone = monotone && now > prev;
    prev = now;
  }
  INFO("first non-increase at step " << broke << ", gap " << first << " -> " << prev);
  CHECK(monotone);
  CHECK(prev > first + 0.1);
}

TEST_CASE("perceptual loss") {
  auto ext = tr::FeatureExtractor::make(tr::ExtractorRole::Perceptual, DType::F64);
  ag::ParamSet lte;
  std::mt19937_64 rng(3);
  tt::add_lte_params(lte, {}, rng, DType::F64);
  Tensor img = oracle::random_tensor({1, 3, 16, 16}, 20, 0, 1);
  const Tensor t_img = tt::lte_forward(lte, img).back();
  {
    ag::Graph g;
    CHECK(tr::loss_per(g, ext, lte, ag::Var(img), ag::Var(img), t_img).value().item() == 0.0);
  }
  {
    ag::Graph g;
    Tensor zero(t_img.shape(), DType::F64);
    double sq = 0;
    for (std::size_t i = 0; i < t_img.numel(); ++i) sq += t_img.at(i) * t_img.at(i);
    CHECK(tr::loss_per(g, ext, lte, ag::Var(img), ag::Var(img), zero).value().item() ==
          doctest::Approx(sq / static_cast<double>(t_img.numel())).epsilon(1e-12));
    CHECK_THROWS_AS(tr::loss_per(g, ext, lte, ag::Var(img), ag::Var(img),
                                 Tensor({1, 64, 3, 4}, DType::F64)),
                    ShapeError);
  }
  // Gradient with respect to the image and the extractor parameters that
  // are trained (LTE); the stand-in extractor stays frozen.
  ag::ParamSet img_ps;
  img_ps.add("img", oracle::random_tensor({1, 3, 16, 16}, 21, 0, 1));
  Tensor gt = oracle::random_tensor({1, 3, 16, 16}, 22, 0, 1);
  auto f = [&](ag::Graph& g) {
    return tr::loss_per(g, ext, lte, g.param(img_ps.at("img")), ag::Var(gt), t_img);
  };
  std::vector<ag::Parameter*> list{&img_ps.at("img")};
  for (auto* p : lte.list()) list.push_back(p);
  ag::GradCheckOptions opt;
  opt.sample_fraction = 0.2;
  auto rep = ag::grad_check(f, list, opt);
  INFO(rep.worst_param << "[" << rep.worst_index << "]");
  CHECK(rep.max_rel_error <= 1e-3);
  for (const auto* p : ext.params.list()) {
    CHECK(p->frozen);
  }
}

TEST_CASE("texture loss") {
  auto ext = tr::FeatureExtractor::make(tr::ExtractorRole::Texture, DType::F64);
  auto per = tr::FeatureExtractor::make(tr::ExtractorRole::Perceptual, DType::F64);
  CHECK(params_hash(ext.params) != params_hash(per.params));
  Tensor a = oracle::random_tensor({2, 3, 12, 12}, 23, 0, 1);
  Tensor b = oracle::random_tensor({2, 3, 12, 12}, 24, 0, 1);
  ag::Graph g;
  CHECK(tr::loss_tex(g, ext, ag::Var(a), ag::Var(a)).value().item() == 0.0);
  CHECK(tr::loss_tex(g, ext, ag::Var(a), ag::Var(b)).value().item() > 0.0);

  ag::ParamSet img_ps;
  img_ps.add("img", a);
  auto f = [&](ag::Graph& gg) { return tr::loss_tex(gg, ext, gg.param(img_ps.at("img")), ag::Var(b)); };
  std::vector<ag::Parameter*> list{&img_ps.at("img")};
  auto rep = ag::grad_check(f, list);
  CHECK(rep.max_rel_error <= 1e-3);
}

TEST_CASE("total loss") {
  const tr::LossWeights w;
  const tr::LossParts p{0.1, 2.0, 0.5, 0.5};
  CHECK(tr::total_loss(p, w) == doctest::Approx(0.111).epsilon(1e-14));
  CHECK(tr::total_loss(p, {0, 0, 0, 0, 0}) == 0.0);
  CHECK(tr::total_loss(p, w, true) == w.rec * p.rec);
  CHECK_THROWS(tr::total_loss(p, {1, -1, 0, 0, 10}));
}

TEST_CASE("adam") {
  SUBCASE("zero gradients leave parameters unchanged") {
    ag::ParamSet ps;
    Tensor v = oracle::random_tensor({1, 2, 3, 3}, 1);
    ps.add("w", v);
    tr::Adam opt;
    opt.step(ps, 0.1);
    CHECK(bit_equal(ps.at("w").value, v));
    CHECK(opt.steps() == 1);
  }
  SUBCASE("first step closed form") {
    ag::ParamSet ps;
    ps.add("w", Tensor::from({1, 1, 1, 3}, {1.0, -2.0, 0.5}, DType::F64));
    ps.at("w").grad = Tensor::from({1, 1, 1, 3}, {0.3, -4.0, 1e-3}, DType::F64);
    tr::Adam opt;
    opt.step(ps, 0.01);
    const double g[] = {0.3, -4.0, 1e-3}, x0[] = {1.0, -2.0, 0.5};
    for (int i = 0; i < 3; ++i) {
      // Bias correction makes m_hat = g and v_hat = g^2 after one step.
      const double want = x0[i] - 0.01 * g[i] / (std::abs(g[i]) + 1e-8);
      CHECK(ps.at("w").value.at(i) == doctest::Approx(want).epsilon(1e-14));
    }
  }
  SUBCASE("frozen parameters are skipped") {
    ag::ParamSet ps;
    ps.add("w", Tensor::full({1, 1, 1, 1}, 1.0, DType::F64), true);
    ps.at("w").grad = Tensor::full({1, 1, 1, 1}, 1.0, DType::F64);
    tr::Adam opt;
    opt.step(ps, 0.1);
    CHECK(ps.at("w").value.item() == 1.0);
  }
  SUBCASE("quadratic bowl") {
    const double target[] = {0.7, -1.3, 2.0, 0.05};
    const double curv[] = {1.0, 4.0, 0.5, 10.0};
    ag::ParamSet ps;
    ps.add("x", Tensor({1, 1, 1, 4}, DType::F64));
    tr::Adam opt;
    int steps = 0;
    double err = 1;
    for (; steps < 500 && err > 1e-4; ++steps) {
      Tensor grad({1, 1, 1, 4}, DType::F64);
      for (int i = 0; i < 4; ++i)
        grad.set(i, curv[i] * (ps.at("x").value.at(i) - target[i]));
      ps.at("x").grad = grad;
      // Step size decays so the iterate settles inside the tolerance.
      opt.step(ps, 0.02);
      err = 0;
      for (int i = 0; i < 4; ++i) err = std::max(err, std::abs(ps.at("x").value.at(i) - target[i]));
    }
    INFO("steps " << steps << " err " << err);
    CHECK(err <= 1e-4);
    CHECK(steps <= 500);
  }
}

TEST_CASE("schedules") {
  const auto full = tr::full_preset();
  CHECK(full.schedule.lr(1) == 1e-3);
  CHECK(full.schedule.lr(300) == 1e-3);
  CHECK(full.schedule.lr(301) == 5e-4);
  CHECK(full.schedule.epochs == 500);
  CHECK_FALSE(full.schedule.adversarial(20));
  CHECK(full.schedule.adversarial(21));
  CHECK(full.weights.adv == 5e-4);

  const tr::TrainSchedule s{4, 2, 3, 1e-3};
  const double want[] = {1e-3, 1e-3, 1e-3, 5e-4};
  const bool adv[] = {false, false, true, true};
  for (int e = 1; e <= 4; ++e) {
    CHECK(s.lr(e) == want[e - 1]);
    CHECK(s.adversarial(e) == adv[e - 1]);
  }
  CHECK_THROWS((tr::TrainSchedule{4, 3, 3, 1e-3}.validate()));
  CHECK_THROWS((tr::TrainSchedule{4, 1, 5, 1e-3}.validate()));
  CHECK_NOTHROW(tr::desk_preset().validate());
}

TEST_CASE("triple sampling crops co-located windows") {
  auto clip = toy_clip("c", 3, 20, 40);
  std::mt19937_64 rng(1);
  auto b = tr::sample_triple(clip, 1, 2, 4, 16, rng);
  CHECK(b.window.shape() == Shape{1, 15, 16, 16});
  CHECK(b.gt.shape() == Shape{1, 3, 64, 64});
  CHECK(b.ref.shape() == Shape{1, 3, 64, 64});
  // Find the crop offset from the centre frame and check the targets.
  bool found = false;
  for (int y = 0; y <= 4 && !found; ++y)
    for (int x = 0; x <= 4 && !found; ++x)
      if (bit_equal(kernels::slice_channels(b.window, 6, 3), kernels::crop(clip.lr[1], y, x, 16, 16))) {
        found = true;
        CHECK(bit_equal(b.gt, kernels::crop(clip.hr[1], 4 * y, 4 * x, 64, 64)));
        CHECK(bit_equal(b.ref, kernels::crop(clip.ref, 4 * y, 4 * x, 64, 64)));
      }
  CHECK(found);
  auto r1 = tr::step_rng(3, 2, 7), r2 = tr::step_rng(3, 2, 7), r3 = tr::step_rng(3, 2, 8);
  CHECK(r1() == r2());
  CHECK(r1() != r3());
}

TEST_CASE("train step contracts") {
  auto cfg = small_config();
  auto trainer = tr::Trainer::create(cfg, small_backbone());
  auto clip = toy_clip("c", 4, 16, 50);
  std::mt19937_64 rng(2);
  auto batch = tr::Batch::stack({tr::sample_triple(clip, 0, 2, 4, 16, rng),
                                 tr::sample_triple(clip, 2, 2, 4, 16, rng)});
  const auto d0 = params_hash(trainer.disc.params);
  const auto p0 = params_hash(trainer.per_ext.params);
  const auto t0 = params_hash(trainer.tex_ext.params);
  const auto g0 = params_hash(trainer.gen.params);

  auto warm = trainer.train_step(batch, 1, rng);
  CHECK_FALSE(warm.adversarial);
  CHECK(params_hash(trainer.disc.params) == d0);
  CHECK(params_hash(trainer.gen.params) != g0);
  CHECK(warm.parts.adv == 0.0);
  CHECK(warm.parts.per == 0.0);
  CHECK(warm.parts.tex == 0.0);
  CHECK(warm.total == warm.parts.rec);

  auto full = trainer.train_step(batch, 3, rng);
  CHECK(full.adversarial);
  CHECK(params_hash(trainer.disc.params) != d0);
  CHECK(full.parts.per > 0.0);
  CHECK(full.parts.tex > 0.0);
  CHECK(full.total == doctest::Approx(tr::total_loss(full.parts, cfg.weights)).epsilon(1e-5));
  CHECK(params_hash(trainer.per_ext.params) == p0);
  CHECK(params_hash(trainer.tex_ext.params) == t0);
  for (const auto* p : trainer.disc.params.list()) CHECK_FALSE(p->frozen);
}

TEST_CASE("reconstruction-only steps overfit a fixed batch") {
  auto cfg = small_config();
  cfg.schedule = {10, 9, 10, 2e-3};
  auto trainer = tr::Trainer::create(cfg, small_backbone());
  std::vector<tr::Batch> items;
  std::mt19937_64 rng(9);
  for (int i = 0; i < 8; ++i) {
    auto clip = toy_clip("c" + std::to_string(i), 1, 16, 100 + 10 * i);
    items.push_back(tr::sample_triple(clip, 0, 2, 4, 16, rng));
  }
  const auto batch = tr::Batch::stack(items);
  const double first = trainer.train_step(batch, 1, rng).parts.rec;
  double last = first;
  for (int s = 1; s < 200; ++s) last = trainer.train_step(batch, 1, rng).parts.rec;
  INFO(first << " -> " << last);
  CHECK(last <= 0.1 * first);
}

TEST_CASE("training loop: determinism, resume and errors") {
  const std::vector<tr::Clip> data{toy_clip("a", 3, 16, 60), toy_clip("b", 2, 16, 70)};
  auto cfg = small_config();

  std::ostringstream log_a, log_b;
  auto a = tr::Trainer::create(cfg, small_backbone());
  std::vector<int> seen;
  a.run(data, &log_a, [&](tr::Trainer& t) { seen.push_back(t.epoch); });
  CHECK(seen == std::vector<int>{1, 2, 3, 4});
  CHECK(a.step == 4 * a.steps_per_epoch(data));

  // Stop after epoch 2, move the state into a fresh trainer, continue.
  auto b = tr::Trainer::create(cfg, small_backbone());
  b.cfg.schedule.epochs = 2;
  b.run(data, &log_b);
  auto c = tr::Trainer::create(cfg, small_backbone());
  auto bl = b.gen.params.list();
  auto cl = c.gen.params.list();
  for (std::size_t i = 0; i < bl.size(); ++i) cl[i]->value = bl[i]->value.clone();
  auto bd = b.disc.params.list();
  auto cd = c.disc.params.list();
  for (std::size_t i = 0; i < bd.size(); ++i) cd[i]->value = bd[i]->value.clone();
  c.opt_g = b.opt_g;
  c.opt_d = b.opt_d;
  c.epoch = b.epoch;
  c.step = b.step;
  c.run(data, &log_b);
  CHECK(log_a.str() == log_b.str());

  std::istringstream lines(log_a.str());
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    ++count;
    CHECK(std::count(line.begin(), line.end(), ',') == 6);
  }
  CHECK(count == a.step);

  auto d = tr::Trainer::create(cfg, small_backbone());
  bool called = false;
  CHECK_THROWS_WITH_AS(d.run({}, nullptr, [&](tr::Trainer&) { called = true; }),
                       "training: empty dataset", Error);
  CHECK_FALSE(called);
}
