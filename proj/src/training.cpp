// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

#include "stran/training.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>

#include "stran/kernels.hpp"
#include "stran/layers.hpp"
#include "stran/texture_transformer.hpp"

namespace stran::train {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Uniform integer in [0, n) without relying on the library's distributions,
// whose output is implementation-defined.
std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = ~0ull - (~0ull % n);
  std::uint64_t x;
  do x = rng();
  while (x >= limit);
  return x % n;
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::string layer(const char* prefix, int j) {
  return std::string(prefix) + ".conv" + std::to_string(j);
}

// Marks every parameter of a set frozen for the guard's lifetime.
class FreezeGuard {
 public:
  explicit FreezeGuard(ag::ParamSet& ps) {
    for (auto* p : ps.list()) {
      saved_.push_back({p, p->frozen});
      p->frozen = true;
    }
  }
  ~FreezeGuard() {
    for (auto& [p, f] : saved_) p->frozen = f;
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<std::pair<ag::Parameter*, bool>> saved_;
};

ag::Var mse(const ag::Var& a, const ag::Var& b) {
  if (a.shape() != b.shape()) throw ShapeError("feature tap mismatch", a.shape(), b.shape());
  return ag::mean(ag::square(ag::sub(a, b)));
}

ag::Var tap_distance(ag::Graph& g, FeatureExtractor& ext, const ag::Var& out,
                     const ag::Var& gt) {
  check_same_shape("feature loss", out.value(), gt.value());
  const auto fo = ext.features(g, out);
  const auto fg = ext.features(g, gt.detach());
  ag::Var total = mse(fo[0], fg[0]);
  for (std::size_t i = 1; i < fo.size(); ++i) total = ag::add(total, mse(fo[i], fg[i]));
  return total;
}

constexpr int kExtractorLayers = 4;
constexpr int kExtractorWidth[kExtractorLayers] = {16, 32, 32, 64};
constexpr int kExtractorStride[kExtractorLayers] = {1, 2, 1, 2};

}  // namespace

void LossWeights::validate() const {
  const double all[] = {rec, adv, per, tex, gp_lambda};
  for (double v : all)
    if (!(v >= 0) || !std::isfinite(v))
      throw Error("loss weights must be finite and >= 0, got " + std::to_string(v));
}

// ----------------------------------------------------------------------------
// Extractors and critic

std::uint64_t FeatureExtractor::default_seed(ExtractorRole role) {
  return role == ExtractorRole::Perceptual ? 0x70657263657074ull : 0x746578747572ull;
}

FeatureExtractor FeatureExtractor::make(ExtractorRole role, DType dtype) {
  return make(role, dtype, default_seed(role));
}

FeatureExtractor FeatureExtractor::make(ExtractorRole role, DType dtype,
                                        std::uint64_t seed) {
  FeatureExtractor ext;
  ext.role = role;
  ext.taps = role == ExtractorRole::Perceptual ? std::vector<int>{2, 4}
                                               : std::vector<int>{1, 3};
  std::mt19937_64 rng(seed);
  int in = 3;
  for (int j = 0; j < kExtractorLayers; ++j) {
    nn::add_conv(ext.params, layer("feat", j + 1), {in, kExtractorWidth[j], 3}, rng,
                 dtype, /*frozen=*/true);
    in = kExtractorWidth[j];
  }
  return ext;
}

std::vector<ag::Var> FeatureExtractor::features(ag::Graph& g, const ag::Var& img) {
  if (img.shape().c != 3) throw ShapeError("feature extractor: expected 3 channels", img.shape());
  std::vector<ag::Var> out;
  ag::Var x = img;
  std::size_t next = 0;
  for (int j = 1; j <= kExtractorLayers && next < taps.size(); ++j) {
    x = ag::leaky_relu(nn::conv(g, params, layer("feat", j), x, kExtractorStride[j - 1]),
                       nn::kSlope);
    if (taps[next] == j) {
      out.push_back(x);
      ++next;
    }
  }
  return out;
}

std::vector<Tensor> FeatureExtractor::features(const Tensor& img) {
  ag::Graph g(false);
  std::vector<Tensor> out;
  for (const auto& v : features(g, ag::Var(img))) out.push_back(v.value());
  return out;
}

Discriminator Discriminator::init(std::uint64_t seed, DType dtype, int width) {
  Discriminator d;
  std::mt19937_64 rng(seed);
  nn::add_conv(d.params, layer("disc", 1), {3, width, 3}, rng, dtype);
  nn::add_conv(d.params, layer("disc", 2), {width, 2 * width, 3}, rng, dtype);
  nn::add_conv(d.params, layer("disc", 3), {2 * width, 2 * width, 3}, rng, dtype);
  nn::add_conv(d.params, layer("disc", 4), {2 * width, 1, 3}, rng, dtype);
  return d;
}

ag::Var Discriminator::forward(ag::Graph& g, const ag::Var& x) {
  ag::Var h = x;
  for (int j = 1; j <= 3; ++j)
    h = ag::leaky_relu(nn::conv(g, params, layer("disc", j), h, 2), nn::kSlope);
  return ag::sample_mean(nn::conv(g, params, layer("disc", 4), h));
}

// ----------------------------------------------------------------------------
// Loss terms

ag::Var loss_rec(const ag::Var& gt, const ag::Var& out) {
  check_same_shape("loss_rec", gt.value(), out.value());
  return ag::mean(ag::abs(ag::sub(gt, out)));
}

ag::Var gradient_penalty(ag::Graph& g, const Critic& critic, const Tensor& real,
                         const Tensor& fake, std::mt19937_64& rng) {
  std::vector<double> u(real.shape().n);
  for (double& x : u) x = uniform01(rng);
  return gradient_penalty(g, critic, real, fake, u);
}

ag::Var gradient_penalty(ag::Graph& g, const Critic& critic, const Tensor& real,
                         const Tensor& fake, const std::vector<double>& u) {
  check_same_shape("gradient_penalty", real, fake);
  check_same_dtype("gradient_penalty", real, fake);
  const Shape s = real.shape();
  if (static_cast<int>(u.size()) != s.n)
    throw Error("gradient_penalty: need one coefficient per sample");
  Tensor mix(s, real.dtype());
  const std::size_t per = s.numel() / s.n;
  for (std::size_t i = 0; i < s.numel(); ++i) {
    const double a = u[i / per];
    mix.set(i, a * real.at(i) + (1 - a) * fake.at(i));
  }
  ag::Var xh = g.input(mix);
  ag::Var grad = g.input_gradient(ag::sum(critic(g, xh)), xh, /*create_graph=*/true);
  // The offset keeps the square root differentiable at a zero gradient.
  ag::Var norm = ag::sqrt(ag::add_scalar(ag::sample_sum(ag::square(grad)), 1e-24));
  return ag::mean(ag::square(ag::add_scalar(norm, -1.0)));
}

ag::Var loss_d(ag::Graph& g, const Critic& critic, const Tensor& real,
               const Tensor& fake, double gp_lambda, std::mt19937_64& rng) {
  ag::Var wdist = ag::sub(ag::mean(critic(g, ag::Var(fake))),
                          ag::mean(critic(g, ag::Var(real))));
  return ag::add(wdist, ag::scale(gradient_penalty(g, critic, real, fake, rng), gp_lambda));
}

ag::Var loss_adv(ag::Graph& g, const Critic& critic, const ag::Var& fake) {
  return ag::scale(ag::mean(critic(g, fake)), -1.0);
}

ag::Var loss_per(ag::Graph& g, FeatureExtractor& ext, ag::ParamSet& lte,
                 const ag::Var& out, const ag::Var& gt, const Tensor& texture) {
  ag::Var total = tap_distance(g, ext, out, gt);
  if (texture.defined()) {
    const ag::Var coarse = tt::lte_forward(g, lte, out).back();
    total = ag::add(total, mse(coarse, ag::Var(texture)));
  }
  return total;
}

ag::Var loss_tex(ag::Graph& g, FeatureExtractor& ext, const ag::Var& out,
                 const ag::Var& gt) {
  return tap_distance(g, ext, out, gt);
}

double total_loss(const LossParts& p, const LossWeights& w, bool warmup) {
  w.validate();
  if (warmup) return w.rec * p.rec;
  return w.rec * p.rec + w.adv * p.adv + w.per * p.per + w.tex * p.tex;
}

// ----------------------------------------------------------------------------
// Optimizer

void Adam::ensure(const ag::ParamSet& ps) {
  const auto list = ps.list();
  if (m_.size() == list.size()) return;
  if (!m_.empty()) throw Error("adam: parameter count changed");
  for (const auto* p : list) {
    m_.emplace_back(p->value.shape(), p->value.dtype());
    v_.emplace_back(p->value.shape(), p->value.dtype());
  }
}

void Adam::step(ag::ParamSet& ps, double lr) {
  ensure(ps);
  ++t_;
  const double c1 = 1 - std::pow(beta1, static_cast<double>(t_));
  const double c2 = 1 - std::pow(beta2, static_cast<double>(t_));
  const auto list = ps.list();
  for (std::size_t i = 0; i < list.size(); ++i) {
    ag::Parameter& p = *list[i];
    if (p.frozen) continue;
    if (m_[i].shape() != p.value.shape()) throw ShapeError("adam: moment shape", m_[i].shape(), p.value.shape());
    const Tensor grad = p.grad.defined() ? p.grad.to(p.value.dtype())
                                         : Tensor(p.value.shape(), p.value.dtype());
    // Fresh buffers: earlier forward results may still share the old ones.
    Tensor value = p.value.clone(), m = m_[i].clone(), v = v_[i].clone();
    dispatch(p.value.dtype(), [&]<typename T>() {
      auto pv = value.data<T>();
      auto mv = m.data<T>();
      auto vv = v.data<T>();
      const auto gv = grad.data<T>();
      for (std::size_t k = 0; k < pv.size(); ++k) {
        const double gk = gv[k];
        const double mk = beta1 * mv[k] + (1 - beta1) * gk;
        const double vk = beta2 * vv[k] + (1 - beta2) * gk * gk;
        mv[k] = static_cast<T>(mk);
        vv[k] = static_cast<T>(vk);
        pv[k] = static_cast<T>(pv[k] - lr * (mk / c1) / (std::sqrt(vk / c2) + eps));
      }
    });
    p.value = value;
    m_[i] = m;
    v_[i] = v;
  }
}

// ----------------------------------------------------------------------------
// Configuration

void TrainSchedule::validate() const {
  if (epochs < 1) throw Error("schedule: epochs must be >= 1");
  if (warmup < 0 || warmup >= halve_at || halve_at > epochs)
    throw Error("schedule: need 0 <= warmup < halve_at <= epochs, got warmup=" +
                std::to_string(warmup) + " halve_at=" + std::to_string(halve_at) +
                " epochs=" + std::to_string(epochs));
  if (!(lr0 > 0) || !std::isfinite(lr0)) throw Error("schedule: lr0 must be > 0");
}

void TrainConfig::validate() const {
  schedule.validate();
  weights.validate();
  if (batch < 1) throw Error("train config: batch must be >= 1");
  if (lr_patch < 16) throw Error("train config: lr_patch must be >= 16");
  if (ckpt_every < 1) throw Error("train config: ckpt_every must be >= 1");
}

TrainConfig desk_preset() { return {}; }

TrainConfig full_preset() {
  TrainConfig c;
  c.schedule.epochs = 500;
  c.schedule.warmup = 20;
  c.schedule.halve_at = 300;
  c.schedule.lr0 = 1e-3;
  c.ckpt_every = 50;
  return c;
}

// ----------------------------------------------------------------------------
// Data

Batch Batch::stack(const std::vector<Batch>& items) {
  if (items.empty()) throw Error("Batch::stack: no items");
  std::vector<Tensor> w, r, t;
  for (const auto& b : items) {
    w.push_back(b.window);
    r.push_back(b.ref);
    t.push_back(b.gt);
  }
  return {kernels::concat_batch(w), kernels::concat_batch(r), kernels::concat_batch(t)};
}

Batch sample_triple(const Clip& clip, int t, int radius, int factor, int lr_patch,
                    std::mt19937_64& rng) {
  if (clip.lr.empty() || clip.lr.size() != clip.hr.size())
    throw Error("clip '" + clip.id + "': LR and HR frame counts differ or are zero");
  const Shape ls = clip.lr[t].shape();
  if (ls.h < lr_patch || ls.w < lr_patch)
    throw ShapeError("clip '" + clip.id + "': frame smaller than the training patch", ls);
  const int y = static_cast<int>(uniform_index(rng, ls.h - lr_patch + 1));
  const int x = static_cast<int>(uniform_index(rng, ls.w - lr_patch + 1));
  const int hp = lr_patch * factor;
  Batch b;
  b.window = kernels::crop(backbone::assemble_window(clip.lr, t, radius), y, x,
                           lr_patch, lr_patch);
  b.gt = kernels::crop(clip.hr[t], y * factor, x * factor, hp, hp);
  b.ref = kernels::crop(clip.ref, y * factor, x * factor, hp, hp);
  return b;
}

std::mt19937_64 step_rng(std::uint64_t seed, int epoch, std::int64_t step) {
  std::uint64_t s = splitmix64(seed);
  s = splitmix64(s ^ static_cast<std::uint64_t>(epoch));
  s = splitmix64(s ^ static_cast<std::uint64_t>(step));
  return std::mt19937_64(s);
}

// ----------------------------------------------------------------------------
// Trainer

Trainer Trainer::create(const TrainConfig& cfg, const backbone::BackboneConfig& bcfg,
                        DType dtype) {
  cfg.validate();
  Trainer t{cfg,
            backbone::Generator::init(bcfg, cfg.seed, dtype),
            Discriminator::init(splitmix64(cfg.seed ^ 0x64697363ull), dtype),
            FeatureExtractor::make(ExtractorRole::Perceptual, dtype),
            FeatureExtractor::make(ExtractorRole::Texture, dtype),
            {},
            {}};
  t.opt_g.ensure(t.gen.params);
  t.opt_d.ensure(t.disc.params);
  return t;
}

LossReport Trainer::train_step(const Batch& batch, int ep, std::mt19937_64& rng) {
  const auto& sched = cfg.schedule;
  const auto& w = cfg.weights;
  LossReport rep;
  rep.epoch = ep;
  rep.lr = sched.lr(ep);
  rep.adversarial = sched.adversarial(ep);

  ag::Graph g;
  gen.params.zero_grad();
  const auto fw = backbone::generator_forward(g, gen, batch.window, batch.ref);
  const ag::Var gt(batch.gt);
  const ag::Var rec = loss_rec(gt, fw.out);
  rep.parts.rec = rec.value().item();
  ag::Var total = ag::scale(rec, w.rec);

  if (rep.adversarial) {
    const Critic critic = [this](ag::Graph& cg, const ag::Var& x) { return disc.forward(cg, x); };
    {
      ag::Graph gd;
      disc.params.zero_grad();
      const ag::Var ld = loss_d(gd, critic, batch.gt, fw.out.value(), w.gp_lambda, rng);
      gd.backward(ld);
      opt_d.step(disc.params, rep.lr);
      rep.d_loss = ld.value().item();
    }
    // The critic acts as a fixed function during the generator update.
    FreezeGuard frozen(disc.params);
    Tensor texture = fw.tex.raw[tt::kScales - 1].value();
    const Shape want = tt::lte_output_shape(fw.out.shape(), tt::kScales - 1, gen.cfg.lte);
    if (texture.shape() != want) texture = kernels::crop(texture, 0, 0, want.h, want.w);
    const ag::Var adv = loss_adv(g, critic, fw.out);
    const ag::Var per = loss_per(g, per_ext, gen.params, fw.out, gt, texture);
    const ag::Var tex = loss_tex(g, tex_ext, fw.out, gt);
    rep.parts.adv = adv.value().item();
    rep.parts.per = per.value().item();
    rep.parts.tex = tex.value().item();
    total = ag::add(total, ag::scale(adv, w.adv));
    total = ag::add(total, ag::scale(per, w.per));
    total = ag::add(total, ag::scale(tex, w.tex));
  }
  g.backward(total);
  opt_g.step(gen.params, rep.lr);
  rep.total = total.value().item();
  return rep;
}

int Trainer::steps_per_epoch(const std::vector<Clip>& data) const {
  std::size_t frames = 0;
  for (const auto& c : data) frames += c.lr.size();
  return static_cast<int>((frames + cfg.batch - 1) / cfg.batch);
}

void Trainer::run(const std::vector<Clip>& data, std::ostream* log,
                  const std::function<void(Trainer&)>& on_epoch) {
  std::vector<std::pair<int, int>> frames;  // (clip, t)
  for (std::size_t c = 0; c < data.size(); ++c)
    for (std::size_t t = 0; t < data[c].lr.size(); ++t)
      frames.emplace_back(static_cast<int>(c), static_cast<int>(t));
  if (frames.empty()) throw Error("training: empty dataset");
  const int radius = gen.cfg.radius, factor = gen.cfg.factor;
  const std::size_t b = cfg.batch;

  for (int ep = epoch + 1; ep <= cfg.schedule.epochs; ++ep) {
    auto order = frames;
    auto shuffle_rng = step_rng(cfg.seed, ep, -1);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);
    for (std::size_t first = 0; first < order.size(); first += b) {
      auto rng = step_rng(cfg.seed, ep, step);
      std::vector<Batch> items;
      for (std::size_t i = first; i < std::min(order.size(), first + b); ++i) {
        const auto [c, t] = order[i];
        items.push_back(sample_triple(data[c], t, radius, factor, cfg.lr_patch, rng));
      }
      LossReport rep = train_step(Batch::stack(items), ep, rng);
      rep.step = ++step;
      if (log) *log << log_line(rep) << '\n' << std::flush;
    }
    epoch = ep;
    if (on_epoch) on_epoch(*this);
  }
}

std::string log_header() { return "epoch,step,l_rec,l_adv,l_per,l_tex,lr"; }

std::string log_line(const LossReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%lld,%.9g,%.9g,%.9g,%.9g,%.9g", r.epoch,
                static_cast<long long>(r.step), r.parts.rec, r.parts.adv, r.parts.per,
                r.parts.tex, r.lr);
  return buf;
}

}  // namespace stran::train
