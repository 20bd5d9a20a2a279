#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "oat/cip.hpp"
#include "oat/das.hpp"
#include "oat/diffusion.hpp"
#include "oat/error.hpp"
#include "oat/forward_model.hpp"
#include "oat/geometry.hpp"
#include "oat/image.hpp"
#include "oat/metrics.hpp"
#include "oat/models.hpp"
#include "oat/nn/ops.hpp"
#include "oat/nn/params.hpp"
#include "oat/patching.hpp"
#include "oat/phantom_io.hpp"
#include "oat/rng.hpp"

namespace oat {

// ---------------------------------------------------------------------------------------------
// Dataset synthesis

struct DatasetSpec {
  std::size_t n_train = 512;
  std::size_t n_val = 16;
  std::size_t n_test = 10;
  PhantomKind kind = PhantomKind::kDisks;
  double snr_min_db = 35.0;
  double snr_max_db = 75.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(snr_min_db <= snr_max_db) || !std::isfinite(snr_min_db) || !std::isfinite(snr_max_db))
      throw ConfigError("dataset: need finite snr_min_db <= snr_max_db");
  }
};

struct Sample {
  Image ground_truth;
  Image das;
  double snr_db = 0.0;
  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  std::vector<Sample> train, val, test;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Phantom -> sinogram on the perturbed ring -> noise -> DAS on the nominal ring.
/// Depends only on (spec.seed, split, index) and the scan configuration.
inline Sample synthesize_sample(const DatasetSpec& spec, const ScanGeometry& geom, const std::string& split,
                                std::size_t index) {
  Rng r = Rng(spec.seed).fork(split).fork(static_cast<std::uint64_t>(index));
  Sample s;
  s.ground_truth = generate_phantom(geom.width, spec.kind, r.fork("phantom").key());
  s.snr_db = spec.snr_min_db == spec.snr_max_db ? spec.snr_min_db : r.uniform(spec.snr_min_db, spec.snr_max_db);
  const Sinogram clean = simulate_sinogram(s.ground_truth, geom);
  const Sinogram noisy = add_noise(clean, s.snr_db, r.fork("noise").key());
  s.das = das_reconstruct(noisy, geom.nominal());
  return s;
}

inline Dataset synthesize_dataset(const DatasetSpec& spec, const ScanConfig& scan) {
  spec.validate();
  const ScanGeometry geom = build_geometry(scan);
  Dataset d;
  for (std::size_t i = 0; i < spec.n_train; ++i) d.train.push_back(synthesize_sample(spec, geom, "train", i));
  for (std::size_t i = 0; i < spec.n_val; ++i) d.val.push_back(synthesize_sample(spec, geom, "val", i));
  for (std::size_t i = 0; i < spec.n_test; ++i) d.test.push_back(synthesize_sample(spec, geom, "test", i));
  return d;
}

/// Flattened DAS subpatches (quadrants of quadrants) for autoencoder pretraining.
inline std::vector<std::vector<double>> cip_training_vectors(const std::vector<Sample>& samples, const CipConfig& cfg) {
  std::vector<std::vector<double>> out;
  for (const Sample& s : samples)
    for (const Image& patch : split_quadrants(s.das)) {
      const auto subs = split_subpatches_flat(patch, 2 * cfg.subpatch_side());
      out.insert(out.end(), subs.begin(), subs.end());
    }
  return out;
}

// ---------------------------------------------------------------------------------------------
// Training

struct TrainConfig {
  double lr = 1e-4;
  std::size_t epochs = 5;
  std::size_t batch = 16;  // patches per step; whole images (4 patches each) are kept together
  double beta1 = 0.9;
  double beta2 = 0.999;
  bool deterministic = true;
  long max_steps = -1;  // < 0: run all epochs
  std::uint64_t seed = 0;
  // Validation: every val_every steps (0 disables) on the first val_count validation images.
  long val_every = 0;
  std::size_t val_count = 4;
  int val_nis = 10;

  void validate() const {
    if (!(lr > 0.0) || batch == 0 || epochs == 0) throw ConfigError("train: lr, batch and epochs must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0))
      throw ConfigError("train: beta1 and beta2 must lie in (0, 1)");
  }
  nn::AdamConfig adam() const { return {lr, beta1, beta2, 1e-8}; }
  std::size_t images_per_batch() const { return std::max<std::size_t>(1, batch / kQuadrants); }
};

struct CurvePoint {
  long step = 0;
  double loss = 0.0;
  std::string split;
};

struct TrainReport {
  std::vector<CurvePoint> curve;
  std::vector<double> train_losses;
  long steps = 0;
  long best_step = -1;  // -1 when validation was off
  double best_val_psnr = 0.0;
};

inline std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::string out = "step,loss,split\n";
  for (const auto& p : curve) out += std::to_string(p.step) + "," + format_metric(p.loss) + "," + p.split + "\n";
  return out;
}

inline double to_diffusion_space(double v) { return 2.0 * v - 1.0; }
inline double from_diffusion_space(double v) { return (std::clamp(v, -1.0, 1.0) + 1.0) / 2.0; }

namespace detail {

template <class T>
std::vector<std::vector<T>> snapshot(const nn::ParamStore<T>& p) {
  std::vector<std::vector<T>> out;
  for (const auto& e : p.entries()) out.emplace_back(e.tensor.values().begin(), e.tensor.values().end());
  return out;
}

template <class T>
void restore(nn::ParamStore<T>& p, const std::vector<std::vector<T>>& snap) {
  for (std::size_t i = 0; i < snap.size(); ++i) std::copy(snap[i].begin(), snap[i].end(), p.entries()[i].tensor.values().begin());
}

/// Quadrants of each image stacked into [4 * images, 1, h, w], optionally mapped to [-1, 1].
template <class T>
nn::Tensor<T> stack_quadrants(const std::vector<const Image*>& images, bool diffusion_space) {
  const std::size_t h = images.front()->height / 2, w = images.front()->width / 2;
  nn::Tensor<T> out({images.size() * kQuadrants, 1, h, w});
  T* dst = out.data();
  for (const Image* im : images)
    for (const Image& q : split_quadrants(*im))
      for (double v : q.data) *dst++ = static_cast<T>(diffusion_space ? to_diffusion_space(v) : v);
  return out;
}

template <class T>
void check_patch_fit(const Image& image, const Denoiser<T>& model) {
  if (image.height != 2 * model.config().patch_size || image.width != 2 * model.config().patch_size)
    throw DataError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                    " does not split into four " + std::to_string(model.config().patch_size) + "-pixel patches");
}

}  // namespace detail

/// Replaces eps_hat by the value whose implied x0 estimate is clipped to [-1, 1].
template <class T>
void clip_implied_x0(std::span<const T> x_t, std::span<T> eps_hat, int t, const diffusion::NoiseSchedule& sch) {
  const double a = sch.alpha_bar_at(t), sa = std::sqrt(a), sb = std::sqrt(1.0 - a);
  for (std::size_t i = 0; i < eps_hat.size(); ++i) {
    const double x = static_cast<double>(x_t[i]);
    const double x0 = (x - sb * static_cast<double>(eps_hat[i])) / sa;
    if (x0 > 1.0 || x0 < -1.0) eps_hat[i] = static_cast<T>((x - sa * std::clamp(x0, -1.0, 1.0)) / sb);
  }
}

/// Generic DDIM sampler over a batch of patches. `eps(x_t, t)` returns eps_hat shaped like x_t.
/// Returns the final x_0 in diffusion space (unclipped).
template <class T, class EpsFn>
nn::Tensor<T> sample_ddim(const nn::Shape& shape, EpsFn&& eps, const diffusion::NoiseSchedule& sch, int nis, double eta,
                          Rng rng, bool clip_x0 = false) {
  nn::NoGradGuard ng;
  const auto plan = diffusion::make_nis_subsequence(sch.steps, nis);
  nn::Tensor<T> x(shape);
  for (T& v : x.values()) v = static_cast<T>(rng.normal());
  std::vector<T> z(x.size());
  for (const auto& [t, s] : plan) {
    nn::Tensor<T> e = eps(x, t);
    if (clip_x0) clip_implied_x0<T>(x.values(), e.values(), t, sch);
    const bool noisy = eta != 0.0 && s > 0;
    if (noisy)
      for (T& v : z) v = static_cast<T>(rng.normal());
    auto next = diffusion::ddim_step<T>(x.values(), e.values(), t, s, noisy ? eta : 0.0, sch, z);
    x = nn::Tensor<T>(shape, std::move(next));
  }
  return x;
}

/// Clips to [-1, 1], maps to [0, 1] and reassembles the four quadrants of each image.
template <class T>
std::vector<Image> patches_to_images(const nn::Tensor<T>& x) {
  const std::size_t n = x.dim(0) / kQuadrants, h = x.dim(2), w = x.dim(3);
  std::vector<Image> out;
  const T* src = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::array<Image, kQuadrants> q;
    for (auto& p : q) {
      p = Image(h, w);
      for (double& v : p.data) v = from_diffusion_space(static_cast<double>(*src++));
    }
    out.push_back(assemble_quadrants(q));
  }
  return out;
}

struct InferOptions {
  int nis = 50;
  double eta = 0.0;
  std::uint64_t seed = 0;
  bool zero_condition = false;  // unconditional sampling with an all-zero condition
  bool clip_x0 = true;          // keep each step's implied x0 estimate inside [-1, 1]
};

/// Patchwise conditional reconstruction of a DAS image.
template <class T>
Image infer_image(const Image& das, const Denoiser<T>& model, const CipEncoder<T>& cip,
                  const diffusion::NoiseSchedule& sch, const InferOptions& opt) {
  detail::check_patch_fit(das, model);
  nn::NoGradGuard ng;
  const auto quads = split_quadrants(das);
  nn::Tensor<T> cond({kQuadrants, model.config().cond_dim()});
  if (!opt.zero_condition) cond = build_conditions<T>(std::vector<Image>(quads.begin(), quads.end()), cip);
  const std::size_t p = model.config().patch_size;
  const auto eps = [&](const nn::Tensor<T>& x, int t) { return model(x, cond, std::vector<int>(kQuadrants, t)); };
  const nn::Tensor<T> x0 = sample_ddim<T>({kQuadrants, 1, p, p}, eps, sch, opt.nis, opt.eta, Rng(opt.seed).fork("inference"),
                                          opt.clip_x0);
  return patches_to_images(x0).front();
}

template <class T>
double mean_psnr(const std::vector<Sample>& samples, std::size_t count, const Denoiser<T>& model,
                 const CipEncoder<T>& cip, const diffusion::NoiseSchedule& sch, const InferOptions& opt) {
  count = std::min(count, samples.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    InferOptions o = opt;
    o.seed = opt.seed + i;
    acc += psnr(infer_image(samples[i].das, model, cip, sch, o), samples[i].ground_truth);
  }
  return acc / static_cast<double>(count);
}

struct DiffusionTrainOptions {
  bool freeze_cip = true;
};

/// Noise-prediction training on (ground truth, DAS) patch pairs.
template <class T>
TrainReport train_diffusion(const Dataset& data, Denoiser<T>& model, CipEncoder<T>& cip,
                            const diffusion::NoiseSchedule& sch, const TrainConfig& cfg,
                            const DiffusionTrainOptions& opts = {}) {
  cfg.validate();
  const std::vector<Sample>& train = data.train;
  if (train.empty()) throw DataError("train_diffusion: empty training set");
  for (const Sample& s : train) detail::check_patch_fit(s.ground_truth, model);
  model.config().validate(cip.config().condition_dim());

  const std::uint64_t cip_hash = cip.params().hash();
  cip.params().set_trainable(!opts.freeze_cip);

  // Frozen encoder: conditions are fixed per image and computed once.
  std::vector<std::vector<T>> cached;
  if (opts.freeze_cip) {
    nn::NoGradGuard ng;
    for (const Sample& s : train) {
      const auto q = split_quadrants(s.das);
      const auto c = build_conditions<T>(std::vector<Image>(q.begin(), q.end()), cip);
      cached.emplace_back(c.values().begin(), c.values().end());
    }
  }

  Rng root = Rng(cfg.seed).fork("train_diffusion");
  Rng order = root.fork("order");
  Rng noise = root.fork("noise");
  const nn::AdamConfig adam = cfg.adam();
  const std::size_t per = cfg.images_per_batch(), cdim = model.config().cond_dim();
  TrainReport rep;
  std::vector<std::vector<T>> best;
  std::vector<std::size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), 0);

  const auto validate_now = [&](long step) {
    const double v = mean_psnr(data.val, cfg.val_count, model, cip, sch, {cfg.val_nis, 0.0, cfg.seed, false});
    rep.curve.push_back({step, v, "val_psnr"});
    if (rep.best_step < 0 || v > rep.best_val_psnr) {
      rep.best_step = step;
      rep.best_val_psnr = v;
      best = detail::snapshot(model.params());
    }
  };

  bool done = false;
  for (std::size_t epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), order.engine());
    for (std::size_t s0 = 0; s0 < idx.size(); s0 += per) {
      if (cfg.max_steps >= 0 && rep.steps >= cfg.max_steps) {
        done = true;
        break;
      }
      const std::size_t nb = std::min(per, idx.size() - s0);
      std::vector<const Image*> gts;
      std::vector<Image> das_patches;
      for (std::size_t b = 0; b < nb; ++b) {
        gts.push_back(&train[idx[s0 + b]].ground_truth);
        if (!opts.freeze_cip)
          for (const Image& q : split_quadrants(train[idx[s0 + b]].das)) das_patches.push_back(q);
      }
      const nn::Tensor<T> x0 = detail::stack_quadrants<T>(gts, true);
      const std::size_t n = x0.dim(0);
      nn::Tensor<T> cond;
      if (opts.freeze_cip) {
        cond = nn::Tensor<T>({n, cdim});
        for (std::size_t b = 0; b < nb; ++b) {
          const auto& c = cached[idx[s0 + b]];
          std::copy(c.begin(), c.end(), cond.data() + b * c.size());
        }
      } else {
        cond = build_conditions<T>(das_patches, cip);
      }
      std::vector<int> t(n);
      for (int& ti : t) ti = static_cast<int>(noise.uniform_int(1, sch.steps));
      nn::Tensor<T> eps(x0.shape());
      for (T& v : eps.values()) v = static_cast<T>(noise.normal());

      const nn::Tensor<T> loss = diffusion::diffusion_loss(x0, cond, t, eps, model, sch);
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv)) throw NumericError("train_diffusion: non-finite loss at step " + std::to_string(rep.steps));
      nn::backward(loss);
      nn::adam_step(model.params(), adam);
      if (!opts.freeze_cip) nn::adam_step(cip.params(), adam);
      ++rep.steps;
      rep.train_losses.push_back(lv);
      rep.curve.push_back({rep.steps, lv, "train"});
      if (cfg.val_every > 0 && !data.val.empty() && rep.steps % cfg.val_every == 0) validate_now(rep.steps);
    }
  }
  cip.params().set_trainable(false);
  if (opts.freeze_cip && cip.params().hash() != cip_hash)
    throw NumericError("train_diffusion: frozen conditioning encoder was modified");
  if (!best.empty()) detail::restore(model.params(), best);
  return rep;
}

/// Direct regression DAS -> ground truth with MSE.
template <class T>
TrainReport train_baseline(const std::vector<Sample>& train, BaselineUNet<T>& model, const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw DataError("train_baseline: empty training set");
  Rng order = Rng(cfg.seed).fork("train_baseline").fork("order");
  const nn::AdamConfig adam = cfg.adam();
  const std::size_t per = cfg.images_per_batch();
  TrainReport rep;
  std::vector<std::size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), order.engine());
    for (std::size_t s0 = 0; s0 < idx.size(); s0 += per) {
      if (cfg.max_steps >= 0 && rep.steps >= cfg.max_steps) return rep;
      const std::size_t nb = std::min(per, idx.size() - s0);
      const std::size_t h = train[idx[s0]].das.height, w = train[idx[s0]].das.width;
      nn::Tensor<T> x({nb, 1, h, w}), y({nb, 1, h, w});
      for (std::size_t b = 0; b < nb; ++b) {
        const Sample& s = train[idx[s0 + b]];
        require_same_dims(s.das, train[idx[s0]].das, "train_baseline");
        for (std::size_t k = 0; k < h * w; ++k) {
          x.data()[b * h * w + k] = static_cast<T>(s.das.data[k]);
          y.data()[b * h * w + k] = static_cast<T>(s.ground_truth.data[k]);
        }
      }
      const nn::Tensor<T> loss = nn::mse_loss(model.forward(x), y);
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv)) throw NumericError("train_baseline: non-finite loss at step " + std::to_string(rep.steps));
      nn::backward(loss);
      nn::adam_step(model.params(), adam);
      ++rep.steps;
      rep.train_losses.push_back(lv);
      rep.curve.push_back({rep.steps, lv, "train"});
    }
  }
  return rep;
}

template <class T>
Image baseline_reconstruct(const Image& das, const BaselineUNet<T>& model) {
  nn::NoGradGuard ng;
  nn::Tensor<T> x({1, 1, das.height, das.width});
  for (std::size_t k = 0; k < das.size(); ++k) x.data()[k] = static_cast<T>(das.data[k]);
  const nn::Tensor<T> y = model.forward(x);
  Image out(das.height, das.width);
  for (std::size_t k = 0; k < out.size(); ++k) out.data[k] = std::clamp(static_cast<double>(y.data()[k]), 0.0, 1.0);
  return out;
}

}  // namespace oat
