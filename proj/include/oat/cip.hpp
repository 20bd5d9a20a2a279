#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "oat/error.hpp"
#include "oat/image.hpp"
#include "oat/nn/ops.hpp"
#include "oat/nn/params.hpp"
#include "oat/patching.hpp"
#include "oat/rng.hpp"

namespace oat {

/// Layer widths of the conditioning autoencoder. The encoder maps input_dim through the three
/// hidden widths; the last one is the latent.
struct CipConfig {
  std::size_t input_dim = 1024;
  std::array<std::size_t, 3> hidden{768, 512, 256};

  std::size_t latent_dim() const { return hidden[2]; }
  /// Length of the per-patch condition: four subpatch latents.
  std::size_t condition_dim() const { return kQuadrants * latent_dim(); }

  void validate() const {
    if (input_dim == 0 || hidden[0] == 0 || hidden[1] == 0 || hidden[2] == 0)
      throw ConfigError("cip: layer widths must be positive");
    const std::size_t side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(input_dim))));
    if (side * side != input_dim) throw ConfigError("cip: input_dim must be a perfect square");
  }
  std::size_t subpatch_side() const {
    return static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(input_dim))));
  }
};

namespace detail {
template <class T>
nn::Tensor<T> mlp(const nn::ParamStore<T>& p, const std::string& prefix, nn::Tensor<T> x, std::size_t layers,
                  bool relu_last) {
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string n = prefix + std::to_string(l);
    x = nn::linear(x, p.get(n + ".weight"), p.get(n + ".bias"));
    if (l + 1 < layers || relu_last) x = nn::relu(x);
  }
  return x;
}

template <class T>
void add_dense(nn::ParamStore<T>& p, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  p.add_glorot(name + ".weight", {out, in}, in, out, rng);
  p.add_constant(name + ".bias", {out}, T(0));
}
}  // namespace detail

/// g_theta: three dense+ReLU layers, parameters named "cip.enc<k>.{weight,bias}".
template <class T>
class CipEncoder {
 public:
  CipEncoder() = default;
  CipEncoder(const CipConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    std::size_t in = cfg_.input_dim;
    for (std::size_t l = 0; l < 3; ++l) {
      detail::add_dense(params_, "cip.enc" + std::to_string(l), in, cfg_.hidden[l], rng);
      in = cfg_.hidden[l];
    }
  }

  const CipConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }

  /// [N, input_dim] -> [N, latent].
  nn::Tensor<T> forward(const nn::Tensor<T>& x) const {
    if (x.rank() != 2 || x.dim(1) != cfg_.input_dim)
      throw DataError("cip encoder: expected [N, " + std::to_string(cfg_.input_dim) + "], got " +
                      nn::shape_str(x.shape()));
    return detail::mlp(params_, "cip.enc", x, 3, true);
  }

  std::vector<double> encode_subpatch(const std::vector<double>& v) const {
    if (v.size() != cfg_.input_dim)
      throw DataError("encode_subpatch: expected length " + std::to_string(cfg_.input_dim) + ", got " +
                      std::to_string(v.size()));
    for (double x : v)
      if (!std::isfinite(x)) throw DataError("encode_subpatch: non-finite input");
    nn::NoGradGuard ng;
    nn::Tensor<T> in({1, v.size()});
    for (std::size_t i = 0; i < v.size(); ++i) in.data()[i] = static_cast<T>(v[i]);
    const nn::Tensor<T> out = forward(in);
    return std::vector<double>(out.values().begin(), out.values().end());
  }

 private:
  CipConfig cfg_;
  nn::ParamStore<T> params_;
};

/// Mirror of the encoder used only while pretraining; names "cipdec.dec<k>.*".
template <class T>
class CipDecoder {
 public:
  CipDecoder(const CipConfig& cfg, Rng& rng) : cfg_(cfg) {
    const std::array<std::size_t, 4> dims{cfg.hidden[2], cfg.hidden[1], cfg.hidden[0], cfg.input_dim};
    for (std::size_t l = 0; l < 3; ++l) detail::add_dense(params_, "cipdec.dec" + std::to_string(l), dims[l], dims[l + 1], rng);
  }
  nn::ParamStore<T>& params() { return params_; }
  nn::Tensor<T> forward(const nn::Tensor<T>& z) const { return detail::mlp(params_, "cipdec.dec", z, 3, false); }

 private:
  CipConfig cfg_;
  nn::ParamStore<T> params_;
};

/// Condition vectors for a batch of square patches: each row is the four quadrant latents
/// concatenated in quadrant order. Output [B, 4 * latent], no graph unless the encoder is trainable.
template <class T>
nn::Tensor<T> build_conditions(const std::vector<Image>& patches, const CipEncoder<T>& enc) {
  const std::size_t d = enc.config().input_dim, side = enc.config().subpatch_side(), lat = enc.config().latent_dim();
  nn::Tensor<T> in({patches.size() * kQuadrants, d});
  for (std::size_t b = 0; b < patches.size(); ++b) {
    const auto subs = split_subpatches_flat(patches[b], 2 * side);
    for (std::size_t q = 0; q < kQuadrants; ++q)
      for (std::size_t i = 0; i < d; ++i) in.data()[(b * kQuadrants + q) * d + i] = static_cast<T>(subs[q][i]);
  }
  return nn::reshape(enc.forward(in), {patches.size(), kQuadrants * lat});
}

inline std::vector<double> build_condition(const Image& patch, const CipEncoder<double>& enc) {
  nn::NoGradGuard ng;
  const auto c = build_conditions<double>({patch}, enc);
  return std::vector<double>(c.values().begin(), c.values().end());
}

struct CipTrainConfig {
  std::size_t epochs = 5;
  std::size_t batch = 16;
  double lr = 1e-4;
  long max_steps = -1;  // < 0: no cap
  std::uint64_t seed = 0;
};

template <class T>
struct CipTrainResult {
  CipEncoder<T> encoder;
  std::vector<double> losses;  // one entry per optimizer step
};

/// Autoencoder pretraining on flattened subpatches with MSE reconstruction; the decoder is dropped.
template <class T>
CipTrainResult<T> train_cip(const std::vector<std::vector<double>>& data, const CipConfig& cfg,
                            const CipTrainConfig& tc) {
  if (data.empty()) throw DataError("train_cip: empty dataset");
  if (tc.batch == 0 || tc.lr <= 0.0) throw ConfigError("train_cip: batch and lr must be positive");
  for (const auto& v : data)
    if (v.size() != cfg.input_dim) throw DataError("train_cip: subpatch length mismatch");
  Rng root(tc.seed);
  Rng init = root.fork("cip_init");
  Rng order = root.fork("cip_order");
  CipTrainResult<T> res{CipEncoder<T>(cfg, init), {}};
  CipDecoder<T> dec(cfg, init);
  nn::AdamConfig adam;
  adam.lr = tc.lr;
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  long step = 0;
  for (std::size_t e = 0; e < tc.epochs; ++e) {
    std::shuffle(idx.begin(), idx.end(), order.engine());
    for (std::size_t s = 0; s < idx.size(); s += tc.batch) {
      if (tc.max_steps >= 0 && step >= tc.max_steps) return res;
      const std::size_t nb = std::min(tc.batch, idx.size() - s);
      nn::Tensor<T> x({nb, cfg.input_dim});
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t i = 0; i < cfg.input_dim; ++i)
          x.data()[b * cfg.input_dim + i] = static_cast<T>(data[idx[s + b]][i]);
      const nn::Tensor<T> loss = nn::mse_loss(dec.forward(res.encoder.forward(x)), x);
      nn::backward(loss);
      nn::adam_step(res.encoder.params(), adam);
      nn::adam_step(dec.params(), adam);
      res.losses.push_back(static_cast<double>(loss.item()));
      ++step;
    }
  }
  return res;
}

}  // namespace oat
