#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "oat/error.hpp"
#include "oat/nn/ops.hpp"
#include "oat/nn/params.hpp"
#include "oat/rng.hpp"

namespace oat {

/// Sizes of the conditional noise predictor. The condition vector of length
/// cond_tokens * cond_token_dim is read as cond_tokens tokens.
struct DenoiserConfig {
  std::size_t patch_size = 64;
  std::size_t base_channels = 32;
  std::size_t n_scales = 3;
  std::size_t resnet_blocks = 2;
  std::size_t attention_heads = 4;
  std::size_t cond_tokens = 16;
  std::size_t cond_token_dim = 64;
  std::size_t time_embed_dim = 128;
  std::size_t norm_groups = 8;
  bool positional_embeddings = true;  // learned position vectors on attention queries and condition tokens
  bool input_skip = true;             // eps_hat = x_t + net(x_t): exact at pure noise before any training

  std::size_t cond_dim() const { return cond_tokens * cond_token_dim; }

  /// `expected_cond` is the length produced by the conditioning encoder (0 skips the check).
  void validate(std::size_t expected_cond = 0) const {
    if (patch_size == 0 || base_channels == 0 || n_scales == 0 || resnet_blocks == 0 || attention_heads == 0 ||
        cond_tokens == 0 || cond_token_dim == 0 || time_embed_dim == 0 || norm_groups == 0)
      throw ConfigError("denoiser: all sizes must be positive");
    if (patch_size % (std::size_t{1} << (n_scales - 1)) != 0)
      throw ConfigError("denoiser: patch_size must be divisible by 2^(n_scales-1)");
    if (time_embed_dim % 2 != 0) throw ConfigError("denoiser: time_embed_dim must be even");
    if (base_channels % attention_heads != 0)
      throw ConfigError("denoiser: base_channels must be divisible by attention_heads");
    if (expected_cond != 0 && cond_dim() != expected_cond)
      throw ConfigError("denoiser: cond_tokens * cond_token_dim = " + std::to_string(cond_dim()) +
                        " but the condition has length " + std::to_string(expected_cond));
  }
};

/// Sizes of the direct-regression U-Net.
struct BaselineConfig {
  std::size_t image_size = 128;
  std::size_t base_channels = 32;
  std::size_t n_scales = 3;
  std::size_t resnet_blocks = 2;
  std::size_t norm_groups = 8;

  void validate() const {
    if (image_size == 0 || base_channels == 0 || n_scales == 0 || resnet_blocks == 0 || norm_groups == 0)
      throw ConfigError("baseline: all sizes must be positive");
    if (image_size % (std::size_t{1} << (n_scales - 1)) != 0)
      throw ConfigError("baseline: image_size must be divisible by 2^(n_scales-1)");
  }
};

namespace detail {

struct UNetSpec {
  std::string prefix;
  std::size_t base = 8;
  std::size_t scales = 2;
  std::size_t blocks = 1;
  std::size_t groups = 8;
  std::size_t time_dim = 0;   // 0: no time embedding
  std::size_t heads = 0;      // 0: no cross-attention
  std::size_t cond_width = 0;
  std::size_t cond_tokens = 0;
  std::size_t size = 0;       // input side length; needed for positional embeddings
  bool positional = false;
};

/// Shared encoder-decoder skeleton. Channels double per scale; the decoder mirrors the encoder
/// with nearest-neighbour upsampling and skip concatenation.
template <class T>
class UNet {
 public:
  UNet() = default;
  UNet(UNetSpec spec, Rng& rng) : s_(std::move(spec)) {
    const std::string& p = s_.prefix;
    if (s_.time_dim) {
      dense(p + "time.lin1", s_.time_dim, s_.time_dim, rng);
      dense(p + "time.lin2", s_.time_dim, s_.time_dim, rng);
    }
    conv(p + "in_conv", 1, ch(0), 3, rng);
    std::size_t c = ch(0);
    for (std::size_t sc = 0; sc < s_.scales; ++sc) {
      for (std::size_t b = 0; b < s_.blocks; ++b) {
        resblock(name("enc", sc, b), c, ch(sc), rng);
        c = ch(sc);
      }
      if (s_.heads) cross_attention(name("enc", sc) + ".attn", c, side(sc), rng);
      if (sc + 1 < s_.scales) conv(name("enc", sc) + ".down", c, c, 3, rng);
    }
    for (std::size_t k = s_.scales; k-- > 0;) {
      if (k + 1 < s_.scales) c = ch(k + 1) + ch(k);
      for (std::size_t b = 0; b < s_.blocks; ++b) {
        resblock(name("dec", k, b), c, ch(k), rng);
        c = ch(k);
      }
      if (s_.heads) cross_attention(name("dec", k) + ".attn", c, side(k), rng);
    }
    params_.add_constant(p + "out_norm.gamma", {c}, T(1));
    params_.add_constant(p + "out_norm.beta", {c}, T(0));
    params_.add_constant(p + "out_conv.weight", {1, c, 3, 3}, T(0));
    params_.add_constant(p + "out_conv.bias", {1}, T(0));
  }

  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }
  const UNetSpec& spec() const { return s_; }

  /// x [N, 1, H, W]; temb [N, time_dim] (raw sinusoidal) or undefined; cond [N, m, cond_width] or undefined.
  nn::Tensor<T> forward(const nn::Tensor<T>& x, const nn::Tensor<T>& temb_raw, const nn::Tensor<T>& cond) const {
    const std::string& p = s_.prefix;
    const std::size_t down = std::size_t{1} << (s_.scales - 1);
    if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) % down != 0 || x.dim(3) % down != 0)
      throw DataError("unet: input must be [N, 1, H, W] with H, W divisible by " + std::to_string(down) + ", got " +
                      nn::shape_str(x.shape()));
    nn::Tensor<T> temb;
    if (s_.time_dim) {
      temb = nn::linear(temb_raw, get(p + "time.lin1.weight"), get(p + "time.lin1.bias"));
      temb = nn::linear(nn::silu(temb), get(p + "time.lin2.weight"), get(p + "time.lin2.bias"));
      temb = nn::silu(temb);
    }
    nn::Tensor<T> h = conv_apply(p + "in_conv", x, 1);
    std::vector<nn::Tensor<T>> skips;
    for (std::size_t sc = 0; sc < s_.scales; ++sc) {
      for (std::size_t b = 0; b < s_.blocks; ++b) h = resblock_apply(name("enc", sc, b), h, temb);
      if (s_.heads) h = cross_attention_apply(name("enc", sc) + ".attn", h, cond);
      skips.push_back(h);
      if (sc + 1 < s_.scales) h = conv_apply(name("enc", sc) + ".down", h, 2);
    }
    for (std::size_t k = s_.scales; k-- > 0;) {
      if (k + 1 < s_.scales) {
        h = nn::upsample2x(h);
        if (h.dim(2) != skips[k].dim(2) || h.dim(3) != skips[k].dim(3))
          throw DataError("unet: skip shape mismatch at scale " + std::to_string(k));
        h = nn::concat_channels(h, skips[k]);
      }
      for (std::size_t b = 0; b < s_.blocks; ++b) h = resblock_apply(name("dec", k, b), h, temb);
      if (s_.heads) h = cross_attention_apply(name("dec", k) + ".attn", h, cond);
    }
    h = nn::silu(nn::group_norm(h, groups(h.dim(1)), get(p + "out_norm.gamma"), get(p + "out_norm.beta")));
    return conv_apply(p + "out_conv", h, 1);
  }

 private:
  std::size_t ch(std::size_t sc) const { return s_.base << sc; }
  std::size_t side(std::size_t sc) const { return s_.size >> sc; }
  std::size_t groups(std::size_t c) const { return std::gcd(s_.groups, c); }
  std::string name(const char* path, std::size_t sc) const { return s_.prefix + path + std::to_string(sc); }
  std::string name(const char* path, std::size_t sc, std::size_t b) const {
    return name(path, sc) + ".res" + std::to_string(b);
  }
  const nn::Tensor<T>& get(const std::string& n) const { return params_.get(n); }

  void dense(const std::string& n, std::size_t in, std::size_t out, Rng& rng) {
    params_.add_glorot(n + ".weight", {out, in}, in, out, rng);
    params_.add_constant(n + ".bias", {out}, T(0));
  }
  void conv(const std::string& n, std::size_t in, std::size_t out, std::size_t k, Rng& rng) {
    params_.add_glorot(n + ".weight", {out, in, k, k}, in * k * k, out * k * k, rng);
    params_.add_constant(n + ".bias", {out}, T(0));
  }
  void norm(const std::string& n, std::size_t c) {
    params_.add_constant(n + ".gamma", {c}, T(1));
    params_.add_constant(n + ".beta", {c}, T(0));
  }
  void resblock(const std::string& n, std::size_t cin, std::size_t cout, Rng& rng) {
    conv(n + ".conv1", cin, cout, 3, rng);
    if (s_.time_dim) dense(n + ".tproj", s_.time_dim, cout, rng);
    norm(n + ".norm1", cout);
    conv(n + ".conv2", cout, cout, 3, rng);
    norm(n + ".norm2", cout);
    if (cin != cout) conv(n + ".skip", cin, cout, 1, rng);
  }
  void cross_attention(const std::string& n, std::size_t c, std::size_t hw, Rng& rng) {
    if (s_.positional) {
      params_.add_glorot(n + ".qpos", {hw * hw, c}, c, c, rng);
      params_.add_glorot(n + ".kpos", {s_.cond_tokens, c}, c, c, rng);
    }
    dense(n + ".q", c, c, rng);
    dense(n + ".k", s_.cond_width, c, rng);
    dense(n + ".v", s_.cond_width, c, rng);
    dense(n + ".out", c, c, rng);
  }

  nn::Tensor<T> conv_apply(const std::string& n, const nn::Tensor<T>& x, std::size_t stride) const {
    const nn::Tensor<T>& w = get(n + ".weight");
    return nn::conv2d(x, w, get(n + ".bias"), stride, w.dim(2) / 2);
  }
  nn::Tensor<T> norm_apply(const std::string& n, const nn::Tensor<T>& x) const {
    return nn::group_norm(x, groups(x.dim(1)), get(n + ".gamma"), get(n + ".beta"));
  }
  nn::Tensor<T> resblock_apply(const std::string& n, const nn::Tensor<T>& x, const nn::Tensor<T>& temb) const {
    nn::Tensor<T> h = conv_apply(n + ".conv1", x, 1);
    if (s_.time_dim) h = nn::add_channel_bias(h, nn::linear(temb, get(n + ".tproj.weight"), get(n + ".tproj.bias")));
    h = nn::silu(norm_apply(n + ".norm1", h));
    h = nn::silu(norm_apply(n + ".norm2", conv_apply(n + ".conv2", h, 1)));
    const nn::Tensor<T> skip = params_.contains(n + ".skip.weight") ? conv_apply(n + ".skip", x, 1) : x;
    return nn::add(skip, h);
  }
  nn::Tensor<T> cross_attention_apply(const std::string& n, const nn::Tensor<T>& h, const nn::Tensor<T>& cond) const {
    const std::size_t H = h.dim(2), W = h.dim(3);
    nn::Tensor<T> tokens = nn::to_tokens(h);
    if (s_.positional) tokens = nn::add_batched(tokens, get(n + ".qpos"));
    const nn::Tensor<T> q = nn::linear(tokens, get(n + ".q.weight"), get(n + ".q.bias"));
    nn::Tensor<T> k = nn::linear(cond, get(n + ".k.weight"), get(n + ".k.bias"));
    // Added after projection so token identity is not confined to the span of a narrow token.
    if (s_.positional) k = nn::add_batched(k, get(n + ".kpos"));
    const nn::Tensor<T> v = nn::linear(cond, get(n + ".v.weight"), get(n + ".v.bias"));
    const nn::Tensor<T> a = nn::attention(q, k, v, s_.heads);
    const nn::Tensor<T> o = nn::linear(a, get(n + ".out.weight"), get(n + ".out.bias"));
    return nn::add(h, nn::from_tokens(o, H, W));
  }

  UNetSpec s_;
  nn::ParamStore<T> params_;
};

}  // namespace detail

/// Conditional noise predictor eps_theta(x_t, c, t); parameters prefixed "denoiser.".
template <class T>
class Denoiser {
 public:
  Denoiser() = default;
  Denoiser(const DenoiserConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    net_ = detail::UNet<T>({"denoiser.", cfg.base_channels, cfg.n_scales, cfg.resnet_blocks, cfg.norm_groups,
                            cfg.time_embed_dim, cfg.attention_heads, cfg.cond_token_dim, cfg.cond_tokens, cfg.patch_size,
                            cfg.positional_embeddings},
                           rng);
  }

  const DenoiserConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return net_.params(); }
  const nn::ParamStore<T>& params() const { return net_.params(); }

  /// x_t [N, 1, P, P], cond [N, cond_dim], one step index per sample -> eps_hat [N, 1, P, P].
  nn::Tensor<T> forward(const nn::Tensor<T>& x_t, const nn::Tensor<T>& cond, const std::vector<int>& t) const {
    const std::size_t n = x_t.rank() == 4 ? x_t.dim(0) : 0;
    if (x_t.rank() != 4 || x_t.dim(1) != 1 || x_t.dim(2) != cfg_.patch_size || x_t.dim(3) != cfg_.patch_size)
      throw DataError("denoise: expected x_t [N, 1, " + std::to_string(cfg_.patch_size) + ", " +
                      std::to_string(cfg_.patch_size) + "], got " + nn::shape_str(x_t.shape()));
    if (cond.rank() != 2 || cond.dim(0) != n || cond.dim(1) != cfg_.cond_dim())
      throw DataError("denoise: expected cond [" + std::to_string(n) + ", " + std::to_string(cfg_.cond_dim()) +
                      "], got " + nn::shape_str(cond.shape()));
    if (t.size() != n) throw DataError("denoise: one step index per sample required");
    nn::Tensor<T> temb({n, cfg_.time_embed_dim});
    for (std::size_t b = 0; b < n; ++b) {
      const auto e = nn::time_embedding<T>(t[b], cfg_.time_embed_dim);
      std::copy(e.begin(), e.end(), temb.data() + b * cfg_.time_embed_dim);
    }
    nn::Tensor<T> out = net_.forward(x_t, temb, nn::reshape(cond, {n, cfg_.cond_tokens, cfg_.cond_token_dim}));
    return cfg_.input_skip ? nn::add(out, x_t) : out;
  }

  nn::Tensor<T> operator()(const nn::Tensor<T>& x_t, const nn::Tensor<T>& cond, const std::vector<int>& t) const {
    return forward(x_t, cond, t);
  }

 private:
  DenoiserConfig cfg_;
  detail::UNet<T> net_;
};

/// Direct DAS -> image regression network; parameters prefixed "baseline.".
template <class T>
class BaselineUNet {
 public:
  BaselineUNet() = default;
  BaselineUNet(const BaselineConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    net_ = detail::UNet<T>({"baseline.", cfg.base_channels, cfg.n_scales, cfg.resnet_blocks, cfg.norm_groups, 0, 0, 0, 0,
                            cfg.image_size, false},
                           rng);
  }

  const BaselineConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return net_.params(); }
  const nn::ParamStore<T>& params() const { return net_.params(); }

  nn::Tensor<T> forward(const nn::Tensor<T>& x) const { return net_.forward(x, {}, {}); }

 private:
  BaselineConfig cfg_;
  detail::UNet<T> net_;
};

}  // namespace oat
