#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "oat/nn/tensor.hpp"

namespace oat::nn {

// ---------------------------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
  record(out, {&a, &b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      T* g = p->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
  return out;
}

/// x[N, ...] + p[...]: the same p added to every batch element.
template <class T>
Tensor<T> add_batched(const Tensor<T>& x, const Tensor<T>& p) {
  if (x.rank() != p.rank() + 1 || !std::equal(p.shape().begin(), p.shape().end(), x.shape().begin() + 1))
    throw ShapeError("add_batched: " + shape_str(x.shape()) + " vs " + shape_str(p.shape()));
  const std::size_t N = x.dim(0), L = p.size();
  Tensor<T> out(x.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < L; ++k) out.data()[n * L + k] = x.data()[n * L + k] + p.data()[k];
  record(out, {&x, &p}, [N, L](Node<T>& self) {
    if (self.parents[0]->requires_grad) {
      T* dx = self.parents[0]->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      T* dp = self.parents[1]->grad_data();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < L; ++k) dp[k] += self.grad[n * L + k];
    }
  });
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = c * a.data()[i];
  record(out, {&a}, [c](Node<T>& self) {
    T* g = self.parents[0]->grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += c * self.grad[i];
  });
  return out;
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
  record(out, {&x}, [](Node<T>& self) {
    Node<T>& in = *self.parents[0];
    T* g = in.grad_data();
    // Subgradient 0 at exactly 0.
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (in.value[i] > T(0)) g[i] += self.grad[i];
  });
  return out;
}

template <class T>
Tensor<T> silu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.data()[i];
    out.data()[i] = v / (T(1) + std::exp(-v));
  }
  record(out, {&x}, [](Node<T>& self) {
    Node<T>& in = *self.parents[0];
    T* g = in.grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T v = in.value[i];
      const T s = T(1) / (T(1) + std::exp(-v));
      g[i] += self.grad[i] * s * (T(1) + v * (T(1) - s));
    }
  });
  return out;
}

/// Copy with a new shape of equal element count.
template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor<T> out(std::move(shape), std::vector<T>(x.values().begin(), x.values().end()));
  record(out, {&x}, [](Node<T>& self) {
    T* g = self.parents[0]->grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
  return out;
}

/// [A, B, C] -> [A, C, B].
template <class T>
Tensor<T> swap_last_two(const Tensor<T>& x) {
  if (x.rank() != 3) throw ShapeError("swap_last_two: expected rank 3, got " + shape_str(x.shape()));
  const std::size_t A = x.dim(0), B = x.dim(1), C = x.dim(2);
  Tensor<T> out({A, C, B});
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) out.data()[(a * C + c) * B + b] = x.data()[(a * B + b) * C + c];
  record(out, {&x}, [A, B, C](Node<T>& self) {
    T* g = self.parents[0]->grad_data();
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) g[(a * B + b) * C + c] += self.grad[(a * C + c) * B + b];
  });
  return out;
}

// ---------------------------------------------------------------------------------------------
// Dense layers

/// y = x W^T + b over the last axis of x. W is [out, in], b is [out] (may be undefined).
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (w.rank() != 2 || x.rank() < 1 || x.shape().back() != w.dim(1))
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  const std::size_t in = w.dim(1), out_dim = w.dim(0), rows = x.size() / in;
  if (b.defined() && b.size() != out_dim) throw ShapeError("linear: bias " + shape_str(b.shape()));
  Shape shape = x.shape();
  shape.back() = out_dim;
  Tensor<T> out(shape);
  const T* px = x.data();
  const T* pw = w.data();
  T* py = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = px + r * in;
    for (std::size_t o = 0; o < out_dim; ++o) {
      const T* wr = pw + o * in;
      T acc = b.defined() ? b.data()[o] : T(0);
      for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
      py[r * out_dim + o] = acc;
    }
  }
  auto fn = [rows, in, out_dim](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    Node<T>& wn = *self.parents[1];
    const T* dy = self.grad.data();
    if (xn.requires_grad) {
      T* dx = xn.grad_data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out_dim; ++o) {
          const T go = dy[r * out_dim + o];
          if (go == T(0)) continue;
          const T* wr = wn.value.data() + o * in;
          T* dxr = dx + r * in;
          for (std::size_t i = 0; i < in; ++i) dxr[i] += go * wr[i];
        }
    }
    if (wn.requires_grad) {
      T* dw = wn.grad_data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out_dim; ++o) {
          const T go = dy[r * out_dim + o];
          if (go == T(0)) continue;
          const T* xr = xn.value.data() + r * in;
          T* dwr = dw + o * in;
          for (std::size_t i = 0; i < in; ++i) dwr[i] += go * xr[i];
        }
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      T* db = self.parents[2]->grad_data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out_dim; ++o) db[o] += dy[r * out_dim + o];
    }
  };
  if (b.defined())
    record(out, {&x, &w, &b}, fn);
  else
    record(out, {&x, &w}, fn);
  return out;
}

// ---------------------------------------------------------------------------------------------
// Convolution (NCHW, square kernels, zero padding)

namespace detail {

// Output columns ox whose input column ox*stride + k - pad lies in [0, w).
inline std::pair<long, long> valid_range(long out, long in, long k, long stride, long pad) {
  const long lo_num = pad - k;
  const long lo = lo_num <= 0 ? 0 : (lo_num + stride - 1) / stride;
  const long hi_num = in - 1 + pad - k;
  const long hi = hi_num < 0 ? 0 : std::min(out, hi_num / stride + 1);
  return {lo, std::max(lo, hi)};
}

// Receptive fields of one image as a [C*K*K, Ho*Wo] matrix, zero where the window leaves the input.
template <class T>
void im2col(const T* x, long C, long H, long W, long K, long S, long P, long Ho, long Wo, T* col) {
  for (long c = 0; c < C; ++c)
    for (long ky = 0; ky < K; ++ky)
      for (long kx = 0; kx < K; ++kx) {
        T* row = col + ((c * K + ky) * K + kx) * Ho * Wo;
        const auto [lo, hi] = valid_range(Wo, W, kx, S, P);
        for (long oy = 0; oy < Ho; ++oy) {
          T* r = row + oy * Wo;
          const long iy = oy * S + ky - P;
          if (iy < 0 || iy >= H) {
            std::fill(r, r + Wo, T(0));
            continue;
          }
          std::fill(r, r + lo, T(0));
          std::fill(r + hi, r + Wo, T(0));
          const T* xr = x + (c * H + iy) * W + kx - P;
          for (long ox = lo; ox < hi; ++ox) r[ox] = xr[ox * S];
        }
      }
}

// Adjoint of im2col: scatter-adds the matrix back onto the image.
template <class T>
void col2im_add(const T* col, long C, long H, long W, long K, long S, long P, long Ho, long Wo, T* x) {
  for (long c = 0; c < C; ++c)
    for (long ky = 0; ky < K; ++ky)
      for (long kx = 0; kx < K; ++kx) {
        const T* row = col + ((c * K + ky) * K + kx) * Ho * Wo;
        const auto [lo, hi] = valid_range(Wo, W, kx, S, P);
        for (long oy = 0; oy < Ho; ++oy) {
          const long iy = oy * S + ky - P;
          if (iy < 0 || iy >= H) continue;
          const T* r = row + oy * Wo;
          T* xr = x + (c * H + iy) * W + kx - P;
          for (long ox = lo; ox < hi; ++ox) xr[ox * S] += r[ox];
        }
      }
}

}  // namespace detail

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride, std::size_t pad) {
  if (x.rank() != 4 || w.rank() != 4 || w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3))
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  if (stride != 1 && stride != 2) throw ShapeError("conv2d: stride must be 1 or 2");
  const long N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const long O = w.dim(0), K = w.dim(2), S = stride, P = pad;
  if (H + 2 * P < K || W + 2 * P < K) throw ShapeError("conv2d: kernel larger than padded input");
  const long Ho = (H + 2 * P - K) / S + 1, Wo = (W + 2 * P - K) / S + 1;
  if (b.defined() && static_cast<long>(b.size()) != O) throw ShapeError("conv2d: bias " + shape_str(b.shape()));
  const long R = C * K * K, I = Ho * Wo;

  Tensor<T> out({static_cast<std::size_t>(N), static_cast<std::size_t>(O), static_cast<std::size_t>(Ho),
                 static_cast<std::size_t>(Wo)});
  const T* pw = w.data();
  std::vector<T> col(static_cast<std::size_t>(R * I));
  for (long n = 0; n < N; ++n) {
    detail::im2col(x.data() + n * C * H * W, C, H, W, K, S, P, Ho, Wo, col.data());
    for (long o = 0; o < O; ++o) {
      T* y = out.data() + (n * O + o) * I;
      std::fill(y, y + I, b.defined() ? b.data()[o] : T(0));
      for (long r = 0; r < R; ++r) {
        const T wv = pw[o * R + r];
        const T* cr = col.data() + r * I;
        for (long i = 0; i < I; ++i) y[i] += wv * cr[i];
      }
    }
  }

  auto fn = [N, C, H, W, O, K, S, P, Ho, Wo, R, I](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    Node<T>& wn = *self.parents[1];
    const T* dy = self.grad.data();
    T* dx = xn.requires_grad ? xn.grad_data() : nullptr;
    T* dw = wn.requires_grad ? wn.grad_data() : nullptr;
    const T* pw = wn.value.data();
    std::vector<T> col(static_cast<std::size_t>(R * I)), colt, dcol;
    if (dw) colt.resize(col.size());
    if (dx) dcol.resize(col.size());
    for (long n = 0; n < N; ++n) {
      const T* g = dy + n * O * I;
      if (dw) {
        // dW[o, :] += dy[o, i] * col[:, i], accumulated over i with the receptive field contiguous.
        detail::im2col(xn.value.data() + n * C * H * W, C, H, W, K, S, P, Ho, Wo, col.data());
        for (long r = 0; r < R; ++r)
          for (long i = 0; i < I; ++i) colt[i * R + r] = col[r * I + i];
        for (long o = 0; o < O; ++o) {
          T* dwo = dw + o * R;
          for (long i = 0; i < I; ++i) {
            const T gv = g[o * I + i];
            const T* ct = colt.data() + i * R;
            for (long r = 0; r < R; ++r) dwo[r] += gv * ct[r];
          }
        }
      }
      if (dx) {
        std::fill(dcol.begin(), dcol.end(), T(0));
        for (long r = 0; r < R; ++r) {
          T* dc = dcol.data() + r * I;
          for (long o = 0; o < O; ++o) {
            const T wv = pw[o * R + r];
            const T* go = g + o * I;
            for (long i = 0; i < I; ++i) dc[i] += wv * go[i];
          }
        }
        detail::col2im_add(dcol.data(), C, H, W, K, S, P, Ho, Wo, dx + n * C * H * W);
      }
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      T* db = self.parents[2]->grad_data();
      for (long n = 0; n < N; ++n)
        for (long o = 0; o < O; ++o) {
          const T* gp = dy + (n * O + o) * I;
          T acc = T(0);
          for (long k = 0; k < I; ++k) acc += gp[k];
          db[o] += acc;
        }
    }
  };
  if (b.defined())
    record(out, {&x, &w, &b}, fn);
  else
    record(out, {&x, &w}, fn);
  return out;
}

// ---------------------------------------------------------------------------------------------
// Normalization and shape plumbing for NCHW feature maps

inline constexpr double kGroupNormEps = 1e-5;

/// Group normalization over [N, C, ...]; gamma and beta are per-channel [C].
template <class T>
Tensor<T> group_norm(const Tensor<T>& x, std::size_t groups, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = kGroupNormEps) {
  if (x.rank() < 2) throw ShapeError("group_norm: rank must be >= 2");
  const std::size_t N = x.dim(0), C = x.dim(1), L = x.size() / (N * C);
  if (groups == 0 || C % groups != 0) throw ShapeError("group_norm: channels not divisible by groups");
  if (gamma.size() != C || beta.size() != C) throw ShapeError("group_norm: affine parameters must be [C]");
  const std::size_t cg = C / groups, m = cg * L;

  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.size());
  std::vector<T> rstd(N * groups);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t base = (n * C + g * cg) * L;
      const T* xp = x.data() + base;
      T mean = T(0);
      for (std::size_t k = 0; k < m; ++k) mean += xp[k];
      mean /= static_cast<T>(m);
      T var = T(0);
      for (std::size_t k = 0; k < m; ++k) var += (xp[k] - mean) * (xp[k] - mean);
      var /= static_cast<T>(m);
      const T rs = T(1) / std::sqrt(var + static_cast<T>(eps));
      rstd[n * groups + g] = rs;
      for (std::size_t k = 0; k < m; ++k) {
        const std::size_t c = g * cg + k / L;
        const T xh = (xp[k] - mean) * rs;
        xhat[base + k] = xh;
        out.data()[base + k] = gamma.data()[c] * xh + beta.data()[c];
      }
    }
  }
  record(out, {&x, &gamma, &beta},
         [N, C, L, groups, cg, m, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
           Node<T>& xn = *self.parents[0];
           Node<T>& gn = *self.parents[1];
           Node<T>& bn = *self.parents[2];
           const T* dy = self.grad.data();
           if (gn.requires_grad || bn.requires_grad) {
             T* dg = gn.requires_grad ? gn.grad_data() : nullptr;
             T* db = bn.requires_grad ? bn.grad_data() : nullptr;
             for (std::size_t n = 0; n < N; ++n)
               for (std::size_t c = 0; c < C; ++c) {
                 const std::size_t base = (n * C + c) * L;
                 T sg = T(0), sb = T(0);
                 for (std::size_t k = 0; k < L; ++k) {
                   sg += dy[base + k] * xhat[base + k];
                   sb += dy[base + k];
                 }
                 if (dg) dg[c] += sg;
                 if (db) db[c] += sb;
               }
           }
           if (!xn.requires_grad) return;
           T* dx = xn.grad_data();
           std::vector<T> dxh(m);
           for (std::size_t n = 0; n < N; ++n)
             for (std::size_t g = 0; g < groups; ++g) {
               const std::size_t base = (n * C + g * cg) * L;
               T mean_d = T(0), mean_dx = T(0);
               for (std::size_t k = 0; k < m; ++k) {
                 const std::size_t c = g * cg + k / L;
                 dxh[k] = dy[base + k] * gn.value[c];
                 mean_d += dxh[k];
                 mean_dx += dxh[k] * xhat[base + k];
               }
               mean_d /= static_cast<T>(m);
               mean_dx /= static_cast<T>(m);
               const T rs = rstd[n * groups + g];
               for (std::size_t k = 0; k < m; ++k) dx[base + k] += rs * (dxh[k] - mean_d - xhat[base + k] * mean_dx);
             }
         });
  return out;
}

/// x[N, C, H, W] + e[N, C] broadcast over the spatial axes.
template <class T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& e) {
  if (x.rank() != 4 || e.rank() != 2 || e.dim(0) != x.dim(0) || e.dim(1) != x.dim(1))
    throw ShapeError("add_channel_bias: " + shape_str(x.shape()) + " vs " + shape_str(e.shape()));
  const std::size_t NC = x.dim(0) * x.dim(1), L = x.dim(2) * x.dim(3);
  Tensor<T> out(x.shape());
  for (std::size_t nc = 0; nc < NC; ++nc)
    for (std::size_t k = 0; k < L; ++k) out.data()[nc * L + k] = x.data()[nc * L + k] + e.data()[nc];
  record(out, {&x, &e}, [NC, L](Node<T>& self) {
    if (self.parents[0]->requires_grad) {
      T* dx = self.parents[0]->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      T* de = self.parents[1]->grad_data();
      for (std::size_t nc = 0; nc < NC; ++nc) {
        T acc = T(0);
        for (std::size_t k = 0; k < L; ++k) acc += self.grad[nc * L + k];
        de[nc] += acc;
      }
    }
  });
  return out;
}

/// Nearest-neighbour 2x upsampling of [N, C, H, W].
template <class T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("upsample2x: expected rank 4");
  const std::size_t NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> out({x.dim(0), x.dim(1), 2 * H, 2 * W});
  for (std::size_t nc = 0; nc < NC; ++nc)
    for (std::size_t i = 0; i < 2 * H; ++i)
      for (std::size_t j = 0; j < 2 * W; ++j)
        out.data()[(nc * 2 * H + i) * 2 * W + j] = x.data()[(nc * H + i / 2) * W + j / 2];
  record(out, {&x}, [NC, H, W](Node<T>& self) {
    T* dx = self.parents[0]->grad_data();
    for (std::size_t nc = 0; nc < NC; ++nc)
      for (std::size_t i = 0; i < 2 * H; ++i)
        for (std::size_t j = 0; j < 2 * W; ++j) dx[(nc * H + i / 2) * W + j / 2] += self.grad[(nc * 2 * H + i) * 2 * W + j];
  });
  return out;
}

/// Concatenation along the channel axis of two [N, C_i, H, W] maps.
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw ShapeError("concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), L = a.dim(2) * a.dim(3);
  Tensor<T> out({N, Ca + Cb, a.dim(2), a.dim(3)});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(a.data() + n * Ca * L, Ca * L, out.data() + n * (Ca + Cb) * L);
    std::copy_n(b.data() + n * Cb * L, Cb * L, out.data() + n * (Ca + Cb) * L + Ca * L);
  }
  record(out, {&a, &b}, [N, Ca, Cb, L](Node<T>& self) {
    for (int side = 0; side < 2; ++side) {
      Node<T>& p = *self.parents[side];
      if (!p.requires_grad) continue;
      const std::size_t Cs = side == 0 ? Ca : Cb, off = side == 0 ? 0 : Ca * L;
      T* d = p.grad_data();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < Cs * L; ++k) d[n * Cs * L + k] += self.grad[n * (Ca + Cb) * L + off + k];
    }
  });
  return out;
}

/// [N, C, H, W] -> [N, H*W, C] (one token per spatial position).
template <class T>
Tensor<T> to_tokens(const Tensor<T>& x) {
  return swap_last_two(reshape(x, {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)}));
}

/// [N, H*W, C] -> [N, C, H, W].
template <class T>
Tensor<T> from_tokens(const Tensor<T>& t, std::size_t h, std::size_t w) {
  if (t.rank() != 3 || t.dim(1) != h * w) throw ShapeError("from_tokens: " + shape_str(t.shape()));
  return reshape(swap_last_two(t), {t.dim(0), t.dim(2), h, w});
}

// ---------------------------------------------------------------------------------------------
// Attention

/// Row-wise softmax(Q K^T / sqrt(d_head)) per head, returned as [N, heads, n, m]. No graph.
template <class T>
std::vector<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, std::size_t heads) {
  const std::size_t N = q.dim(0), n = q.dim(1), D = q.dim(2), m = k.dim(1), dh = D / heads;
  const T inv = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<T> p(N * heads * n * m);
  for (std::size_t b = 0; b < N; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < n; ++i) {
        T* row = p.data() + ((b * heads + h) * n + i) * m;
        const T* qi = q.data() + (b * n + i) * D + h * dh;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < m; ++j) {
          const T* kj = k.data() + (b * m + j) * D + h * dh;
          T s = T(0);
          for (std::size_t e = 0; e < dh; ++e) s += qi[e] * kj[e];
          row[j] = s * inv;
          mx = std::max(mx, row[j]);
        }
        T z = T(0);
        for (std::size_t j = 0; j < m; ++j) {
          row[j] = std::exp(row[j] - mx);
          z += row[j];
        }
        for (std::size_t j = 0; j < m; ++j) row[j] /= z;
      }
  return p;
}

/// Multi-head scaled dot-product attention: q [N, n, D], k and v [N, m, D] -> [N, n, D].
template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads) {
  if (q.rank() != 3 || k.rank() != 3 || v.shape() != k.shape() || q.dim(0) != k.dim(0) || q.dim(2) != k.dim(2))
    throw ShapeError("attention: q " + shape_str(q.shape()) + " k " + shape_str(k.shape()) + " v " +
                     shape_str(v.shape()));
  if (heads == 0 || q.dim(2) % heads != 0) throw ShapeError("attention: model width not divisible by heads");
  const std::size_t N = q.dim(0), n = q.dim(1), D = q.dim(2), m = k.dim(1), dh = D / heads;
  std::vector<T> p = attention_weights(q, k, heads);
  Tensor<T> out({N, n, D});
  for (std::size_t b = 0; b < N; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < n; ++i) {
        const T* row = p.data() + ((b * heads + h) * n + i) * m;
        T* oi = out.data() + (b * n + i) * D + h * dh;
        for (std::size_t j = 0; j < m; ++j) {
          const T* vj = v.data() + (b * m + j) * D + h * dh;
          for (std::size_t e = 0; e < dh; ++e) oi[e] += row[j] * vj[e];
        }
      }
  record(out, {&q, &k, &v}, [N, n, D, m, dh, heads, p = std::move(p)](Node<T>& self) {
    Node<T>& qn = *self.parents[0];
    Node<T>& kn = *self.parents[1];
    Node<T>& vn = *self.parents[2];
    const T inv = T(1) / std::sqrt(static_cast<T>(dh));
    T* dq = qn.requires_grad ? qn.grad_data() : nullptr;
    T* dk = kn.requires_grad ? kn.grad_data() : nullptr;
    T* dv = vn.requires_grad ? vn.grad_data() : nullptr;
    std::vector<T> dp(m), ds(m);
    for (std::size_t b = 0; b < N; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < n; ++i) {
          const T* row = p.data() + ((b * heads + h) * n + i) * m;
          const T* go = self.grad.data() + (b * n + i) * D + h * dh;
          T dot = T(0);
          for (std::size_t j = 0; j < m; ++j) {
            const T* vj = vn.value.data() + (b * m + j) * D + h * dh;
            T s = T(0);
            for (std::size_t e = 0; e < dh; ++e) s += go[e] * vj[e];
            dp[j] = s;
            dot += s * row[j];
            if (dv) {
              T* dvj = dv + (b * m + j) * D + h * dh;
              for (std::size_t e = 0; e < dh; ++e) dvj[e] += row[j] * go[e];
            }
          }
          for (std::size_t j = 0; j < m; ++j) ds[j] = row[j] * (dp[j] - dot) * inv;
          const T* qi = qn.value.data() + (b * n + i) * D + h * dh;
          for (std::size_t j = 0; j < m; ++j) {
            const T* kj = kn.value.data() + (b * m + j) * D + h * dh;
            if (dq) {
              T* dqi = dq + (b * n + i) * D + h * dh;
              for (std::size_t e = 0; e < dh; ++e) dqi[e] += ds[j] * kj[e];
            }
            if (dk) {
              T* dkj = dk + (b * m + j) * D + h * dh;
              for (std::size_t e = 0; e < dh; ++e) dkj[e] += ds[j] * qi[e];
            }
          }
        }
  });
  return out;
}

// ---------------------------------------------------------------------------------------------
// Losses

/// Mean squared error over all elements, returned as a [1] tensor.
template <class T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("mse_loss: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  T acc = T(0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T d = pred.data()[i] - target.data()[i];
    acc += d * d;
  }
  const T inv = T(1) / static_cast<T>(pred.size());
  Tensor<T> out({1}, acc * inv);
  record(out, {&pred, &target}, [inv](Node<T>& self) {
    Node<T>& a = *self.parents[0];
    Node<T>& b = *self.parents[1];
    const T g = self.grad[0] * T(2) * inv;
    if (a.requires_grad) {
      T* da = a.grad_data();
      for (std::size_t i = 0; i < a.value.size(); ++i) da[i] += g * (a.value[i] - b.value[i]);
    }
    if (b.requires_grad) {
      T* db = b.grad_data();
      for (std::size_t i = 0; i < b.value.size(); ++i) db[i] -= g * (a.value[i] - b.value[i]);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------------------------
// Embeddings

/// Sinusoidal step embedding: e[2i] = sin(t / 10000^(2i/dim)), e[2i+1] = cos(same).
template <class T = double>
std::vector<T> time_embedding(double t, std::size_t dim) {
  if (dim % 2 != 0) throw ShapeError("time_embedding: dim must be even");
  if (t < 0.0) throw ShapeError("time_embedding: step must be non-negative");
  std::vector<T> e(dim);
  for (std::size_t i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
    e[2 * i] = static_cast<T>(std::sin(t / freq));
    e[2 * i + 1] = static_cast<T>(std::cos(t / freq));
  }
  return e;
}

}  // namespace oat::nn
