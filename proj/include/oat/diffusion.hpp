#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "oat/error.hpp"
#include "oat/nn/ops.hpp"
#include "oat/nn/tensor.hpp"

namespace oat::diffusion {

/// How the per-step loss weights gamma_t are chosen.
enum class LossWeighting {
  kUnit,  // gamma_t = 1
  kElbo,  // gamma_t = beta_t / (2 (1 - beta_t) (1 - alpha_bar_t)), the weight implied by sigma_t^2 = beta_t
};

/// Linear beta schedule with its cumulative products. Index t runs 1..T; vectors are 0-based.
struct NoiseSchedule {
  int steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha_bar;
  std::vector<double> sigma;
  std::vector<double> gamma;

  double beta_at(int t) const { return beta.at(t - 1); }
  double sigma_at(int t) const { return sigma.at(t - 1); }
  double gamma_at(int t) const { return gamma.at(t - 1); }
  /// Cumulative product with the convention alpha_bar(0) = 1.
  double alpha_bar_at(int t) const { return t == 0 ? 1.0 : alpha_bar.at(t - 1); }
};

inline NoiseSchedule make_schedule(int steps, double beta_1, double beta_T,
                                   LossWeighting weighting = LossWeighting::kUnit) {
  if (steps < 1) throw ConfigError("schedule: T must be >= 1");
  if (!(beta_1 > 0.0 && beta_1 <= beta_T && beta_T < 1.0))
    throw ConfigError("schedule: need 0 < beta_1 <= beta_T < 1");
  NoiseSchedule s;
  s.steps = steps;
  s.beta.resize(steps);
  s.alpha_bar.resize(steps);
  s.sigma.resize(steps);
  s.gamma.resize(steps);
  double running = 1.0;
  for (int t = 1; t <= steps; ++t) {
    const double b = steps == 1 ? beta_1 : beta_1 + (t - 1) * (beta_T - beta_1) / (steps - 1);
    s.beta[t - 1] = b;
    running *= 1.0 - b;
    s.alpha_bar[t - 1] = running;
    s.sigma[t - 1] = std::sqrt(b);
    s.gamma[t - 1] = weighting == LossWeighting::kUnit ? 1.0 : b / (2.0 * (1.0 - b) * (1.0 - running));
  }
  for (int t = 1; t < steps; ++t) {
    if (!(s.alpha_bar[t] < s.alpha_bar[t - 1] && s.alpha_bar[t] > 0.0))
      throw NumericError("schedule: alpha_bar must be strictly decreasing in (0, 1)");
  }
  return s;
}

namespace detail {
inline void check_step(const NoiseSchedule& s, int t, const char* what) {
  if (t < 1 || t > s.steps)
    throw ConfigError(std::string(what) + ": step " + std::to_string(t) + " outside [1, " + std::to_string(s.steps) + "]");
}
template <class T>
void check_same(std::span<const T> a, std::span<const T> b, const char* what) {
  if (a.size() != b.size()) throw DataError(std::string(what) + ": length mismatch");
}
}  // namespace detail

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
template <class T>
std::vector<T> q_sample(std::span<const T> x0, int t, std::span<const T> eps, const NoiseSchedule& s) {
  detail::check_step(s, t, "q_sample");
  detail::check_same(x0, eps, "q_sample");
  const double ab = s.alpha_bar_at(t);
  const T a = static_cast<T>(std::sqrt(ab)), b = static_cast<T>(std::sqrt(1.0 - ab));
  std::vector<T> out(x0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

/// Ancestral step: x_{t-1} = (x_t - beta_t / sqrt(1 - alpha_bar_t) eps_hat) / sqrt(1 - beta_t) + sigma_t z,
/// with no noise at t = 1.
template <class T>
std::vector<T> ddpm_step(std::span<const T> x_t, std::span<const T> eps_hat, int t, const NoiseSchedule& s,
                         std::span<const T> z) {
  detail::check_step(s, t, "ddpm_step");
  detail::check_same(x_t, eps_hat, "ddpm_step");
  const double beta = s.beta_at(t);
  const double coef = beta / std::sqrt(1.0 - s.alpha_bar_at(t));
  const double inv = 1.0 / std::sqrt(1.0 - beta);
  const double sigma = t == 1 ? 0.0 : s.sigma_at(t);
  if (sigma != 0.0) detail::check_same(x_t, z, "ddpm_step");
  std::vector<T> out(x_t.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = inv * (static_cast<double>(x_t[i]) - coef * static_cast<double>(eps_hat[i]));
    if (sigma != 0.0) v += sigma * static_cast<double>(z[i]);
    out[i] = static_cast<T>(v);
  }
  return out;
}

/// Noise level of a DDIM jump t -> s for stochasticity eta (eta = 1 matches the ancestral sampler).
inline double ddim_sigma(const NoiseSchedule& sch, int t, int s, double eta) {
  const double at = sch.alpha_bar_at(t), as = sch.alpha_bar_at(s);
  return eta * std::sqrt((1.0 - as) / (1.0 - at)) * std::sqrt(1.0 - at / as);
}

/// Generalized (non-Markovian) step from t to an earlier s:
///   x0_hat = (x_t - sqrt(1 - a_t) eps_hat) / sqrt(a_t)
///   x_s = sqrt(a_s) x0_hat + sqrt(1 - a_s - sigma^2) eps_hat + sigma z.
template <class T>
std::vector<T> ddim_step(std::span<const T> x_t, std::span<const T> eps_hat, int t, int s, double eta,
                         const NoiseSchedule& sch, std::span<const T> z) {
  detail::check_step(sch, t, "ddim_step");
  if (s < 0 || s >= t) throw ConfigError("ddim_step: need 0 <= s < t");
  detail::check_same(x_t, eps_hat, "ddim_step");
  const double at = sch.alpha_bar_at(t), as = sch.alpha_bar_at(s);
  const double sigma = ddim_sigma(sch, t, s, eta);
  const double dir2 = 1.0 - as - sigma * sigma;
  if (dir2 < -1e-12) throw NumericError("ddim_step: sigma^2 exceeds 1 - alpha_bar_s");
  const double dir = std::sqrt(std::max(0.0, dir2));
  const double sqrt_at = std::sqrt(at), sqrt_1mat = std::sqrt(1.0 - at), sqrt_as = std::sqrt(as);
  if (sigma != 0.0) detail::check_same(x_t, z, "ddim_step");
  std::vector<T> out(x_t.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double e = static_cast<double>(eps_hat[i]);
    const double x0 = (static_cast<double>(x_t[i]) - sqrt_1mat * e) / sqrt_at;
    double v = sqrt_as * x0 + dir * e;
    if (sigma != 0.0) v += sigma * static_cast<double>(z[i]);
    out[i] = static_cast<T>(v);
  }
  return out;
}

/// NIS sampling plan: pairs (t, s) with t running from T down to 1 in `nis` evenly spaced
/// steps and s the next smaller step (0 after the last).
inline std::vector<std::pair<int, int>> make_nis_subsequence(int steps, int nis) {
  if (steps < 1 || nis < 1 || nis > steps) throw ConfigError("nis: need 1 <= NIS <= T");
  std::vector<int> ts;
  if (nis == 1) {
    ts.push_back(steps);
  } else {
    for (int i = 0; i < nis; ++i)
      ts.push_back(static_cast<int>(std::lround(1.0 + static_cast<double>(i) * (steps - 1) / (nis - 1))));
    std::sort(ts.begin(), ts.end());
    ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
    std::reverse(ts.begin(), ts.end());
  }
  std::vector<std::pair<int, int>> plan;
  for (std::size_t k = 0; k < ts.size(); ++k) plan.emplace_back(ts[k], k + 1 < ts.size() ? ts[k + 1] : 0);
  return plan;
}

/// (1/N) sum_n w_n ||pred_n - target_n||^2 over a leading batch axis, as a [1] tensor.
template <class T>
nn::Tensor<T> weighted_batch_sse(const nn::Tensor<T>& pred, const nn::Tensor<T>& target, std::vector<T> weights) {
  if (pred.shape() != target.shape() || pred.rank() < 1 || weights.size() != pred.dim(0))
    throw nn::ShapeError("weighted_batch_sse: " + nn::shape_str(pred.shape()) + " vs " +
                         nn::shape_str(target.shape()));
  const std::size_t n = pred.dim(0), per = pred.size() / std::max<std::size_t>(n, 1);
  T acc = T(0);
  for (std::size_t b = 0; b < n; ++b) {
    T s = T(0);
    for (std::size_t i = 0; i < per; ++i) {
      const T d = pred.data()[b * per + i] - target.data()[b * per + i];
      s += d * d;
    }
    acc += weights[b] * s;
  }
  const T inv = T(1) / static_cast<T>(n);
  nn::Tensor<T> out({1}, acc * inv);
  nn::record(out, {&pred, &target}, [n, per, inv, weights = std::move(weights)](nn::Node<T>& self) {
    nn::Node<T>& a = *self.parents[0];
    nn::Node<T>& b = *self.parents[1];
    T* da = a.requires_grad ? a.grad_data() : nullptr;
    T* db = b.requires_grad ? b.grad_data() : nullptr;
    for (std::size_t k = 0; k < n; ++k) {
      const T g = self.grad[0] * T(2) * inv * weights[k];
      for (std::size_t i = 0; i < per; ++i) {
        const std::size_t idx = k * per + i;
        const T d = a.value[idx] - b.value[idx];
        if (da) da[idx] += g * d;
        if (db) db[idx] -= g * d;
      }
    }
  });
  return out;
}

/// Noise-prediction objective: mean over the batch of gamma_t ||eps - eps_theta(x_t, cond, t)||^2
/// with x_t = q_sample(x0, t, eps). `denoiser(x_t, cond, t_batch)` returns a tensor shaped like x0.
template <class T, class Denoiser>
nn::Tensor<T> diffusion_loss(const nn::Tensor<T>& x0, const nn::Tensor<T>& cond, const std::vector<int>& t_batch,
                             const nn::Tensor<T>& eps, Denoiser&& denoiser, const NoiseSchedule& sch) {
  if (x0.shape() != eps.shape() || x0.rank() < 1 || t_batch.size() != x0.dim(0))
    throw nn::ShapeError("diffusion_loss: inconsistent batch shapes");
  const std::size_t n = x0.dim(0), per = x0.size() / n;
  nn::Tensor<T> x_t(x0.shape());
  std::vector<T> weights(n);
  for (std::size_t b = 0; b < n; ++b) {
    const auto xs = q_sample<T>(x0.values().subspan(b * per, per), t_batch[b], eps.values().subspan(b * per, per), sch);
    std::copy(xs.begin(), xs.end(), x_t.data() + b * per);
    weights[b] = static_cast<T>(sch.gamma_at(t_batch[b]));
  }
  nn::Tensor<T> eps_hat = denoiser(x_t, cond, t_batch);
  return weighted_batch_sse(eps_hat, eps, std::move(weights));
}

}  // namespace oat::diffusion
