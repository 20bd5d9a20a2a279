#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <tuple>
#include <utility>
#include <string>
#include <vector>

#include "oat/error.hpp"
#include "oat/image.hpp"

namespace oat {

/// Peak signal-to-noise ratio in dB; +inf for identical images.
inline double psnr(const Image& a, const Image& b, double peak = 1.0) {
  require_same_dims(a, b, "psnr");
  double sse = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a.data[k] - b.data[k];
    sse += d * d;
  }
  if (sse == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = sse / static_cast<double>(a.size());
  return 10.0 * std::log10(peak * peak / mse);
}

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Normalized 2-D Gaussian window, row-major window x window.
inline std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> g1(size);
  const double c = 0.5 * static_cast<double>(size - 1);
  double s = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double x = static_cast<double>(i) - c;
    g1[i] = std::exp(-x * x / (2.0 * sigma * sigma));
    s += g1[i];
  }
  for (double& v : g1) v /= s;
  std::vector<double> w(size * size);
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) w[i * size + j] = g1[i] * g1[j];
  return w;
}

/// Single-scale SSIM, averaged over every window position that lies fully inside the image.
inline double ssim(const Image& a, const Image& b, const SsimParams& p = {}) {
  require_same_dims(a, b, "ssim");
  if (a.height < p.window || a.width < p.window)
    throw DataError("ssim: image must be at least " + std::to_string(p.window) + "x" + std::to_string(p.window));
  const std::vector<double> w = gaussian_window(p.window, p.sigma);
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  const std::size_t nh = a.height - p.window + 1, nw = a.width - p.window + 1;
  double total = 0.0;
  for (std::size_t i = 0; i < nh; ++i) {
    for (std::size_t j = 0; j < nw; ++j) {
      double mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
      for (std::size_t u = 0; u < p.window; ++u) {
        for (std::size_t v = 0; v < p.window; ++v) {
          const double g = w[u * p.window + v];
          const double x = a.at(i + u, j + v), y = b.at(i + u, j + v);
          mx += g * x;
          my += g * y;
          sxx += g * x * x;
          syy += g * y * y;
          sxy += g * x * y;
        }
      }
      const double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
      total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
  }
  return total / static_cast<double>(nh * nw);
}

struct MetricSummary {
  std::string method;
  std::size_t count = 0;
  double ssim_mean = 0.0;
  double ssim_std = 0.0;
  double psnr_mean = 0.0;
  double psnr_std = 0.0;
};

/// Mean and sample standard deviation (n - 1); zero spread for n = 1 or identical values.
inline std::pair<double, double> mean_and_sample_std(const std::vector<double>& xs) {
  if (xs.empty()) throw DataError("mean_and_sample_std: empty input");
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double mean = sum / static_cast<double>(xs.size());
  bool all_equal = true;
  for (double x : xs) all_equal = all_equal && x == xs.front();
  if (xs.size() == 1 || all_equal) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

struct EvalPair {
  std::string method;
  Image reconstruction;
  Image ground_truth;
};

/// Per-method SSIM/PSNR summary, methods in order of first appearance.
inline std::vector<MetricSummary> evaluate_set(const std::vector<EvalPair>& pairs) {
  if (pairs.empty()) throw DataError("evaluate_set: empty evaluation set");
  std::vector<std::string> order;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> values;
  for (const auto& p : pairs) {
    if (!values.count(p.method)) order.push_back(p.method);
    auto& [s, q] = values[p.method];
    s.push_back(ssim(p.reconstruction, p.ground_truth));
    q.push_back(psnr(p.reconstruction, p.ground_truth));
  }
  std::vector<MetricSummary> out;
  for (const auto& m : order) {
    const auto& [s, q] = values[m];
    MetricSummary r;
    r.method = m;
    r.count = s.size();
    std::tie(r.ssim_mean, r.ssim_std) = mean_and_sample_std(s);
    std::tie(r.psnr_mean, r.psnr_std) = mean_and_sample_std(q);
    out.push_back(r);
  }
  return out;
}

inline std::string format_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

inline std::string evaluation_csv(const std::vector<MetricSummary>& rows) {
  std::string out = "method,ssim_mean,ssim_std,psnr_mean,psnr_std\n";
  for (const auto& r : rows) {
    out += r.method + "," + format_metric(r.ssim_mean) + "," + format_metric(r.ssim_std) + "," +
           format_metric(r.psnr_mean) + "," + format_metric(r.psnr_std) + "\n";
  }
  return out;
}

}  // namespace oat
