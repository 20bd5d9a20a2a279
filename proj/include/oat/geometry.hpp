#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "oat/error.hpp"
#include "oat/rng.hpp"

namespace oat {

/// Detector signal model used by the forward operator.
///  - kDeposition: unipolar time-of-flight deposition (default).
///  - kDerivative: deposition followed by a central time derivative (bipolar, N-shaped).
enum class SignalModel { kDeposition, kDerivative };

inline SignalModel parse_signal_model(std::string_view s) {
  if (s == "deposition") return SignalModel::kDeposition;
  if (s == "derivative") return SignalModel::kDerivative;
  throw ConfigError("unknown signal model '" + std::string(s) + "' (expected deposition or derivative)");
}

inline const char* to_string(SignalModel m) { return m == SignalModel::kDeposition ? "deposition" : "derivative"; }

/// Acquisition setup. Defaults describe a 36-element ring of radius 44 mm sampled at 41 MHz
/// around a 128 x 128 grid of 115 um pixels.
struct ScanConfig {
  std::size_t n_detectors = 36;
  double ring_radius = 0.044;       // m
  std::size_t n_samples = 1024;     // N_t
  double sample_rate = 41e6;        // Hz
  double speed_of_sound = 1490.0;   // m/s
  std::size_t image_size = 128;     // pixels per side
  double pixel_size = 115e-6;       // m
  double position_jitter_frac = 0.001;
  std::optional<double> acquisition_start;  // s; derived when unset
  std::uint64_t rng_seed = 0;
  SignalModel signal_model = SignalModel::kDeposition;

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string("scan: ") + name + " must be positive");
    };
    if (n_detectors == 0) throw ConfigError("scan: n_detectors must be positive");
    if (n_samples < 3) throw ConfigError("scan: n_samples must be at least 3");
    positive(ring_radius, "ring_radius");
    positive(sample_rate, "sample_rate");
    positive(speed_of_sound, "speed_of_sound");
    positive(pixel_size, "pixel_size");
    if (image_size == 0 || image_size % 2 != 0) throw ConfigError("scan: image_size must be even and positive");
    if (!(position_jitter_frac >= 0.0 && position_jitter_frac <= 0.01))
      throw ConfigError("scan: position_jitter_frac must lie in [0, 0.01]");
    if (acquisition_start && !(*acquisition_start > 0.0))
      throw ConfigError("scan: acquisition_start must be positive");
  }
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

inline double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct Timing {
  double t_start = 0.0;
  double sample_rate = 0.0;
  std::size_t n_samples = 0;
  double dt() const { return 1.0 / sample_rate; }
  friend bool operator==(const Timing&, const Timing&) = default;
};

/// Detector and pixel coordinates plus acquisition timing. `detectors` are the true
/// (possibly jittered) positions; `nominal_detectors` are the ideal ring positions.
struct ScanGeometry {
  std::vector<Point2> detectors;
  std::vector<Point2> nominal_detectors;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Point2> pixels;  // row-major, height * width
  Timing timing;
  double speed_of_sound = 0.0;
  double pixel_size = 0.0;
  SignalModel signal_model = SignalModel::kDeposition;

  std::size_t n_detectors() const noexcept { return detectors.size(); }
  std::size_t n_pixels() const noexcept { return pixels.size(); }
  Point2 pixel(std::size_t i, std::size_t j) const { return pixels[i * width + j]; }

  /// Same geometry with the detectors placed at their nominal (unperturbed) positions.
  ScanGeometry nominal() const {
    ScanGeometry g = *this;
    g.detectors = nominal_detectors;
    return g;
  }

  /// Fractional sample index at which a signal from `p` reaches detector `d`.
  double arrival_sample(std::size_t d, Point2 p) const {
    return (distance(p, detectors[d]) / speed_of_sound - timing.t_start) * timing.sample_rate;
  }

  friend bool operator==(const ScanGeometry&, const ScanGeometry&) = default;
};

/// Smallest and largest pixel-to-detector delay (seconds) over the whole grid.
inline std::pair<double, double> delay_range(const ScanGeometry& g) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (const Point2& det : g.detectors) {
    for (const Point2& p : g.pixels) {
      const double tau = distance(p, det) / g.speed_of_sound;
      lo = std::min(lo, tau);
      hi = std::max(hi, tau);
    }
  }
  return {lo, hi};
}

/// Grid half-diagonal, i.e. the distance from the origin to a corner pixel centre.
inline double grid_half_diagonal(const ScanConfig& c) {
  return 0.5 * static_cast<double>(c.image_size - 1) * c.pixel_size * std::numbers::sqrt2;
}

/// Default acquisition start: the latest sample boundary that still precedes the earliest
/// possible arrival, accounting for the worst-case inward jitter of a detector.
inline double default_acquisition_start(const ScanConfig& c) {
  const double r_min = c.ring_radius * (1.0 - std::numbers::sqrt2 * c.position_jitter_frac);
  const double nearest = r_min - grid_half_diagonal(c);
  return std::floor(c.sample_rate * nearest / c.speed_of_sound) / c.sample_rate;
}

inline ScanGeometry build_geometry(const ScanConfig& config) {
  config.validate();
  ScanGeometry g;
  g.speed_of_sound = config.speed_of_sound;
  g.pixel_size = config.pixel_size;
  g.signal_model = config.signal_model;

  Rng rng = Rng(config.rng_seed).fork("detector_jitter");
  const double jitter = config.position_jitter_frac * config.ring_radius;
  g.detectors.reserve(config.n_detectors);
  g.nominal_detectors.reserve(config.n_detectors);
  for (std::size_t d = 0; d < config.n_detectors; ++d) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(d) / static_cast<double>(config.n_detectors);
    const Point2 nominal{config.ring_radius * std::cos(theta), config.ring_radius * std::sin(theta)};
    g.nominal_detectors.push_back(nominal);
    Point2 actual = nominal;
    if (jitter > 0.0) {
      actual.x += rng.uniform(-jitter, jitter);
      actual.y += rng.uniform(-jitter, jitter);
    }
    g.detectors.push_back(actual);
  }

  const std::size_t n = config.image_size;
  g.height = n;
  g.width = n;
  g.pixels.resize(n * n);
  const double half = 0.5 * static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      g.pixels[i * n + j] = Point2{(static_cast<double>(j) - half) * config.pixel_size,
                                   (half - static_cast<double>(i)) * config.pixel_size};
    }
  }

  g.timing.sample_rate = config.sample_rate;
  g.timing.n_samples = config.n_samples;
  g.timing.t_start = config.acquisition_start.value_or(default_acquisition_start(config));

  // Every delay must map to u = (tau - t_start) f_s in [0, N_t - 2] so that linear
  // interpolation between floor(u) and floor(u) + 1 stays inside the window.
  const auto [tau_min, tau_max] = delay_range(g);
  const double u_min = (tau_min - g.timing.t_start) * config.sample_rate;
  const double u_max = (tau_max - g.timing.t_start) * config.sample_rate;
  if (u_min < 0.0 || u_max > static_cast<double>(config.n_samples - 2)) {
    throw ConfigError("scan: required time window [" + std::to_string(u_min) + ", " + std::to_string(u_max) +
                      "] samples does not fit in n_samples = " + std::to_string(config.n_samples));
  }
  return g;
}

}  // namespace oat
