#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "oat/error.hpp"
#include "oat/geometry.hpp"
#include "oat/image.hpp"
#include "oat/io.hpp"
#include "oat/rng.hpp"

namespace oat {

/// N_d x N_t pressure traces, row-major by detector.
struct Sinogram {
  std::size_t n_detectors = 0;
  std::size_t n_samples = 0;
  double t_start = 0.0;
  double sample_rate = 0.0;
  std::vector<double> data;

  Sinogram() = default;
  Sinogram(std::size_t nd, std::size_t nt, Timing timing)
      : n_detectors(nd), n_samples(nt), t_start(timing.t_start), sample_rate(timing.sample_rate), data(nd * nt, 0.0) {}

  double* row(std::size_t d) { return data.data() + d * n_samples; }
  const double* row(std::size_t d) const { return data.data() + d * n_samples; }

  friend bool operator==(const Sinogram&, const Sinogram&) = default;
};

namespace detail {

/// Linear-interpolation deposit of one pixel onto one detector trace.
struct Deposit {
  long bin = 0;         // floor(u)
  double frac = 0.0;    // u - floor(u)
  double weight = 0.0;  // pixel_area / (4 pi v_s^2 tau)
};

inline Deposit deposit_for(const ScanGeometry& g, std::size_t d, Point2 p) {
  const double tau = distance(p, g.detectors[d]) / g.speed_of_sound;
  const double u = (tau - g.timing.t_start) * g.timing.sample_rate;
  const double fl = std::floor(u);
  const double area = g.pixel_size * g.pixel_size;
  return {static_cast<long>(fl), u - fl, area / (4.0 * std::numbers::pi * g.speed_of_sound * g.speed_of_sound * tau)};
}

inline void check_image_dims(const ScanGeometry& g, std::size_t h, std::size_t w, const char* what) {
  if (h != g.height || w != g.width)
    throw DataError(std::string(what) + ": image is " + std::to_string(h) + "x" + std::to_string(w) +
                    " but geometry expects " + std::to_string(g.height) + "x" + std::to_string(g.width));
}

inline void check_sinogram_dims(const ScanGeometry& g, const Sinogram& s, const char* what) {
  if (s.n_detectors != g.n_detectors() || s.n_samples != g.timing.n_samples ||
      s.data.size() != s.n_detectors * s.n_samples)
    throw DataError(std::string(what) + ": sinogram is " + std::to_string(s.n_detectors) + "x" +
                    std::to_string(s.n_samples) + " but geometry expects " + std::to_string(g.n_detectors()) + "x" +
                    std::to_string(g.timing.n_samples));
}

template <class Values>
Sinogram forward_project(const Values& values, std::size_t h, std::size_t w, const ScanGeometry& g) {
  check_image_dims(g, h, w, "simulate_sinogram");
  const std::size_t nt = g.timing.n_samples;
  const long last = static_cast<long>(nt) - 1;
  Sinogram sino(g.n_detectors(), nt, g.timing);
  std::vector<double> h_row(nt);
  const double half_rate = 0.5 * g.timing.sample_rate;
  for (std::size_t d = 0; d < g.n_detectors(); ++d) {
    std::fill(h_row.begin(), h_row.end(), 0.0);
    for (std::size_t i = 0; i < g.n_pixels(); ++i) {
      const double p = values[i];
      if (p == 0.0) continue;
      const Deposit dep = deposit_for(g, d, g.pixels[i]);
      const double amp = p * dep.weight;
      if (dep.bin >= 0 && dep.bin <= last) h_row[dep.bin] += amp * (1.0 - dep.frac);
      if (dep.bin + 1 >= 0 && dep.bin + 1 <= last) h_row[dep.bin + 1] += amp * dep.frac;
    }
    double* s = sino.row(d);
    if (g.signal_model == SignalModel::kDeposition) {
      std::copy(h_row.begin(), h_row.end(), s);
    } else {
      for (std::size_t k = 1; k + 1 < nt; ++k) s[k] = (h_row[k + 1] - h_row[k - 1]) * half_rate;
    }
  }
  return sino;
}

}  // namespace detail

/// Discrete time-of-flight surrogate of the acoustic forward problem: each pixel deposits
/// p0 * area / (4 pi v_s^2 tau) at its arrival time (linear interpolation). With
/// SignalModel::kDerivative the traces are then differentiated in time with a central
/// difference that is zero at both ends.
inline Sinogram simulate_sinogram(const Image& image, const ScanGeometry& geom) {
  return detail::forward_project(image.data, image.height, image.width, geom);
}

/// Same linear map applied to an unconstrained field (used by adjoint tests).
inline Sinogram simulate_sinogram(const Field& field, const ScanGeometry& geom) {
  return detail::forward_project(field.data, field.height, field.width, geom);
}

/// Exact transpose of `simulate_sinogram`.
inline Field apply_adjoint(const Sinogram& sino, const ScanGeometry& geom) {
  detail::check_sinogram_dims(geom, sino, "apply_adjoint");
  const std::size_t nt = sino.n_samples;
  const long last = static_cast<long>(nt) - 1;
  const double half_rate = 0.5 * geom.timing.sample_rate;
  Field out(geom.height, geom.width, 0.0);
  std::vector<double> g_row(nt);
  for (std::size_t d = 0; d < geom.n_detectors(); ++d) {
    const double* s = sino.row(d);
    if (geom.signal_model == SignalModel::kDeposition) {
      std::copy(s, s + nt, g_row.begin());
    } else {
      // Transpose of s[k] = c (h[k+1] - h[k-1]) for k in [1, nt-2].
      for (std::size_t j = 0; j < nt; ++j) {
        double v = 0.0;
        if (j >= 2) v += s[j - 1];
        if (j + 2 < nt) v -= s[j + 1];
        g_row[j] = v * half_rate;
      }
    }
    for (std::size_t i = 0; i < geom.n_pixels(); ++i) {
      const detail::Deposit dep = detail::deposit_for(geom, d, geom.pixels[i]);
      double acc = 0.0;
      if (dep.bin >= 0 && dep.bin <= last) acc += (1.0 - dep.frac) * g_row[dep.bin];
      if (dep.bin + 1 >= 0 && dep.bin + 1 <= last) acc += dep.frac * g_row[dep.bin + 1];
      out.data[i] += dep.weight * acc;
    }
  }
  return out;
}

/// Marker for "no noise" when passed as SNR.
inline constexpr double kNoNoise = std::numeric_limits<double>::infinity();

/// Adds i.i.d. Gaussian noise with variance mean(s^2) / 10^(snr_db / 10).
inline Sinogram add_noise(const Sinogram& sino, double snr_db, std::uint64_t seed) {
  if (snr_db == kNoNoise) return sino;
  if (!std::isfinite(snr_db)) throw NumericError("add_noise: SNR must be finite or +inf");
  double power = 0.0;
  for (double v : sino.data) power += v * v;
  if (sino.data.empty() || power == 0.0) throw NumericError("add_noise: SNR undefined for an all-zero sinogram");
  power /= static_cast<double>(sino.data.size());
  const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
  Rng rng = Rng(seed).fork("sinogram_noise");
  Sinogram out = sino;
  for (double& v : out.data) v += sigma * rng.normal();
  return out;
}

// ---------------------------------------------------------------------------------------------
// Sinogram file: "OASINO01", u32 n_detectors, u32 n_samples, f64 t_start, f64 sample_rate,
// then n_detectors * n_samples f32 values, all little-endian.

inline constexpr char kSinogramMagic[] = "OASINO01";

inline std::vector<std::uint8_t> encode_sinogram(const Sinogram& s) {
  io::ByteWriter w;
  w.bytes(kSinogramMagic, 8);
  w.u32(static_cast<std::uint32_t>(s.n_detectors));
  w.u32(static_cast<std::uint32_t>(s.n_samples));
  w.f64(s.t_start);
  w.f64(s.sample_rate);
  for (double v : s.data) w.f32(static_cast<float>(v));
  return w.take();
}

inline Sinogram decode_sinogram(const std::vector<std::uint8_t>& buf) {
  io::ByteReader r(buf, "sinogram");
  if (buf.size() < 8) throw FormatError(FormatError::Kind::kMalformedHeader, "sinogram: file too short for magic");
  const std::string magic = r.str(8);
  if (magic != std::string(kSinogramMagic, 8))
    throw FormatError(FormatError::Kind::kUnsupportedMagic, "sinogram: unsupported magic '" + magic + "'");
  Sinogram s;
  s.n_detectors = r.u32();
  s.n_samples = r.u32();
  s.t_start = r.f64();
  s.sample_rate = r.f64();
  const std::size_t n = s.n_detectors * s.n_samples;
  if (r.remaining() < n * 4) throw FormatError(FormatError::Kind::kTruncatedPayload, "sinogram: truncated payload");
  s.data.resize(n);
  for (double& v : s.data) v = r.f32();
  return s;
}

inline Sinogram load_sinogram(const std::filesystem::path& path) {
  try {
    return decode_sinogram(io::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(e.kind(), path.string() + ": " + e.what());
  }
}

inline void save_sinogram(const Sinogram& s, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_sinogram(s));
}

}  // namespace oat
