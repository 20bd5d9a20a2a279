#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "oat/forward_model.hpp"
#include "oat/geometry.hpp"
#include "oat/image.hpp"

namespace oat {

namespace detail {

// Detector visiting order that depends only on detector positions, so the per-pixel sums
// do not depend on how sinogram rows happen to be ordered.
inline std::vector<std::size_t> canonical_detector_order(const ScanGeometry& g) {
  std::vector<std::size_t> order(g.n_detectors());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Point2 pa = g.detectors[a], pb = g.detectors[b];
    return pa.x != pb.x ? pa.x < pb.x : pa.y < pb.y;
  });
  return order;
}

}  // namespace detail

/// Delay-and-sum field S(r) = sum_d s(d, |r - r_d| / v_s), sampled with linear interpolation;
/// samples outside the acquisition window contribute zero.
inline Field das_raw(const Sinogram& sino, const ScanGeometry& geom) {
  detail::check_sinogram_dims(geom, sino, "das");
  const long last = static_cast<long>(sino.n_samples) - 1;
  const std::vector<std::size_t> order = detail::canonical_detector_order(geom);
  Field out(geom.height, geom.width, 0.0);
  for (std::size_t i = 0; i < geom.n_pixels(); ++i) {
    const Point2 r = geom.pixels[i];
    double acc = 0.0;
    for (std::size_t d : order) {
      const double u = geom.arrival_sample(d, r);
      const double fl = std::floor(u);
      const long k = static_cast<long>(fl);
      const double a = u - fl;
      const double* s = sino.row(d);
      if (k >= 0 && k <= last) acc += (1.0 - a) * s[k];
      if (k + 1 >= 0 && k + 1 <= last) acc += a * s[k + 1];
    }
    out.data[i] = acc;
  }
  return out;
}

/// Min-max normalization to [0, 1]; a constant field maps to 0.5 everywhere.
inline Image normalize_min_max(const Field& f) {
  Image img(f.height, f.width, 0.5);
  if (f.data.empty()) return img;
  const auto [lo_it, hi_it] = std::minmax_element(f.data.begin(), f.data.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return img;
  const double inv = 1.0 / (hi - lo);
  for (std::size_t k = 0; k < f.size(); ++k) img.data[k] = std::clamp((f.data[k] - lo) * inv, 0.0, 1.0);
  return img;
}

inline Image das_reconstruct(const Sinogram& sino, const ScanGeometry& geom) {
  return normalize_min_max(das_raw(sino, geom));
}

}  // namespace oat
