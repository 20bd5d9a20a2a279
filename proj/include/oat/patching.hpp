#pragma once

#include <array>
#include <string>
#include <vector>

#include "oat/error.hpp"
#include "oat/image.hpp"

namespace oat {

/// Quadrant order used everywhere: top-left, top-right, bottom-left, bottom-right.
inline constexpr std::size_t kQuadrants = 4;

inline std::array<Image, kQuadrants> split_quadrants(const Image& image) {
  if (image.height % 2 != 0 || image.width % 2 != 0 || image.height == 0 || image.width == 0)
    throw DataError("split_quadrants: dimensions must be even and positive, got " + std::to_string(image.height) + "x" +
                    std::to_string(image.width));
  const std::size_t h = image.height / 2, w = image.width / 2;
  std::array<Image, kQuadrants> out;
  for (std::size_t q = 0; q < kQuadrants; ++q) {
    const std::size_t r0 = (q / 2) * h, c0 = (q % 2) * w;
    out[q] = Image(h, w);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) out[q].at(i, j) = image.at(r0 + i, c0 + j);
  }
  return out;
}

inline Image assemble_quadrants(const std::array<Image, kQuadrants>& patches) {
  const std::size_t h = patches[0].height, w = patches[0].width;
  for (const Image& p : patches) {
    if (p.height != h || p.width != w || p.data.size() != h * w)
      throw DataError("assemble_quadrants: patches must share one shape");
  }
  Image out(2 * h, 2 * w);
  for (std::size_t q = 0; q < kQuadrants; ++q) {
    const std::size_t r0 = (q / 2) * h, c0 = (q % 2) * w;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) out.at(r0 + i, c0 + j) = patches[q].at(i, j);
  }
  return out;
}

/// Splits a square patch into its four quadrants, each flattened row-major. When
/// `expected_side` is nonzero the patch must have exactly that side length.
inline std::array<std::vector<double>, kQuadrants> split_subpatches_flat(const Image& patch,
                                                                        std::size_t expected_side = 0) {
  if (patch.height != patch.width || (expected_side != 0 && patch.height != expected_side))
    throw DataError("split_subpatches_flat: expected a square " +
                    (expected_side ? std::to_string(expected_side) + "x" + std::to_string(expected_side) + " " : "") +
                    "patch, got " + std::to_string(patch.height) + "x" + std::to_string(patch.width));
  const auto quads = split_quadrants(patch);
  std::array<std::vector<double>, kQuadrants> out;
  for (std::size_t q = 0; q < kQuadrants; ++q) out[q] = quads[q].data;
  return out;
}

}  // namespace oat
