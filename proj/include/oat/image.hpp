#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "oat/error.hpp"

namespace oat {

/// Row-major H x W scalar field with no range restriction.
struct Field {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  Field() = default;
  Field(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), data(h * w, fill) {}

  double& at(std::size_t i, std::size_t j) { return data[i * width + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * width + j]; }
  std::size_t size() const noexcept { return data.size(); }
};

/// Normalized image: row-major, every value finite and in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), data(h * w, fill) {}

  double& at(std::size_t i, std::size_t j) { return data[i * width + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * width + j]; }
  std::size_t size() const noexcept { return data.size(); }

  bool valid() const {
    if (data.size() != height * width) return false;
    for (double v : data) {
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) return false;
    }
    return true;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

inline void require_same_dims(const Image& a, const Image& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw DataError(std::string(what) + ": image dimensions differ (" + std::to_string(a.height) + "x" +
                    std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                    std::to_string(b.width) + ")");
  }
}

}  // namespace oat
