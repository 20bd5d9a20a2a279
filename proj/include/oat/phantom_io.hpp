#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "oat/error.hpp"
#include "oat/image.hpp"
#include "oat/io.hpp"
#include "oat/rng.hpp"

namespace oat {

enum class PhantomKind { kDisks, kVessels };

inline PhantomKind parse_phantom_kind(std::string_view s) {
  if (s == "disks") return PhantomKind::kDisks;
  if (s == "vessels") return PhantomKind::kVessels;
  throw ConfigError("unknown phantom kind '" + std::string(s) + "' (expected disks or vessels)");
}

inline const char* to_string(PhantomKind k) { return k == PhantomKind::kDisks ? "disks" : "vessels"; }

namespace detail {

constexpr int kSupersample = 4;

// Fraction of the 4x4 sub-samples of pixel (i, j) for which `inside(x, y)` holds, with
// (x, y) in pixel units: column coordinate x, row coordinate y, pixel centres at integers.
template <class Inside>
double coverage(std::size_t i, std::size_t j, Inside&& inside) {
  int hits = 0;
  for (int a = 0; a < kSupersample; ++a) {
    for (int b = 0; b < kSupersample; ++b) {
      const double y = static_cast<double>(i) - 0.5 + (a + 0.5) / kSupersample;
      const double x = static_cast<double>(j) - 0.5 + (b + 0.5) / kSupersample;
      if (inside(x, y)) ++hits;
    }
  }
  return static_cast<double>(hits) / (kSupersample * kSupersample);
}

inline double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (ax + t * vx), py - (ay + t * vy));
}

inline void paint_disk(Image& img, double cx, double cy, double r, double intensity) {
  const auto lo_i = static_cast<long>(std::floor(cy - r - 1)), hi_i = static_cast<long>(std::ceil(cy + r + 1));
  const auto lo_j = static_cast<long>(std::floor(cx - r - 1)), hi_j = static_cast<long>(std::ceil(cx + r + 1));
  for (long i = std::max(0L, lo_i); i <= std::min<long>(hi_i, static_cast<long>(img.height) - 1); ++i) {
    for (long j = std::max(0L, lo_j); j <= std::min<long>(hi_j, static_cast<long>(img.width) - 1); ++j) {
      const double c = coverage(i, j, [&](double x, double y) { return std::hypot(x - cx, y - cy) <= r; });
      img.at(i, j) = std::max(img.at(i, j), intensity * c);
    }
  }
}

inline void paint_tube(Image& img, const std::vector<double>& xs, const std::vector<double>& ys, double width,
                       double intensity) {
  const double half = 0.5 * width;
  for (std::size_t s = 0; s + 1 < xs.size(); ++s) {
    const double ax = xs[s], ay = ys[s], bx = xs[s + 1], by = ys[s + 1];
    const auto lo_i = static_cast<long>(std::floor(std::min(ay, by) - half - 1));
    const auto hi_i = static_cast<long>(std::ceil(std::max(ay, by) + half + 1));
    const auto lo_j = static_cast<long>(std::floor(std::min(ax, bx) - half - 1));
    const auto hi_j = static_cast<long>(std::ceil(std::max(ax, bx) + half + 1));
    for (long i = std::max(0L, lo_i); i <= std::min<long>(hi_i, static_cast<long>(img.height) - 1); ++i) {
      for (long j = std::max(0L, lo_j); j <= std::min<long>(hi_j, static_cast<long>(img.width) - 1); ++j) {
        const double c = coverage(i, j, [&](double x, double y) {
          return segment_distance(x, y, ax, ay, bx, by) <= half;
        });
        img.at(i, j) = std::max(img.at(i, j), intensity * c);
      }
    }
  }
}

}  // namespace detail

/// Synthetic ground truth: anti-aliased disks or smooth vessel-like tubes on a zero background.
inline Image generate_phantom(std::size_t size, PhantomKind kind, std::uint64_t seed) {
  if (size < 8) throw ConfigError("phantom: size must be at least 8");
  Image img(size, size, 0.0);
  Rng rng = Rng(seed).fork(to_string(kind));
  const double n = static_cast<double>(size);

  if (kind == PhantomKind::kDisks) {
    const long count = rng.uniform_int(1, 5);
    const double r_max = std::max(2.0, n / 6.0);
    for (long k = 0; k < count; ++k) {
      const double r = rng.uniform(2.0, r_max);
      const double cx = rng.uniform(r, n - 1.0 - r);
      const double cy = rng.uniform(r, n - 1.0 - r);
      const double intensity = rng.uniform(0.3, 1.0);
      detail::paint_disk(img, cx, cy, r, intensity);
    }
    return img;
  }

  const long count = rng.uniform_int(2, 6);
  const double step = std::max(1.0, n / 16.0);
  for (long k = 0; k < count; ++k) {
    const double width = rng.uniform(1.0, 4.0);
    const double intensity = rng.uniform(0.3, 1.0);
    const long segments = rng.uniform_int(6, 12);
    double x = rng.uniform(0.15 * n, 0.85 * n);
    double y = rng.uniform(0.15 * n, 0.85 * n);
    double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double turn = 0.0;
    std::vector<double> xs{x}, ys{y};
    for (long s = 0; s < segments; ++s) {
      turn = 0.6 * turn + 0.25 * rng.normal();
      heading += turn;
      x += step * std::cos(heading);
      y += step * std::sin(heading);
      xs.push_back(x);
      ys.push_back(y);
      if (x < -2.0 || y < -2.0 || x > n + 1.0 || y > n + 1.0) break;
    }
    detail::paint_tube(img, xs, ys, width, intensity);
  }
  return img;
}

// ---------------------------------------------------------------------------------------------
// Binary PGM (P5)

namespace detail {

class PgmHeaderParser {
 public:
  explicit PgmHeaderParser(const std::vector<std::uint8_t>& buf) : buf_(buf) {}

  std::size_t position() const { return pos_; }

  void skip_space_and_comments() {
    while (pos_ < buf_.size()) {
      if (buf_[pos_] == '#') {
        while (pos_ < buf_.size() && buf_[pos_] != '\n') ++pos_;
      } else if (std::isspace(buf_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  unsigned long number(const char* field) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    unsigned long v = 0;
    while (pos_ < buf_.size() && std::isdigit(buf_[pos_])) {
      v = v * 10 + (buf_[pos_] - '0');
      if (v > 1000000000UL) throw FormatError(FormatError::Kind::kMalformedHeader, std::string("pgm: ") + field + " too large");
      ++pos_;
    }
    if (pos_ == start) throw FormatError(FormatError::Kind::kMalformedHeader, std::string("pgm: missing ") + field);
    return v;
  }

  void single_whitespace() {
    if (pos_ >= buf_.size() || !std::isspace(buf_[pos_]))
      throw FormatError(FormatError::Kind::kMalformedHeader, "pgm: expected whitespace before payload");
    ++pos_;
  }

 private:
  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 2;
};

}  // namespace detail

inline Image decode_pgm(const std::vector<std::uint8_t>& buf) {
  if (buf.size() < 2 || buf[0] != 'P')
    throw FormatError(FormatError::Kind::kMalformedHeader, "pgm: missing magic number");
  if (buf[1] != '5')
    throw FormatError(FormatError::Kind::kUnsupportedMagic,
                      std::string("pgm: unsupported magic 'P") + static_cast<char>(buf[1]) + "' (only P5)");
  detail::PgmHeaderParser p(buf);
  const unsigned long width = p.number("width");
  const unsigned long height = p.number("height");
  const unsigned long maxval = p.number("maxval");
  if (width == 0 || height == 0) throw FormatError(FormatError::Kind::kMalformedHeader, "pgm: zero dimension");
  if (maxval != 255 && maxval != 65535)
    throw FormatError(FormatError::Kind::kMalformedHeader, "pgm: maxval must be 255 or 65535");
  p.single_whitespace();

  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  const std::size_t n = static_cast<std::size_t>(width) * height;
  if (buf.size() - p.position() < n * bytes_per)
    throw FormatError(FormatError::Kind::kTruncatedPayload, "pgm: payload shorter than width*height samples");

  Image img(height, width);
  const std::uint8_t* payload = buf.data() + p.position();
  const double scale = static_cast<double>(maxval);
  for (std::size_t k = 0; k < n; ++k) {
    const unsigned v = bytes_per == 2 ? (static_cast<unsigned>(payload[2 * k]) << 8) | payload[2 * k + 1] : payload[k];
    img.data[k] = static_cast<double>(v) / scale;
  }
  return img;
}

inline std::vector<std::uint8_t> encode_pgm(const Image& image, unsigned maxval = 255) {
  if (maxval != 255 && maxval != 65535) throw ConfigError("pgm: maxval must be 255 or 65535");
  if (!image.valid()) throw DataError("pgm: image values must be finite and within [0, 1]");
  const std::string header =
      "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n" + std::to_string(maxval) + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + image.size() * (maxval > 255 ? 2 : 1));
  for (double v : image.data) {
    // lround rounds half away from zero.
    const long q = std::clamp(std::lround(v * maxval), 0L, static_cast<long>(maxval));
    if (maxval > 255) out.push_back(static_cast<std::uint8_t>(q >> 8));
    out.push_back(static_cast<std::uint8_t>(q & 0xff));
  }
  return out;
}

inline Image load_image(const std::filesystem::path& path) {
  try {
    return decode_pgm(io::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(e.kind(), path.string() + ": " + e.what());
  }
}

inline void save_image(const Image& image, const std::filesystem::path& path, unsigned maxval = 255) {
  io::write_file_atomic(path, encode_pgm(image, maxval));
}

}  // namespace oat
