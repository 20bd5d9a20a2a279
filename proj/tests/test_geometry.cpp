#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oat/geometry.hpp"

namespace {

oat::ScanConfig no_jitter() {
  oat::ScanConfig c;
  c.position_jitter_frac = 0.0;
  return c;
}

TEST(Geometry, DetectorsOnRingAtUniformAngles) {
  const auto g = oat::build_geometry(no_jitter());
  ASSERT_EQ(g.n_detectors(), 36u);
  EXPECT_NEAR(g.detectors[0].x, 0.044, 1e-15);
  EXPECT_NEAR(g.detectors[0].y, 0.0, 1e-15);
  EXPECT_NEAR(g.detectors[9].x, 0.0, 1e-15);
  EXPECT_NEAR(g.detectors[9].y, 0.044, 1e-15);
  for (const auto& d : g.detectors) EXPECT_LT(std::abs(std::hypot(d.x, d.y) - 0.044) / 0.044, 1e-12);
}

TEST(Geometry, CenteredPixelGrid) {
  const auto g = oat::build_geometry(no_jitter());
  EXPECT_NEAR(g.pixel(0, 0).x, -7.3025e-3, 1e-15);
  EXPECT_NEAR(g.pixel(0, 0).y, 7.3025e-3, 1e-15);
  EXPECT_NEAR(g.pixel(127, 127).x, 7.3025e-3, 1e-15);
  EXPECT_NEAR(g.pixel(127, 127).y, -7.3025e-3, 1e-15);
  for (std::size_t i = 0; i < 128; ++i)
    for (std::size_t j = 0; j < 128; ++j) {
      EXPECT_EQ(g.pixel(i, j).x, -g.pixel(i, 127 - j).x);
      EXPECT_EQ(g.pixel(i, j).y, -g.pixel(127 - i, j).y);
    }
}

TEST(Geometry, MinimumDistanceAndEarliestArrival) {
  const auto g = oat::build_geometry(no_jitter());
  double best = 1e9;
  for (const auto& d : g.detectors)
    for (const auto& p : g.pixels) best = std::min(best, std::hypot(p.x - d.x, p.y - d.y));
  // Detectors sit every 10 degrees, so the closest pair is the 40-degree detector and the corner pixel,
  // slightly farther than the 45-degree bound R - c * sqrt(2).
  const double c = 7.3025e-3, a = 40.0 * std::numbers::pi / 180.0;
  const double oracle = std::hypot(0.044 * std::cos(a) - c, 0.044 * std::sin(a) - c);
  EXPECT_NEAR(best, oracle, 1e-15);
  EXPECT_GT(best, 0.044 - c * std::sqrt(2.0));
  EXPECT_NEAR(best, 0.033724, 5e-7);
  EXPECT_NEAR(best / 1490.0 * 1e6, 22.634, 5e-4);
}

TEST(Geometry, EveryDelayFitsTheWindow) {
  const oat::ScanConfig c;  // default jitter
  const auto g = oat::build_geometry(c);
  const double hi = static_cast<double>(c.n_samples - 2);
  for (std::size_t d = 0; d < g.n_detectors(); ++d)
    for (const auto& p : g.pixels) {
      const double u = g.arrival_sample(d, p);
      ASSERT_GE(u, 0.0);
      ASSERT_LE(u, hi);
    }
}

TEST(Geometry, JitterIsBoundedAndDeterministic) {
  oat::ScanConfig c;
  c.position_jitter_frac = 0.01;
  c.rng_seed = 42;
  const auto a = oat::build_geometry(c);
  const auto b = oat::build_geometry(c);
  EXPECT_EQ(a, b);
  for (std::size_t d = 0; d < a.n_detectors(); ++d) {
    EXPECT_LE(std::abs(a.detectors[d].x - a.nominal_detectors[d].x), 0.01 * 0.044);
    EXPECT_LE(std::abs(a.detectors[d].y - a.nominal_detectors[d].y), 0.01 * 0.044);
  }
  c.rng_seed = 43;
  EXPECT_NE(oat::build_geometry(c).detectors, a.detectors);
}

TEST(Geometry, RejectsWindowThatIsTooShort) {
  oat::ScanConfig c;
  c.n_samples = 64;
  EXPECT_THROW(oat::build_geometry(c), oat::ConfigError);
}

TEST(Geometry, RejectsInvalidConfigs) {
  oat::ScanConfig c;
  c.image_size = 127;
  EXPECT_THROW(oat::build_geometry(c), oat::ConfigError);
  c = {};
  c.position_jitter_frac = 0.02;
  EXPECT_THROW(oat::build_geometry(c), oat::ConfigError);
  c = {};
  c.speed_of_sound = 0.0;
  EXPECT_THROW(oat::build_geometry(c), oat::ConfigError);
}

TEST(Geometry, ExplicitAcquisitionStartIsHonoured) {
  oat::ScanConfig c;
  c.acquisition_start = 20e-6;
  EXPECT_EQ(oat::build_geometry(c).timing.t_start, 20e-6);
}

}  // namespace
