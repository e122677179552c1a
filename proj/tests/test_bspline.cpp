#include <catch2/catch_amalgamated.hpp>

#include "cdl/bspline.hpp"
#include "cdl/rng.hpp"
#include "cdl/volume.hpp"

using namespace cdl;

namespace {

ImageVolume random_volume(Dims dims, std::uint64_t seed) {
  ImageVolume v(dims, {1, 1, 1});
  Rng rng(seed);
  for (auto& x : v.data) x = static_cast<float>(rng.uniform());
  v.refresh_range();
  return v;
}

}  // namespace

TEST_CASE("prefilter rejects tiny volumes", "[bspline]") {
  ImageVolume v({3, 8, 8}, {1, 1, 1});
  CHECK_THROWS_AS(prefilter_bspline(v), ValidationError);
}

TEST_CASE("partition of unity: constant volume stays constant", "[bspline]") {
  ImageVolume v({8, 7, 6}, {1, 1, 1}, 3.25f);
  const SplineCoefficients c = prefilter_bspline(v);
  Rng rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    const std::array<double, 3> p = {rng.uniform(1.0, 6.0), rng.uniform(1.0, 5.0),
                                     rng.uniform(1.0, 4.0)};
    const SplineSample s = sample_interpolated(c, p);
    REQUIRE(s.inside);
    CHECK(std::abs(s.value - 3.25) < 1e-9);
    CHECK(std::abs(s.gradient[0]) < 1e-9);
    CHECK(std::abs(s.gradient[1]) < 1e-9);
    CHECK(std::abs(s.gradient[2]) < 1e-9);
  }
}

TEST_CASE("interpolation condition: grid points reproduce intensities", "[bspline]") {
  const ImageVolume v = random_volume({9, 6, 7}, 21);
  const SplineCoefficients c = prefilter_bspline(v);
  for (int z = 1; z <= v.dims[2] - 2; ++z)
    for (int y = 1; y <= v.dims[1] - 2; ++y)
      for (int x = 1; x <= v.dims[0] - 2; ++x) {
        const SplineSample s = sample_interpolated(
            c, {static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)});
        const double expect = v.at(x, y, z);
        REQUIRE(std::abs(s.value - expect) <= 1e-6 * std::max(1.0, std::abs(expect)));
      }
}

TEST_CASE("linear ramp reproduced exactly with gradient", "[bspline]") {
  // mirror boundaries fold the implied extension, so polynomial reproduction
  // only holds away from the edges (the pole decays as 0.27^d)
  ImageVolume v({64, 6, 6}, {1, 1, 1});
  for (int z = 0; z < 6; ++z)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 64; ++x) v.at(x, y, z) = static_cast<float>(2.0 * x);
  const SplineCoefficients c = prefilter_bspline(v);
  Rng rng(3);
  for (int rep = 0; rep < 40; ++rep) {
    const std::array<double, 3> p = {rng.uniform(18.0, 46.0), rng.uniform(1.0, 4.0),
                                     rng.uniform(1.0, 4.0)};
    const SplineSample s = sample_interpolated(c, p);
    CHECK(std::abs(s.value - 2.0 * p[0]) < 1e-6);
    CHECK(std::abs(s.gradient[0] - 2.0) < 1e-6);
    CHECK(std::abs(s.gradient[1]) < 1e-6);
    CHECK(std::abs(s.gradient[2]) < 1e-6);
  }
}

TEST_CASE("analytic gradient matches central differences", "[bspline]") {
  const ImageVolume v = random_volume({12, 11, 10}, 77);
  const SplineCoefficients c = prefilter_bspline(v);
  Rng rng(78);
  const double h = 1e-4;
  for (int rep = 0; rep < 100; ++rep) {
    const std::array<double, 3> p = {rng.uniform(1.5, 9.5), rng.uniform(1.5, 8.5),
                                     rng.uniform(1.5, 7.5)};
    const SplineSample s = sample_interpolated(c, p);
    for (int a = 0; a < 3; ++a) {
      auto pp = p, pm = p;
      pp[a] += h;
      pm[a] -= h;
      const double fd =
          (sample_interpolated(c, pp).value - sample_interpolated(c, pm).value) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(s.gradient[a]), 1e-8});
      REQUIRE(std::abs(fd - s.gradient[a]) / denom < 1e-4);
    }
  }
}

TEST_CASE("out-of-support policy: zero pad or error", "[bspline]") {
  const ImageVolume v = random_volume({6, 6, 6}, 5);
  const SplineCoefficients c = prefilter_bspline(v);
  const std::array<double, 3> outside = {0.4, 3.0, 3.0};
  const SplineSample s = sample_interpolated(c, outside);
  CHECK_FALSE(s.inside);
  CHECK(s.value == 0.0);
  CHECK(s.gradient == std::array<double, 3>{0.0, 0.0, 0.0});
  CHECK_THROWS_AS(sample_interpolated(c, outside, OutOfSupport::error), ValidationError);
}

TEST_CASE("prefilter is deterministic across thread counts", "[bspline]") {
  const ImageVolume v = random_volume({24, 20, 18}, 9);
  const SplineCoefficients c1 = prefilter_bspline(v, 1);
  const SplineCoefficients c4 = prefilter_bspline(v, 4);
  REQUIRE(c1.coeffs.size() == c4.coeffs.size());
  for (std::size_t i = 0; i < c1.coeffs.size(); ++i) REQUIRE(c1.coeffs[i] == c4.coeffs[i]);
}
