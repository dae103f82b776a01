#include "rf4d/core.hpp"

#include <cmath>
#include <numbers>

#include "doctest.h"

using namespace rf4d;

TEST_CASE("beam azimuth covers the circle uniformly") {
  PolarGeometry geom{.n_theta = 400, .n_delta = 8, .range_resolution = 0.25, .min_bin = 0};
  CHECK(geom.beam_azimuth(0) == 0.0);
  CHECK(geom.beam_azimuth(100) == doctest::Approx(std::numbers::pi / 2).epsilon(1e-12));
  CHECK(geom.beam_azimuth(399) < 2.0 * std::numbers::pi);
  CHECK_THROWS_AS(geom.beam_azimuth(400), IndexError);
  CHECK_THROWS_AS(geom.beam_azimuth(-1), IndexError);
}

TEST_CASE("bin range uses half-bin centering above min_bin") {
  PolarGeometry geom{.n_theta = 4, .n_delta = 100, .range_resolution = 0.5, .min_bin = 50};
  CHECK(geom.bin_range(0) == doctest::Approx(25.25).epsilon(1e-12));
  CHECK(geom.bin_range(99) == doctest::Approx(74.75).epsilon(1e-12));
  CHECK(geom.max_range() == doctest::Approx(74.75).epsilon(1e-12));
  CHECK_THROWS_AS(geom.bin_range(100), IndexError);
}

TEST_CASE("geometry validation rejects bad parameters") {
  PolarGeometry geom{.n_theta = 8, .n_delta = 8, .range_resolution = 0.25, .min_bin = 0};
  CHECK_NOTHROW(geom.validate());
  geom.n_theta = 0;
  CHECK_THROWS_AS(geom.validate(), ValidationError);
  geom.n_theta = 8;
  geom.range_resolution = -1.0;
  CHECK_THROWS_AS(geom.validate(), ValidationError);
  geom.range_resolution = 0.25;
  geom.min_bin = -1;
  CHECK_THROWS_AS(geom.validate(), ValidationError);
}

TEST_CASE("bin_to_local places beam 0 on the +x axis") {
  PolarGeometry geom{.n_theta = 360, .n_delta = 200, .range_resolution = 0.1, .min_bin = 0};
  const Vec3 p = bin_to_local(0, 99, geom);
  CHECK(p.x() == doctest::Approx(9.95).epsilon(1e-12));
  CHECK(p.y() == doctest::Approx(0.0));
  CHECK(p.z() == 0.0);

  const Vec3 q = bin_to_local(90, 99, geom);  // azimuth pi/2 -> +y
  CHECK(q.x() == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(q.y() == doctest::Approx(9.95).epsilon(1e-9));
}

TEST_CASE("bin_to_local range equals bin_range for every bin") {
  PolarGeometry geom{.n_theta = 16, .n_delta = 32, .range_resolution = 0.7, .min_bin = 5};
  for (int beam = 0; beam < geom.n_theta; ++beam)
    for (int bin = 0; bin < geom.n_delta; ++bin)
      CHECK(bin_to_local(beam, bin, geom).norm() == doctest::Approx(geom.bin_range(bin)).epsilon(1e-12));
}

TEST_CASE("pose roundtrip: inverse composes to identity") {
  const Pose pose = Pose::planar(3.5, -2.0, 0.7);
  pose.validate();
  const Pose inv = pose.inverse();
  inv.validate();
  const Vec3 p(1.0, 2.0, 3.0);
  const Vec3 roundtrip = local_to_world(local_to_world(p, pose), inv);
  CHECK((roundtrip - p).norm() < 1e-12);
}

TEST_CASE("pose validation rejects non-rotations") {
  Pose pose;
  pose.rotation(0, 0) = 2.0;
  CHECK_THROWS_AS(pose.validate(), ValidationError);

  Pose reflection;
  reflection.rotation = Eigen::Matrix3d::Identity();
  reflection.rotation(2, 2) = -1.0;  // orthonormal but det -1
  CHECK_THROWS_AS(reflection.validate(), ValidationError);
}

TEST_CASE("planar pose rotates about +z") {
  const Pose pose = Pose::planar(0.0, 0.0, std::numbers::pi / 2);
  const Vec3 p = local_to_world(Vec3(1.0, 0.0, 0.0), pose);
  CHECK(p.x() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(p.y() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("view_direction is unit length and oriented away from the sensor") {
  const Vec3 origin(1.0, 1.0, 0.0);
  const Vec3 target(4.0, 5.0, 0.0);
  const Vec3 d = view_direction(target, origin);
  CHECK(d.norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(d.x() == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(d.y() == doctest::Approx(0.8).epsilon(1e-12));
  CHECK_THROWS_AS(view_direction(origin, origin), DegenerateError);
}

TEST_CASE("power_db matches the log model") {
  CHECK(power_db(100.0, 10.0) == doctest::Approx(0.0).epsilon(1e-12));
  // log10(4) for rcs 100 at range 5
  CHECK(power_db(100.0, 5.0) == doctest::Approx(0.6020599913279624).epsilon(1e-12));
  CHECK(power_db(1.0, 10.0) == doctest::Approx(-2.0).epsilon(1e-12));
  CHECK_THROWS_AS(power_db(-1.0, 10.0), DomainError);
  CHECK_THROWS_AS(power_db(1.0, 0.0), DomainError);
}

TEST_CASE("power_db is monotone: decreasing in range, increasing in rcs") {
  double prev = power_db(50.0, 1.0);
  for (double r = 2.0; r < 60.0; r += 1.7) {
    const double cur = power_db(50.0, r);
    CHECK(cur < prev);
    prev = cur;
  }
  prev = power_db(0.1, 20.0);
  for (double s = 0.2; s < 1e4; s *= 3.0) {
    const double cur = power_db(s, 20.0);
    CHECK(cur > prev);
    prev = cur;
  }
}

TEST_CASE("scan validation checks shape, finiteness, timestamp") {
  RangeAzimuthScan scan;
  scan.geometry = {.n_theta = 2, .n_delta = 3, .range_resolution = 1.0, .min_bin = 0};
  scan.values.assign(6, 0.5f);
  scan.timestamp = 0.25;
  CHECK_NOTHROW(scan.validate());
  CHECK(scan.at(1, 2) == 0.5f);

  scan.values.resize(5);
  CHECK_THROWS_AS(scan.validate(), ShapeError);
  scan.values.assign(6, 0.5f);
  scan.values[3] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(scan.validate(), ValidationError);
  scan.values[3] = 0.0f;
  scan.timestamp = 1.5;
  CHECK_THROWS_AS(scan.validate(), ValidationError);
}
