#include "rf4d/synth.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"

using namespace rf4d;
using namespace rf4d::synth;

namespace {

PolarGeometry default_geom() { return {.n_theta = 64, .n_delta = 200, .range_resolution = 0.25, .min_bin = 0}; }

Reflector static_disc(double x, double y, double radius, double rcs) {
  Reflector r;
  r.trajectory = {{0.0, Vec2(x, y)}};
  r.radius = radius;
  r.rcs = rcs;
  return r;
}

int argmax_bin(const RangeAzimuthScan& scan, int beam) {
  int best = 0;
  for (int k = 1; k < scan.geometry.n_delta; ++k)
    if (scan.at(beam, k) > scan.at(beam, best)) best = k;
  return best;
}

}  // namespace

TEST_CASE("reflector_position interpolates keyframes") {
  Reflector r;
  r.trajectory = {{0.0, Vec2(0, 0)}, {1.0, Vec2(10, 0)}};
  CHECK(reflector_position(r, 0.5) == Vec2(5, 0));
  CHECK(reflector_position(r, 0.0) == Vec2(0, 0));
  CHECK(reflector_position(r, 1.0) == Vec2(10, 0));
  CHECK_THROWS_AS(reflector_position(r, -0.1), DomainError);
  CHECK_THROWS_AS(reflector_position(r, 1.1), DomainError);

  Reflector single = static_disc(3, 4, 1, 1);
  CHECK(reflector_position(single, 0.0) == Vec2(3, 4));
  CHECK(reflector_position(single, 0.77) == Vec2(3, 4));
}

TEST_CASE("scene validation") {
  SceneSpec scene;
  scene.reflectors.push_back(static_disc(5, 0, 1, 100));
  CHECK_NOTHROW(scene.validate());
  scene.ghost_probability = 1.5;
  CHECK_THROWS_AS(scene.validate(), ValidationError);
  scene.ghost_probability = 0.0;
  scene.noise_std_db = -1.0;
  CHECK_THROWS_AS(scene.validate(), ValidationError);
  scene.noise_std_db = 0.0;
  scene.reflectors[0].radius = 0.0;
  CHECK_THROWS_AS(scene.validate(), ValidationError);
}

TEST_CASE("empty scene with zero noise std is flat at the floor") {
  SceneSpec scene;
  scene.noise_floor_db = -2.5;
  const auto scan = simulate_scan(scene, Pose::planar(0, 0, 0), 0.0, default_geom(), 1);
  for (float v : scan.values) CHECK(v == doctest::Approx(-2.5));
}

TEST_CASE("single reflector dead ahead: peak 0 at 10 m on beam 0") {
  // rcs 100 at 10 m: log10(100/100) = 0 exactly, so every covered bin holds
  // 0 regardless of the triangular weight; the peak sits within one bin of
  // the true 10 m hit (10 m is a bin edge at 0.25 m resolution).
  SceneSpec scene;
  scene.noise_floor_db = -3.0;
  scene.reflectors.push_back(static_disc(10.5, 0.0, 0.5, 100.0));
  const auto geom = default_geom();
  const auto scan = simulate_scan(scene, Pose::planar(0, 0, 0), 0.0, geom, 1);

  const int peak = argmax_bin(scan, 0);
  CHECK(std::abs(geom.bin_range(peak) - 10.0) <= geom.range_resolution);
  CHECK(scan.at(0, peak) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("exact bin-center hit deposits its full value, neighbors untouched") {
  // surface at 10.125 m = center of bin 40; rcs = 10.125^2 makes the power 0
  SceneSpec scene;
  scene.noise_floor_db = -3.0;
  scene.reflectors.push_back(static_disc(10.625, 0.0, 0.5, 10.125 * 10.125));
  const auto geom = default_geom();
  const auto scan = simulate_scan(scene, Pose::planar(0, 0, 0), 0.0, geom, 1);

  CHECK(scan.at(0, 40) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(scan.at(0, 39) == doctest::Approx(-3.0));
  CHECK(scan.at(0, 41) == doctest::Approx(-3.0));
  CHECK(argmax_bin(scan, 0) == 40);
}

TEST_CASE("reflector near 31.6228 m: peak value -1 up to bin quantization") {
  // exact bin-center placement at 31.625 m (center of bin 126):
  // log10(100 / 31.625^2) = -1.0000006..., deposited with weight 1
  SceneSpec scene;
  scene.noise_floor_db = -4.0;
  scene.reflectors.push_back(static_disc(32.125, 0.0, 0.5, 100.0));
  const auto geom = default_geom();
  const auto scan = simulate_scan(scene, Pose::planar(0, 0, 0), 0.0, geom, 1);

  const int peak = argmax_bin(scan, 0);
  CHECK(peak == 126);
  CHECK(geom.bin_range(peak) == doctest::Approx(31.625).epsilon(1e-12));
  CHECK(scan.at(0, peak) == doctest::Approx(std::log10(100.0 / (31.625 * 31.625))).epsilon(1e-7));
  CHECK(scan.at(0, peak) == doctest::Approx(-1.0).epsilon(1e-4));
}

TEST_CASE("energy-distance law: doubling range drops the peak by log10(4)") {
  // both hits at exact bin centers: 10.125 m in 0.25 m bins (bin 40) and
  // 20.25 m in 0.5 m bins (bin 40), so both deposits carry weight 1
  const auto near_geom = PolarGeometry{.n_theta = 8, .n_delta = 200, .range_resolution = 0.25, .min_bin = 0};
  const auto far_geom = PolarGeometry{.n_theta = 8, .n_delta = 200, .range_resolution = 0.5, .min_bin = 0};
  SceneSpec near_scene, far_scene;
  near_scene.noise_floor_db = far_scene.noise_floor_db = -6.0;
  near_scene.reflectors.push_back(static_disc(10.625, 0.0, 0.5, 1000.0));
  far_scene.reflectors.push_back(static_disc(20.75, 0.0, 0.5, 1000.0));

  const auto near_scan = simulate_scan(near_scene, Pose::planar(0, 0, 0), 0.0, near_geom, 3);
  const auto far_scan = simulate_scan(far_scene, Pose::planar(0, 0, 0), 0.0, far_geom, 3);
  const double near_peak = near_scan.at(0, argmax_bin(near_scan, 0));
  const double far_peak = far_scan.at(0, argmax_bin(far_scan, 0));
  // scans store float32, so the comparison carries single-precision error
  CHECK(near_peak - far_peak == doctest::Approx(std::log10(4.0)).epsilon(1e-6));
}

TEST_CASE("occlusion: a reflector fully behind another gives no direct return") {
  const auto geom = default_geom();
  SceneSpec scene;
  scene.noise_floor_db = -5.0;
  scene.reflectors.push_back(static_disc(10.625, 0.0, 0.5, 100.0));  // front, hit at 10.125 m
  scene.reflectors.push_back(static_disc(30.25, 0.0, 0.5, 1e9));     // behind, far brighter

  const auto scan = simulate_scan(scene, Pose::planar(0, 0, 0), 0.0, geom, 5);
  const int peak = argmax_bin(scan, 0);
  CHECK(geom.bin_range(peak) == doctest::Approx(10.125));
  // bins near 29.75 m (the occluded surface) hold only the floor
  for (int k = 115; k < 125; ++k) CHECK(scan.at(0, k) == doctest::Approx(-5.0));
}

TEST_CASE("determinism: same inputs give bit-identical scans, serial matches parallel") {
  SceneSpec scene;
  scene.noise_std_db = 0.7;
  scene.noise_floor_db = -2.0;
  scene.ghost_probability = 0.5;
  scene.reflectors.push_back(static_disc(8.0, 3.0, 1.0, 500.0));
  const auto geom = default_geom();
  const Pose pose = Pose::planar(0.5, -0.25, 0.3);

  const auto a = simulate_scan(scene, pose, 0.5, geom, 42);
  const auto b = simulate_scan(scene, pose, 0.5, geom, 42);
  const auto c = simulate_scan_serial(scene, pose, 0.5, geom, 42);
  CHECK(a.values == b.values);
  CHECK(a.values == c.values);

  const auto d = simulate_scan(scene, pose, 0.5, geom, 43);
  CHECK(a.values != d.values);
}

TEST_CASE("noise statistics match the configured Gaussian") {
  SceneSpec scene;
  scene.noise_floor_db = -1.0;
  scene.noise_std_db = 0.5;
  const auto geom = PolarGeometry{.n_theta = 128, .n_delta = 512, .range_resolution = 0.25, .min_bin = 0};
  const auto scan = simulate_scan(scene, Pose::planar(0, 0, 0), 0.0, geom, 9);

  double sum = 0.0, sum_sq = 0.0;
  for (float v : scan.values) {
    sum += v;
    sum_sq += double(v) * v;
  }
  const double n = static_cast<double>(scan.values.size());
  const double mean = sum / n;
  const double var = sum_sq / n - mean * mean;
  CHECK(mean == doctest::Approx(-1.0).epsilon(0.01));
  CHECK(std::sqrt(var) == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("ghost echoes appear at twice the range, rcs/4") {
  // main hit at bin center 10.125 m; the ghost at 20.25 m falls on a bin
  // edge, splitting P_main - log10(16) evenly over bins 80 and 81
  SceneSpec scene;
  scene.noise_floor_db = -6.0;
  scene.ghost_probability = 1.0;
  scene.reflectors.push_back(static_disc(10.625, 0.0, 0.5, 1000.0));
  const auto geom = default_geom();
  const auto scan = simulate_scan(scene, Pose::planar(0, 0, 0), 0.0, geom, 11);

  const double p_main = std::log10(1000.0 / (10.125 * 10.125));
  const double p_ghost = p_main - std::log10(16.0);
  CHECK(scan.at(0, 40) == doctest::Approx(p_main).epsilon(1e-7));
  CHECK(scan.at(0, 80) == doctest::Approx(0.5 * p_ghost).epsilon(1e-7));
  CHECK(scan.at(0, 81) == doctest::Approx(0.5 * p_ghost).epsilon(1e-7));
}

TEST_CASE("ghost probability zero never spawns ghosts") {
  SceneSpec scene;
  scene.noise_floor_db = -6.0;
  scene.reflectors.push_back(static_disc(10.625, 0.0, 0.5, 1000.0));
  const auto scan = simulate_scan(scene, Pose::planar(0, 0, 0), 0.0, default_geom(), 11);
  CHECK(scan.at(0, 80) == doctest::Approx(-6.0));
  CHECK(scan.at(0, 81) == doctest::Approx(-6.0));
}

TEST_CASE("cos-lobe rcs_exponent dims oblique hits") {
  // Beam 0 from origin hits both discs; the offset disc is struck obliquely
  // (incidence cosine 0.6), dimming the return by 0.6^2 under exponent 2.
  const auto geom = default_geom();
  SceneSpec head_on;
  head_on.noise_floor_db = -9.0;
  head_on.reflectors.push_back(static_disc(10.625, 0.0, 0.5, 1e6));
  head_on.reflectors[0].rcs_exponent = 2.0;

  SceneSpec oblique = head_on;
  oblique.reflectors[0].trajectory = {{0.0, Vec2(10.625, 0.4)}};  // same beam, glancing hit

  const auto scan_head = simulate_scan(head_on, Pose::planar(0, 0, 0), 0.0, geom, 2);
  const auto scan_obl = simulate_scan(oblique, Pose::planar(0, 0, 0), 0.0, geom, 2);
  CHECK(scan_head.at(0, argmax_bin(scan_head, 0)) > scan_obl.at(0, argmax_bin(scan_obl, 0)) + 0.1);
}

TEST_CASE("ground_truth_bev samples disc boundaries") {
  SceneSpec scene;
  scene.reflectors.push_back(static_disc(5, 0, 1, 1));
  const auto set = ground_truth_bev(scene, 0.0, 4);
  REQUIRE(set.points.size() == 4);
  CHECK((set.points[0] - Vec2(6, 0)).norm() < 1e-12);
  CHECK((set.points[1] - Vec2(5, 1)).norm() < 1e-12);
  CHECK((set.points[2] - Vec2(4, 0)).norm() < 1e-12);
  CHECK((set.points[3] - Vec2(5, -1)).norm() < 1e-12);

  scene.reflectors.push_back(static_disc(-3, 2, 0.5, 1));
  CHECK(ground_truth_bev(scene, 0.0, 4).points.size() == 8);

  Reflector moving;
  moving.trajectory = {{0.0, Vec2(0, 0)}, {1.0, Vec2(4, 0)}};
  SceneSpec dynamic;
  dynamic.reflectors.push_back(moving);
  const auto early = ground_truth_bev(dynamic, 0.25, 8);
  const auto late = ground_truth_bev(dynamic, 0.75, 8);
  for (std::size_t i = 0; i < early.points.size(); ++i)
    CHECK((late.points[i] - early.points[i] - Vec2(2, 0)).norm() < 1e-12);
}

TEST_CASE("make_sequence: timestamps, determinism, static identity") {
  SceneSpec scene;
  scene.noise_floor_db = -3.0;
  scene.reflectors.push_back(static_disc(10.5, 0.0, 0.5, 100.0));
  const auto geom = PolarGeometry{.n_theta = 16, .n_delta = 64, .range_resolution = 0.5, .min_bin = 0};
  const std::vector<Pose> ego(5, Pose::planar(0, 0, 0));

  const auto bundle = make_sequence(scene, ego, 5, geom, 21);
  REQUIRE(bundle.frames() == 5);
  CHECK(bundle.timestamps == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
  CHECK_NOTHROW(bundle.validate());

  // static scene, zero noise: all frames identical
  for (int k = 1; k < 5; ++k) CHECK(bundle.scans[k].values == bundle.scans[0].values);

  const auto again = make_sequence(scene, ego, 5, geom, 21);
  for (int k = 0; k < 5; ++k) CHECK(again.scans[k].values == bundle.scans[k].values);

  CHECK_THROWS_AS(make_sequence(scene, ego, 1, geom, 21), ValidationError);
  CHECK_THROWS_AS(make_sequence(scene, ego, 4, geom, 21), ShapeError);
}

TEST_CASE("moving reflector: peak bin migrates monotonically and matches analytic ranges") {
  // disc surface moving straight down beam 0 from 20 m to 10 m
  Reflector moving;
  moving.radius = 0.5;
  moving.rcs = 1000.0;
  moving.trajectory = {{0.0, Vec2(20.5, 0.0)}, {1.0, Vec2(10.5, 0.0)}};
  SceneSpec scene;
  scene.noise_floor_db = -9.0;
  scene.reflectors.push_back(moving);

  const auto geom = default_geom();
  const int frames = 6;
  const std::vector<Pose> ego(frames, Pose::planar(0, 0, 0));
  const auto bundle = make_sequence(scene, ego, frames, geom, 77);

  int prev_peak = 1 << 30;
  for (int k = 0; k < frames; ++k) {
    const double t = bundle.timestamps[k];
    const double analytic_range = (20.5 - 10.0 * t) - 0.5;  // center minus radius
    const int peak = argmax_bin(bundle.scans[k], 0);
    CHECK(std::abs(geom.bin_range(peak) - analytic_range) <= geom.range_resolution);
    CHECK(peak < prev_peak);  // strictly approaching
    prev_peak = peak;
  }
}

TEST_CASE("scene package parsing") {
  const auto dir = std::filesystem::temp_directory_path() / "rf4d_scene_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "scene.json";
  std::ofstream(path) << R"({
    "geometry": {"n_theta": 32, "n_delta": 100, "range_resolution": 0.5, "min_bin": 2},
    "noise_floor_db": -1.5,
    "noise_std_db": 0.25,
    "ghost_probability": 0.1,
    "reflectors": [
      {"radius": 0.5, "rcs": 100.0, "trajectory": [[0.0, 5.0, 0.0], [1.0, 5.0, 4.0]]}
    ],
    "ego": [[0.0, 0.0, 0.0, 0.0], [1.0, 2.0, 0.0, 0.5]]
  })";

  const auto pkg = load_scene_package(path);
  CHECK(pkg.geometry.n_theta == 32);
  CHECK(pkg.geometry.min_bin == 2);
  CHECK(pkg.scene.noise_floor_db == -1.5);
  CHECK(pkg.scene.ghost_probability == 0.1);
  REQUIRE(pkg.scene.reflectors.size() == 1);
  CHECK(pkg.scene.reflectors[0].trajectory.size() == 2);
  REQUIRE(pkg.ego.size() == 2);
  CHECK(ego_pose(pkg.ego, 0.5).translation.x() == doctest::Approx(1.0));

  std::ofstream(path) << "{ broken";
  CHECK_THROWS_AS(load_scene_package(path), FormatError);
  std::ofstream(path) << R"({"geometry": {"n_theta": 4, "n_delta": 8, "range_resolution": 0.5}})";
  CHECK_THROWS_AS(load_scene_package(path), FormatError);  // reflectors missing
  CHECK_THROWS_AS(load_scene_package(dir / "absent.json"), IoError);
  std::filesystem::remove_all(dir);
}
