#include <cstdlib>
#include <vector>

#include "doctest.h"
#include "rf4d/eval.hpp"
#include "rf4d/field.hpp"
#include "rf4d/rng.hpp"
#include "rf4d/synth.hpp"

using namespace rf4d;

namespace {

/// Thread counts swept by every case; 1 exercises the degenerate pool.
const std::vector<int> kThreads = {1, 2, 3, 7};

struct ThreadCap {
  explicit ThreadCap(int n) { setenv("RF4D_THREADS", std::to_string(n).c_str(), 1); }
  ~ThreadCap() { unsetenv("RF4D_THREADS"); }
};

synth::SceneSpec busy_scene() {
  synth::SceneSpec scene;
  synth::Reflector a;
  a.trajectory = {{0.0, Vec2(3.0, 1.0)}, {1.0, Vec2(4.0, -1.0)}};
  a.radius = 0.5;
  a.rcs = 1e4;
  synth::Reflector b;
  b.trajectory = {{0.0, Vec2(-2.0, -2.0)}, {1.0, Vec2(-2.0, -2.0)}};
  b.radius = 0.8;
  b.rcs = 5e3;
  scene.reflectors = {a, b};
  scene.noise_floor_db = -2.0;
  scene.noise_std_db = 0.3;
  scene.ghost_probability = 0.4;
  return scene;
}

PolarGeometry geom() { return PolarGeometry{48, 40, 0.125, 8}; }

field::FieldConfig micro_field() {
  field::FieldConfig cfg;
  cfg.hash = field::HashGridConfig{2, 64, 2, 4, 1.5};
  cfg.time_frequencies = 2;
  cfg.time_widths = {4, 8, 4};
  cfg.chi_widths = {8, 8, 8};
  cfg.alpha_widths = {8, 8, 1};
  cfg.sigma_widths = {8 + 16, 8, 1};
  cfg.flow_widths = {8, 8, 6};
  return cfg;
}

bool same_scan(const RangeAzimuthScan& a, const RangeAzimuthScan& b) {
  if (a.values.size() != b.values.size()) return false;
  for (std::size_t i = 0; i < a.values.size(); ++i)
    if (a.values[i] != b.values[i]) return false;
  return true;
}

bool same_points(const BevPointSet& a, const BevPointSet& b) {
  if (a.points.size() != b.points.size()) return false;
  for (std::size_t i = 0; i < a.points.size(); ++i)
    if (a.points[i].x() != b.points[i].x() || a.points[i].y() != b.points[i].y()) return false;
  return true;
}

}  // namespace

TEST_CASE("simulate_scan matches its serial reference at every thread count") {
  const synth::SceneSpec scene = busy_scene();
  const Pose pose = Pose::planar(0.5, -0.25, 0.3);
  const RangeAzimuthScan ref = synth::simulate_scan_serial(scene, pose, 0.4, geom(), 77);
  for (int n : kThreads) {
    ThreadCap cap(n);
    CHECK(same_scan(synth::simulate_scan(scene, pose, 0.4, geom(), 77), ref));
  }
}

TEST_CASE("render_scan and extraction match serial at every thread count") {
  diffcore::ParamStore store;
  Rng rng(5);
  const field::FieldConfig fcfg = micro_field();
  const field::FieldBlocks blocks = field::register_field(store, fcfg, rng);
  const dataio::ScaleInfo scale{1.0 / 8.0, 8.0};
  const Pose pose_m = Pose::planar(1.0, 0.5, 0.2);
  Pose pose_n = pose_m;
  pose_n.translation *= scale.scale;

  const RangeAzimuthScan ref = field::render_scan_serial(store, blocks, fcfg, pose_n, 0.5, geom(), scale.scale);
  const BevPointSet bev_ref =
      eval::extract_occupancy_bev_serial(store, blocks, fcfg, pose_m, 0.5, geom(), scale, 48, 0.0);
  REQUIRE(!bev_ref.points.empty());
  for (int n : kThreads) {
    ThreadCap cap(n);
    CHECK(same_scan(field::render_scan(store, blocks, fcfg, pose_n, 0.5, geom(), scale.scale), ref));
    CHECK(same_points(eval::extract_occupancy_bev(store, blocks, fcfg, pose_m, 0.5, geom(), scale, 48, 0.0),
                      bev_ref));
  }
}

TEST_CASE("ssim, chamfer and cfar match serial at every thread count") {
  const synth::SceneSpec scene = busy_scene();
  const Pose pose = Pose::planar(0.0, 0.0, 0.0);
  const RangeAzimuthScan scan = synth::simulate_scan_serial(scene, pose, 0.2, geom(), 9);
  const RangeAzimuthScan other = synth::simulate_scan_serial(scene, pose, 0.8, geom(), 10);

  Rng rng(21);
  BevPointSet a, b;
  for (int i = 0; i < 300; ++i) {
    a.points.emplace_back(rng.uniform() * 10 - 5, rng.uniform() * 10 - 5);
    b.points.emplace_back(rng.uniform() * 10 - 5, rng.uniform() * 10 - 5);
  }

  eval::CfarConfig ccfg;
  ccfg.training = 4;
  ccfg.guard = 1;
  ccfg.threshold_db = 1.0;

  const double ssim_ref = eval::ssim_serial(scan, other);
  const double cd_ref = eval::chamfer_serial(a, b);
  const BevPointSet det_ref = eval::cfar_detect_serial(scan, pose, ccfg);
  REQUIRE(!det_ref.points.empty());
  for (int n : kThreads) {
    ThreadCap cap(n);
    CHECK(eval::ssim(scan, other) == ssim_ref);
    CHECK(eval::chamfer(a, b) == cd_ref);
    CHECK(same_points(eval::cfar_detect(scan, pose, ccfg), det_ref));
  }
}
