// Timing comparison of the OpenMP kernels against their serial references.
// Each kernel runs a few warm-up passes, then reports the best of `reps`
// timed passes for both variants and the resulting speedup.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

#include "rf4d/eval.hpp"
#include "rf4d/field.hpp"
#include "rf4d/parallel.hpp"
#include "rf4d/rng.hpp"
#include "rf4d/synth.hpp"

using namespace rf4d;

namespace {

double best_ms(const std::function<void()>& fn, int reps) {
  fn();
  fn();
  double best = 1e300;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

void report(const std::string& name, const std::function<void()>& serial, const std::function<void()>& parallel,
            int reps) {
  const double s = best_ms(serial, reps);
  const double p = best_ms(parallel, reps);
  std::printf("%-24s serial %9.3f ms   parallel %9.3f ms   speedup %.2fx\n", name.c_str(), s, p, s / p);
}

}  // namespace

int main() {
  std::printf("worker threads: %d\n\n", worker_count());

  synth::SceneSpec scene;
  synth::Reflector a;
  a.trajectory = {{0.0, Vec2(3.0, 1.0)}, {1.0, Vec2(5.0, -2.0)}};
  a.radius = 0.5;
  a.rcs = 1e4;
  synth::Reflector b;
  b.trajectory = {{0.0, Vec2(-3.0, -1.0)}, {1.0, Vec2(-3.0, -1.0)}};
  b.radius = 0.8;
  b.rcs = 4e3;
  scene.reflectors = {a, b};
  scene.noise_std_db = 0.3;
  scene.ghost_probability = 0.3;
  const PolarGeometry geom{256, 256, 0.05, 16};
  const Pose origin = Pose::planar(0.0, 0.0, 0.0);

  report(
      "simulate_scan", [&] { synth::simulate_scan_serial(scene, origin, 0.5, geom, 7); },
      [&] { synth::simulate_scan(scene, origin, 0.5, geom, 7); }, 5);

  diffcore::ParamStore store;
  Rng rng(3);
  field::FieldConfig fcfg;  // full-size field
  const field::FieldBlocks blocks = field::register_field(store, fcfg, rng);
  const dataio::ScaleInfo scale{1.0 / 14.0, 14.0};
  const PolarGeometry rgeom{128, 128, 0.1, 8};

  report(
      "render_scan", [&] { field::render_scan_serial(store, blocks, fcfg, origin, 0.5, rgeom, scale.scale); },
      [&] { field::render_scan(store, blocks, fcfg, origin, 0.5, rgeom, scale.scale); }, 3);

  report(
      "extract_occupancy_bev",
      [&] { eval::extract_occupancy_bev_serial(store, blocks, fcfg, origin, 0.5, rgeom, scale, 96, 0.0); },
      [&] { eval::extract_occupancy_bev(store, blocks, fcfg, origin, 0.5, rgeom, scale, 96, 0.0); }, 3);

  const RangeAzimuthScan x = synth::simulate_scan_serial(scene, origin, 0.2, geom, 11);
  const RangeAzimuthScan y = synth::simulate_scan_serial(scene, origin, 0.8, geom, 12);
  report(
      "ssim", [&] { eval::ssim_serial(x, y); }, [&] { eval::ssim(x, y); }, 5);

  eval::CfarConfig ccfg;
  ccfg.threshold_db = 1.0;
  report(
      "cfar_detect", [&] { eval::cfar_detect_serial(x, origin, ccfg); },
      [&] { eval::cfar_detect(x, origin, ccfg); }, 5);

  Rng prng(9);
  BevPointSet pa, pb;
  for (int i = 0; i < 4000; ++i) {
    pa.points.emplace_back(prng.uniform(-8, 8), prng.uniform(-8, 8));
    pb.points.emplace_back(prng.uniform(-8, 8), prng.uniform(-8, 8));
  }
  report(
      "chamfer", [&] { eval::chamfer_serial(pa, pb); }, [&] { eval::chamfer(pa, pb); }, 5);

  return 0;
}
