#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "rf4d/core.hpp"
#include "rf4d/dataio.hpp"

namespace rf4d::synth {

/// Trajectory keyframe: 2D center position at a normalized time.
struct TrajectoryKey {
  double t = 0.0;
  Vec2 position = Vec2::Zero();
};

/// Disc reflector with a piecewise-linear trajectory over [0,1].
///
/// rcs_exponent shapes a cosine lobe around the surface normal at the hit
/// point; 0 means direction-independent returns.
struct Reflector {
  std::vector<TrajectoryKey> trajectory;
  double radius = 0.5;
  double rcs = 1.0;
  double rcs_exponent = 0.0;

  void validate() const;
};

struct SceneSpec {
  std::vector<Reflector> reflectors;
  double noise_floor_db = 0.0;
  double noise_std_db = 0.0;
  double ghost_probability = 0.0;  // multipath echo at 2x range, rcs/4

  void validate() const;
};

/// Linear interpolation between bracketing keyframes; clamps to the first
/// and last keyframes outside their span. Throws DomainError for t outside
/// [0,1].
Vec2 reflector_position(const Reflector& r, double t);

/// Simulates one polar scan. Per beam: the nearest reflector intersection at
/// range delta overwrites the covering bins with a triangular +-1-bin spread
/// of power_db(sigma_effective, delta); all other bins hold Gaussian noise
/// N(noise_floor_db, noise_std_db^2); a hit spawns a ghost echo at 2*delta
/// with sigma_effective/4 with probability ghost_probability. Overlapping
/// deposits combine by maximum. Bit-deterministic given rng_seed via
/// per-beam derived streams.
RangeAzimuthScan simulate_scan(const SceneSpec& scene, const Pose& pose, double t, const PolarGeometry& geom,
                               std::uint64_t rng_seed);

/// Single-threaded reference for simulate_scan; identical output.
RangeAzimuthScan simulate_scan_serial(const SceneSpec& scene, const Pose& pose, double t, const PolarGeometry& geom,
                                      std::uint64_t rng_seed);

/// Boundary points of every reflector disc at time t, uniform in angle
/// starting at angle 0, counterclockwise.
BevPointSet ground_truth_bev(const SceneSpec& scene, double t, int samples_per_reflector);

/// Frames at timestamps k/(n_frames-1), frame k simulated with seed+k.
/// ego_path holds one pose per frame.
dataio::SequenceBundle make_sequence(const SceneSpec& scene, const std::vector<Pose>& ego_path, int n_frames,
                                     const PolarGeometry& geom, std::uint64_t seed);

/// Planar ego keyframe for scene files: pose (x, y, yaw) at normalized time.
struct EgoKeyframe {
  double t = 0.0;
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
};

/// Everything a scene file carries: the scene itself, the sensing geometry,
/// and the ego trajectory (defaults to a static pose at the origin).
struct ScenePackage {
  SceneSpec scene;
  PolarGeometry geometry;
  std::vector<EgoKeyframe> ego;
};

/// Piecewise-linear planar pose at time t; clamps outside the keyframe span.
Pose ego_pose(const std::vector<EgoKeyframe>& keys, double t);

/// Parses a scene JSON file. Schema (all dB values unitless log10 power):
///   {
///     "geometry": {"n_theta", "n_delta", "range_resolution", "min_bin"},
///     "noise_floor_db": 0.0, "noise_std_db": 0.0, "ghost_probability": 0.0,
///     "reflectors": [{"radius", "rcs", "rcs_exponent", "trajectory": [[t, x, y], ...]}],
///     "ego": [[t, x, y, yaw], ...]           // optional
///   }
/// Throws IoError for a missing file, FormatError naming the offending field
/// for malformed content, ValidationError for invariant violations.
ScenePackage load_scene_package(const std::filesystem::path& path);

}  // namespace rf4d::synth
