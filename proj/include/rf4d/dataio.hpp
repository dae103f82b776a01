#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "rf4d/core.hpp"

namespace rf4d::dataio {

/// A radar sequence: one geometry, per-frame scans, poses, and timestamps.
///
/// Invariants: at least two frames; timestamps strictly increasing with
/// first 0 and last 1; every scan shares the bundle geometry and carries the
/// bundle timestamp for its frame.
struct SequenceBundle {
  PolarGeometry geometry;
  std::vector<RangeAzimuthScan> scans;
  std::vector<Pose> poses;
  std::vector<double> timestamps;

  int frames() const { return static_cast<int>(scans.size()); }
  void validate() const;
};

/// Uniform isotropic world-to-normalized scale. Ranges used by the power
/// model stay metric; only query positions are normalized.
struct ScaleInfo {
  double scale = 1.0;     // normalized units per meter
  double extent_m = 1.0;  // metric radius mapped onto the unit cube

  double to_meters(double normalized) const { return normalized / scale; }
  double to_normalized(double meters) const { return meters * scale; }
};

/// Writes `meta.json` and `scans.f32` (little-endian float32, indexed
/// ((frame*n_theta)+beam)*n_delta + bin) into dir, creating it if needed.
void write_sequence(const SequenceBundle& bundle, const std::filesystem::path& dir);

/// Reads a directory written by write_sequence. Missing files raise IoError,
/// malformed JSON raises FormatError, a scans.f32 whose size disagrees with
/// meta raises PayloadSizeError, and invariant violations raise
/// ValidationError.
SequenceBundle read_sequence(const std::filesystem::path& dir);

/// Rescales pose translations by 1 / (max pose distance from origin +
/// max range) so every reachable bin center lies in [-1,1]^3. Geometry,
/// scans, and timestamps are returned unchanged.
std::pair<SequenceBundle, ScaleInfo> normalize_coordinates(const SequenceBundle& bundle);

}  // namespace rf4d::dataio
