#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "rf4d/errors.hpp"

namespace rf4d {

using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;

/// Polar sampling grid of a spinning radar.
///
/// Beam j points along azimuth theta_j = 2*pi*j / n_theta (azimuth 0 along +x,
/// counterclockwise, z up). Bin k covers metric range (min_bin + k + 0.5) *
/// range_resolution, so no bin ever maps to range zero.
struct PolarGeometry {
  int n_theta = 0;
  int n_delta = 0;
  double range_resolution = 0.0;  // meters per bin
  int min_bin = 0;                // index of the first retained bin

  void validate() const;

  double beam_azimuth(int beam) const;
  double bin_range(int bin) const;
  /// Range of the farthest retained bin center, in meters.
  double max_range() const;
  int bins_total() const { return n_theta * n_delta; }

  bool operator==(const PolarGeometry&) const = default;
};

/// Rigid transform from the radar frame to the world frame.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Vec3 translation = Vec3::Zero();

  /// Throws ValidationError unless rotation is orthonormal with det +1.
  void validate(double tol = 1e-9) const;
  Pose inverse() const;

  /// Planar pose: position (x, y, 0), yaw about +z.
  static Pose planar(double x, double y, double yaw);
};

/// One polar power image. Values are dB-scaled and dimensionless (constant
/// transmit factors omitted). Stored in 32-bit floats, beam-major.
struct RangeAzimuthScan {
  PolarGeometry geometry;
  std::vector<float> values;
  double timestamp = 0.0;  // normalized to [0,1]

  float at(int beam, int bin) const { return values[static_cast<std::size_t>(beam) * geometry.n_delta + bin]; }
  float& at(int beam, int bin) { return values[static_cast<std::size_t>(beam) * geometry.n_delta + bin]; }

  /// Throws ValidationError on shape mismatch or non-finite values.
  void validate() const;
};

/// 2D bird's-eye-view point set in meters, world frame.
struct BevPointSet {
  enum class Source { kField, kCfar, kGroundTruth };
  std::vector<Vec2> points;
  Source source = Source::kGroundTruth;
};

/// Cartesian coordinate of a bin center in the radar's local frame (z = 0).
Vec3 bin_to_local(int beam, int bin, const PolarGeometry& geom);

/// Applies pose: rotation * p + translation.
Vec3 local_to_world(const Vec3& p, const Pose& pose);

/// Unit vector from sensor_origin toward world_point.
Vec3 view_direction(const Vec3& world_point, const Vec3& sensor_origin);

/// Received-power model on a base-10 log scale with constant transmit
/// factors omitted: log10(rcs / range^2).
double power_db(double rcs, double range);

}  // namespace rf4d
