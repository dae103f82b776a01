#include "rf4d/core.hpp"

#include <cmath>
#include <numbers>

namespace rf4d {

void PolarGeometry::validate() const {
  if (n_theta <= 0) throw ValidationError("PolarGeometry: n_theta must be positive, got " + std::to_string(n_theta));
  if (n_delta <= 0) throw ValidationError("PolarGeometry: n_delta must be positive, got " + std::to_string(n_delta));
  if (!(range_resolution > 0.0) || !std::isfinite(range_resolution))
    throw ValidationError("PolarGeometry: range_resolution must be positive and finite");
  if (min_bin < 0) throw ValidationError("PolarGeometry: min_bin must be non-negative, got " + std::to_string(min_bin));
}

double PolarGeometry::beam_azimuth(int beam) const {
  if (beam < 0 || beam >= n_theta) throw IndexError("beam_azimuth: beam " + std::to_string(beam) + " out of range");
  return 2.0 * std::numbers::pi * beam / n_theta;
}

double PolarGeometry::bin_range(int bin) const {
  if (bin < 0 || bin >= n_delta) throw IndexError("bin_range: bin " + std::to_string(bin) + " out of range");
  return (min_bin + bin + 0.5) * range_resolution;
}

double PolarGeometry::max_range() const { return (min_bin + n_delta - 1 + 0.5) * range_resolution; }

void Pose::validate(double tol) const {
  const Eigen::Matrix3d gram = rotation.transpose() * rotation;
  if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol)
    throw ValidationError("Pose: rotation is not orthonormal");
  if (std::abs(rotation.determinant() - 1.0) > tol) throw ValidationError("Pose: rotation determinant is not +1");
  if (!translation.allFinite()) throw ValidationError("Pose: translation has non-finite entries");
}

Pose Pose::inverse() const {
  Pose inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

Pose Pose::planar(double x, double y, double yaw) {
  Pose pose;
  pose.rotation = Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
  pose.translation = Vec3(x, y, 0.0);
  return pose;
}

void RangeAzimuthScan::validate() const {
  geometry.validate();
  const std::size_t expected = static_cast<std::size_t>(geometry.n_theta) * geometry.n_delta;
  if (values.size() != expected)
    throw ShapeError("RangeAzimuthScan: expected " + std::to_string(expected) + " values, got " +
                     std::to_string(values.size()));
  for (float v : values)
    if (!std::isfinite(v)) throw ValidationError("RangeAzimuthScan: non-finite power value");
  if (!std::isfinite(timestamp) || timestamp < 0.0 || timestamp > 1.0)
    throw ValidationError("RangeAzimuthScan: timestamp must lie in [0, 1]");
}

Vec3 bin_to_local(int beam, int bin, const PolarGeometry& geom) {
  const double theta = geom.beam_azimuth(beam);
  const double range = geom.bin_range(bin);
  return {range * std::cos(theta), range * std::sin(theta), 0.0};
}

Vec3 local_to_world(const Vec3& p, const Pose& pose) { return pose.rotation * p + pose.translation; }

Vec3 view_direction(const Vec3& world_point, const Vec3& sensor_origin) {
  const Vec3 diff = world_point - sensor_origin;
  const double norm = diff.norm();
  if (norm < 1e-12) throw DegenerateError("view_direction: query point coincides with the sensor origin");
  return diff / norm;
}

double power_db(double rcs, double range) {
  if (!(rcs > 0.0)) throw DomainError("power_db: rcs must be positive");
  if (!(range > 0.0)) throw DomainError("power_db: range must be positive");
  return std::log10(rcs / (range * range));
}

}  // namespace rf4d
