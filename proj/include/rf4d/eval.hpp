#pragma once

#include <filesystem>

#include "rf4d/dataio.hpp"
#include "rf4d/field.hpp"

namespace rf4d::eval {

using diffcore::ParamStore;

/// Peak signal-to-noise ratio in dB, capped at 100. Both maps are min-max
/// normalized jointly by the ground-truth range before the MSE. Throws
/// ShapeError on mismatched geometry and DegenerateError on a constant
/// ground truth.
double psnr(const RangeAzimuthScan& pred, const RangeAzimuthScan& gt);

/// Mean local structural similarity over every full 11x11 window, uniform
/// weights, population moments, C1 = 0.01^2 and C2 = 0.03^2 on the same
/// jointly normalized maps psnr uses. The polar map is treated as a plain
/// image (no azimuth wrap). Throws ValidationError when either dimension
/// is smaller than the window.
double ssim(const RangeAzimuthScan& pred, const RangeAzimuthScan& gt);
double ssim_serial(const RangeAzimuthScan& pred, const RangeAzimuthScan& gt);

/// 1D cell-averaging CFAR along range.
struct CfarConfig {
  int training = 8;        // training cells per side
  int guard = 2;           // guard cells per side
  double threshold_db = 12.0;

  void validate() const;
};

/// JSON round-trip of every CfarConfig field. Parsing throws FormatError
/// for malformed or missing content and validates the result.
std::string cfar_config_to_json(const CfarConfig& cfg);
CfarConfig cfar_config_from_json(const std::string& text);

/// Per beam, a bin is detected when its value exceeds the mean of the
/// surrounding training cells (guard cells excluded) by threshold_db. Only
/// bins with a full two-sided window are tested. Detections become world
/// xy points through the scan pose. Throws ValidationError when n_delta
/// cannot fit a window.
BevPointSet cfar_detect(const RangeAzimuthScan& scan, const Pose& pose, const CfarConfig& cfg);
BevPointSet cfar_detect_serial(const RangeAzimuthScan& scan, const Pose& pose, const CfarConfig& cfg);

/// Deterministic occupancy sampled on a grid_resolution^2 grid of cell
/// centers spanning the square of half-width max range around the sensor,
/// z = 0. Cells outside the sensing disc are skipped; cells with
/// alpha >= threshold are emitted as world-frame points in meters. The
/// pose is metric; `scale` maps it into field coordinates. An empty result
/// marks a degenerate (everywhere-unoccupied) field.
BevPointSet extract_occupancy_bev(const ParamStore& store, const field::FieldBlocks& blocks,
                                  const field::FieldConfig& fcfg, const Pose& pose_m, double t,
                                  const PolarGeometry& geom, const dataio::ScaleInfo& scale,
                                  int grid_resolution, double threshold = 0.5);
BevPointSet extract_occupancy_bev_serial(const ParamStore& store, const field::FieldBlocks& blocks,
                                         const field::FieldConfig& fcfg, const Pose& pose_m, double t,
                                         const PolarGeometry& geom, const dataio::ScaleInfo& scale,
                                         int grid_resolution, double threshold = 0.5);

/// Symmetric mean-of-squared-nearest-neighbor Chamfer distance in m^2.
/// Throws DegenerateError when either set is empty.
double chamfer(const BevPointSet& a, const BevPointSet& b);
double chamfer_serial(const BevPointSet& a, const BevPointSet& b);

/// Chamfer with every squared distance divided by the squared range of its
/// reference point from the sensor origin. Throws DegenerateError for an
/// empty set or a point at the origin.
double relative_chamfer(const BevPointSet& a, const BevPointSet& b, const Vec2& sensor_origin);

/// CSV with one "x,y" row per point (no header), full double precision.
void write_bev_csv(const BevPointSet& set, const std::filesystem::path& path);
BevPointSet read_bev_csv(const std::filesystem::path& path, BevPointSet::Source source);

}  // namespace rf4d::eval
