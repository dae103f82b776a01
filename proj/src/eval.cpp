#include "rf4d/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>

#include "json.hpp"
#include "rf4d/parallel.hpp"

namespace rf4d::eval {
namespace {

constexpr int kWin = 11;

struct Normalized {
  std::vector<double> pred;
  std::vector<double> gt;
  int rows = 0;
  int cols = 0;
};

/// Joint min-max normalization by the ground-truth range; the shared
/// preprocessing of psnr and ssim.
Normalized normalize_pair(const RangeAzimuthScan& pred, const RangeAzimuthScan& gt) {
  if (pred.geometry != gt.geometry) throw ShapeError("eval: scans must share one geometry");
  if (pred.values.size() != gt.values.size()) throw ShapeError("eval: scans must have equal size");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (float v : gt.values) {
    lo = std::min(lo, static_cast<double>(v));
    hi = std::max(hi, static_cast<double>(v));
  }
  const double range = hi - lo;
  if (!(range > 0.0)) throw DegenerateError("eval: constant ground truth has no normalization range");

  Normalized n;
  n.rows = gt.geometry.n_theta;
  n.cols = gt.geometry.n_delta;
  n.pred.resize(pred.values.size());
  n.gt.resize(gt.values.size());
  for (std::size_t i = 0; i < gt.values.size(); ++i) {
    n.pred[i] = (static_cast<double>(pred.values[i]) - lo) / range;
    n.gt[i] = (static_cast<double>(gt.values[i]) - lo) / range;
  }
  return n;
}

/// SSIM of the full window whose top-left corner is (i, j): two-pass
/// population moments with uniform weights.
double window_ssim(const Normalized& n, int i, int j) {
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  constexpr double kInv = 1.0 / (kWin * kWin);
  double sp = 0.0, sg = 0.0;
  for (int r = 0; r < kWin; ++r)
    for (int c = 0; c < kWin; ++c) {
      const std::size_t at = static_cast<std::size_t>(i + r) * n.cols + (j + c);
      sp += n.pred[at];
      sg += n.gt[at];
    }
  const double mp = sp * kInv, mg = sg * kInv;
  double vp = 0.0, vg = 0.0, cov = 0.0;
  for (int r = 0; r < kWin; ++r)
    for (int c = 0; c < kWin; ++c) {
      const std::size_t at = static_cast<std::size_t>(i + r) * n.cols + (j + c);
      const double dp = n.pred[at] - mp;
      const double dg = n.gt[at] - mg;
      vp += dp * dp;
      vg += dg * dg;
      cov += dp * dg;
    }
  vp *= kInv;
  vg *= kInv;
  cov *= kInv;
  return ((2.0 * mp * mg + kC1) * (2.0 * cov + kC2)) / ((mp * mp + mg * mg + kC1) * (vp + vg + kC2));
}

/// Row sums first, then one fixed-order reduction, so the parallel and
/// serial paths produce bit-identical results.
double ssim_common(const RangeAzimuthScan& pred, const RangeAzimuthScan& gt, bool parallel) {
  if (gt.geometry.n_theta < kWin || gt.geometry.n_delta < kWin)
    throw ValidationError("ssim: map must be at least " + std::to_string(kWin) + " cells in each dimension");
  const Normalized n = normalize_pair(pred, gt);
  const int wrows = n.rows - kWin + 1;
  const int wcols = n.cols - kWin + 1;
  std::vector<double> row_sums(static_cast<std::size_t>(wrows), 0.0);
#pragma omp parallel for schedule(static) num_threads(parallel ? worker_count() : 1)
  for (int i = 0; i < wrows; ++i) {
    double acc = 0.0;
    for (int j = 0; j < wcols; ++j) acc += window_ssim(n, i, j);
    row_sums[static_cast<std::size_t>(i)] = acc;
  }
  double total = 0.0;
  for (double s : row_sums) total += s;
  return total / (static_cast<double>(wrows) * wcols);
}

BevPointSet cfar_common(const RangeAzimuthScan& scan, const Pose& pose, const CfarConfig& cfg, bool parallel) {
  cfg.validate();
  pose.validate();
  scan.validate();
  const PolarGeometry& geom = scan.geometry;
  const int reach = cfg.training + cfg.guard;
  if (geom.n_delta <= 2 * reach)
    throw ValidationError("cfar_detect: n_delta " + std::to_string(geom.n_delta) +
                          " cannot fit training and guard windows");

  std::vector<std::vector<Vec2>> per_beam(static_cast<std::size_t>(geom.n_theta));
#pragma omp parallel for schedule(static) num_threads(parallel ? worker_count() : 1)
  for (int beam = 0; beam < geom.n_theta; ++beam) {
    std::vector<Vec2>& hits = per_beam[static_cast<std::size_t>(beam)];
    for (int bin = reach; bin < geom.n_delta - reach; ++bin) {
      double acc = 0.0;
      for (int k = bin - reach; k < bin - cfg.guard; ++k) acc += scan.at(beam, k);
      for (int k = bin + cfg.guard + 1; k <= bin + reach; ++k) acc += scan.at(beam, k);
      const double mean = acc / (2.0 * cfg.training);
      if (scan.at(beam, bin) > mean + cfg.threshold_db) {
        const Vec3 w = local_to_world(bin_to_local(beam, bin, geom), pose);
        hits.emplace_back(w.x(), w.y());
      }
    }
  }
  BevPointSet out;
  out.source = BevPointSet::Source::kCfar;
  for (const auto& hits : per_beam) out.points.insert(out.points.end(), hits.begin(), hits.end());
  return out;
}

BevPointSet extract_common(const ParamStore& store, const field::FieldBlocks& blocks,
                           const field::FieldConfig& fcfg, const Pose& pose_m, double t,
                           const PolarGeometry& geom, const dataio::ScaleInfo& scale, int grid_resolution,
                           double threshold, bool parallel) {
  if (grid_resolution < 1) throw ValidationError("extract_occupancy_bev: grid_resolution must be >= 1");
  pose_m.validate();
  geom.validate();
  // validated here so the query loop cannot throw inside the parallel region
  if (fcfg.time_enabled && (t < 0.0 || t > 1.0))
    throw DomainError("extract_occupancy_bev: t must lie in [0,1]");
  const double radius = geom.max_range();
  const double cell = 2.0 * radius / grid_resolution;
  const double cx = pose_m.translation.x();
  const double cy = pose_m.translation.y();

  std::vector<std::vector<Vec2>> per_row(static_cast<std::size_t>(grid_resolution));
#pragma omp parallel for schedule(static) num_threads(parallel ? worker_count() : 1)
  for (int i = 0; i < grid_resolution; ++i) {
    std::vector<Vec2>& row = per_row[static_cast<std::size_t>(i)];
    const double y = cy - radius + (i + 0.5) * cell;
    for (int j = 0; j < grid_resolution; ++j) {
      const double x = cx - radius + (j + 0.5) * cell;
      const double dx = x - cx, dy = y - cy;
      if (dx * dx + dy * dy > radius * radius) continue;
      const Eigen::Vector3d q(x * scale.scale, y * scale.scale, 0.0);
      const double alpha = field::occupancy_at(store, blocks, fcfg, q, t, fcfg.tau_final, 0.0);
      if (alpha >= threshold) row.emplace_back(x, y);
    }
  }
  BevPointSet out;
  out.source = BevPointSet::Source::kField;
  for (const auto& row : per_row) out.points.insert(out.points.end(), row.begin(), row.end());
  return out;
}

/// Directed half of the Chamfer sum: per-point minima land in a buffer so
/// the final reduction order never depends on the thread count. With a
/// non-null origin every squared distance is divided by the reference
/// point's squared range; origin distances are validated by the caller so
/// nothing throws inside the parallel region.
double directed_chamfer(const std::vector<Vec2>& from, const std::vector<Vec2>& to, const Vec2* origin,
                        bool parallel) {
  std::vector<double> best(from.size());
#pragma omp parallel for schedule(static) num_threads(parallel ? worker_count() : 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(from.size()); ++i) {
    const Vec2& p = from[static_cast<std::size_t>(i)];
    double d = std::numeric_limits<double>::infinity();
    for (const Vec2& q : to) d = std::min(d, (p - q).squaredNorm());
    if (origin != nullptr) d /= (p - *origin).squaredNorm();
    best[static_cast<std::size_t>(i)] = d;
  }
  double acc = 0.0;
  for (double d : best) acc += d;
  return acc / static_cast<double>(from.size());
}

double chamfer_common(const BevPointSet& a, const BevPointSet& b, const Vec2* origin, bool parallel) {
  if (a.points.empty() || b.points.empty())
    throw DegenerateError("chamfer: point sets must be non-empty for a defined metric");
  if (origin != nullptr) {
    for (const auto* set : {&a, &b})
      for (const Vec2& p : set->points)
        if (!((p - *origin).squaredNorm() > 0.0))
          throw DegenerateError("relative_chamfer: reference point at the sensor origin");
  }
  return directed_chamfer(a.points, b.points, origin, parallel) +
         directed_chamfer(b.points, a.points, origin, parallel);
}

}  // namespace

double psnr(const RangeAzimuthScan& pred, const RangeAzimuthScan& gt) {
  const Normalized n = normalize_pair(pred, gt);
  double mse = 0.0;
  for (std::size_t i = 0; i < n.gt.size(); ++i) {
    const double e = n.pred[i] - n.gt[i];
    mse += e * e;
  }
  mse /= static_cast<double>(n.gt.size());
  if (mse == 0.0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

double ssim(const RangeAzimuthScan& pred, const RangeAzimuthScan& gt) { return ssim_common(pred, gt, true); }
double ssim_serial(const RangeAzimuthScan& pred, const RangeAzimuthScan& gt) {
  return ssim_common(pred, gt, false);
}

void CfarConfig::validate() const {
  if (training < 1) throw ValidationError("CfarConfig: need at least one training cell per side");
  if (guard < 0) throw ValidationError("CfarConfig: guard cells must be >= 0");
}

std::string cfar_config_to_json(const CfarConfig& cfg) {
  nlohmann::json j;
  j["training"] = cfg.training;
  j["guard"] = cfg.guard;
  j["threshold_db"] = cfg.threshold_db;
  return j.dump(2) + "\n";
}

CfarConfig cfar_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("cfar config: malformed JSON: ") + e.what());
  }
  CfarConfig cfg;
  auto as = [&j](const char* key, auto& into) {
    if (!j.contains(key)) throw FormatError(std::string("cfar config: missing key '") + key + "'");
    try {
      into = j.at(key).get<std::remove_reference_t<decltype(into)>>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("cfar config: bad value for '") + key + "': " + e.what());
    }
  };
  as("training", cfg.training);
  as("guard", cfg.guard);
  as("threshold_db", cfg.threshold_db);
  cfg.validate();
  return cfg;
}

BevPointSet cfar_detect(const RangeAzimuthScan& scan, const Pose& pose, const CfarConfig& cfg) {
  return cfar_common(scan, pose, cfg, true);
}
BevPointSet cfar_detect_serial(const RangeAzimuthScan& scan, const Pose& pose, const CfarConfig& cfg) {
  return cfar_common(scan, pose, cfg, false);
}

BevPointSet extract_occupancy_bev(const ParamStore& store, const field::FieldBlocks& blocks,
                                  const field::FieldConfig& fcfg, const Pose& pose_m, double t,
                                  const PolarGeometry& geom, const dataio::ScaleInfo& scale,
                                  int grid_resolution, double threshold) {
  return extract_common(store, blocks, fcfg, pose_m, t, geom, scale, grid_resolution, threshold, true);
}
BevPointSet extract_occupancy_bev_serial(const ParamStore& store, const field::FieldBlocks& blocks,
                                         const field::FieldConfig& fcfg, const Pose& pose_m, double t,
                                         const PolarGeometry& geom, const dataio::ScaleInfo& scale,
                                         int grid_resolution, double threshold) {
  return extract_common(store, blocks, fcfg, pose_m, t, geom, scale, grid_resolution, threshold, false);
}

double chamfer(const BevPointSet& a, const BevPointSet& b) { return chamfer_common(a, b, nullptr, true); }
double chamfer_serial(const BevPointSet& a, const BevPointSet& b) {
  return chamfer_common(a, b, nullptr, false);
}

double relative_chamfer(const BevPointSet& a, const BevPointSet& b, const Vec2& sensor_origin) {
  return chamfer_common(a, b, &sensor_origin, false);
}

void write_bev_csv(const BevPointSet& set, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("write_bev_csv: cannot write " + path.string());
  char line[80];
  for (const Vec2& p : set.points) {
    std::snprintf(line, sizeof line, "%.17g,%.17g\n", p.x(), p.y());
    out << line;
  }
}

BevPointSet read_bev_csv(const std::filesystem::path& path, BevPointSet::Source source) {
  std::ifstream in(path);
  if (!in) throw IoError("read_bev_csv: cannot open " + path.string());
  BevPointSet out;
  out.source = source;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    double x = 0.0, y = 0.0;
    if (std::sscanf(line.c_str(), "%lf,%lf", &x, &y) != 2)
      throw FormatError("read_bev_csv: bad row " + std::to_string(lineno) + " in " + path.string());
    if (!std::isfinite(x) || !std::isfinite(y))
      throw ValidationError("read_bev_csv: non-finite point at row " + std::to_string(lineno));
    out.points.emplace_back(x, y);
  }
  return out;
}

}  // namespace rf4d::eval
