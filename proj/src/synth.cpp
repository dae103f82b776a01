#include "rf4d/synth.hpp"

#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <optional>

#include "json.hpp"
#include "rf4d/parallel.hpp"
#include "rf4d/rng.hpp"

namespace rf4d::synth {
namespace {

struct Hit {
  double range = 0.0;
  double sigma_eff = 0.0;
};

/// Nearest reflector intersection of the planar ray origin + s*dir, s > 0.
std::optional<Hit> first_hit(const SceneSpec& scene, const Vec2& origin, const Vec2& dir, double t) {
  std::optional<Hit> best;
  for (const Reflector& r : scene.reflectors) {
    const Vec2 center = reflector_position(r, t);
    const Vec2 oc = center - origin;
    const double proj = oc.dot(dir);
    const double closest_sq = oc.squaredNorm() - proj * proj;
    const double disc = r.radius * r.radius - closest_sq;
    if (disc < 0.0) continue;
    const double sqrt_disc = std::sqrt(disc);
    double s = proj - sqrt_disc;
    if (s <= 1e-12) s = proj + sqrt_disc;  // origin inside the disc
    if (s <= 1e-12) continue;
    if (best && s >= best->range) continue;

    const Vec2 hit_point = origin + s * dir;
    const Vec2 normal = (hit_point - center) / r.radius;
    const double cos_inc = std::max(0.0, -dir.dot(normal));
    const double sigma_eff = r.rcs * std::pow(cos_inc, r.rcs_exponent);
    best = Hit{.range = s, .sigma_eff = sigma_eff};
  }
  return best;
}

/// Triangular +-1-bin deposit around the continuous bin coordinate of range;
/// overwrites noise, overlapping deposits keep the maximum.
void deposit(double range, double value, const PolarGeometry& geom, float* bins, bool* covered) {
  const double u = range / geom.range_resolution - geom.min_bin - 0.5;
  const int k0 = static_cast<int>(std::floor(u));
  for (int k = k0; k <= k0 + 1; ++k) {
    if (k < 0 || k >= geom.n_delta) continue;
    const double w = 1.0 - std::abs(k - u);
    if (w <= 0.0) continue;
    const float v = static_cast<float>(value * w);
    if (!covered[k] || v > bins[k]) bins[k] = v;
    covered[k] = true;
  }
}

void simulate_beam(const SceneSpec& scene, const Pose& pose, double t, const PolarGeometry& geom,
                   std::uint64_t rng_seed, int beam, float* bins) {
  Rng rng(derive_seed(rng_seed, static_cast<std::uint64_t>(beam)));

  if (scene.noise_std_db > 0.0) {
    for (int k = 0; k < geom.n_delta; ++k)
      bins[k] = static_cast<float>(scene.noise_floor_db + scene.noise_std_db * rng.normal());
  } else {
    for (int k = 0; k < geom.n_delta; ++k) bins[k] = static_cast<float>(scene.noise_floor_db);
  }

  const double theta = geom.beam_azimuth(beam);
  const Vec3 dir3 = pose.rotation * Vec3(std::cos(theta), std::sin(theta), 0.0);
  Vec2 dir(dir3.x(), dir3.y());
  const double planar_norm = dir.norm();
  if (planar_norm < 1e-12) return;  // beam leaves the scene plane entirely
  dir /= planar_norm;
  const Vec2 origin(pose.translation.x(), pose.translation.y());

  const auto hit = first_hit(scene, origin, dir, t);
  if (!hit || hit->sigma_eff <= 0.0) return;

  auto covered = std::make_unique<bool[]>(geom.n_delta);
  std::fill_n(covered.get(), geom.n_delta, false);
  deposit(hit->range, power_db(hit->sigma_eff, hit->range), geom, bins, covered.get());
  if (scene.ghost_probability > 0.0 && rng.uniform() < scene.ghost_probability) {
    const double ghost_range = 2.0 * hit->range;
    deposit(ghost_range, power_db(hit->sigma_eff / 4.0, ghost_range), geom, bins, covered.get());
  }
}

RangeAzimuthScan simulate_common(const SceneSpec& scene, const Pose& pose, double t, const PolarGeometry& geom,
                                 std::uint64_t rng_seed, bool parallel) {
  scene.validate();
  geom.validate();
  pose.validate();
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("simulate_scan: t must lie in [0,1]");

  RangeAzimuthScan scan;
  scan.geometry = geom;
  scan.timestamp = t;
  scan.values.resize(static_cast<std::size_t>(geom.bins_total()));

  if (parallel) {
#pragma omp parallel for schedule(static) num_threads(worker_count())
    for (int beam = 0; beam < geom.n_theta; ++beam)
      simulate_beam(scene, pose, t, geom, rng_seed, beam, scan.values.data() + static_cast<std::size_t>(beam) * geom.n_delta);
  } else {
    for (int beam = 0; beam < geom.n_theta; ++beam)
      simulate_beam(scene, pose, t, geom, rng_seed, beam, scan.values.data() + static_cast<std::size_t>(beam) * geom.n_delta);
  }
  return scan;
}

const nlohmann::json& require_field(const nlohmann::json& j, const char* key, const char* where) {
  auto it = j.find(key);
  if (it == j.end()) throw FormatError(std::string("scene file: missing field \"") + key + "\" in " + where);
  return *it;
}

double number_field(const nlohmann::json& j, const char* key, const char* where, double fallback,
                    bool required = false) {
  auto it = j.find(key);
  if (it == j.end()) {
    if (required) throw FormatError(std::string("scene file: missing field \"") + key + "\" in " + where);
    return fallback;
  }
  if (!it->is_number()) throw FormatError(std::string("scene file: field \"") + key + "\" in " + where + " must be a number");
  return it->get<double>();
}

}  // namespace

void Reflector::validate() const {
  if (!(radius > 0.0)) throw ValidationError("Reflector: radius must be positive");
  if (!(rcs > 0.0)) throw ValidationError("Reflector: rcs must be positive");
  if (rcs_exponent < 0.0) throw ValidationError("Reflector: rcs_exponent must be non-negative");
  if (trajectory.empty()) throw ValidationError("Reflector: trajectory needs at least one keyframe");
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    if (trajectory[i].t < 0.0 || trajectory[i].t > 1.0)
      throw ValidationError("Reflector: keyframe times must lie in [0,1]");
    if (i > 0 && !(trajectory[i].t > trajectory[i - 1].t))
      throw ValidationError("Reflector: keyframe times must be strictly increasing");
  }
}

void SceneSpec::validate() const {
  if (ghost_probability < 0.0 || ghost_probability > 1.0)
    throw ValidationError("SceneSpec: ghost_probability must lie in [0,1]");
  if (noise_std_db < 0.0) throw ValidationError("SceneSpec: noise_std_db must be non-negative");
  if (!std::isfinite(noise_floor_db)) throw ValidationError("SceneSpec: noise_floor_db must be finite");
  for (const Reflector& r : reflectors) r.validate();
}

Vec2 reflector_position(const Reflector& r, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("reflector_position: t must lie in [0,1]");
  if (r.trajectory.empty()) throw ValidationError("reflector_position: empty trajectory");
  if (t <= r.trajectory.front().t) return r.trajectory.front().position;
  if (t >= r.trajectory.back().t) return r.trajectory.back().position;
  for (std::size_t i = 1; i < r.trajectory.size(); ++i) {
    const TrajectoryKey& a = r.trajectory[i - 1];
    const TrajectoryKey& b = r.trajectory[i];
    if (t <= b.t) {
      const double w = (t - a.t) / (b.t - a.t);
      return a.position + w * (b.position - a.position);
    }
  }
  return r.trajectory.back().position;
}

RangeAzimuthScan simulate_scan(const SceneSpec& scene, const Pose& pose, double t, const PolarGeometry& geom,
                               std::uint64_t rng_seed) {
  return simulate_common(scene, pose, t, geom, rng_seed, true);
}

RangeAzimuthScan simulate_scan_serial(const SceneSpec& scene, const Pose& pose, double t, const PolarGeometry& geom,
                                      std::uint64_t rng_seed) {
  return simulate_common(scene, pose, t, geom, rng_seed, false);
}

BevPointSet ground_truth_bev(const SceneSpec& scene, double t, int samples_per_reflector) {
  if (samples_per_reflector < 1) throw ValidationError("ground_truth_bev: samples_per_reflector must be >= 1");
  BevPointSet set;
  set.source = BevPointSet::Source::kGroundTruth;
  for (const Reflector& r : scene.reflectors) {
    const Vec2 center = reflector_position(r, t);
    for (int i = 0; i < samples_per_reflector; ++i) {
      const double angle = 2.0 * std::numbers::pi * i / samples_per_reflector;
      set.points.push_back(center + r.radius * Vec2(std::cos(angle), std::sin(angle)));
    }
  }
  return set;
}

dataio::SequenceBundle make_sequence(const SceneSpec& scene, const std::vector<Pose>& ego_path, int n_frames,
                                     const PolarGeometry& geom, std::uint64_t seed) {
  if (n_frames < 2) throw ValidationError("make_sequence: need at least 2 frames");
  if (static_cast<int>(ego_path.size()) != n_frames)
    throw ShapeError("make_sequence: ego_path must hold one pose per frame");

  dataio::SequenceBundle bundle;
  bundle.geometry = geom;
  for (int k = 0; k < n_frames; ++k) {
    const double t = static_cast<double>(k) / (n_frames - 1);
    bundle.timestamps.push_back(t);
    bundle.poses.push_back(ego_path[k]);
    bundle.scans.push_back(simulate_scan(scene, ego_path[k], t, geom, seed + static_cast<std::uint64_t>(k)));
  }
  bundle.validate();
  return bundle;
}

Pose ego_pose(const std::vector<EgoKeyframe>& keys, double t) {
  if (keys.empty()) return Pose::planar(0.0, 0.0, 0.0);
  if (t <= keys.front().t) return Pose::planar(keys.front().x, keys.front().y, keys.front().yaw);
  if (t >= keys.back().t) return Pose::planar(keys.back().x, keys.back().y, keys.back().yaw);
  for (std::size_t i = 1; i < keys.size(); ++i) {
    const EgoKeyframe& a = keys[i - 1];
    const EgoKeyframe& b = keys[i];
    if (t <= b.t) {
      const double w = (t - a.t) / (b.t - a.t);
      return Pose::planar(a.x + w * (b.x - a.x), a.y + w * (b.y - a.y), a.yaw + w * (b.yaw - a.yaw));
    }
  }
  return Pose::planar(keys.back().x, keys.back().y, keys.back().yaw);
}

ScenePackage load_scene_package(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_scene_package: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("scene file " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw FormatError("scene file: top level must be an object");

  ScenePackage pkg;
  const nlohmann::json& geom = require_field(j, "geometry", "scene");
  pkg.geometry.n_theta = static_cast<int>(number_field(geom, "n_theta", "geometry", 0, true));
  pkg.geometry.n_delta = static_cast<int>(number_field(geom, "n_delta", "geometry", 0, true));
  pkg.geometry.range_resolution = number_field(geom, "range_resolution", "geometry", 0, true);
  pkg.geometry.min_bin = static_cast<int>(number_field(geom, "min_bin", "geometry", 0.0));
  pkg.geometry.validate();

  pkg.scene.noise_floor_db = number_field(j, "noise_floor_db", "scene", 0.0);
  pkg.scene.noise_std_db = number_field(j, "noise_std_db", "scene", 0.0);
  pkg.scene.ghost_probability = number_field(j, "ghost_probability", "scene", 0.0);

  const nlohmann::json& reflectors = require_field(j, "reflectors", "scene");
  if (!reflectors.is_array()) throw FormatError("scene file: \"reflectors\" must be an array");
  for (std::size_t i = 0; i < reflectors.size(); ++i) {
    const auto& rj = reflectors[i];
    const std::string where = "reflectors[" + std::to_string(i) + "]";
    Reflector r;
    r.radius = number_field(rj, "radius", where.c_str(), 0, true);
    r.rcs = number_field(rj, "rcs", where.c_str(), 0, true);
    r.rcs_exponent = number_field(rj, "rcs_exponent", where.c_str(), 0.0);
    const nlohmann::json& traj = require_field(rj, "trajectory", where.c_str());
    if (!traj.is_array() || traj.empty())
      throw FormatError("scene file: " + where + ".trajectory must be a non-empty array");
    for (const auto& key : traj) {
      if (!key.is_array() || key.size() != 3)
        throw FormatError("scene file: " + where + ".trajectory entries must be [t, x, y]");
      r.trajectory.push_back({key[0].get<double>(), Vec2(key[1].get<double>(), key[2].get<double>())});
    }
    pkg.scene.reflectors.push_back(std::move(r));
  }

  if (auto it = j.find("ego"); it != j.end()) {
    if (!it->is_array()) throw FormatError("scene file: \"ego\" must be an array");
    for (const auto& key : *it) {
      if (!key.is_array() || key.size() != 4)
        throw FormatError("scene file: \"ego\" entries must be [t, x, y, yaw]");
      pkg.ego.push_back({key[0].get<double>(), key[1].get<double>(), key[2].get<double>(), key[3].get<double>()});
    }
    for (std::size_t i = 1; i < pkg.ego.size(); ++i)
      if (!(pkg.ego[i].t > pkg.ego[i - 1].t))
        throw ValidationError("scene file: ego keyframe times must be strictly increasing");
  }

  pkg.scene.validate();
  return pkg;
}

}  // namespace rf4d::synth
