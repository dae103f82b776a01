#include "rf4d/dataio.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace rf4d::dataio {
namespace {

using nlohmann::json;

std::array<unsigned char, 4> float_le(float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  return {static_cast<unsigned char>(bits & 0xff), static_cast<unsigned char>((bits >> 8) & 0xff),
          static_cast<unsigned char>((bits >> 16) & 0xff), static_cast<unsigned char>((bits >> 24) & 0xff)};
}

float float_from_le(const unsigned char* p) {
  const std::uint32_t bits = std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
                             (std::uint32_t(p[3]) << 24);
  float v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

json require_key(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw FormatError(std::string("meta.json: missing key \"") + key + "\"");
  return *it;
}

template <typename T>
T as(const json& j, const char* key) {
  try {
    return require_key(j, key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("meta.json: key \"") + key + "\": " + e.what());
  }
}

}  // namespace

void SequenceBundle::validate() const {
  geometry.validate();
  const std::size_t n = scans.size();
  if (n < 2) throw ValidationError("SequenceBundle: need at least 2 frames, got " + std::to_string(n));
  if (poses.size() != n || timestamps.size() != n)
    throw ValidationError("SequenceBundle: scans, poses, and timestamps must have equal length");
  if (timestamps.front() != 0.0 || timestamps.back() != 1.0)
    throw ValidationError("SequenceBundle: timestamps must start at 0 and end at 1");
  for (std::size_t k = 1; k < n; ++k)
    if (!(timestamps[k] > timestamps[k - 1]))
      throw ValidationError("SequenceBundle: timestamps must be strictly increasing");
  for (std::size_t k = 0; k < n; ++k) {
    if (scans[k].geometry != geometry)
      throw ValidationError("SequenceBundle: scan " + std::to_string(k) + " geometry differs from bundle geometry");
    if (scans[k].timestamp != timestamps[k])
      throw ValidationError("SequenceBundle: scan " + std::to_string(k) + " timestamp differs from bundle timestamp");
    scans[k].validate();
    poses[k].validate();
  }
}

void write_sequence(const SequenceBundle& bundle, const std::filesystem::path& dir) {
  bundle.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("write_sequence: cannot create " + dir.string() + ": " + ec.message());

  json meta;
  meta["n_theta"] = bundle.geometry.n_theta;
  meta["n_delta"] = bundle.geometry.n_delta;
  meta["range_resolution"] = bundle.geometry.range_resolution;
  meta["min_bin"] = bundle.geometry.min_bin;
  meta["frames"] = bundle.frames();
  meta["timestamps"] = bundle.timestamps;
  json poses = json::array();
  for (const Pose& pose : bundle.poses) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = pose.rotation;
    m.topRightCorner<3, 1>() = pose.translation;
    json flat = json::array();
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) flat.push_back(m(r, c));
    poses.push_back(std::move(flat));
  }
  meta["poses"] = std::move(poses);

  {
    std::ofstream out(dir / "meta.json", std::ios::binary);
    if (!out) throw IoError("write_sequence: cannot open " + (dir / "meta.json").string());
    out << meta.dump(2) << '\n';
    if (!out) throw IoError("write_sequence: failed writing meta.json");
  }

  std::vector<unsigned char> payload;
  payload.reserve(bundle.scans.size() * bundle.geometry.bins_total() * 4u);
  for (const RangeAzimuthScan& scan : bundle.scans)
    for (float v : scan.values) {
      const auto b = float_le(v);
      payload.insert(payload.end(), b.begin(), b.end());
    }
  std::ofstream out(dir / "scans.f32", std::ios::binary);
  if (!out) throw IoError("write_sequence: cannot open " + (dir / "scans.f32").string());
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("write_sequence: failed writing scans.f32");
}

SequenceBundle read_sequence(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  const auto scans_path = dir / "scans.f32";
  if (!std::filesystem::exists(meta_path)) throw IoError("read_sequence: missing " + meta_path.string());
  if (!std::filesystem::exists(scans_path)) throw IoError("read_sequence: missing " + scans_path.string());

  json meta;
  {
    std::ifstream in(meta_path, std::ios::binary);
    if (!in) throw IoError("read_sequence: cannot open " + meta_path.string());
    try {
      in >> meta;
    } catch (const json::parse_error& e) {
      throw FormatError(std::string("meta.json: ") + e.what());
    }
  }
  if (!meta.is_object()) throw FormatError("meta.json: top level must be an object");

  SequenceBundle bundle;
  bundle.geometry.n_theta = as<int>(meta, "n_theta");
  bundle.geometry.n_delta = as<int>(meta, "n_delta");
  bundle.geometry.range_resolution = as<double>(meta, "range_resolution");
  bundle.geometry.min_bin = as<int>(meta, "min_bin");
  const int frames = as<int>(meta, "frames");
  bundle.timestamps = as<std::vector<double>>(meta, "timestamps");
  const auto pose_rows = as<std::vector<std::vector<double>>>(meta, "poses");
  if (static_cast<int>(bundle.timestamps.size()) != frames || static_cast<int>(pose_rows.size()) != frames)
    throw FormatError("meta.json: timestamps/poses length disagrees with frames");
  for (const auto& flat : pose_rows) {
    if (flat.size() != 16) throw FormatError("meta.json: each pose must hold 16 values");
    Pose pose;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) pose.rotation(r, c) = flat[static_cast<std::size_t>(r) * 4 + c];
      pose.translation(r) = flat[static_cast<std::size_t>(r) * 4 + 3];
    }
    bundle.poses.push_back(pose);
  }

  bundle.geometry.validate();
  const std::size_t per_scan = static_cast<std::size_t>(bundle.geometry.bins_total());
  const std::size_t expected_bytes = static_cast<std::size_t>(frames) * per_scan * 4u;
  std::ifstream in(scans_path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("read_sequence: cannot open " + scans_path.string());
  const auto actual_bytes = static_cast<std::size_t>(in.tellg());
  if (actual_bytes != expected_bytes)
    throw PayloadSizeError("scans.f32: expected " + std::to_string(expected_bytes) + " bytes, found " +
                           std::to_string(actual_bytes));
  std::vector<unsigned char> payload(actual_bytes);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(actual_bytes));
  if (!in) throw IoError("read_sequence: failed reading scans.f32");

  bundle.scans.resize(frames);
  for (int k = 0; k < frames; ++k) {
    RangeAzimuthScan& scan = bundle.scans[k];
    scan.geometry = bundle.geometry;
    scan.timestamp = bundle.timestamps[k];
    scan.values.resize(per_scan);
    const unsigned char* base = payload.data() + static_cast<std::size_t>(k) * per_scan * 4u;
    for (std::size_t i = 0; i < per_scan; ++i) scan.values[i] = float_from_le(base + i * 4u);
  }

  bundle.validate();
  return bundle;
}

std::pair<SequenceBundle, ScaleInfo> normalize_coordinates(const SequenceBundle& bundle) {
  bundle.validate();
  double max_norm = 0.0;
  for (const Pose& pose : bundle.poses) max_norm = std::max(max_norm, pose.translation.norm());
  const double extent = max_norm + bundle.geometry.max_range();
  if (!(extent > 0.0)) throw DegenerateError("normalize_coordinates: scene extent is zero");

  ScaleInfo info{.scale = 1.0 / extent, .extent_m = extent};
  SequenceBundle normalized = bundle;
  for (Pose& pose : normalized.poses) pose.translation *= info.scale;
  return {std::move(normalized), info};
}

}  // namespace rf4d::dataio
