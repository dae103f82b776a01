#include "rf4d/field.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "rf4d/parallel.hpp"

namespace rf4d::field {
namespace {

using json = nlohmann::json;

constexpr int kMaxWidth = 128;

void check_widths(const std::vector<int>& widths, const char* name) {
  if (widths.size() < 2) throw ValidationError(std::string(name) + ": need at least input and output widths");
  for (int w : widths)
    if (w < 1 || w > kMaxWidth)
      throw ValidationError(std::string(name) + ": widths must be in [1, " + std::to_string(kMaxWidth) + "]");
}

/// Dense forward through [W0, b0, ...] blocks, ReLU hidden, linear output.
/// Buffers are caller-provided; widths are bounded by kMaxWidth.
void mlp_eval(const ParamStore& store, const std::vector<int>& blocks, const double* in, double* out) {
  double buf_a[kMaxWidth];
  double buf_b[kMaxWidth];
  const int layers = static_cast<int>(blocks.size()) / 2;
  const double* cur = in;
  for (int layer = 0; layer < layers; ++layer) {
    const auto& shape = store.shape(blocks[static_cast<std::size_t>(2 * layer)]);
    const int rows = shape[0], cols = shape[1];
    const auto wv = store.values(blocks[static_cast<std::size_t>(2 * layer)]);
    const auto bv = store.values(blocks[static_cast<std::size_t>(2 * layer) + 1]);
    const bool last = layer == layers - 1;
    double* dst = last ? out : (cur == buf_a ? buf_b : buf_a);
    for (int i = 0; i < rows; ++i) {
      double acc = bv[i];
      const double* row = wv.data() + static_cast<std::size_t>(i) * cols;
      for (int j = 0; j < cols; ++j) acc += row[j] * cur[j];
      dst[i] = last ? acc : (acc > 0.0 ? acc : 0.0);
    }
    cur = dst;
  }
}

/// Hash + (optional) time features into feat; bumps the clamp counter once
/// when x leaves the cube, matching the tape op.
void encode_features(const ParamStore& store, const FieldBlocks& blocks, const FieldConfig& cfg,
                     const Eigen::Vector3d& x, double t, double* feat) {
  const double xv[3] = {x.x(), x.y(), x.z()};
  if (xv[0] < -1.0 || xv[0] > 1.0 || xv[1] < -1.0 || xv[1] > 1.0 || xv[2] < -1.0 || xv[2] > 1.0)
    store.clamp_warnings.fetch_add(1, std::memory_order_relaxed);
  std::fill_n(feat, cfg.hash_features(), 0.0);
  for (int level = 0; level < cfg.hash.levels; ++level) {
    const int resolution = diffcore::hash_level_resolution(cfg.hash.n_min, cfg.hash.growth, level);
    diffcore::hash_level_eval(store.values(blocks.hash_levels[static_cast<std::size_t>(level)]),
                              cfg.hash.table_size, cfg.hash.features, resolution, xv,
                              feat + static_cast<std::size_t>(level) * cfg.hash.features);
  }
  if (!cfg.time_enabled) return;
  double raw[kMaxWidth];
  for (int k = 0; k < cfg.time_frequencies; ++k) {
    const double omega = std::pow(2.0, k) * std::numbers::pi;
    raw[2 * k] = std::sin(omega * t);
    raw[2 * k + 1] = std::cos(omega * t);
  }
  mlp_eval(store, blocks.time, raw, feat + cfg.hash_features());
}

/// chi features then the alpha logit; shared by forward and warp queries.
double alpha_logit_at(const ParamStore& store, const FieldBlocks& blocks, const FieldConfig& cfg,
                      const Eigen::Vector3d& x, double t, double* chi_out) {
  double feat[kMaxWidth];
  encode_features(store, blocks, cfg, x, t, feat);
  mlp_eval(store, blocks.chi, feat, chi_out);
  double logit;
  mlp_eval(store, blocks.alpha, chi_out, &logit);
  return logit;
}

void require_time_range(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("field: time must lie in [0,1], got " + std::to_string(t));
}

json require_key(const json& j, const char* key) {
  if (!j.contains(key)) throw FormatError(std::string("field config: missing key '") + key + "'");
  return j.at(key);
}

template <typename T>
T as(const json& j, const char* key) {
  try {
    return require_key(j, key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("field config: bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

void HashGridConfig::validate() const {
  if (levels < 1) throw ValidationError("HashGridConfig: levels must be >= 1");
  if (table_size < 2 || (table_size & (table_size - 1)) != 0)
    throw ValidationError("HashGridConfig: table_size must be a power of two >= 2");
  if (features < 1) throw ValidationError("HashGridConfig: features must be >= 1");
  if (n_min < 2) throw ValidationError("HashGridConfig: n_min must be >= 2");
  if (!(growth > 1.0)) throw ValidationError("HashGridConfig: growth must exceed 1");
}

void FieldConfig::validate() const {
  hash.validate();
  check_widths(chi_widths, "chi_widths");
  check_widths(alpha_widths, "alpha_widths");
  check_widths(sigma_widths, "sigma_widths");
  check_widths(flow_widths, "flow_widths");
  if (time_enabled) {
    if (time_frequencies < 1) throw ValidationError("FieldConfig: time_frequencies must be >= 1");
    check_widths(time_widths, "time_widths");
    if (time_widths.front() != 2 * time_frequencies)
      throw ValidationError("FieldConfig: time_widths input must equal 2 * time_frequencies");
  }
  if (hash_features() + time_features() > kMaxWidth)
    throw ValidationError("FieldConfig: encoded feature width exceeds the evaluation buffer");
  if (chi_widths.front() != hash_features() + time_features())
    throw ValidationError("FieldConfig: chi input width must equal hash + time feature width");
  if (sh_degree < 0 || sh_degree > 3) throw ValidationError("FieldConfig: sh_degree must be in 0..3");
  if (alpha_widths.front() != chi_width() || alpha_widths.back() != 1)
    throw ValidationError("FieldConfig: alpha head must map chi width to 1");
  if (sigma_widths.front() != chi_width() + sh_features() || sigma_widths.back() != 1)
    throw ValidationError("FieldConfig: sigma head must map chi + SH width to 1");
  if (chi_width() + sh_features() > kMaxWidth)
    throw ValidationError("FieldConfig: sigma input width exceeds the evaluation buffer");
  if (flow_widths.front() != chi_width() || flow_widths.back() != 6)
    throw ValidationError("FieldConfig: flow head must map chi width to 6");
  if (!(tau_start > 0.0) || !(tau_final > 0.0)) throw ValidationError("FieldConfig: temperatures must be positive");
}

double tau_at(const FieldConfig& cfg, int step, int total_steps) {
  if (total_steps < 1) throw DomainError("tau_at: total_steps must be >= 1");
  if (step < 0 || step > total_steps) throw DomainError("tau_at: step outside [0, total]");
  const double f = static_cast<double>(step) / total_steps;
  return cfg.tau_start + (cfg.tau_final - cfg.tau_start) * f;
}

std::string field_config_to_json(const FieldConfig& cfg) {
  json j;
  j["hash"] = {{"levels", cfg.hash.levels},
               {"table_size", cfg.hash.table_size},
               {"features", cfg.hash.features},
               {"n_min", cfg.hash.n_min},
               {"growth", cfg.hash.growth}};
  j["time_enabled"] = cfg.time_enabled;
  j["time_frequencies"] = cfg.time_frequencies;
  j["time_widths"] = cfg.time_widths;
  j["chi_widths"] = cfg.chi_widths;
  j["alpha_widths"] = cfg.alpha_widths;
  j["sigma_widths"] = cfg.sigma_widths;
  j["flow_widths"] = cfg.flow_widths;
  j["sh_degree"] = cfg.sh_degree;
  j["tau_start"] = cfg.tau_start;
  j["tau_final"] = cfg.tau_final;
  return j.dump(2) + "\n";
}

FieldConfig field_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("field config: malformed JSON: ") + e.what());
  }
  FieldConfig cfg;
  const json h = require_key(j, "hash");
  cfg.hash.levels = as<int>(h, "levels");
  cfg.hash.table_size = as<int>(h, "table_size");
  cfg.hash.features = as<int>(h, "features");
  cfg.hash.n_min = as<int>(h, "n_min");
  cfg.hash.growth = as<double>(h, "growth");
  cfg.time_enabled = as<bool>(j, "time_enabled");
  cfg.time_frequencies = as<int>(j, "time_frequencies");
  cfg.time_widths = as<std::vector<int>>(j, "time_widths");
  cfg.chi_widths = as<std::vector<int>>(j, "chi_widths");
  cfg.alpha_widths = as<std::vector<int>>(j, "alpha_widths");
  cfg.sigma_widths = as<std::vector<int>>(j, "sigma_widths");
  cfg.flow_widths = as<std::vector<int>>(j, "flow_widths");
  cfg.sh_degree = as<int>(j, "sh_degree");
  cfg.tau_start = as<double>(j, "tau_start");
  cfg.tau_final = as<double>(j, "tau_final");
  cfg.validate();
  return cfg;
}

diffcore::HashTapeSpec FieldBlocks::hash_spec(const FieldConfig& cfg) const {
  return {cfg.hash.table_size, cfg.hash.features, cfg.hash.n_min, cfg.hash.growth, hash_levels};
}

FieldBlocks register_field(ParamStore& store, const FieldConfig& cfg, Rng& rng) {
  cfg.validate();
  FieldBlocks blocks;
  for (int level = 0; level < cfg.hash.levels; ++level) {
    const int id = store.register_block("hash/level" + std::to_string(level), {cfg.hash.table_size, cfg.hash.features});
    for (double& v : store.values(id)) v = (2.0 * rng.uniform() - 1.0) * 1e-4;
    blocks.hash_levels.push_back(id);
  }
  using diffcore::MlpSpec;
  using diffcore::register_mlp;
  using diffcore::resolve_mlp;
  if (cfg.time_enabled) {
    register_mlp(store, "time", MlpSpec{cfg.time_widths}, rng);
    blocks.time = resolve_mlp(store, "time", MlpSpec{cfg.time_widths});
  }
  register_mlp(store, "chi", MlpSpec{cfg.chi_widths}, rng);
  blocks.chi = resolve_mlp(store, "chi", MlpSpec{cfg.chi_widths});
  register_mlp(store, "alpha", MlpSpec{cfg.alpha_widths}, rng, true);
  blocks.alpha = resolve_mlp(store, "alpha", MlpSpec{cfg.alpha_widths});
  register_mlp(store, "sigma", MlpSpec{cfg.sigma_widths}, rng, true);
  blocks.sigma = resolve_mlp(store, "sigma", MlpSpec{cfg.sigma_widths});
  register_mlp(store, "flow", MlpSpec{cfg.flow_widths}, rng, true);
  blocks.flow = resolve_mlp(store, "flow", MlpSpec{cfg.flow_widths});
  return blocks;
}

FieldBlocks resolve_field(const ParamStore& store, const FieldConfig& cfg) {
  cfg.validate();
  FieldBlocks blocks;
  for (int level = 0; level < cfg.hash.levels; ++level)
    blocks.hash_levels.push_back(store.block_id("hash/level" + std::to_string(level)));
  using diffcore::MlpSpec;
  using diffcore::resolve_mlp;
  if (cfg.time_enabled) blocks.time = resolve_mlp(store, "time", MlpSpec{cfg.time_widths});
  blocks.chi = resolve_mlp(store, "chi", MlpSpec{cfg.chi_widths});
  blocks.alpha = resolve_mlp(store, "alpha", MlpSpec{cfg.alpha_widths});
  blocks.sigma = resolve_mlp(store, "sigma", MlpSpec{cfg.sigma_widths});
  blocks.flow = resolve_mlp(store, "flow", MlpSpec{cfg.flow_widths});
  return blocks;
}

std::vector<double> hash_encode(const ParamStore& store, const FieldBlocks& blocks, const FieldConfig& cfg,
                                const Eigen::Vector3d& x) {
  const double xv[3] = {x.x(), x.y(), x.z()};
  if (xv[0] < -1.0 || xv[0] > 1.0 || xv[1] < -1.0 || xv[1] > 1.0 || xv[2] < -1.0 || xv[2] > 1.0)
    store.clamp_warnings.fetch_add(1, std::memory_order_relaxed);
  std::vector<double> out(static_cast<std::size_t>(cfg.hash_features()), 0.0);
  for (int level = 0; level < cfg.hash.levels; ++level) {
    const int resolution = diffcore::hash_level_resolution(cfg.hash.n_min, cfg.hash.growth, level);
    diffcore::hash_level_eval(store.values(blocks.hash_levels[static_cast<std::size_t>(level)]),
                              cfg.hash.table_size, cfg.hash.features, resolution, xv,
                              out.data() + static_cast<std::size_t>(level) * cfg.hash.features);
  }
  return out;
}

std::vector<double> time_encode(const ParamStore& store, const FieldBlocks& blocks, const FieldConfig& cfg,
                                double t) {
  if (!cfg.time_enabled) throw DomainError("time_encode: time input is disabled in this config");
  require_time_range(t);
  double raw[kMaxWidth];
  for (int k = 0; k < cfg.time_frequencies; ++k) {
    const double omega = std::pow(2.0, k) * std::numbers::pi;
    raw[2 * k] = std::sin(omega * t);
    raw[2 * k + 1] = std::cos(omega * t);
  }
  std::vector<double> out(static_cast<std::size_t>(cfg.time_widths.back()));
  mlp_eval(store, blocks.time, raw, out.data());
  return out;
}

std::vector<double> sh_encode(const Eigen::Vector3d& d, int degree) {
  if (degree < 0 || degree > 3) throw DomainError("sh_encode: degree must be in 0..3");
  const double norm = d.norm();
  if (std::abs(norm - 1.0) > 1e-6)
    throw DomainError("sh_encode: direction must be unit length within 1e-6, got norm " + std::to_string(norm));
  const Eigen::Vector3d n = d / norm;
  std::vector<double> out(static_cast<std::size_t>((degree + 1) * (degree + 1)));
  const double nv[3] = {n.x(), n.y(), n.z()};
  diffcore::sh_basis_unit(nv, degree, out.data());
  return out;
}

namespace {

double sigmoid_noise(double logit, double tau, double noise) {
  if (!(tau > 0.0)) throw DomainError("gumbel_sigmoid: tau must be positive");
  return 1.0 / (1.0 + std::exp(-(logit + noise) / tau));
}

}  // namespace

double gumbel_sigmoid(double logit, double tau, Rng* rng) {
  const double noise = rng != nullptr ? rng->gumbel() - rng->gumbel() : 0.0;
  return sigmoid_noise(logit, tau, noise);
}

double occupancy_at(const ParamStore& store, const FieldBlocks& blocks, const FieldConfig& cfg,
                    const Eigen::Vector3d& x, double t, double tau, double gumbel_noise) {
  if (cfg.time_enabled) require_time_range(t);
  double chi[kMaxWidth];
  return sigmoid_noise(alpha_logit_at(store, blocks, cfg, x, t, chi), tau, gumbel_noise);
}

FieldOutput field_forward_noise(const ParamStore& store, const FieldBlocks& blocks, const FieldConfig& cfg,
                                const Eigen::Vector3d& x, double t, const Eigen::Vector3d& d, double tau,
                                double gumbel_noise) {
  if (cfg.time_enabled) require_time_range(t);
  double chi[kMaxWidth];
  const double logit = alpha_logit_at(store, blocks, cfg, x, t, chi);
  FieldOutput out;
  out.alpha = sigmoid_noise(logit, tau, gumbel_noise);

  double sigma_in[kMaxWidth];
  std::copy_n(chi, cfg.chi_width(), sigma_in);
  const double norm = d.norm();
  if (std::abs(norm - 1.0) > 1e-6)
    throw DomainError("field_forward: view direction must be unit length within 1e-6");
  const double nv[3] = {d.x() / norm, d.y() / norm, d.z() / norm};
  diffcore::sh_basis_unit(nv, cfg.sh_degree, sigma_in + cfg.chi_width());
  mlp_eval(store, blocks.sigma, sigma_in, &out.sigma_raw);
  out.sigma = std::exp(out.sigma_raw);

  double flow[6];
  mlp_eval(store, blocks.flow, chi, flow);
  for (int i = 0; i < 6; ++i) out.flow[i] = flow[i];
  return out;
}

FieldOutput field_forward(const ParamStore& store, const FieldBlocks& blocks, const FieldConfig& cfg,
                          const Eigen::Vector3d& x, double t, const Eigen::Vector3d& d, double tau,
                          Rng* rng) {
  const double noise = rng != nullptr ? rng->gumbel() - rng->gumbel() : 0.0;
  return field_forward_noise(store, blocks, cfg, x, t, d, tau, noise);
}

WarpedOccupancy warped_occupancy(const ParamStore& store, const FieldBlocks& blocks, const FieldConfig& cfg,
                                 const Eigen::Vector3d& x, double t,
                                 const Eigen::Matrix<double, 6, 1>& flow, double dt, double tau, Rng* rng) {
  if (!(dt > 0.0)) throw DomainError("warped_occupancy: dt must be positive");
  WarpedOccupancy out;
  double chi[kMaxWidth];
  if (t - dt >= -1e-12) {
    const double logit = alpha_logit_at(store, blocks, cfg, x + flow.head<3>(), std::max(0.0, t - dt), chi);
    out.prev = gumbel_sigmoid(logit, tau, rng);
    out.has_prev = true;
  }
  if (t + dt <= 1.0 + 1e-12) {
    const double logit = alpha_logit_at(store, blocks, cfg, x + flow.tail<3>(), std::min(1.0, t + dt), chi);
    out.next = gumbel_sigmoid(logit, tau, rng);
    out.has_next = true;
  }
  return out;
}

double render_power(double alpha, double sigma, double delta_m) {
  if (!(sigma > 0.0)) throw DomainError("render_power: sigma must be positive");
  if (!(delta_m > 0.0)) throw DomainError("render_power: delta must be positive");
  return alpha * power_db(sigma, delta_m);
}

Eigen::Vector3d bin_world_point(const Pose& pose, const PolarGeometry& geom, int beam, int bin, double scale) {
  const Vec3 local = scale * bin_to_local(beam, bin, geom);
  return local_to_world(local, pose);
}

namespace {

RangeAzimuthScan render_common(const PointField& f, const Pose& pose, double t, const PolarGeometry& geom,
                               double scale, bool parallel) {
  geom.validate();
  pose.validate();
  if (!(scale > 0.0)) throw DomainError("render_scan: scale must be positive");
  RangeAzimuthScan scan;
  scan.geometry = geom;
  scan.timestamp = t;
  scan.values.assign(static_cast<std::size_t>(geom.bins_total()), 0.0f);

#pragma omp parallel for schedule(static) num_threads(parallel ? worker_count() : 1)
  for (int beam = 0; beam < geom.n_theta; ++beam) {
    for (int bin = 0; bin < geom.n_delta; ++bin) {
      const Vec3 x = bin_world_point(pose, geom, beam, bin, scale);
      const Vec3 d = view_direction(x, pose.translation);
      const auto [alpha, sigma] = f(x, t, d);
      scan.at(beam, bin) = static_cast<float>(render_power(alpha, sigma, geom.bin_range(bin)));
    }
  }
  return scan;
}

}  // namespace

RangeAzimuthScan render_scan_with(const PointField& f, const Pose& pose, double t, const PolarGeometry& geom,
                                  double scale) {
  return render_common(f, pose, t, geom, scale, true);
}

RangeAzimuthScan render_scan_with_serial(const PointField& f, const Pose& pose, double t,
                                         const PolarGeometry& geom, double scale) {
  return render_common(f, pose, t, geom, scale, false);
}

namespace {

PointField neural_point_field(const ParamStore& store, const FieldBlocks& blocks, const FieldConfig& cfg) {
  return [&store, &blocks, &cfg](const Eigen::Vector3d& x, double t, const Eigen::Vector3d& d) {
    const FieldOutput out = field_forward(store, blocks, cfg, x, t, d, cfg.tau_final, nullptr);
    return std::pair<double, double>(out.alpha, out.sigma);
  };
}

}  // namespace

RangeAzimuthScan render_scan(const ParamStore& store, const FieldBlocks& blocks, const FieldConfig& cfg,
                             const Pose& pose, double t, const PolarGeometry& geom, double scale) {
  return render_common(neural_point_field(store, blocks, cfg), pose, t, geom, scale, true);
}

RangeAzimuthScan render_scan_serial(const ParamStore& store, const FieldBlocks& blocks, const FieldConfig& cfg,
                                    const Pose& pose, double t, const PolarGeometry& geom, double scale) {
  return render_common(neural_point_field(store, blocks, cfg), pose, t, geom, scale, false);
}

namespace {

/// Shared chi trunk on the tape from an already-recorded position node.
NodeId tape_chi(Tape& tape, const FieldBlocks& blocks, const FieldConfig& cfg, NodeId x, double t) {
  const NodeId hash = tape.hash_encode(x, blocks.hash_spec(cfg));
  if (!cfg.time_enabled) return tape_mlp(tape, blocks.chi, hash);
  const NodeId time_feat = tape_mlp(tape, blocks.time, tape.sinusoid(tape.input_scalar(t), cfg.time_frequencies));
  return tape_mlp(tape, blocks.chi, tape.concat(hash, time_feat));
}

}  // namespace

FieldNodes tape_field(Tape& tape, const FieldBlocks& blocks, const FieldConfig& cfg, const Eigen::Vector3d& x,
                      double t, const Eigen::Vector3d& d, double tau, double gumbel_noise) {
  if (cfg.time_enabled) require_time_range(t);
  const double xv[3] = {x.x(), x.y(), x.z()};
  FieldNodes nodes;
  nodes.chi = tape_chi(tape, blocks, cfg, tape.input(xv), t);
  const NodeId logit = tape_mlp(tape, blocks.alpha, nodes.chi);
  nodes.alpha = tape.sigmoid_t(logit, {&gumbel_noise, 1}, tau);
  const std::vector<double> sh = sh_encode(d, cfg.sh_degree);
  nodes.sigma_raw = tape_mlp(tape, blocks.sigma, tape.concat(nodes.chi, tape.input(sh)));
  nodes.flow = tape_mlp(tape, blocks.flow, nodes.chi);
  return nodes;
}

NodeId tape_alpha_at(Tape& tape, const FieldBlocks& blocks, const FieldConfig& cfg, NodeId x, double t,
                     double tau, double gumbel_noise) {
  const NodeId logit = tape_mlp(tape, blocks.alpha, tape_chi(tape, blocks, cfg, x, t));
  return tape.sigmoid_t(logit, {&gumbel_noise, 1}, tau);
}

NodeId tape_render_bin(Tape& tape, const FieldNodes& nodes, double delta_m) {
  return tape.render_power_raw(nodes.alpha, nodes.sigma_raw, delta_m);
}

void save_checkpoint(const std::filesystem::path& dir, const ParamStore& store, const FieldConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "field.json", std::ios::binary);
  if (!out) throw IoError("save_checkpoint: cannot write " + (dir / "field.json").string());
  out << field_config_to_json(cfg);
  if (!out) throw IoError("save_checkpoint: write failed for field.json");
  out.close();
  store.save(dir);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "field.json", std::ios::binary);
  if (!in) throw IoError("load_checkpoint: cannot open " + (dir / "field.json").string());
  std::string text(std::istreambuf_iterator<char>(in), {});
  Checkpoint ckpt{ParamStore::load(dir), field_config_from_json(text)};
  return ckpt;
}

}  // namespace rf4d::field
