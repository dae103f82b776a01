#pragma once

#include <filesystem>
#include <functional>

#include "rf4d/core.hpp"
#include "rf4d/mlp.hpp"
#include "rf4d/params.hpp"
#include "rf4d/rng.hpp"
#include "rf4d/tape.hpp"

namespace rf4d::field {

using diffcore::NodeId;
using diffcore::ParamStore;
using diffcore::Tape;

/// Multi-resolution hash grid shape. Level l has resolution
/// floor(n_min * growth^l); all levels share table_size rows of
/// `features` reals.
struct HashGridConfig {
  int levels = 8;
  int table_size = 1 << 14;  // power of two
  int features = 2;
  int n_min = 16;
  double growth = 1.5;

  void validate() const;
};

/// Full network architecture. Width vectors are complete MLP layer lists
/// including the (derived) input width, so validate() can cross-check
/// consistency: chi eats hash + time features, the sigma head eats
/// chi + SH features, and alpha/flow eat chi alone.
struct FieldConfig {
  HashGridConfig hash;
  bool time_enabled = true;  // ablation switch: drop the time input entirely
  int time_frequencies = 6;
  std::vector<int> time_widths = {12, 16, 8};
  std::vector<int> chi_widths = {24, 32, 32};
  std::vector<int> alpha_widths = {32, 32, 1};
  std::vector<int> sigma_widths = {48, 32, 1};
  std::vector<int> flow_widths = {32, 32, 6};
  int sh_degree = 3;
  double tau_start = 1.0;
  double tau_final = 0.3;

  int hash_features() const { return hash.levels * hash.features; }
  int time_features() const { return time_enabled ? time_widths.back() : 0; }
  int sh_features() const { return (sh_degree + 1) * (sh_degree + 1); }
  int chi_width() const { return chi_widths.back(); }
  void validate() const;
};

/// Linear Gumbel temperature anneal from tau_start to tau_final.
double tau_at(const FieldConfig& cfg, int step, int total_steps);

std::string field_config_to_json(const FieldConfig& cfg);
FieldConfig field_config_from_json(const std::string& text);

/// Resolved parameter-block ids for one registered field.
struct FieldBlocks {
  std::vector<int> hash_levels;
  std::vector<int> time;   // [W0, b0, ...]; empty when time is disabled
  std::vector<int> chi;
  std::vector<int> alpha;
  std::vector<int> sigma;
  std::vector<int> flow;

  diffcore::HashTapeSpec hash_spec(const FieldConfig& cfg) const;
};

/// Registers all blocks: hash rows U(-1e-4, 1e-4), MLP hidden layers
/// He-uniform, head output layers zero so the field starts neutral
/// (alpha = 0.5, sigma = 1, flow = 0).
FieldBlocks register_field(ParamStore& store, const FieldConfig& cfg, Rng& rng);

/// Block lookup for an already-registered field (e.g. after checkpoint load).
FieldBlocks resolve_field(const ParamStore& store, const FieldConfig& cfg);

struct FieldOutput {
  double alpha = 0.0;        // occupancy in (0,1)
  double sigma = 0.0;        // RCS, positive
  double sigma_raw = 0.0;    // log RCS (head output before exp)
  Eigen::Matrix<double, 6, 1> flow = Eigen::Matrix<double, 6, 1>::Zero();

  Eigen::Vector3d flow_prev() const { return flow.head<3>(); }
  Eigen::Vector3d flow_next() const { return flow.tail<3>(); }
};

/// Plain hash encoding of a normalized point (clamped outside [-1,1]^3
/// with a warning count on the store). Output length levels * features.
std::vector<double> hash_encode(const ParamStore& store, const FieldBlocks& blocks, const FieldConfig& cfg,
                                const Eigen::Vector3d& x);

/// Sinusoidal time features through the trainable embedding MLP.
/// Throws DomainError outside [0,1] and when time is disabled.
std::vector<double> time_encode(const ParamStore& store, const FieldBlocks& blocks, const FieldConfig& cfg,
                                double t);

/// Real SH basis of a direction expected to be unit length: inputs within
/// 1e-6 of unit norm are normalized silently, anything else throws
/// DomainError.
std::vector<double> sh_encode(const Eigen::Vector3d& d, int degree);

/// Stochastic: sigmoid((logit + g1 - g2)/tau) with standard Gumbel g_i.
/// Deterministic (rng == nullptr): sigmoid(logit/tau).
double gumbel_sigmoid(double logit, double tau, Rng* rng);

/// Full forward pass at (x, t, d). Stochastic occupancy when rng is given,
/// deterministic otherwise. alpha and flow never depend on d.
FieldOutput field_forward(const ParamStore& store, const FieldBlocks& blocks, const FieldConfig& cfg,
                          const Eigen::Vector3d& x, double t, const Eigen::Vector3d& d, double tau,
                          Rng* rng = nullptr);

/// Forward pass with presampled occupancy noise (g1 - g2); mirrors
/// tape_field, so a finite-difference loop can hold the noise fixed.
FieldOutput field_forward_noise(const ParamStore& store, const FieldBlocks& blocks, const FieldConfig& cfg,
                                const Eigen::Vector3d& x, double t, const Eigen::Vector3d& d, double tau,
                                double gumbel_noise);

/// Occupancy alone at (x, t) with presampled noise; the plain-path mirror
/// of tape_alpha_at.
double occupancy_at(const ParamStore& store, const FieldBlocks& blocks, const FieldConfig& cfg,
                    const Eigen::Vector3d& x, double t, double tau, double gumbel_noise);

/// Occupancy of the warped point at the adjacent timestamps. A side whose
/// timestamp would leave [0,1] is marked absent and left at 0.
struct WarpedOccupancy {
  double prev = 0.0;
  double next = 0.0;
  bool has_prev = false;
  bool has_next = false;
};
WarpedOccupancy warped_occupancy(const ParamStore& store, const FieldBlocks& blocks, const FieldConfig& cfg,
                                 const Eigen::Vector3d& x, double t,
                                 const Eigen::Matrix<double, 6, 1>& flow, double dt, double tau,
                                 Rng* rng = nullptr);

/// Radar power rendering alpha * log10(sigma / delta^2); delta in metric
/// meters. Throws DomainError on sigma <= 0 or delta <= 0.
double render_power(double alpha, double sigma, double delta_m);

/// Point field abstraction for rendering: (world point in normalized
/// coordinates, time, unit view direction) -> (alpha, sigma).
using PointField = std::function<std::pair<double, double>(const Eigen::Vector3d&, double, const Eigen::Vector3d&)>;

/// Renders a full range-azimuth map by evaluating a point field at every
/// bin center: local point scaled into normalized coordinates, world point
/// through the (normalized) pose, power via render_power with the bin's
/// metric range.
RangeAzimuthScan render_scan_with(const PointField& f, const Pose& pose, double t, const PolarGeometry& geom,
                                  double scale);
RangeAzimuthScan render_scan_with_serial(const PointField& f, const Pose& pose, double t,
                                         const PolarGeometry& geom, double scale);

/// Neural-field rendering in deterministic mode at tau_final.
RangeAzimuthScan render_scan(const ParamStore& store, const FieldBlocks& blocks, const FieldConfig& cfg,
                             const Pose& pose, double t, const PolarGeometry& geom, double scale);
RangeAzimuthScan render_scan_serial(const ParamStore& store, const FieldBlocks& blocks, const FieldConfig& cfg,
                                    const Pose& pose, double t, const PolarGeometry& geom, double scale);

/// World point of a bin center under a normalized pose: the metric local
/// point is scaled by `scale` before the rigid transform.
Eigen::Vector3d bin_world_point(const Pose& pose, const PolarGeometry& geom, int beam, int bin, double scale);

/// Tape-recorded forward pass for training. Gumbel noise (g1 - g2, or 0
/// for deterministic) is sampled outside the tape. The SH features of d
/// enter as constants: d never depends on parameters.
struct FieldNodes {
  NodeId chi;
  NodeId alpha;
  NodeId sigma_raw;
  NodeId flow;
};
FieldNodes tape_field(Tape& tape, const FieldBlocks& blocks, const FieldConfig& cfg, const Eigen::Vector3d& x,
                      double t, const Eigen::Vector3d& d, double tau, double gumbel_noise);

/// Occupancy at a tape-computed position (for flow-warped queries).
NodeId tape_alpha_at(Tape& tape, const FieldBlocks& blocks, const FieldConfig& cfg, NodeId x, double t,
                     double tau, double gumbel_noise);

/// Rendered power of one bin on the tape: render of the alpha/sigma_raw
/// pair against the bin's metric range.
NodeId tape_render_bin(Tape& tape, const FieldNodes& nodes, double delta_m);

/// Checkpoint: field.json (FieldConfig) + the ParamStore payload.
void save_checkpoint(const std::filesystem::path& dir, const ParamStore& store, const FieldConfig& cfg);
struct Checkpoint {
  ParamStore store;
  FieldConfig config;
};
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace rf4d::field
