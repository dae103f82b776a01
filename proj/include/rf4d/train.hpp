#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "rf4d/dataio.hpp"
#include "rf4d/field.hpp"

namespace rf4d::train {

using diffcore::NodeId;
using diffcore::ParamStore;
using diffcore::Tape;

/// Loss weights and optimization schedule.
struct TrainConfig {
  int iterations = 15000;
  int frames_per_batch = 4;
  int bins_per_frame = 1024;
  double lambda_oc = 0.1;
  double lambda_p = 0.01;
  double lambda_m = 0.01;
  double dt = 0.0;  // normalized adjacent-frame interval; 0 derives 1/(frames-1)
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0: final checkpoint only
  double lr0 = 1e-4;
  double lr_final = 1e-5;
  std::vector<int> holdout_frames;  // never sampled; for held-out evaluation

  void validate() const;
};

/// cfg.dt, or one frame interval 1/(frames - 1) when cfg.dt is the derive
/// sentinel 0.
double resolved_dt(const TrainConfig& cfg, int frames);

/// JSON round-trip of every TrainConfig field. Parsing throws FormatError
/// for malformed or missing content and validates the result.
std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

/// One iteration's loss terms; total carries the lambda weights.
struct LossBreakdown {
  double l_rt = 0.0;
  double l_oc = 0.0;
  double l_p = 0.0;
  double l_m = 0.0;
  double total = 0.0;
};

/// One sampled bin with everything the objective needs.
struct BinSample {
  int frame = 0;
  int beam = 0;
  int bin = 0;
  Eigen::Vector3d world = Eigen::Vector3d::Zero();      // bin center, normalized coords
  Eigen::Vector3d direction = Eigen::Vector3d::UnitX();  // unit view direction
  double range_m = 0.0;  // metric range delta
  double t = 0.0;        // frame timestamp
  double target = 0.0;   // measured power at the bin
};

/// Presampled Gumbel noise (g1 - g2) for a sample's three occupancy
/// queries: the bin itself and the two warped neighbors.
struct SampleNoise {
  double center = 0.0;
  double prev = 0.0;
  double next = 0.0;
};
std::vector<SampleNoise> draw_noise(int n, Rng& rng);

/// Draws cfg.frames_per_batch frames uniformly with replacement (holdout
/// frames excluded), then cfg.bins_per_frame bins uniformly without
/// replacement within each draw. The bundle must carry normalized poses;
/// `scale` maps the metric bin offsets into the same coordinates.
/// Throws ValidationError when bins_per_frame exceeds the bins of a frame
/// or no frame is eligible.
std::vector<BinSample> sample_bins(const dataio::SequenceBundle& bundle, const dataio::ScaleInfo& scale,
                                   const TrainConfig& cfg, Rng& rng);

/// Mean squared rendering error.
double loss_rt(std::span<const double> predictions, std::span<const double> targets);

/// One occupancy consistency triple; an absent side contributes zero
/// without changing the divisor.
struct OcTriple {
  double alpha = 0.0;
  double prev = 0.0;
  double next = 0.0;
  bool has_prev = false;
  bool has_next = false;
};
double loss_oc(std::span<const OcTriple> triples);

/// Mean occupancy.
double loss_p(std::span<const double> alphas);

/// Mean of the backward plus forward offset norms.
double loss_m(std::span<const Eigen::Matrix<double, 6, 1>> flows);

/// Plain-path batch objective with frozen noise; mirrors tape_losses so
/// finite differences can check the tape gradient. An empty noise span
/// means all zeros (deterministic occupancy).
LossBreakdown eval_losses(const ParamStore& store, const field::FieldBlocks& blocks,
                          const field::FieldConfig& fcfg, std::span<const BinSample> samples,
                          const TrainConfig& cfg, double dt, double tau, std::span<const SampleNoise> noise);

/// The four loss terms and the weighted total recorded on a tape.
struct TapeLosses {
  NodeId l_rt;
  NodeId l_oc;
  NodeId l_p;
  NodeId l_m;
  NodeId total;
};
TapeLosses tape_losses(Tape& tape, const field::FieldBlocks& blocks, const field::FieldConfig& fcfg,
                       std::span<const BinSample> samples, const TrainConfig& cfg, double dt, double tau,
                       std::span<const SampleNoise> noise);

/// scale.json in a checkpoint directory, so rendering from the checkpoint
/// can reproduce the run's coordinate mapping.
void write_scale(const dataio::ScaleInfo& scale, const std::filesystem::path& dir);
dataio::ScaleInfo read_scale(const std::filesystem::path& dir);

struct TrainResult {
  ParamStore store;
  field::FieldBlocks blocks;
  field::FieldConfig field_config;
  dataio::ScaleInfo scale;
  std::vector<LossBreakdown> log;
};

/// Full optimization run: per iteration sample, stochastic forward,
/// backward, Adam step under the exponential lr schedule and linear tau
/// anneal. Writes loss_log.csv and checkpoint_final (plus periodic
/// checkpoint_NNNNNN at cfg.checkpoint_every) under run_dir; every
/// checkpoint carries scale.json. A non-finite loss aborts with
/// NumericError after writing run_dir/diagnostic.json.
///
/// A non-empty resume_from loads that checkpoint (parameters, optimizer
/// moments, step counter) and continues from its iteration toward
/// cfg.iterations; schedules and RNG streams depend only on the iteration
/// index, so a resumed run retraces the uninterrupted one exactly. The
/// checkpoint must match the requested field config and the sequence's
/// coordinate scale, and must not already have reached cfg.iterations.
TrainResult train(const dataio::SequenceBundle& bundle, const field::FieldConfig& fcfg, const TrainConfig& cfg,
                  const std::filesystem::path& run_dir, const std::filesystem::path& resume_from = {});

}  // namespace rf4d::train
