#include "rf4d/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>

#include "json.hpp"

namespace rf4d::train {
namespace {

using nlohmann::json;

constexpr double kTimeEps = 1e-12;

bool prev_present(double t, double dt) { return t - dt >= -kTimeEps; }
bool next_present(double t, double dt) { return t + dt <= 1.0 + kTimeEps; }

double clamp01(double t) { return std::clamp(t, 0.0, 1.0); }

/// Mirrors the tape's fused render op bitwise, staying in log space so an
/// extreme raw head output cannot overflow through exp.
double power_from_raw(double alpha, double sigma_raw, double delta_m) {
  return alpha * (sigma_raw - 2.0 * std::log(delta_m)) / std::numbers::ln10;
}

std::vector<SampleNoise> zero_noise(std::size_t n) { return std::vector<SampleNoise>(n); }

void check_noise(std::size_t samples, std::span<const SampleNoise> noise) {
  if (!noise.empty() && noise.size() != samples)
    throw ValidationError("train: noise span must be empty or match the sample count");
}

std::string loss_field(double v) {
  if (std::isfinite(v)) return std::to_string(v);
  return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

void dump_diagnostic(const std::filesystem::path& path, int iteration, double lr, double tau,
                     const LossBreakdown& lb, std::span<const BinSample> samples) {
  json j;
  j["iteration"] = iteration;
  j["lr"] = lr;
  j["tau"] = tau;
  j["losses"] = {{"l_rt", loss_field(lb.l_rt)}, {"l_oc", loss_field(lb.l_oc)}, {"l_p", loss_field(lb.l_p)},
                 {"l_m", loss_field(lb.l_m)},   {"total", loss_field(lb.total)}};
  json batch = json::array();
  for (const BinSample& s : samples) {
    batch.push_back({{"frame", s.frame},
                     {"beam", s.beam},
                     {"bin", s.bin},
                     {"t", s.t},
                     {"target", s.target},
                     {"world", {s.world.x(), s.world.y(), s.world.z()}}});
  }
  j["batch"] = std::move(batch);
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

}  // namespace

void TrainConfig::validate() const {
  if (iterations < 1) throw ValidationError("TrainConfig: iterations must be >= 1");
  if (frames_per_batch < 1) throw ValidationError("TrainConfig: frames_per_batch must be >= 1");
  if (bins_per_frame < 1) throw ValidationError("TrainConfig: bins_per_frame must be >= 1");
  if (lambda_oc < 0 || lambda_p < 0 || lambda_m < 0)
    throw ValidationError("TrainConfig: loss weights must be non-negative");
  if (dt < 0) throw ValidationError("TrainConfig: dt must be positive (or 0 to derive)");
  if (checkpoint_every < 0) throw ValidationError("TrainConfig: checkpoint_every must be >= 0");
  if (!(lr0 > 0) || !(lr_final > 0)) throw ValidationError("TrainConfig: learning rates must be positive");
}

double resolved_dt(const TrainConfig& cfg, int frames) {
  if (cfg.dt > 0) return cfg.dt;
  if (frames < 2) throw ValidationError("resolved_dt: deriving dt needs at least 2 frames");
  return 1.0 / (frames - 1);
}

std::string train_config_to_json(const TrainConfig& cfg) {
  json j;
  j["iterations"] = cfg.iterations;
  j["frames_per_batch"] = cfg.frames_per_batch;
  j["bins_per_frame"] = cfg.bins_per_frame;
  j["lambda_oc"] = cfg.lambda_oc;
  j["lambda_p"] = cfg.lambda_p;
  j["lambda_m"] = cfg.lambda_m;
  j["dt"] = cfg.dt;
  j["seed"] = cfg.seed;
  j["checkpoint_every"] = cfg.checkpoint_every;
  j["lr0"] = cfg.lr0;
  j["lr_final"] = cfg.lr_final;
  j["holdout_frames"] = cfg.holdout_frames;
  return j.dump(2) + "\n";
}

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("train config: malformed JSON: ") + e.what());
  }
  TrainConfig cfg;
  auto as = [&j](const char* key, auto& into) {
    if (!j.contains(key)) throw FormatError(std::string("train config: missing key '") + key + "'");
    try {
      into = j.at(key).get<std::remove_reference_t<decltype(into)>>();
    } catch (const json::exception& e) {
      throw FormatError(std::string("train config: bad value for '") + key + "': " + e.what());
    }
  };
  as("iterations", cfg.iterations);
  as("frames_per_batch", cfg.frames_per_batch);
  as("bins_per_frame", cfg.bins_per_frame);
  as("lambda_oc", cfg.lambda_oc);
  as("lambda_p", cfg.lambda_p);
  as("lambda_m", cfg.lambda_m);
  as("dt", cfg.dt);
  as("seed", cfg.seed);
  as("checkpoint_every", cfg.checkpoint_every);
  as("lr0", cfg.lr0);
  as("lr_final", cfg.lr_final);
  as("holdout_frames", cfg.holdout_frames);
  cfg.validate();
  return cfg;
}

std::vector<SampleNoise> draw_noise(int n, Rng& rng) {
  std::vector<SampleNoise> out(static_cast<std::size_t>(n));
  for (SampleNoise& s : out) {
    s.center = rng.gumbel() - rng.gumbel();
    s.prev = rng.gumbel() - rng.gumbel();
    s.next = rng.gumbel() - rng.gumbel();
  }
  return out;
}

std::vector<BinSample> sample_bins(const dataio::SequenceBundle& bundle, const dataio::ScaleInfo& scale,
                                   const TrainConfig& cfg, Rng& rng) {
  const PolarGeometry& geom = bundle.geometry;
  const int total = geom.bins_total();
  if (cfg.bins_per_frame > total)
    throw ValidationError("sample_bins: bins_per_frame " + std::to_string(cfg.bins_per_frame) +
                          " exceeds bins per frame " + std::to_string(total));

  std::vector<int> eligible;
  for (int f = 0; f < bundle.frames(); ++f)
    if (std::find(cfg.holdout_frames.begin(), cfg.holdout_frames.end(), f) == cfg.holdout_frames.end())
      eligible.push_back(f);
  if (eligible.empty()) throw ValidationError("sample_bins: every frame is held out");

  std::vector<BinSample> out;
  out.reserve(static_cast<std::size_t>(cfg.frames_per_batch) * cfg.bins_per_frame);
  std::vector<int> order(static_cast<std::size_t>(total));
  for (int draw = 0; draw < cfg.frames_per_batch; ++draw) {
    const int pick = std::min(static_cast<int>(rng.uniform() * eligible.size()),
                              static_cast<int>(eligible.size()) - 1);
    const int frame = eligible[static_cast<std::size_t>(pick)];
    const Pose& pose = bundle.poses[static_cast<std::size_t>(frame)];
    const RangeAzimuthScan& scan = bundle.scans[static_cast<std::size_t>(frame)];

    // partial Fisher-Yates: the first bins_per_frame entries are a uniform
    // draw without replacement
    std::iota(order.begin(), order.end(), 0);
    for (int i = 0; i < cfg.bins_per_frame; ++i) {
      const int left = total - i;
      const int j = i + std::min(static_cast<int>(rng.uniform() * left), left - 1);
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);

      BinSample s;
      s.frame = frame;
      s.beam = order[static_cast<std::size_t>(i)] / geom.n_delta;
      s.bin = order[static_cast<std::size_t>(i)] % geom.n_delta;
      s.world = field::bin_world_point(pose, geom, s.beam, s.bin, scale.scale);
      s.direction = view_direction(s.world, pose.translation);
      s.range_m = geom.bin_range(s.bin);
      s.t = bundle.timestamps[static_cast<std::size_t>(frame)];
      s.target = static_cast<double>(scan.at(s.beam, s.bin));
      out.push_back(s);
    }
  }
  return out;
}

double loss_rt(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.size() != targets.size() || predictions.empty())
    throw ValidationError("loss_rt: need equally many predictions and targets");
  double acc = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double e = predictions[i] - targets[i];
    acc += e * e;
  }
  return acc / predictions.size();
}

double loss_oc(std::span<const OcTriple> triples) {
  if (triples.empty()) throw ValidationError("loss_oc: need at least one sample");
  double acc = 0.0;
  for (const OcTriple& tr : triples) {
    if (tr.has_prev) acc += (tr.alpha - tr.prev) * (tr.alpha - tr.prev);
    if (tr.has_next) acc += (tr.alpha - tr.next) * (tr.alpha - tr.next);
  }
  return acc / triples.size();
}

double loss_p(std::span<const double> alphas) {
  if (alphas.empty()) throw ValidationError("loss_p: need at least one sample");
  double acc = 0.0;
  for (double a : alphas) acc += a;
  return acc / alphas.size();
}

double loss_m(std::span<const Eigen::Matrix<double, 6, 1>> flows) {
  if (flows.empty()) throw ValidationError("loss_m: need at least one sample");
  double acc = 0.0;
  for (const auto& f : flows) acc += f.head<3>().norm() + f.tail<3>().norm();
  return acc / flows.size();
}

LossBreakdown eval_losses(const ParamStore& store, const field::FieldBlocks& blocks,
                          const field::FieldConfig& fcfg, std::span<const BinSample> samples,
                          const TrainConfig& cfg, double dt, double tau, std::span<const SampleNoise> noise) {
  if (samples.empty()) throw ValidationError("eval_losses: need at least one sample");
  if (!(dt > 0)) throw DomainError("eval_losses: dt must be positive");
  check_noise(samples.size(), noise);
  const std::vector<SampleNoise> zeros = noise.empty() ? zero_noise(samples.size()) : std::vector<SampleNoise>{};
  const SampleNoise* nz = noise.empty() ? zeros.data() : noise.data();

  std::vector<double> preds, targets, alphas;
  std::vector<OcTriple> triples;
  std::vector<Eigen::Matrix<double, 6, 1>> flows;
  preds.reserve(samples.size());
  targets.reserve(samples.size());
  alphas.reserve(samples.size());
  triples.reserve(samples.size());
  flows.reserve(samples.size());

  for (std::size_t i = 0; i < samples.size(); ++i) {
    const BinSample& s = samples[i];
    const field::FieldOutput out =
        field::field_forward_noise(store, blocks, fcfg, s.world, s.t, s.direction, tau, nz[i].center);
    preds.push_back(power_from_raw(out.alpha, out.sigma_raw, s.range_m));
    targets.push_back(s.target);
    alphas.push_back(out.alpha);
    flows.push_back(out.flow);

    OcTriple tr;
    tr.alpha = out.alpha;
    if (prev_present(s.t, dt)) {
      tr.prev = field::occupancy_at(store, blocks, fcfg, s.world + out.flow_prev(), clamp01(s.t - dt), tau,
                                    nz[i].prev);
      tr.has_prev = true;
    }
    if (next_present(s.t, dt)) {
      tr.next = field::occupancy_at(store, blocks, fcfg, s.world + out.flow_next(), clamp01(s.t + dt), tau,
                                    nz[i].next);
      tr.has_next = true;
    }
    triples.push_back(tr);
  }

  LossBreakdown lb;
  lb.l_rt = loss_rt(preds, targets);
  lb.l_oc = loss_oc(triples);
  lb.l_p = loss_p(alphas);
  lb.l_m = loss_m(flows);
  lb.total = lb.l_rt + cfg.lambda_oc * lb.l_oc + cfg.lambda_p * lb.l_p + cfg.lambda_m * lb.l_m;
  return lb;
}

TapeLosses tape_losses(Tape& tape, const field::FieldBlocks& blocks, const field::FieldConfig& fcfg,
                       std::span<const BinSample> samples, const TrainConfig& cfg, double dt, double tau,
                       std::span<const SampleNoise> noise) {
  if (samples.empty()) throw ValidationError("tape_losses: need at least one sample");
  if (!(dt > 0)) throw DomainError("tape_losses: dt must be positive");
  check_noise(samples.size(), noise);
  const std::vector<SampleNoise> zeros = noise.empty() ? zero_noise(samples.size()) : std::vector<SampleNoise>{};
  const SampleNoise* nz = noise.empty() ? zeros.data() : noise.data();

  std::vector<NodeId> rt_terms, oc_terms, alpha_terms, m_terms;
  rt_terms.reserve(samples.size());
  oc_terms.reserve(samples.size() * 2);
  alpha_terms.reserve(samples.size());
  m_terms.reserve(samples.size());

  for (std::size_t i = 0; i < samples.size(); ++i) {
    const BinSample& s = samples[i];
    const field::FieldNodes nodes = field::tape_field(tape, blocks, fcfg, s.world, s.t, s.direction, tau,
                                                      nz[i].center);
    const NodeId pred = field::tape_render_bin(tape, nodes, s.range_m);
    rt_terms.push_back(tape.square(tape.sub(pred, tape.input_scalar(s.target))));
    alpha_terms.push_back(nodes.alpha);
    m_terms.push_back(tape.add(tape.norm2(tape.slice(nodes.flow, 0, 3)), tape.norm2(tape.slice(nodes.flow, 3, 3))));

    // gradients flow through both the center and the warped branch
    const NodeId xin = tape.input(std::span<const double>(s.world.data(), 3));
    if (prev_present(s.t, dt)) {
      const NodeId warped = tape.add(xin, tape.slice(nodes.flow, 0, 3));
      const NodeId prev = field::tape_alpha_at(tape, blocks, fcfg, warped, clamp01(s.t - dt), tau, nz[i].prev);
      oc_terms.push_back(tape.square(tape.sub(nodes.alpha, prev)));
    }
    if (next_present(s.t, dt)) {
      const NodeId warped = tape.add(xin, tape.slice(nodes.flow, 3, 3));
      const NodeId next = field::tape_alpha_at(tape, blocks, fcfg, warped, clamp01(s.t + dt), tau, nz[i].next);
      oc_terms.push_back(tape.square(tape.sub(nodes.alpha, next)));
    }
  }

  TapeLosses out;
  out.l_rt = tape.mean_many(rt_terms);
  // mean over samples, not over recorded sides: absent sides contribute 0
  out.l_oc = oc_terms.empty() ? tape.input_scalar(0.0)
                              : tape.scale(tape.mean_many(oc_terms),
                                           static_cast<double>(oc_terms.size()) / samples.size());
  out.l_p = tape.mean_many(alpha_terms);
  out.l_m = tape.mean_many(m_terms);
  out.total = tape.add(tape.add(out.l_rt, tape.scale(out.l_oc, cfg.lambda_oc)),
                       tape.add(tape.scale(out.l_p, cfg.lambda_p), tape.scale(out.l_m, cfg.lambda_m)));
  return out;
}

void write_scale(const dataio::ScaleInfo& scale, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "scale.json");
  if (!out) throw IoError("write_scale: cannot write " + (dir / "scale.json").string());
  json j;
  j["scale"] = scale.scale;
  j["extent_m"] = scale.extent_m;
  out << j.dump(2) << "\n";
}

dataio::ScaleInfo read_scale(const std::filesystem::path& dir) {
  std::ifstream in(dir / "scale.json");
  if (!in) throw IoError("read_scale: cannot open " + (dir / "scale.json").string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(std::string("scale.json: ") + e.what());
  }
  dataio::ScaleInfo s;
  try {
    s.scale = j.at("scale").get<double>();
    s.extent_m = j.at("extent_m").get<double>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("scale.json: ") + e.what());
  }
  if (!(s.scale > 0) || !(s.extent_m > 0)) throw ValidationError("scale.json: entries must be positive");
  return s;
}

TrainResult train(const dataio::SequenceBundle& bundle, const field::FieldConfig& fcfg, const TrainConfig& cfg,
                  const std::filesystem::path& run_dir, const std::filesystem::path& resume_from) {
  cfg.validate();
  fcfg.validate();
  bundle.validate();
  for (int f : cfg.holdout_frames)
    if (f < 0 || f >= bundle.frames())
      throw ValidationError("train: holdout frame " + std::to_string(f) + " out of range");

  auto [norm, scale] = dataio::normalize_coordinates(bundle);
  const double dt = resolved_dt(cfg, norm.frames());
  std::filesystem::create_directories(run_dir);

  TrainResult result;
  result.field_config = fcfg;
  result.scale = scale;
  int start = 0;
  if (resume_from.empty()) {
    Rng reg_rng(derive_seed(cfg.seed, 1));
    result.blocks = field::register_field(result.store, fcfg, reg_rng);
  } else {
    field::Checkpoint ckpt = field::load_checkpoint(resume_from);
    if (field::field_config_to_json(ckpt.config) != field::field_config_to_json(fcfg))
      throw ValidationError("train: resume checkpoint was trained with a different field config");
    const dataio::ScaleInfo saved = read_scale(resume_from);
    if (saved.scale != scale.scale || saved.extent_m != scale.extent_m)
      throw ValidationError("train: resume checkpoint scale does not match the sequence");
    if (ckpt.store.step() >= static_cast<std::uint64_t>(cfg.iterations))
      throw ValidationError("train: checkpoint at step " + std::to_string(ckpt.store.step()) +
                            " already reached the requested " + std::to_string(cfg.iterations) + " iterations");
    start = static_cast<int>(ckpt.store.step());
    result.store = std::move(ckpt.store);
    result.blocks = field::resolve_field(result.store, fcfg);
  }

  std::ofstream csv(run_dir / "loss_log.csv");
  if (!csv) throw IoError("train: cannot write " + (run_dir / "loss_log.csv").string());
  csv << "iteration,lr,l_rt,l_oc,l_p,l_m,total\n";

  auto save = [&](const std::filesystem::path& dir) {
    field::save_checkpoint(dir, result.store, fcfg);
    write_scale(scale, dir);
  };

  result.log.reserve(static_cast<std::size_t>(cfg.iterations - start));
  char line[256];
  for (int it = start; it < cfg.iterations; ++it) {
    const double tau = field::tau_at(fcfg, it, cfg.iterations);
    const double lr = diffcore::lr_schedule(it, cfg.iterations, cfg.lr0, cfg.lr_final);
    // one stream per iteration, so a run is reproducible from (seed, it)
    Rng iter_rng(derive_seed(cfg.seed, 0x100000000ULL + static_cast<std::uint64_t>(it)));
    const std::vector<BinSample> samples = sample_bins(norm, scale, cfg, iter_rng);
    const std::vector<SampleNoise> noise = draw_noise(static_cast<int>(samples.size()), iter_rng);

    Tape tape(result.store);
    const TapeLosses nodes = tape_losses(tape, result.blocks, fcfg, samples, cfg, dt, tau, noise);
    LossBreakdown lb;
    lb.l_rt = tape.scalar(nodes.l_rt);
    lb.l_oc = tape.scalar(nodes.l_oc);
    lb.l_p = tape.scalar(nodes.l_p);
    lb.l_m = tape.scalar(nodes.l_m);
    lb.total = tape.scalar(nodes.total);
    if (!std::isfinite(lb.total) || !std::isfinite(lb.l_rt) || !std::isfinite(lb.l_oc) ||
        !std::isfinite(lb.l_p) || !std::isfinite(lb.l_m)) {
      const auto diag = run_dir / "diagnostic.json";
      dump_diagnostic(diag, it + 1, lr, tau, lb, samples);
      throw NumericError("train: non-finite loss at iteration " + std::to_string(it + 1) +
                         "; batch dumped to " + diag.string());
    }

    tape.backward(nodes.total);
    result.store.adam_step(lr);
    result.log.push_back(lb);
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", it + 1, lr, lb.l_rt, lb.l_oc,
                  lb.l_p, lb.l_m, lb.total);
    csv << line;

    if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 && it + 1 < cfg.iterations) {
      char name[32];
      std::snprintf(name, sizeof name, "checkpoint_%06d", it + 1);
      save(run_dir / name);
    }
  }
  save(run_dir / "checkpoint_final");
  return result;
}

}  // namespace rf4d::train
