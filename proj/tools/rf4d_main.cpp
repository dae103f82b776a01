// rf4d: command-line pipeline frontend.
//
//   synth   scene JSON -> sequence directory + per-frame ground-truth BEV
//   train   sequence  -> checkpoints + loss log
//   render  checkpoint + pose/time -> polar map artifacts (f32, PGM, BEV PGM)
//   eval    checkpoint + sequence -> per-frame PSNR/SSIM/CD/RCD report
//   cfar    sequence -> CFAR detections + the same report schema
//
// Every command writes a manifest.json into its out dir recording the fully
// resolved configuration; re-running with `--config <manifest.json>`
// reproduces the artifacts bit for bit. Exit codes: 0 success, 1
// internal/numeric failure, 2 usage or input error.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rf4d/dataio.hpp"
#include "rf4d/errors.hpp"
#include "rf4d/eval.hpp"
#include "rf4d/field.hpp"
#include "rf4d/synth.hpp"
#include "rf4d/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rf4d;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return text;
}

/// Accepts either a bare config object or a manifest (command + config);
/// a manifest for a different command is a usage error.
json load_config(const fs::path& path, const std::string& command) {
  json j;
  try {
    j = json::parse(slurp(path));
  } catch (const json::exception& e) {
    throw FormatError("config " + path.string() + ": malformed JSON: " + e.what());
  }
  if (!j.is_object()) throw FormatError("config " + path.string() + ": expected a JSON object");
  if (j.contains("command")) {
    if (j.at("command") != command)
      throw ValidationError("config " + path.string() + " belongs to command '" +
                            j.at("command").get<std::string>() + "', not '" + command + "'");
    if (!j.contains("config")) throw FormatError("config " + path.string() + ": manifest lacks a 'config' object");
    j = j.at("config");
  }
  return j;
}

void check_keys(const json& c, std::initializer_list<const char*> allowed, const std::string& command) {
  for (const auto& [key, value] : c.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw FormatError("config: unknown key '" + key + "' for command " + command);
  }
}

/// Every user key must exist in the defaults (recursively), so typos fail
/// loudly instead of silently keeping a default.
void check_subset(const json& user, const json& defaults, const std::string& where) {
  if (!user.is_object()) throw FormatError("config: '" + where + "' must be a JSON object");
  for (const auto& [key, value] : user.items()) {
    if (!defaults.contains(key)) throw FormatError("config: unknown key '" + where + "." + key + "'");
    if (value.is_object() && defaults.at(key).is_object()) check_subset(value, defaults.at(key), where + "." + key);
  }
}

/// Config value applies only when the flag was not given explicitly.
template <typename T>
void take(const json& c, const char* key, T& into, std::size_t explicit_count) {
  if (explicit_count > 0 || !c.contains(key)) return;
  try {
    into = c.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

Pose parse_pose(const std::string& text) {
  double x = 0.0, y = 0.0, yaw = 0.0;
  char tail = 0;
  if (std::sscanf(text.c_str(), "%lf,%lf,%lf%c", &x, &y, &yaw, &tail) != 3)
    throw FormatError("pose '" + text + "' must be x,y,yaw");
  if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(yaw))
    throw ValidationError("pose '" + text + "' must be finite");
  return Pose::planar(x, y, yaw);
}

/// All regular files under dir, sorted, relative, manifest excluded.
json list_outputs(const fs::path& dir) {
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), dir).generic_string();
    if (rel == "manifest.json" || rel == "manifest.json.tmp") continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  return json(files);
}

void write_manifest(const fs::path& out_dir, const std::string& command, const json& config, const json& seeds,
                    const json& inputs, const json& report, double wall_seconds) {
  json m;
  m["command"] = command;
  m["config"] = config;
  m["seeds"] = seeds;
  m["inputs"] = inputs;
  m["outputs"] = list_outputs(out_dir);
  m["report"] = report;
  m["wall_clock_seconds"] = wall_seconds;
  const fs::path tmp = out_dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << m.dump(2) << "\n";
  }
  fs::rename(tmp, out_dir / "manifest.json");
}

void write_f32(const fs::path& path, const std::vector<float>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!out) throw IoError("short write to " + path.string());
}

/// Plain (ASCII) 16-bit PGM; values mapped through [lo, hi]. A zero range
/// renders black.
void write_pgm16(const fs::path& path, const std::vector<float>& values, int rows, int cols, double lo, double hi) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P2\n" << cols << " " << rows << "\n65535\n";
  const double range = hi - lo;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      double g = range > 0.0 ? (static_cast<double>(values[static_cast<std::size_t>(i) * cols + j]) - lo) / range : 0.0;
      g = std::clamp(g, 0.0, 1.0);
      out << static_cast<int>(std::lround(g * 65535.0)) << (j + 1 < cols ? ' ' : '\n');
    }
  }
  if (!out) throw IoError("short write to " + path.string());
}

/// Nearest-bin Cartesian resampling of a polar map in the sensor frame:
/// +x right, +y up, azimuth 0 along +x, counterclockwise.
std::vector<float> polar_to_cart(const RangeAzimuthScan& scan, int n, float background) {
  const PolarGeometry& geom = scan.geometry;
  const double radius = geom.max_range();
  const double cell = 2.0 * radius / n;
  const double beam_step = 2.0 * std::numbers::pi / geom.n_theta;
  std::vector<float> img(static_cast<std::size_t>(n) * n, background);
  for (int i = 0; i < n; ++i) {
    const double y = radius - (i + 0.5) * cell;
    for (int j = 0; j < n; ++j) {
      const double x = -radius + (j + 0.5) * cell;
      const double range = std::hypot(x, y);
      if (range > radius) continue;
      double az = std::atan2(y, x);
      if (az < 0.0) az += 2.0 * std::numbers::pi;
      const int beam = static_cast<int>(std::lround(az / beam_step)) % geom.n_theta;
      const int bin = static_cast<int>(std::lround(range / geom.range_resolution - geom.min_bin - 0.5));
      if (bin < 0 || bin >= geom.n_delta) continue;
      img[static_cast<std::size_t>(i) * n + j] = scan.at(beam, bin);
    }
  }
  return img;
}

std::vector<int> select_frames(const dataio::SequenceBundle& bundle, const std::vector<int>& holdout) {
  if (holdout.empty()) {
    std::vector<int> all(static_cast<std::size_t>(bundle.frames()));
    for (int k = 0; k < bundle.frames(); ++k) all[static_cast<std::size_t>(k)] = k;
    return all;
  }
  for (int k : holdout)
    if (k < 0 || k >= bundle.frames())
      throw IndexError("frame " + std::to_string(k) + " out of range for a " + std::to_string(bundle.frames()) +
                       "-frame sequence");
  return holdout;
}

json mean_or_null(double sum, int n) { return n > 0 ? json(sum / n) : json(nullptr); }

/// Shared CD/RCD-vs-ground-truth report row for eval and cfar.
struct MetricAccumulator {
  json frames = json::array();
  double sum_psnr = 0.0, sum_ssim = 0.0, sum_cd = 0.0, sum_rcd = 0.0;
  int n_img = 0, n_pts = 0;

  void add_row(int frame, json psnr_v, json ssim_v, const BevPointSet& pred, const BevPointSet& gt,
               const Vec2& origin) {
    json row;
    row["frame"] = frame;
    row["psnr"] = psnr_v;
    row["ssim"] = ssim_v;
    if (psnr_v.is_number()) {
      sum_psnr += psnr_v.get<double>();
      sum_ssim += ssim_v.get<double>();
      ++n_img;
    }
    if (pred.points.empty() || gt.points.empty()) {
      row["cd"] = nullptr;
      row["rcd"] = nullptr;
      row["degenerate"] = true;
    } else {
      const double cd = eval::chamfer(pred, gt);
      const double rcd = eval::relative_chamfer(pred, gt, origin);
      row["cd"] = cd;
      row["rcd"] = rcd;
      row["degenerate"] = false;
      sum_cd += cd;
      sum_rcd += rcd;
      ++n_pts;
    }
    frames.push_back(row);
  }

  json report() const {
    json mean;
    mean["psnr"] = mean_or_null(sum_psnr, n_img);
    mean["ssim"] = mean_or_null(sum_ssim, n_img);
    mean["cd"] = mean_or_null(sum_cd, n_pts);
    mean["rcd"] = mean_or_null(sum_rcd, n_pts);
    json r;
    r["frames"] = frames;
    r["mean"] = mean;
    return r;
  }
};

void write_metrics(const fs::path& out_dir, const json& report) {
  std::ofstream out(out_dir / "metrics.json");
  if (!out) throw IoError("cannot write " + (out_dir / "metrics.json").string());
  out << report.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string scene;
  std::string out;
  int frames = 20;
  std::uint64_t seed = 0;
  int gt_samples = 64;
  std::string config;
};

int cmd_synth(const SynthArgs& a) {
  const auto start = std::chrono::steady_clock::now();
  if (a.scene.empty()) throw ValidationError("synth: --scene is required");
  if (a.out.empty()) throw ValidationError("synth: --out is required");
  if (a.frames < 2) throw ValidationError("synth: a sequence needs at least 2 frames");
  if (a.gt_samples < 1) throw ValidationError("synth: gt_samples must be positive");

  const synth::ScenePackage pkg = synth::load_scene_package(a.scene);
  std::vector<Pose> ego;
  ego.reserve(static_cast<std::size_t>(a.frames));
  for (int k = 0; k < a.frames; ++k)
    ego.push_back(synth::ego_pose(pkg.ego, static_cast<double>(k) / (a.frames - 1)));
  const dataio::SequenceBundle bundle = synth::make_sequence(pkg.scene, ego, a.frames, pkg.geometry, a.seed);
  const fs::path out_dir(a.out);
  dataio::write_sequence(bundle, out_dir);
  for (int k = 0; k < a.frames; ++k) {
    const BevPointSet gt = synth::ground_truth_bev(pkg.scene, bundle.timestamps[static_cast<std::size_t>(k)],
                                                   a.gt_samples);
    eval::write_bev_csv(gt, out_dir / ("gt_bev_" + std::to_string(k) + ".csv"));
  }

  json config;
  config["scene"] = a.scene;
  config["out"] = a.out;
  config["frames"] = a.frames;
  config["seed"] = a.seed;
  config["gt_samples"] = a.gt_samples;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(out_dir, "synth", config, json{{"seed", a.seed}}, json::array({a.scene}), json::object(), secs);
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string seq;
  std::string out;
  std::string resume;
  int iters = 0;
  std::uint64_t seed = 0;
  double lambda_oc = 0.0, lambda_p = 0.0, lambda_m = 0.0;
  std::vector<int> holdout;
  std::string config;
};

int cmd_train(const TrainArgs& a, const json& c, const CLI::App* cmd) {
  const auto start = std::chrono::steady_clock::now();
  if (a.seq.empty()) throw ValidationError("train: --seq is required");
  if (a.out.empty()) throw ValidationError("train: --out is required");

  train::TrainConfig tc;
  json tc_json = json::parse(train::train_config_to_json(tc));
  if (c.contains("train")) {
    check_subset(c.at("train"), tc_json, "train");
    tc_json.merge_patch(c.at("train"));
  }
  tc = train::train_config_from_json(tc_json.dump());
  if (cmd->count("--iters") > 0) tc.iterations = a.iters;
  if (cmd->count("--seed") > 0) tc.seed = a.seed;
  if (cmd->count("--lambda-oc") > 0) tc.lambda_oc = a.lambda_oc;
  if (cmd->count("--lambda-p") > 0) tc.lambda_p = a.lambda_p;
  if (cmd->count("--lambda-m") > 0) tc.lambda_m = a.lambda_m;
  if (cmd->count("--holdout") > 0) tc.holdout_frames = a.holdout;

  field::FieldConfig fc;
  if (c.contains("field")) {
    json fc_json = json::parse(field::field_config_to_json(fc));
    check_subset(c.at("field"), fc_json, "field");
    fc_json.merge_patch(c.at("field"));
    fc = field::field_config_from_json(fc_json.dump());
  } else if (!a.resume.empty()) {
    // continuing a run keeps the checkpoint's architecture
    fc = field::field_config_from_json(slurp(fs::path(a.resume) / "field.json"));
  }

  const dataio::SequenceBundle bundle = dataio::read_sequence(a.seq);
  train::train(bundle, fc, tc, a.out, a.resume.empty() ? fs::path() : fs::path(a.resume));

  json config;
  config["seq"] = a.seq;
  config["out"] = a.out;
  config["resume"] = a.resume;
  config["train"] = json::parse(train::train_config_to_json(tc));
  config["field"] = json::parse(field::field_config_to_json(fc));
  json inputs = json::array({a.seq});
  if (!a.resume.empty()) inputs.push_back(a.resume);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(a.out, "train", config, json{{"seed", tc.seed}}, inputs, json::object(), secs);
  return 0;
}

// ---------------------------------------------------------------------------
// render

struct RenderArgs {
  std::string ckpt;
  std::string seq;
  std::string out;
  std::string pose = "0,0,0";
  double time = 0.0;
  int cart_resolution = 0;  // 0 derives 2 * n_delta
  std::string config;
};

int cmd_render(const RenderArgs& a) {
  const auto start = std::chrono::steady_clock::now();
  if (a.ckpt.empty()) throw ValidationError("render: --ckpt is required");
  if (a.seq.empty()) throw ValidationError("render: --seq is required");
  if (a.out.empty()) throw ValidationError("render: --out is required");
  if (!(a.time >= 0.0 && a.time <= 1.0)) throw DomainError("render: --time must lie in [0,1]");

  const field::Checkpoint ckpt = field::load_checkpoint(a.ckpt);
  const dataio::ScaleInfo scale = train::read_scale(a.ckpt);
  const field::FieldBlocks blocks = field::resolve_field(ckpt.store, ckpt.config);
  const dataio::SequenceBundle bundle = dataio::read_sequence(a.seq);

  const Pose pose_m = parse_pose(a.pose);
  Pose pose_n = pose_m;
  pose_n.translation *= scale.scale;
  const RangeAzimuthScan scan =
      field::render_scan(ckpt.store, blocks, ckpt.config, pose_n, a.time, bundle.geometry, scale.scale);

  const fs::path out_dir(a.out);
  fs::create_directories(out_dir);
  write_f32(out_dir / "render.f32", scan.values);

  double lo = scan.values[0], hi = scan.values[0];
  for (float v : scan.values) {
    lo = std::min(lo, static_cast<double>(v));
    hi = std::max(hi, static_cast<double>(v));
  }
  write_pgm16(out_dir / "render.pgm", scan.values, bundle.geometry.n_theta, bundle.geometry.n_delta, lo, hi);
  const int n = a.cart_resolution > 0 ? a.cart_resolution : 2 * bundle.geometry.n_delta;
  write_pgm16(out_dir / "render_cart.pgm", polar_to_cart(scan, n, static_cast<float>(lo)), n, n, lo, hi);

  // a timestamp matching a sequence frame gets a PSNR report against it
  json psnr_v = nullptr, psnr_frame = nullptr;
  for (int k = 0; k < bundle.frames(); ++k) {
    if (std::abs(bundle.timestamps[static_cast<std::size_t>(k)] - a.time) < 1e-9) {
      psnr_v = eval::psnr(scan, bundle.scans[static_cast<std::size_t>(k)]);
      psnr_frame = k;
      break;
    }
  }

  json config;
  config["ckpt"] = a.ckpt;
  config["seq"] = a.seq;
  config["out"] = a.out;
  config["pose"] = a.pose;
  config["time"] = a.time;
  config["cart_resolution"] = n;
  json report;
  report["psnr"] = psnr_v;
  report["psnr_frame"] = psnr_frame;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(out_dir, "render", config, json::object(), json::array({a.ckpt, a.seq}), report, secs);
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string ckpt;
  std::string seq;
  std::string out;
  std::vector<int> holdout;
  int grid_resolution = 128;
  double threshold = 0.5;
  std::string config;
};

int cmd_eval(const EvalArgs& a) {
  const auto start = std::chrono::steady_clock::now();
  if (a.ckpt.empty()) throw ValidationError("eval: --ckpt is required");
  if (a.seq.empty()) throw ValidationError("eval: --seq is required");
  if (a.out.empty()) throw ValidationError("eval: --out is required");

  const field::Checkpoint ckpt = field::load_checkpoint(a.ckpt);
  const dataio::ScaleInfo scale = train::read_scale(a.ckpt);
  const field::FieldBlocks blocks = field::resolve_field(ckpt.store, ckpt.config);
  const dataio::SequenceBundle bundle = dataio::read_sequence(a.seq);
  const std::vector<int> frames = select_frames(bundle, a.holdout);

  const fs::path out_dir(a.out);
  fs::create_directories(out_dir);
  MetricAccumulator acc;
  for (int k : frames) {
    const Pose& pose_m = bundle.poses[static_cast<std::size_t>(k)];
    const double t = bundle.timestamps[static_cast<std::size_t>(k)];
    Pose pose_n = pose_m;
    pose_n.translation *= scale.scale;
    const RangeAzimuthScan rendered =
        field::render_scan(ckpt.store, blocks, ckpt.config, pose_n, t, bundle.geometry, scale.scale);
    const RangeAzimuthScan& gt_scan = bundle.scans[static_cast<std::size_t>(k)];

    const BevPointSet bev = eval::extract_occupancy_bev(ckpt.store, blocks, ckpt.config, pose_m, t,
                                                        bundle.geometry, scale, a.grid_resolution, a.threshold);
    eval::write_bev_csv(bev, out_dir / ("field_bev_" + std::to_string(k) + ".csv"));
    const BevPointSet gt_bev = eval::read_bev_csv(fs::path(a.seq) / ("gt_bev_" + std::to_string(k) + ".csv"),
                                                  BevPointSet::Source::kGroundTruth);
    acc.add_row(k, eval::psnr(rendered, gt_scan), eval::ssim(rendered, gt_scan), bev, gt_bev,
                Vec2(pose_m.translation.x(), pose_m.translation.y()));
  }
  const json report = acc.report();
  write_metrics(out_dir, report);

  json config;
  config["ckpt"] = a.ckpt;
  config["seq"] = a.seq;
  config["out"] = a.out;
  config["holdout"] = a.holdout;
  config["grid_resolution"] = a.grid_resolution;
  config["threshold"] = a.threshold;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(out_dir, "eval", config, json::object(), json::array({a.ckpt, a.seq}), report, secs);
  return 0;
}

// ---------------------------------------------------------------------------
// cfar

struct CfarArgs {
  std::string seq;
  std::string out;
  std::vector<int> holdout;
  std::string config;
};

int cmd_cfar(const CfarArgs& a, const json& c) {
  const auto start = std::chrono::steady_clock::now();
  if (a.seq.empty()) throw ValidationError("cfar: --seq is required");
  if (a.out.empty()) throw ValidationError("cfar: --out is required");

  eval::CfarConfig cc;
  json cc_json = json::parse(eval::cfar_config_to_json(cc));
  if (c.contains("cfar")) {
    check_subset(c.at("cfar"), cc_json, "cfar");
    cc_json.merge_patch(c.at("cfar"));
  }
  cc = eval::cfar_config_from_json(cc_json.dump());

  const dataio::SequenceBundle bundle = dataio::read_sequence(a.seq);
  const std::vector<int> frames = select_frames(bundle, a.holdout);

  const fs::path out_dir(a.out);
  fs::create_directories(out_dir);
  MetricAccumulator acc;
  for (int k : frames) {
    const Pose& pose_m = bundle.poses[static_cast<std::size_t>(k)];
    const BevPointSet dets = eval::cfar_detect(bundle.scans[static_cast<std::size_t>(k)], pose_m, cc);
    eval::write_bev_csv(dets, out_dir / ("cfar_bev_" + std::to_string(k) + ".csv"));
    const BevPointSet gt_bev = eval::read_bev_csv(fs::path(a.seq) / ("gt_bev_" + std::to_string(k) + ".csv"),
                                                  BevPointSet::Source::kGroundTruth);
    acc.add_row(k, nullptr, nullptr, dets, gt_bev, Vec2(pose_m.translation.x(), pose_m.translation.y()));
  }
  const json report = acc.report();
  write_metrics(out_dir, report);

  json config;
  config["seq"] = a.seq;
  config["out"] = a.out;
  config["holdout"] = a.holdout;
  config["cfar"] = json::parse(eval::cfar_config_to_json(cc));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(out_dir, "cfar", config, json::object(), json::array({a.seq}), report, secs);
  return 0;
}

int fail(const std::exception& e, int code) {
  std::fprintf(stderr, "rf4d: %s\n", e.what());
  return code;
}

template <typename Body>
int guarded(Body body) {
  try {
    return body();
  } catch (const DomainError& e) {
    return fail(e, 2);
  } catch (const IndexError& e) {
    return fail(e, 2);
  } catch (const ShapeError& e) {
    return fail(e, 2);
  } catch (const ValidationError& e) {
    return fail(e, 2);
  } catch (const IoError& e) {
    return fail(e, 2);
  } catch (const FormatError& e) {
    return fail(e, 2);
  } catch (const PayloadSizeError& e) {
    return fail(e, 2);
  } catch (const std::exception& e) {
    return fail(e, 1);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rf4d: radar neural field pipeline"};
  app.require_subcommand(1);

  SynthArgs sa;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Simulate a radar sequence from a scene file");
  synth_cmd->add_option("--scene", sa.scene, "Scene JSON path");
  synth_cmd->add_option("--out", sa.out, "Output sequence directory");
  synth_cmd->add_option("--frames", sa.frames, "Number of frames");
  synth_cmd->add_option("--seed", sa.seed, "Simulation seed");
  synth_cmd->add_option("--gt-samples", sa.gt_samples, "Boundary samples per reflector in gt BEV files");
  synth_cmd->add_option("--config", sa.config, "Config JSON (or a synth manifest) overriding defaults");

  TrainArgs ta;
  CLI::App* train_cmd = app.add_subcommand("train", "Optimize a field on a sequence");
  train_cmd->add_option("--seq", ta.seq, "Sequence directory");
  train_cmd->add_option("--out", ta.out, "Run output directory");
  train_cmd->add_option("--resume", ta.resume, "Checkpoint directory to continue from");
  train_cmd->add_option("--iters", ta.iters, "Total iterations");
  train_cmd->add_option("--seed", ta.seed, "Training seed");
  train_cmd->add_option("--lambda-oc", ta.lambda_oc, "Occupancy consistency weight");
  train_cmd->add_option("--lambda-p", ta.lambda_p, "Occupancy prior weight");
  train_cmd->add_option("--lambda-m", ta.lambda_m, "Flow magnitude weight");
  train_cmd->add_option("--holdout", ta.holdout, "Frames excluded from sampling")->delimiter(',');
  train_cmd->add_option("--config", ta.config, "Config JSON (or a train manifest) overriding defaults");

  RenderArgs ra;
  CLI::App* render_cmd = app.add_subcommand("render", "Render a scan from a checkpoint");
  render_cmd->add_option("--ckpt", ra.ckpt, "Checkpoint directory");
  render_cmd->add_option("--seq", ra.seq, "Sequence directory (geometry and PSNR reference)");
  render_cmd->add_option("--out", ra.out, "Output directory");
  render_cmd->add_option("--pose", ra.pose, "Sensor pose x,y,yaw (meters, radians)");
  render_cmd->add_option("--time", ra.time, "Normalized timestamp in [0,1]");
  render_cmd->add_option("--cart-resolution", ra.cart_resolution, "Cartesian BEV image size (0: 2*n_delta)");
  render_cmd->add_option("--config", ra.config, "Config JSON (or a render manifest) overriding defaults");

  EvalArgs ea;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint against a sequence");
  eval_cmd->add_option("--ckpt", ea.ckpt, "Checkpoint directory");
  eval_cmd->add_option("--seq", ea.seq, "Sequence directory");
  eval_cmd->add_option("--out", ea.out, "Output directory");
  eval_cmd->add_option("--holdout", ea.holdout, "Frames to evaluate (default: all)")->delimiter(',');
  eval_cmd->add_option("--grid-resolution", ea.grid_resolution, "Occupancy BEV grid resolution");
  eval_cmd->add_option("--threshold", ea.threshold, "Occupancy threshold");
  eval_cmd->add_option("--config", ea.config, "Config JSON (or an eval manifest) overriding defaults");

  CfarArgs ca;
  CLI::App* cfar_cmd = app.add_subcommand("cfar", "CFAR baseline detections and metrics");
  cfar_cmd->add_option("--seq", ca.seq, "Sequence directory");
  cfar_cmd->add_option("--out", ca.out, "Output directory");
  cfar_cmd->add_option("--holdout", ca.holdout, "Frames to evaluate (default: all)")->delimiter(',');
  cfar_cmd->add_option("--config", ca.config, "Config JSON (or a cfar manifest) overriding defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  return guarded([&]() -> int {
    if (*synth_cmd) {
      if (!sa.config.empty()) {
        const json c = load_config(sa.config, "synth");
        check_keys(c, {"scene", "out", "frames", "seed", "gt_samples"}, "synth");
        take(c, "scene", sa.scene, synth_cmd->count("--scene"));
        take(c, "out", sa.out, synth_cmd->count("--out"));
        take(c, "frames", sa.frames, synth_cmd->count("--frames"));
        take(c, "seed", sa.seed, synth_cmd->count("--seed"));
        take(c, "gt_samples", sa.gt_samples, synth_cmd->count("--gt-samples"));
      }
      return cmd_synth(sa);
    }
    if (*train_cmd) {
      json c = json::object();
      if (!ta.config.empty()) {
        c = load_config(ta.config, "train");
        check_keys(c, {"seq", "out", "resume", "train", "field"}, "train");
        take(c, "seq", ta.seq, train_cmd->count("--seq"));
        take(c, "out", ta.out, train_cmd->count("--out"));
        take(c, "resume", ta.resume, train_cmd->count("--resume"));
      }
      return cmd_train(ta, c, train_cmd);
    }
    if (*render_cmd) {
      if (!ra.config.empty()) {
        const json c = load_config(ra.config, "render");
        check_keys(c, {"ckpt", "seq", "out", "pose", "time", "cart_resolution"}, "render");
        take(c, "ckpt", ra.ckpt, render_cmd->count("--ckpt"));
        take(c, "seq", ra.seq, render_cmd->count("--seq"));
        take(c, "out", ra.out, render_cmd->count("--out"));
        take(c, "pose", ra.pose, render_cmd->count("--pose"));
        take(c, "time", ra.time, render_cmd->count("--time"));
        take(c, "cart_resolution", ra.cart_resolution, render_cmd->count("--cart-resolution"));
      }
      return cmd_render(ra);
    }
    if (*eval_cmd) {
      if (!ea.config.empty()) {
        const json c = load_config(ea.config, "eval");
        check_keys(c, {"ckpt", "seq", "out", "holdout", "grid_resolution", "threshold"}, "eval");
        take(c, "ckpt", ea.ckpt, eval_cmd->count("--ckpt"));
        take(c, "seq", ea.seq, eval_cmd->count("--seq"));
        take(c, "out", ea.out, eval_cmd->count("--out"));
        take(c, "holdout", ea.holdout, eval_cmd->count("--holdout"));
        take(c, "grid_resolution", ea.grid_resolution, eval_cmd->count("--grid-resolution"));
        take(c, "threshold", ea.threshold, eval_cmd->count("--threshold"));
      }
      return cmd_eval(ea);
    }
    json c = json::object();
    if (!ca.config.empty()) {
      c = load_config(ca.config, "cfar");
      check_keys(c, {"seq", "out", "holdout", "cfar"}, "cfar");
      take(c, "seq", ca.seq, cfar_cmd->count("--seq"));
      take(c, "out", ca.out, cfar_cmd->count("--out"));
      take(c, "holdout", ca.holdout, cfar_cmd->count("--holdout"));
    }
    return cmd_cfar(ca, c);
  });
}
