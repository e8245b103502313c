#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "pslam/config.hpp"
#include "pslam/frontend.hpp"
#include "pslam/io_eval.hpp"
#include "pslam/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitIo = 2;
constexpr int kExitTracking = 3;

json timing_stats(std::vector<double> v) {
  json j;
  j["count"] = v.size();
  if (v.empty()) return j;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= double(v.size());
  std::sort(v.begin(), v.end());
  j["median_ms"] = v[v.size() / 2];
  j["mean_ms"] = mean;
  j["std_ms"] = std::sqrt(var);
  return j;
}

int run_command(const std::string& input, const std::string& config_path,
                const std::string& output, bool assume_undistorted, int threads_flag,
                bool do_global_pba) {
  pslam::Config config;
  if (!config_path.empty()) config = pslam::load_config(config_path);
  if (threads_flag > 0) config.threads = threads_flag;
  config.validate();

  const pslam::SequenceSource source = pslam::load_sequence(input, assume_undistorted);

  fs::create_directories(output);
  pslam::Pipeline pipeline(config, source.camera);

  const bool threaded = config.threads == 2;
  if (threaded) pipeline.start_threaded();

  for (int i = 0; i < source.size(); ++i) {
    const pslam::GrayImage img = source.load_frame(i);
    const double t = source.timestamp_seconds(i);
    const auto status =
        threaded ? pipeline.enqueue(t, img) : pipeline.process(t, img);
    if (status == pslam::Pipeline::Status::kLost) {
      if (threaded) pipeline.finish();
      std::cerr << "tracking lost at frame " << i << "\n";
      return kExitTracking;
    }
    if (status == pslam::Pipeline::Status::kBootstrapFailed) {
      if (threaded) pipeline.finish();
      std::cerr << "bootstrap failure (insufficient parallax within budget)\n";
      return kExitTracking;
    }
  }
  if (threaded) pipeline.finish();

  if (!pipeline.bootstrapped()) {
    std::cerr << "bootstrap failure (sequence ended before initialization)\n";
    return kExitTracking;
  }

  if (do_global_pba || config.final_global_pba) {
    const auto t0 = std::chrono::steady_clock::now();
    pslam::global_pba(pipeline.map(), config.pba_config());
    const double ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
    std::cerr << "global PBA: " << ms << " ms\n";
  }

  pslam::write_trajectory(pipeline.keyframe_trajectory(), output + "/trajectory.txt");
  pslam::write_pointcloud(pipeline.map(), output + "/pointcloud.ply");

  json report;
  report["frames"] = pipeline.frames().size();
  report["keyframes"] = pipeline.map().num_keyframes();
  report["timings"]["tracking"] = timing_stats(pipeline.timings().tracking_ms);
  report["timings"]["local_pba"] = timing_stats(pipeline.timings().mapping_ms);
  report["timings"]["keyframe_period"] =
      timing_stats(pipeline.timings().keyframe_period_ms);
  int points = 0;
  for (const auto& kf : pipeline.map().keyframes()) points += pipeline.map().live_point_count(kf.id);
  report["map_points"] = points;
  std::ofstream(output + "/report.json") << report.dump(2) << "\n";
  return kExitOk;
}

int eval_command(const std::string& est_path, const std::string& gt_path,
                 const std::string& surface_path, const std::string& map_path,
                 double window) {
  const pslam::Trajectory est = pslam::read_trajectory(est_path);
  const pslam::Trajectory gt = pslam::read_trajectory(gt_path);

  std::vector<Eigen::Vector3d> surface, map_points;
  if (!surface_path.empty()) surface = pslam::read_pointcloud(surface_path);
  if (!map_path.empty()) map_points = pslam::read_pointcloud(map_path);

  const pslam::EvalReport report = pslam::evaluate(
      est, gt, surface.empty() ? nullptr : &surface,
      map_points.empty() ? nullptr : &map_points, window);

  json j;
  j["rms_ate"] = report.rms_ate;
  j["associated"] = report.errors.size();
  j["alignment"]["scale"] = report.alignment.scale();
  const Eigen::Quaterniond q(report.alignment.rotation());
  j["alignment"]["rotation_xyzw"] = {q.x(), q.y(), q.z(), q.w()};
  j["alignment"]["translation"] = {report.alignment.translation().x(),
                                   report.alignment.translation().y(),
                                   report.alignment.translation().z()};
  if (report.pse) {
    j["pse"]["p50"] = report.pse->p50;
    j["pse"]["p90"] = report.pse->p90;
    j["pse"]["p95"] = report.pse->p95;
    j["pse"]["points"] = report.pse->distances.size();
  }
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

int synth_command(const std::string& kind, int frames, const std::string& out,
                  double extent, double noise, uint64_t seed, bool no_occluders,
                  double affine_amp) {
  pslam::SequenceSpec spec;
  spec.kind = pslam::trajectory_kind_from_string(kind);
  spec.frames = frames;
  spec.extent = extent;
  spec.noise_sigma = noise;
  spec.seed = seed;
  spec.with_occluders = !no_occluders;
  spec.affine_amplitude = affine_amp;
  pslam::emit_asl_sequence(spec, out);
  std::cout << "wrote " << frames << " frames to " << out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"photoslam: persistent-map photometric bundle adjustment SLAM"};
  app.require_subcommand(1);

  std::string input, config_path, output;
  bool assume_undistorted = false;
  int threads = 0;
  bool do_global_pba = false;
  auto* run = app.add_subcommand("run", "run the SLAM pipeline on an ASL sequence");
  run->add_option("--input", input, "sequence directory (ASL layout)")->required();
  run->add_option("--config", config_path, "key = value config file");
  run->add_option("--output", output, "output directory")->required();
  run->add_flag("--assume-undistorted", assume_undistorted,
                "skip undistortion of input images");
  run->add_option("--threads", threads, "1 = sequential deterministic, 2 = two streams");
  run->add_flag("--global-pba", do_global_pba, "run a final global PBA");

  std::string est_path, gt_path, surface_path, map_path;
  double window = 0.02;
  auto* eval = app.add_subcommand("eval", "evaluate a trajectory against ground truth");
  eval->add_option("--est", est_path, "estimated trajectory")->required();
  eval->add_option("--gt", gt_path, "ground-truth trajectory")->required();
  eval->add_option("--surface", surface_path, "reference surface point cloud (PLY)");
  eval->add_option("--map", map_path, "estimated map point cloud (PLY)");
  eval->add_option("--window", window, "timestamp association window in seconds");

  std::string kind = "revisit-loop", out;
  int frames = 100;
  double extent = 6.0, noise = 1.0, affine_amp = 0.25;
  uint64_t seed = 1;
  bool no_occluders = false;
  auto* synth = app.add_subcommand("synth", "emit a synthetic ASL sequence");
  synth->add_option("--kind", kind, "line | orbit | revisit-loop");
  synth->add_option("--frames", frames, "number of frames")->required();
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--extent", extent, "trajectory extent in scene units");
  synth->add_option("--noise", noise, "intensity noise sigma");
  synth->add_option("--seed", seed, "noise seed");
  synth->add_flag("--no-occluders", no_occluders, "omit occluder boxes");
  synth->add_option("--affine-amp", affine_amp, "affine brightness drift amplitude");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed())
      return run_command(input, config_path, output, assume_undistorted, threads,
                         do_global_pba);
    if (eval->parsed())
      return eval_command(est_path, gt_path, surface_path, map_path, window);
    if (synth->parsed())
      return synth_command(kind, frames, out, extent, noise, seed, no_occluders,
                           affine_amp);
  } catch (const pslam::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const pslam::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const pslam::AlignmentError& e) {
    std::cerr << "evaluation error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitOk;
}
