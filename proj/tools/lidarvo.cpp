// Command-line driver: run, eval, synth, depth-debug, config.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "lidarvo/lidarvo.hpp"

namespace fs = std::filesystem;
using namespace lidarvo;

namespace {

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;

  void add_to(CLI::App& cmd) {
    cmd.add_option("-c,--config", file, "INI configuration file")->check(CLI::ExistingFile);
    cmd.add_option("--set", overrides, "Override a value, e.g. --set window.quota_far=40")->take_all();
  }

  PipelineConfig resolve() const {
    PipelineConfig cfg = file.empty() ? PipelineConfig{} : io::load_config(file);
    for (const auto& o : overrides) io::apply_override(cfg, o);
    cfg.validate();
    return cfg;
  }
};

void print_summary(std::ostream& out, const ErrorReport& r) {
  out << std::fixed << std::setprecision(4) << "translation error " << r.t_err_pct << " %, rotation error "
      << r.r_err_deg_per_m << " deg/m over " << r.segments.size() << " segments\n";
  for (const auto& l : r.per_length)
    out << "  " << std::setw(4) << static_cast<int>(l.length) << " m: " << l.t_err_pct << " %, " << l.r_err_deg_per_m
        << " deg/m\n";
}

std::vector<Pose> rebased(std::vector<Pose> poses) {
  if (poses.empty()) return poses;
  const Pose first = poses.front().inverse();
  for (auto& p : poses) p = first * p;
  return poses;
}

int cmd_run(const std::string& sequence, const ConfigArgs& config, const std::string& mode, const std::string& output,
            const std::string& report, const std::string& poses, std::size_t max_frames, bool no_semantics,
            bool verbose) {
  PipelineConfig cfg = config.resolve();
  if (!mode.empty()) cfg.mode = parse_mode(mode);
  if (max_frames > 0) cfg.max_frames = max_frames;
  if (no_semantics) cfg.use_semantics = false;
  io::KittiOptions opts;
  opts.classes = cfg.classes;
  if (!poses.empty()) opts.poses = poses;
  const DatasetSequence seq = io::load_kitti_sequence(sequence, opts);

  const auto t0 = std::chrono::steady_clock::now();
  const PipelineResult result = run_pipeline(seq, cfg, verbose ? &std::cerr : nullptr);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  io::write_trajectory(output, result.trajectory);
  std::size_t keyframes = 0, fallbacks = 0;
  for (const auto& f : result.frames) {
    keyframes += f.keyframe ? 1 : 0;
    fallbacks += f.prior_fallback ? 1 : 0;
  }
  std::cout << seq.name << ": " << result.trajectory.size() << " frames, " << keyframes << " keyframes, "
            << result.windows.size() << " windows, " << fallbacks << " prior fallbacks, " << std::setprecision(3)
            << seconds << " s (" << to_string(cfg.mode) << ")\n"
            << "trajectory written to " << output << '\n';
  if (result.report) {
    print_summary(std::cout, *result.report);
    if (!report.empty()) write_report(report, *result.report);
  } else if (!report.empty()) {
    std::cerr << "warning: no report: " << (seq.ground_truth ? "trajectory shorter than 100 m" : "no ground truth")
              << '\n';
  }
  return 0;
}

int cmd_eval(const std::string& estimate, const std::string& truth_path, const std::string& report, double rate) {
  const auto est = rebased(io::read_trajectory(estimate));
  auto truth = rebased(io::read_trajectory(truth_path));
  if (truth.size() > est.size()) truth.resize(est.size());
  if (truth.size() != est.size())
    throw Error("estimate has " + std::to_string(est.size()) + " poses but ground truth only " +
                std::to_string(truth.size()));
  MetricConfig cfg;
  cfg.frame_rate = rate;
  const ErrorReport r = kitti_metric(est, truth, cfg);
  print_summary(std::cout, r);
  std::cout << "end-point drift " << 100.0 * endpoint_drift(est, truth) << " % of " << path_length(truth) << " m\n";
  if (!report.empty()) write_report(report, r);
  return 0;
}

struct SynthArgs {
  std::string preset = "corridor";
  double length = 200.0;
  double step = 1.0;
  std::size_t frames = 0;
  double pixel_sigma = 0.0;
  double range_sigma = 0.0;
  int vehicles = 0;
  std::uint64_t seed = 1;
  bool no_semantics = false;
};

int cmd_synth(const std::string& out_dir, const SynthArgs& a) {
  sim::SceneSpec spec = a.preset == "corridor" ? sim::corridor_with_turn() : sim::SceneSpec{};
  if (a.preset == "straight") spec.path = {{a.length, 0.0}};
  spec.step = a.step;
  spec.frame_count = a.frames;
  spec.pixel_sigma = a.pixel_sigma;
  spec.lidar.range_sigma = a.range_sigma;
  spec.vehicles = a.vehicles;
  spec.seed = a.seed;
  spec.semantics = !a.no_semantics;
  const sim::SyntheticDataset data = sim::generate_scene(spec);
  const DatasetSequence& seq = data.sequence;

  const fs::path dir(out_dir);
  io::write_kitti_sequence(dir, seq);
  std::cout << "wrote " << seq.size() << " frames and " << seq.tracks->size() << " tracks to " << dir.string() << '\n';
  return 0;
}

int cmd_depth_debug(const std::string& sequence, std::size_t frame, const ConfigArgs& config,
                    const std::string& output, bool no_semantics) {
  PipelineConfig cfg = config.resolve();
  if (no_semantics) cfg.use_semantics = false;
  io::KittiOptions opts;
  opts.classes = cfg.classes;
  const DatasetSequence seq = io::load_kitti_sequence(sequence, opts);
  if (frame >= seq.size())
    throw Error("frame " + std::to_string(frame) + " out of range (" + std::to_string(seq.size()) + " frames)");
  FrameSource source(seq, cfg);
  // the corner tracker needs every earlier frame
  FrameBundle b;
  for (std::size_t i = seq.tracks ? frame : 0; i <= frame; ++i) b = source.load(i);

  std::ofstream file;
  if (!output.empty()) {
    file.open(output);
    if (!file) throw IoError(output);
  }
  std::ostream& out = output.empty() ? std::cout : file;
  out << "track_id,u,v,ground,status,source,depth,normal_x,normal_y,normal_z\n" << std::setprecision(10);
  for (const auto& o : b.observations) {
    const auto& d = o.depth;
    out << o.track_id << ',' << o.pixel.x() << ',' << o.pixel.y() << ',' << (o.ground ? 1 : 0) << ','
        << to_string(d.status) << ',' << (d.source == DepthSource::GroundPlane ? "ground" : "foreground") << ','
        << d.depth << ',' << d.plane_normal.x() << ',' << d.plane_normal.y() << ',' << d.plane_normal.z() << '\n';
  }
  int valid = 0;
  for (const auto& o : b.observations) valid += o.depth.valid() ? 1 : 0;
  std::cerr << "frame " << frame << ": " << b.observations.size() << " features, " << valid << " with depth"
            << (b.ground ? "" : ", no ground plane") << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LIDAR-monocular visual odometry"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Estimate the trajectory of a KITTI-layout sequence");
  std::string run_seq, run_mode, run_out = "trajectory.txt", run_report, run_poses;
  std::size_t run_max = 0;
  bool run_nosem = false, run_verbose = false;
  ConfigArgs run_cfg;
  run->add_option("sequence", run_seq, "Sequence directory")->required()->check(CLI::ExistingDirectory);
  run_cfg.add_to(*run);
  run->add_option("-m,--mode", run_mode, "full or prior_only (overrides pipeline.mode)")
      ->check(CLI::IsMember({"full", "prior_only"}));
  run->add_option("-o,--output", run_out, "Trajectory file (KITTI pose format)")->capture_default_str();
  run->add_option("-r,--report", run_report, "Error report CSV, written when ground truth is available");
  run->add_option("--poses", run_poses, "Ground truth file (default <sequence>/poses.txt)")->check(CLI::ExistingFile);
  run->add_option("-n,--max-frames", run_max, "Process only the first N frames");
  run->add_flag("--no-semantics", run_nosem, "Ignore semantic images");
  run->add_flag("-v,--verbose", run_verbose, "Per-frame log on stderr");

  auto* eval = app.add_subcommand("eval", "KITTI error metric of a trajectory against ground truth");
  std::string eval_est, eval_truth, eval_report;
  double eval_rate = 10.0;
  eval->add_option("trajectory", eval_est, "Estimated trajectory")->required()->check(CLI::ExistingFile);
  eval->add_option("truth", eval_truth, "Ground truth trajectory")->required()->check(CLI::ExistingFile);
  eval->add_option("-o,--output", eval_report, "Report CSV");
  eval->add_option("--frame-rate", eval_rate, "Frames per second, for the speed buckets")->capture_default_str()
      ->check(CLI::PositiveNumber);

  auto* synth = app.add_subcommand("synth", "Write a synthetic KITTI-layout sequence with ground truth");
  std::string synth_out;
  SynthArgs sa;
  synth->add_option("output", synth_out, "Output directory")->required();
  synth->add_option("--preset", sa.preset, "corridor (with a 90 degree turn) or straight")->capture_default_str()
      ->check(CLI::IsMember({"corridor", "straight"}));
  synth->add_option("--length", sa.length, "Path length of the straight preset, meters")->capture_default_str()
      ->check(CLI::PositiveNumber);
  synth->add_option("--step", sa.step, "Meters per frame (0 for a standing camera)")->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  synth->add_option("--frames", sa.frames, "Frame count (default from length and step)");
  synth->add_option("--pixel-sigma", sa.pixel_sigma, "Feature noise, pixels")->capture_default_str()->check(CLI::NonNegativeNumber);
  synth->add_option("--range-sigma", sa.range_sigma, "LIDAR range noise, meters")->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  synth->add_option("--vehicles", sa.vehicles, "Moving vehicles")->capture_default_str()->check(CLI::NonNegativeNumber);
  synth->add_option("--seed", sa.seed, "Random seed")->capture_default_str();
  synth->add_flag("--no-semantics", sa.no_semantics, "Do not write label images");

  auto* depth = app.add_subcommand("depth-debug", "Per-feature depth diagnostics of one frame as CSV");
  std::string depth_seq, depth_out;
  std::size_t depth_frame = 0;
  bool depth_nosem = false;
  ConfigArgs depth_cfg;
  depth->add_option("sequence", depth_seq, "Sequence directory")->required()->check(CLI::ExistingDirectory);
  depth->add_option("frame", depth_frame, "Frame index")->required();
  depth_cfg.add_to(*depth);
  depth->add_option("-o,--output", depth_out, "CSV file (default stdout)");
  depth->add_flag("--no-semantics", depth_nosem, "Ignore semantic images");

  auto* config = app.add_subcommand("config", "Print the effective configuration");
  ConfigArgs config_cfg;
  config_cfg.add_to(*config);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_seq, run_cfg, run_mode, run_out, run_report, run_poses, run_max, run_nosem, run_verbose);
    if (*eval) return cmd_eval(eval_est, eval_truth, eval_report, eval_rate);
    if (*synth) return cmd_synth(synth_out, sa);
    if (*depth) return cmd_depth_debug(depth_seq, depth_frame, depth_cfg, depth_out, depth_nosem);
    if (*config) {
      io::write_config(std::cout, config_cfg.resolve());
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
