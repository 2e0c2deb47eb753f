#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "lidarvo/io/cloud.hpp"
#include "lidarvo/io/config.hpp"
#include "lidarvo/io/image.hpp"
#include "lidarvo/io/kitti.hpp"
#include "lidarvo/io/trajectory.hpp"
#include "lidarvo/metric.hpp"

namespace fs = std::filesystem;
using namespace lidarvo;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("lidarvo_test_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

const char* kCalib =
    "P0: 718.856 0 607.1928 0 0 718.856 185.2157 0 0 0 1 0\n"
    "P1: 718.856 0 607.1928 -386.1448 0 718.856 185.2157 0 0 0 1 0\n"
    "P2: 718.856 0 607.1928 45.38225 0 718.856 185.2157 -0.1130887 0 0 1 0.003779761\n"
    "P3: 718.856 0 607.1928 -337.2877 0 718.856 185.2157 2.369057 0 0 1 0.004915215\n"
    "Tr: 0.0004276802 -0.9999672 -0.008084491 -0.01198459 -0.007210626 0.008081198 -0.9999413 -0.05403984 "
    "0.9999739 0.0004859485 -0.007206933 -0.2921968\n";

/// Three-frame KITTI layout with 1241x376 images.
fs::path kitti_fixture(const std::string& name, int frames = 3) {
  const fs::path dir = fresh_dir(name);
  write_text(dir / "calib.txt", kCalib);
  std::string times;
  for (int i = 0; i < frames; ++i) times += std::to_string(0.1 * i) + "\n";
  write_text(dir / "times.txt", times);
  fs::create_directories(dir / "velodyne");
  fs::create_directories(dir / "image_0");
  std::vector<Pose> poses;
  for (int i = 0; i < frames; ++i) {
    char stem[16];
    std::snprintf(stem, sizeof stem, "%06d", i);
    io::write_velodyne_bin(dir / "velodyne" / (std::string(stem) + ".bin"),
                           {Vec3(5.0 + i, 0.5, -1.0), Vec3(6.0, -0.5, -1.5)});
    io::write_png_gray(dir / "image_0" / (std::string(stem) + ".png"), GrayImage(1241, 376, static_cast<std::uint8_t>(i)));
    poses.push_back(Pose::from_axis_angle(Vec3::Zero(), Vec3(0, 0, 0.8 * i)));
  }
  io::write_trajectory(dir / "poses.txt", poses);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// KITTI layout

TEST(Kitti, ThreeFrameFixture) {
  const fs::path dir = kitti_fixture("fixture");
  std::ostringstream warn;
  io::KittiOptions opts;
  opts.warnings = &warn;
  const DatasetSequence seq = io::load_kitti_sequence(dir, opts);
  EXPECT_EQ(seq.size(), 3u);
  EXPECT_TRUE(warn.str().empty());
  EXPECT_DOUBLE_EQ(seq.intrinsics.focal_length_x, 718.856);
  EXPECT_DOUBLE_EQ(seq.intrinsics.focal_length_y, 718.856);
  EXPECT_DOUBLE_EQ(seq.intrinsics.principal_point.x(), 607.1928);
  EXPECT_DOUBLE_EQ(seq.intrinsics.principal_point.y(), 185.2157);
  EXPECT_EQ(seq.intrinsics.width, 1241);
  EXPECT_EQ(seq.intrinsics.height, 376);
  EXPECT_NEAR(seq.extrinsics.lidar_to_camera.translation().z(), -0.2921968, 1e-12);
  EXPECT_NEAR(seq.extrinsics.lidar_to_camera.rotation()(0, 1), -0.9999672, 1e-4);
  ASSERT_TRUE(seq.ground_truth.has_value());
  EXPECT_NEAR((*seq.ground_truth)[2].translation().z(), 1.6, 1e-12);
  const auto cloud = seq.cloud(1);
  ASSERT_EQ(cloud.size(), 2u);
  EXPECT_NEAR(cloud[0].x(), 6.0, 1e-6);
  EXPECT_EQ(seq.image(2).at(0, 0), 2);
  EXPECT_FALSE(seq.semantics);
  EXPECT_NO_THROW(seq.validate());
}

TEST(Kitti, MissingVelodyne) {
  const fs::path dir = kitti_fixture("no_velodyne");
  fs::remove_all(dir / "velodyne");
  EXPECT_THROW(io::load_kitti_sequence(dir), MissingFile);
}

TEST(Kitti, MissingCalibrationAndTimes) {
  const fs::path dir = kitti_fixture("no_calib");
  fs::remove(dir / "times.txt");
  EXPECT_THROW(io::load_kitti_sequence(dir), MissingFile);
  fs::remove(dir / "calib.txt");
  EXPECT_THROW(io::load_kitti_sequence(dir), MissingFile);
  EXPECT_THROW(io::load_kitti_sequence(dir / "absent"), MissingFile);
}

TEST(Kitti, ElevenValueRowIsMalformed) {
  const fs::path dir = kitti_fixture("eleven");
  const std::string bad = "P0: 718.856 0 607.1928 0 0 718.856 185.2157 0 0 0 1";
  std::string calib = kCalib;
  calib.replace(0, calib.find('\n'), bad);
  write_text(dir / "calib.txt", calib);
  try {
    io::load_kitti_sequence(dir);
    FAIL() << "expected MalformedCalibration";
  } catch (const MalformedCalibration& e) {
    EXPECT_NE(std::string(e.what()).find(bad), std::string::npos);
  }
}

TEST(Kitti, MalformedRows) {
  for (const std::string text : {std::string("P0 1 2 3\n"), std::string("Tr: 1 2 x 4\n"), std::string("size: 10\n"),
                                 std::string("Tr: 1 0 0 0 0 1 0 0 0 0 1 0\n")}) {
    std::istringstream in(text);
    EXPECT_THROW(io::parse_kitti_calibration(in), MalformedCalibration) << text;
  }
}

TEST(Kitti, FrameCountIsMinimumWithWarning) {
  const fs::path dir = kitti_fixture("mismatch");
  write_text(dir / "times.txt", "0\n0.1\n0.2\n0.3\n0.4\n");
  fs::remove(dir / "image_0" / "000002.png");
  std::ostringstream warn;
  io::KittiOptions opts;
  opts.warnings = &warn;
  const DatasetSequence seq = io::load_kitti_sequence(dir, opts);
  EXPECT_EQ(seq.size(), 2u);
  EXPECT_EQ(seq.ground_truth->size(), 2u);
  EXPECT_NE(warn.str().find("frame counts differ"), std::string::npos);
}

TEST(Kitti, TracksReplaceImagesAndSizeRowGivesImageSize) {
  const fs::path dir = kitti_fixture("tracks");
  fs::remove_all(dir / "image_0");
  EXPECT_THROW(io::load_kitti_sequence(dir), MissingFile);
  write_text(dir / "tracks.txt", "0 0 10 5\n0 1 11 5\n1 1 20 8\n1 2 21 8\n");
  EXPECT_THROW(io::load_kitti_sequence(dir), MalformedCalibration);
  write_text(dir / "calib.txt", std::string(kCalib) + "size: 1226 370\n");
  const DatasetSequence seq = io::load_kitti_sequence(dir);
  EXPECT_EQ(seq.intrinsics.width, 1226);
  EXPECT_EQ(seq.intrinsics.height, 370);
  ASSERT_TRUE(seq.tracks.has_value());
  EXPECT_EQ(seq.tracks->size(), 2u);
  EXPECT_FALSE(seq.image);
}

TEST(Kitti, SemanticsUseConfiguredClasses) {
  const fs::path dir = kitti_fixture("semantics");
  fs::create_directories(dir / "semantics");
  for (int i = 0; i < 3; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%06d.png", i);
    io::write_png_gray(dir / "semantics" / name, GrayImage(1241, 376, 26));
  }
  io::KittiOptions opts;
  opts.classes = ClassTable::from_lists({26}, {}, {});
  const DatasetSequence seq = io::load_kitti_sequence(dir, opts);
  ASSERT_TRUE(seq.semantics);
  const SemanticImage img = seq.semantics(1);
  EXPECT_EQ(img.labels.at(3, 3), 26);
  EXPECT_TRUE(img.table.dynamic[26]);
  EXPECT_FALSE(img.table.dynamic[27]);
}

TEST(Kitti, CalibrationRoundTrip) {
  CameraIntrinsics k;
  k.focal_length_x = 700.5;
  k.focal_length_y = 701.25;
  k.principal_point = Vec2(600.5, 180.75);
  k.width = 1226;
  k.height = 370;
  const ExtrinsicCalibration e{Pose::from_axis_angle(Vec3(0.1, -0.2, 0.3), Vec3(0.5, -0.25, 1.0))};
  const fs::path dir = fresh_dir("calib_roundtrip");
  io::write_kitti_calibration(dir / "calib.txt", k, e);
  std::ifstream in(dir / "calib.txt");
  const auto c = io::parse_kitti_calibration(in);
  EXPECT_TRUE(c.has_size);
  EXPECT_EQ(c.intrinsics.width, 1226);
  EXPECT_NEAR(c.intrinsics.focal_length_y, 701.25, 1e-9);
  EXPECT_NEAR(c.intrinsics.principal_point.y(), 180.75, 1e-9);
  EXPECT_LT((c.extrinsics.lidar_to_camera.matrix3x4() - e.lidar_to_camera.matrix3x4()).cwiseAbs().maxCoeff(), 1e-9);
}

// ---------------------------------------------------------------------------
// Trajectories

TEST(Trajectory, IdentityLine) { EXPECT_EQ(io::format_pose(Pose::identity()), "1 0 0 0 0 1 0 0 0 0 1 0"); }

TEST(Trajectory, TwoPosesTwoLines) {
  const fs::path dir = fresh_dir("two_lines");
  io::write_trajectory(dir / "t.txt", {Pose::identity(), Pose::from_axis_angle(Vec3(0, 0.1, 0), Vec3(1, 2, 3))});
  const std::string text = slurp(dir / "t.txt");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
}

TEST(Trajectory, RoundTrip) {
  std::mt19937 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Pose> poses;
  for (int i = 0; i < 50; ++i)
    poses.push_back(Pose::from_axis_angle(Vec3(n(rng), n(rng), n(rng)), Vec3(100 * n(rng), n(rng), 100 * n(rng))));
  const fs::path dir = fresh_dir("roundtrip");
  io::write_trajectory(dir / "t.txt", poses);
  const auto back = io::read_trajectory(dir / "t.txt");
  ASSERT_EQ(back.size(), poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i)
    EXPECT_LT((back[i].matrix3x4() - poses[i].matrix3x4()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Trajectory, Errors) {
  const fs::path dir = fresh_dir("traj_errors");
  write_text(dir / "t.txt", "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n");
  try {
    io::read_trajectory(dir / "t.txt");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(io::read_trajectory(dir / "absent.txt"), MissingFile);
  EXPECT_THROW(io::write_trajectory(dir / "no_such_dir" / "t.txt", {Pose::identity()}), IoError);
}

// ---------------------------------------------------------------------------
// Metric

namespace {

/// World-from-camera poses along straight and arc pieces in the x-z plane.
std::vector<Pose> drive(std::size_t n, double step, double yaw_rate) {
  std::vector<Pose> out;
  Vec3 p = Vec3::Zero();
  double yaw = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(Pose::from_axis_angle(Vec3(0, yaw, 0), p));
    if ((i / 200) % 2 == 1) yaw += yaw_rate;
    p += step * Vec3(std::sin(yaw), 0, std::cos(yaw));
  }
  return out;
}

std::vector<Pose> stretch(const std::vector<Pose>& poses, double factor) {
  std::vector<Pose> out;
  for (const Pose& p : poses) out.push_back(Pose(p.rotation(), factor * p.translation()));
  return out;
}

}  // namespace

TEST(Metric, IdenticalTrajectoriesHaveZeroError) {
  const auto truth = drive(1500, 0.8, 0.01);
  const auto r = kitti_metric(truth, truth);
  EXPECT_FALSE(r.segments.empty());
  for (const auto& s : r.segments) {
    EXPECT_EQ(s.t_err, 0.0);
    EXPECT_EQ(s.r_err, 0.0);
  }
  EXPECT_EQ(r.t_err_pct, 0.0);
  EXPECT_EQ(r.r_err_deg_per_m, 0.0);
}

TEST(Metric, SelfComparisonIsZeroForRandomTrajectories) {
  std::mt19937 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Pose> t;
    Pose p;
    for (int i = 0; i < 400; ++i) {
      t.push_back(p);
      p = p * Pose::from_axis_angle(0.05 * Vec3(n(rng), n(rng), n(rng)), Vec3(0.2 * n(rng), 0.1 * n(rng), 1.0 + 0.2 * n(rng)));
    }
    const auto r = kitti_metric(t, t);
    EXPECT_LT(r.t_err_pct, 1e-9);
    EXPECT_LT(r.r_err_deg_per_m, 1e-9);
  }
}

TEST(Metric, OnePercentStretchOnStraightLine) {
  const auto truth = drive(9000, 0.1, 0.0);  // 900 m in 0.1 m steps
  const auto r = kitti_metric(stretch(truth, 1.01), truth);
  EXPECT_NEAR(r.t_err_pct, 1.0, 0.01);
  EXPECT_LT(r.r_err_deg_per_m, 1e-12);
  for (const auto& l : r.per_length) EXPECT_NEAR(l.t_err_pct, 1.0, 0.01);
}

TEST(Metric, StretchOnCurvedPathMatchesChordOracle) {
  // Under a pure stretch the segment error is 1% of the chord between its
  // end frames; evaluate that directly from the ground truth.
  const auto truth = drive(2000, 0.5, 0.004);
  const MetricConfig cfg;
  const auto r = kitti_metric(stretch(truth, 1.01), truth, cfg);
  std::vector<double> dist(truth.size(), 0.0);
  for (std::size_t i = 1; i < truth.size(); ++i)
    dist[i] = dist[i - 1] + (truth[i].translation() - truth[i - 1].translation()).norm();
  double sum = 0.0;
  int count = 0;
  for (std::size_t first = 0; first < truth.size(); first += 10) {
    for (double len : cfg.lengths) {
      std::size_t last = first;
      while (last < truth.size() && dist[last] - dist[first] <= len) ++last;
      if (last == truth.size()) continue;
      sum += 0.01 * (truth[last].translation() - truth[first].translation()).norm() / len;
      ++count;
    }
  }
  ASSERT_EQ(static_cast<std::size_t>(count), r.segments.size());
  EXPECT_NEAR(r.t_err_pct, 100.0 * sum / count, 1e-9);
  EXPECT_LT(r.r_err_deg_per_m, 1e-9);
}

TEST(Metric, RotationErrorPerMeter) {
  // A constant yaw offset between consecutive frames accumulates linearly.
  const auto truth = drive(2000, 1.0, 0.0);
  std::vector<Pose> est;
  Pose p;
  const double rate = 1e-4;  // rad per frame
  for (std::size_t i = 0; i < truth.size(); ++i) {
    est.push_back(Pose(so3_exp(Vec3(0, rate * static_cast<double>(i), 0)), truth[i].translation()));
  }
  const auto r = kitti_metric(est, truth);
  for (const auto& s : r.segments) {
    EXPECT_GE(s.r_err, 0.0);
    EXPECT_GE(s.t_err, 0.0);
  }
  // the segment spans len + 1 frames of 1 m
  EXPECT_NEAR(r.segments.front().r_err, rate * (r.segments.front().length + 1) / r.segments.front().length, 1e-9);
}

TEST(Metric, ShortTrajectory) {
  const auto t = drive(51, 0.1, 0.0);  // 5 m
  EXPECT_THROW(kitti_metric(t, t), TooShort);
  EXPECT_THROW(kitti_metric(t, drive(50, 0.1, 0.0)), Error);
}

TEST(Metric, SpeedBuckets) {
  const auto truth = drive(3000, 1.0, 0.0);  // 10 m/s at 10 Hz
  const auto r = kitti_metric(stretch(truth, 1.02), truth);
  ASSERT_FALSE(r.per_speed.empty());
  for (const auto& b : r.per_speed) {
    EXPECT_NEAR(b.speed, 10.0, 2.0);
    EXPECT_NEAR(b.t_err_pct, 2.0, 0.02);
  }
}

TEST(Metric, ReportCsv) {
  const auto truth = drive(1200, 1.0, 0.0);
  const auto r = kitti_metric(stretch(truth, 1.01), truth);
  const fs::path dir = fresh_dir("report");
  write_report(dir / "r.csv", r);
  std::istringstream in(slurp(dir / "r.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "segment_length,t_err_pct,r_err_deg_per_m");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 2);
  }
  EXPECT_EQ(rows, static_cast<int>(r.per_length.size()));
  EXPECT_THROW(write_report(dir / "missing" / "r.csv", r), IoError);
}

TEST(Metric, DriftHelpers) {
  const auto truth = drive(101, 1.0, 0.0);
  EXPECT_NEAR(path_length(truth), 100.0, 1e-9);
  EXPECT_NEAR(endpoint_drift(stretch(truth, 1.01), truth), 0.01, 1e-12);
  EXPECT_EQ(mean_rotation_error_deg(truth, truth), 0.0);
}

// ---------------------------------------------------------------------------
// Config

TEST(Config, DefaultsRoundTripThroughFile) {
  std::ostringstream out;
  io::write_config(out, PipelineConfig{});
  std::istringstream in(out.str());
  const PipelineConfig cfg = io::parse_config(in, "defaults");
  for (const auto& f : io::config_fields()) EXPECT_EQ(f.get(cfg), f.get(PipelineConfig{})) << f.name();
}

TEST(Config, EveryFieldRoundTrips) {
  for (const auto& f : io::config_fields()) {
    PipelineConfig cfg;
    const std::string v = f.get(cfg);
    f.set(cfg, v);
    EXPECT_EQ(f.get(cfg), v) << f.name();
  }
}

TEST(Config, FileAndOverrides) {
  std::istringstream in(
      "[depth]\nmax_depth = 25\n\n[window]\nquota_far = 7\nuse_depth = false\n[trim]\nsteps = 3,4,5\n"
      "[semantic]\ndynamic_classes = 26,27\n[pipeline]\nmode = prior_only\n");
  PipelineConfig cfg = io::parse_config(in, "test");
  EXPECT_EQ(cfg.depth.max_depth, 25.0);
  EXPECT_EQ(cfg.window.quota_far, 7);
  EXPECT_FALSE(cfg.window.use_depth);
  EXPECT_EQ(cfg.trim.steps, (std::vector<int>{3, 4, 5}));
  EXPECT_TRUE(cfg.classes.dynamic[26]);
  EXPECT_FALSE(cfg.classes.dynamic[24]);
  EXPECT_EQ(cfg.mode, PipelineMode::PriorOnly);
  io::apply_override(cfg, "window.w2=2.5");
  io::apply_override(cfg, "pipeline.mode = full");
  EXPECT_EQ(cfg.window.w2, 2.5);
  EXPECT_EQ(cfg.mode, PipelineMode::Full);
}

TEST(Config, Errors) {
  PipelineConfig cfg;
  EXPECT_THROW(io::apply_override(cfg, "window.nope=1"), ConfigError);
  EXPECT_THROW(io::apply_override(cfg, "window.w2"), ConfigError);
  EXPECT_THROW(io::apply_override(cfg, "window.w2=abc"), ConfigError);
  EXPECT_THROW(io::apply_override(cfg, "window.quota_far=1.5"), ConfigError);
  EXPECT_THROW(io::apply_override(cfg, "window.use_depth=maybe"), ConfigError);
  EXPECT_THROW(io::apply_override(cfg, "pipeline.mode=fast"), ConfigError);
  EXPECT_THROW(io::apply_override(cfg, "semantic.dynamic_classes=300"), ConfigError);
  std::istringstream bad_value("[window]\nwindow_min = 1\n");
  EXPECT_THROW(io::parse_config(bad_value, "x"), ConfigError);
  std::istringstream bad_syntax("[window\nw2 = 1\n");
  EXPECT_THROW(io::parse_config(bad_syntax, "x"), ParseError);
  EXPECT_THROW(io::load_config("/nonexistent/lidarvo.ini"), MissingFile);
}
