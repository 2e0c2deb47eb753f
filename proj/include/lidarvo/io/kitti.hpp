#pragma once

// KITTI odometry directory layout:
//   calib.txt     P0..P3 and Tr rows of 12 values ("size: W H" optional)
//   times.txt     one timestamp per frame
//   velodyne/     NNNNNN.bin
//   image_0/      NNNNNN.png (or .pgm); optional when tracks.txt exists
//   semantics/    NNNNNN.png label images, optional
//   tracks.txt    "track_id frame u v" rows, optional
//   poses.txt     ground truth, optional

#include <algorithm>
#include <filesystem>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "lidarvo/dataset.hpp"
#include "lidarvo/error.hpp"
#include "lidarvo/io/cloud.hpp"
#include "lidarvo/io/image.hpp"
#include "lidarvo/io/trajectory.hpp"
#include "lidarvo/tracking.hpp"

namespace lidarvo::io {

struct KittiCalibration {
  std::map<std::string, std::vector<double>> rows;
  CameraIntrinsics intrinsics;
  ExtrinsicCalibration extrinsics;
  bool has_size = false;
};

inline KittiCalibration parse_kitti_calibration(std::istream& in) {
  KittiCalibration calib;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw MalformedCalibration(line);
    const std::string key = line.substr(0, colon);
    std::istringstream fields(line.substr(colon + 1));
    std::vector<double> values;
    double v;
    while (fields >> v) values.push_back(v);
    if (!fields.eof()) throw MalformedCalibration(line);
    const bool projection = key == "Tr" || (key.size() == 2 && key[0] == 'P');
    if ((projection && values.size() != 12) || (key == "size" && values.size() != 2))
      throw MalformedCalibration(line);
    calib.rows[key] = values;
  }
  const auto p0 = calib.rows.find("P0");
  if (p0 == calib.rows.end()) throw MalformedCalibration("no P0 row");
  const auto& p = p0->second;
  calib.intrinsics.focal_length_x = p[0];
  calib.intrinsics.focal_length_y = p[5];
  calib.intrinsics.principal_point = Vec2(p[2], p[6]);
  if (const auto s = calib.rows.find("size"); s != calib.rows.end()) {
    calib.intrinsics.width = static_cast<int>(s->second[0]);
    calib.intrinsics.height = static_cast<int>(s->second[1]);
    calib.has_size = true;
  }
  const auto tr = calib.rows.find("Tr");
  if (tr == calib.rows.end()) throw MalformedCalibration("no Tr row");
  Mat34 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = tr->second[static_cast<std::size_t>(4 * r + c)];
  calib.extrinsics.lidar_to_camera = Pose(m.leftCols<3>(), m.col(3));
  return calib;
}

inline void write_kitti_calibration(const std::filesystem::path& path, const CameraIntrinsics& k,
                                    const ExtrinsicCalibration& e) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(12);
  for (int cam = 0; cam < 4; ++cam) {
    out << 'P' << cam << ':';
    const double row[12] = {k.focal_length_x, 0, k.principal_point.x(), 0, 0, k.focal_length_y,
                            k.principal_point.y(), 0, 0, 0, 1, 0};
    for (double v : row) out << ' ' << v;
    out << '\n';
  }
  const Mat34 m = e.lidar_to_camera.matrix3x4();
  out << "Tr:";
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) out << ' ' << m(r, c);
  out << "\nsize: " << k.width << ' ' << k.height << '\n';
}

namespace detail {

inline std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir,
                                                     const std::vector<std::string>& extensions) {
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension().string();
    if (std::find(extensions.begin(), extensions.end(), ext) != extensions.end()) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<double> read_times(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path.string());
  std::vector<double> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream f(line);
    double t;
    if (!(f >> t)) throw ParseError(path.string(), number, "expected a timestamp");
    out.push_back(t);
  }
  return out;
}

}  // namespace detail

struct KittiOptions {
  /// Ground truth file; defaults to <sequence>/poses.txt when present.
  std::optional<std::filesystem::path> poses;
  ClassTable classes = ClassTable::cityscapes();
  std::ostream* warnings = &std::cerr;
};

inline DatasetSequence load_kitti_sequence(const std::filesystem::path& dir, const KittiOptions& opts = {}) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw MissingFile(dir.string());
  const fs::path calib_path = dir / "calib.txt";
  std::ifstream calib_in(calib_path);
  if (!calib_in) throw MissingFile(calib_path.string());
  const KittiCalibration calib = parse_kitti_calibration(calib_in);

  DatasetSequence seq;
  seq.name = dir.filename().string();
  seq.intrinsics = calib.intrinsics;
  seq.extrinsics = calib.extrinsics;
  seq.timestamps = detail::read_times(dir / "times.txt");

  if (!fs::is_directory(dir / "velodyne")) throw MissingFile((dir / "velodyne").string());
  auto clouds = std::make_shared<std::vector<fs::path>>(detail::list_files(dir / "velodyne", {".bin", ".txt"}));

  std::shared_ptr<std::vector<fs::path>> images;
  if (fs::is_directory(dir / "image_0")) {
    images = std::make_shared<std::vector<fs::path>>(detail::list_files(dir / "image_0", {".png", ".pgm"}));
  }
  if (fs::exists(dir / "tracks.txt")) seq.tracks = ingest_tracks(dir / "tracks.txt");
  if (!images && !seq.tracks) throw MissingFile((dir / "image_0").string());

  std::shared_ptr<std::vector<fs::path>> semantics;
  if (fs::is_directory(dir / "semantics"))
    semantics = std::make_shared<std::vector<fs::path>>(detail::list_files(dir / "semantics", {".png", ".pgm"}));

  const fs::path poses_path = opts.poses.value_or(dir / "poses.txt");
  if (opts.poses || fs::exists(poses_path)) seq.ground_truth = read_trajectory(poses_path);

  std::size_t n = std::min(seq.timestamps.size(), clouds->size());
  std::ostringstream counts;
  counts << "times " << seq.timestamps.size() << ", velodyne " << clouds->size();
  if (images) {
    n = std::min(n, images->size());
    counts << ", image_0 " << images->size();
  }
  if (semantics) {
    n = std::min(n, semantics->size());
    counts << ", semantics " << semantics->size();
  }
  if (seq.ground_truth) {
    n = std::min(n, seq.ground_truth->size());
    counts << ", poses " << seq.ground_truth->size();
  }
  const bool mismatch = seq.timestamps.size() != n || clouds->size() != n || (images && images->size() != n) ||
                        (semantics && semantics->size() != n) || (seq.ground_truth && seq.ground_truth->size() != n);
  if (mismatch && opts.warnings)
    *opts.warnings << "warning: " << dir.string() << ": frame counts differ (" << counts.str() << "), using " << n
                   << '\n';
  seq.timestamps.resize(n);
  if (seq.ground_truth) seq.ground_truth->resize(n);

  if (images && !images->empty() && !calib.has_size) {
    const GrayImage first = read_gray_image(images->front());
    seq.intrinsics.width = first.width;
    seq.intrinsics.height = first.height;
  }
  if (seq.intrinsics.width == 0) throw MalformedCalibration("image size unknown: add a 'size: W H' row");

  seq.cloud = [clouds](std::size_t i) { return read_cloud(clouds->at(i)); };
  if (images) seq.image = [images](std::size_t i) { return read_gray_image(images->at(i)); };
  if (semantics) {
    const ClassTable table = opts.classes;
    seq.semantics = [semantics, table](std::size_t i) { return SemanticImage{read_gray_image(semantics->at(i)), table}; };
  }
  return seq;
}

/// Writes `seq` in the layout above. Images are written only when the
/// sequence has no precomputed tracks.
inline void write_kitti_sequence(const std::filesystem::path& dir, const DatasetSequence& seq) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "velodyne");
  write_kitti_calibration(dir / "calib.txt", seq.intrinsics, seq.extrinsics);
  {
    std::ofstream times(dir / "times.txt");
    if (!times) throw IoError("cannot write " + (dir / "times.txt").string());
    times << std::scientific << std::setprecision(6);
    for (double t : seq.timestamps) times << t << '\n';
  }
  if (seq.tracks) write_tracks(dir / "tracks.txt", *seq.tracks);
  if (seq.ground_truth) write_trajectory(dir / "poses.txt", *seq.ground_truth);
  const bool images = !seq.tracks && seq.image;
  if (images) fs::create_directories(dir / "image_0");
  if (seq.semantics) fs::create_directories(dir / "semantics");
  for (std::size_t i = 0; i < seq.size(); ++i) {
    char stem[16];
    std::snprintf(stem, sizeof stem, "%06zu", i);
    write_velodyne_bin(dir / "velodyne" / (std::string(stem) + ".bin"), seq.cloud(i));
    if (images) write_png_gray(dir / "image_0" / (std::string(stem) + ".png"), seq.image(i));
    if (seq.semantics) write_png_gray(dir / "semantics" / (std::string(stem) + ".png"), seq.semantics(i).labels);
  }
}

}  // namespace lidarvo::io
