#pragma once

// KITTI pose files: one row-major 3x4 world-from-camera matrix per line.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "lidarvo/error.hpp"
#include "lidarvo/geometry.hpp"

namespace lidarvo::io {

inline std::string format_pose(const Pose& world_from_camera) {
  const Mat34 m = world_from_camera.matrix3x4();
  std::ostringstream os;
  os << std::setprecision(17);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) os << (r || c ? " " : "") << m(r, c);
  return os.str();
}

inline Pose parse_pose(const std::string& line, const std::string& source, std::size_t number) {
  std::istringstream in(line);
  Mat34 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c)
      if (!(in >> m(r, c))) throw ParseError(source, number, "expected 12 values");
  std::string extra;
  if (in >> extra) throw ParseError(source, number, "more than 12 values");
  return Pose(m.leftCols<3>(), m.col(3));
}

inline void write_trajectory(const std::filesystem::path& path, const std::vector<Pose>& poses) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const Pose& p : poses) out << format_pose(p) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<Pose> read_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path.string());
  std::vector<Pose> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_pose(line, path.string(), number));
  }
  return out;
}

}  // namespace lidarvo::io
