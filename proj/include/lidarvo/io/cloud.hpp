#pragma once

// Point cloud files: KITTI velodyne binaries (float32 x, y, z, intensity)
// and plain text with one "x y z" triple per line.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lidarvo/error.hpp"
#include "lidarvo/geometry.hpp"

namespace lidarvo::io {

inline std::vector<Vec3> read_velodyne_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile(path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  if (bytes % (4 * sizeof(float)) != 0)
    throw IoError(path.string() + ": size is not a multiple of 16 bytes");
  std::vector<float> raw(bytes / sizeof(float));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw IoError(path.string() + ": short read");
  std::vector<Vec3> out;
  out.reserve(raw.size() / 4);
  for (std::size_t i = 0; i + 3 < raw.size(); i += 4) out.emplace_back(raw[i], raw[i + 1], raw[i + 2]);
  return out;
}

inline void write_velodyne_bin(const std::filesystem::path& path, const std::vector<Vec3>& points) {
  std::vector<float> raw;
  raw.reserve(points.size() * 4);
  for (const Vec3& p : points) {
    raw.push_back(static_cast<float>(p.x()));
    raw.push_back(static_cast<float>(p.y()));
    raw.push_back(static_cast<float>(p.z()));
    raw.push_back(0.0f);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (!out) throw IoError("write failed: " + path.string());
}

/// Blank lines and lines starting with '#' are skipped.
inline std::vector<Vec3> read_cloud_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path.string());
  std::vector<Vec3> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    double x, y, z;
    if (!(fields >> x >> y >> z)) throw ParseError(path.string(), number, "expected x y z");
    out.emplace_back(x, y, z);
  }
  return out;
}

/// Dispatches on the extension: ".bin" is binary, anything else text.
inline std::vector<Vec3> read_cloud(const std::filesystem::path& path) {
  return path.extension() == ".bin" ? read_velodyne_bin(path) : read_cloud_text(path);
}

}  // namespace lidarvo::io
