#pragma once

// 8-bit grayscale image files: PNG through libpng, binary PGM (P5) directly.

#include <filesystem>
#include <fstream>
#include <string>

#include <png.h>

#include "lidarvo/error.hpp"
#include "lidarvo/image.hpp"

namespace lidarvo::io {

inline GrayImage read_png_gray(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    if (!std::filesystem::exists(path)) throw MissingFile(path.string());
    throw IoError(path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_GRAY;
  GrayImage out(static_cast<int>(image.width), static_cast<int>(image.height));
  if (!png_image_finish_read(&image, nullptr, out.data.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError(path.string() + ": " + image.message);
  }
  return out;
}

inline void write_png_gray(const std::filesystem::path& path, const GrayImage& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, img.data.data(), 0, nullptr))
    throw IoError(path.string() + ": " + image.message);
}

inline GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile(path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  const auto skip_comments = [&]() {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string line;
      std::getline(in, line);
      in >> std::ws;
    }
  };
  in >> magic;
  skip_comments();
  in >> w;
  skip_comments();
  in >> h;
  skip_comments();
  in >> maxval;
  if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255)
    throw IoError(path.string() + ": only 8-bit binary PGM is supported");
  in.get();
  GrayImage out(w, h);
  in.read(reinterpret_cast<char*>(out.data.data()), static_cast<std::streamsize>(out.data.size()));
  if (!in) throw IoError(path.string() + ": truncated PGM");
  return out;
}

inline void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
}

/// Reads ".pgm" directly and everything else through libpng.
inline GrayImage read_gray_image(const std::filesystem::path& path) {
  return path.extension() == ".pgm" ? read_pgm(path) : read_png_gray(path);
}

}  // namespace lidarvo::io
