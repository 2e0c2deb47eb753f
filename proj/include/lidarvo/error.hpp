#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lidarvo {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonPositiveDepth : public Error {
 public:
  NonPositiveDepth() : Error("point has non-positive depth") {}
};

class DegenerateGeometry : public Error {
 public:
  using Error::Error;
};

class NoNeighbors : public Error {
 public:
  NoNeighbors() : Error("fewer than 3 lidar points in region of interest") {}
};

class DegenerateTriangle : public Error {
 public:
  explicit DegenerateTriangle(double area)
      : Error("maximum triangle area " + std::to_string(area) + " below minimum"), area_(area) {}
  double area() const noexcept { return area_; }

 private:
  double area_;
};

class ParallelRay : public Error {
 public:
  ParallelRay() : Error("line of sight is parallel to plane") {}
};

class InsufficientInliers : public Error {
 public:
  using Error::Error;
};

/// Malformed text input. Carries the 1-based line number of the offending line.
class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class NumericalFailure : public Error {
 public:
  using Error::Error;
};

class EmptyProblem : public Error {
 public:
  using Error::Error;
};

class Underconstrained : public Error {
 public:
  using Error::Error;
};

class MissingFile : public Error {
 public:
  explicit MissingFile(const std::string& path) : Error("missing file or directory: " + path) {}
};

class MalformedCalibration : public Error {
 public:
  explicit MalformedCalibration(const std::string& line)
      : Error("malformed calibration line: " + line) {}
};

class TooShort : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A module error raised while processing one frame of a sequence.
class FrameError : public Error {
 public:
  FrameError(std::size_t frame, const std::string& what)
      : Error("frame " + std::to_string(frame) + ": " + what), frame_(frame) {}
  std::size_t frame() const noexcept { return frame_; }

 private:
  std::size_t frame_;
};

}  // namespace lidarvo
