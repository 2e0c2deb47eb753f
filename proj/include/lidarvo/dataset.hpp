#pragma once

// A sequence of synchronized camera, LIDAR and optional semantic frames.
// Frame data is produced on demand.

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lidarvo/geometry.hpp"
#include "lidarvo/image.hpp"
#include "lidarvo/tracking.hpp"

namespace lidarvo {

struct DatasetSequence {
  std::string name;
  CameraIntrinsics intrinsics;
  ExtrinsicCalibration extrinsics;
  std::vector<double> timestamps;  // seconds, strictly increasing

  /// Grayscale frame; may be empty when `tracks` is set.
  std::function<GrayImage(std::size_t)> image;
  /// LIDAR points in the LIDAR frame.
  std::function<std::vector<Vec3>(std::size_t)> cloud;
  /// Semantic label image; empty when the sequence has no semantics.
  std::function<SemanticImage(std::size_t)> semantics;

  /// Precomputed feature tracks. When set, the images are not tracked.
  std::optional<std::vector<FeatureTrack>> tracks;
  /// World-from-camera ground truth, one pose per frame.
  std::optional<std::vector<Pose>> ground_truth;

  std::size_t size() const noexcept { return timestamps.size(); }

  void validate() const {
    intrinsics.validate();
    for (std::size_t i = 1; i < timestamps.size(); ++i)
      if (!(timestamps[i] > timestamps[i - 1]))
        throw Error("timestamps must increase strictly (frame " + std::to_string(i) + ")");
    if (!cloud) throw Error("sequence has no LIDAR source");
    if (!tracks && !image) throw Error("sequence has neither images nor feature tracks");
    if (ground_truth && ground_truth->size() < size()) throw Error("ground truth shorter than the sequence");
  }
};

}  // namespace lidarvo
