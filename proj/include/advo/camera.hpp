#pragma once

#include "advo/geometry.hpp"

#include <optional>
#include <vector>

namespace advo {

/// Pinhole intrinsics (pixels) with an optional stereo baseline (meters).
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  std::optional<double> baseline;

  Mat3 matrix() const;
  void validate() const;

  /// Intrinsics after cropping a window at (offset_x, offset_y) and resizing
  /// it by (scale_x, scale_y). Pixel centers sit at integer + 0.5.
  CameraIntrinsics cropped_and_scaled(double offset_x, double offset_y, double scale_x,
                                      double scale_y) const;
};

/// 3D points in the camera frame of one image, all in front of the camera.
struct PointSet {
  std::vector<Vec3> points;

  bool empty() const { return points.empty(); }
  std::size_t size() const { return points.size(); }
};

}  // namespace advo
