#pragma once

// Stereo correspondences to 3D point sets for the reprojection loss. Feature
// matching itself sits behind CorrespondenceProvider.

#include "advo/camera.hpp"
#include "advo/geometry.hpp"

#include <filesystem>
#include <map>
#include <span>
#include <vector>

namespace advo {

/// Matching pixel positions in the rectified left and right images.
struct Correspondence {
  Vec2 left_px = Vec2::Zero();
  Vec2 right_px = Vec2::Zero();
};

/// Largest row offset accepted between the two views of a match.
inline constexpr double kMaxEpipolarOffset = 2.0;

/// DLT triangulation for a rectified pair whose right camera sits `baseline`
/// meters along +x from the left one. The point is returned in left-camera
/// coordinates. Throws Triangulation on non-positive disparity, epipolar
/// violations or a degenerate system.
Vec3 triangulate_dlt(const Correspondence& c, const CameraIntrinsics& k, double baseline);

/// Projects a left-camera point into both views of the rectified rig.
Correspondence project_stereo(const Vec3& point, const CameraIntrinsics& k, double baseline);

/// Triangulates everything, drops failures and subsamples evenly down to
/// `max_points`. Throws EmptyPointSet when nothing survives.
PointSet build_point_set(std::span<const Correspondence> correspondences,
                         const CameraIntrinsics& k, double baseline, std::size_t max_points);

class CorrespondenceProvider {
 public:
  virtual ~CorrespondenceProvider() = default;
  virtual std::vector<Correspondence> correspondences(int frame) const = 0;
};

/// JSON lines: {"frame": int, "matches": [[lx, ly, rx, ry], ...]}
class FileCorrespondenceProvider final : public CorrespondenceProvider {
 public:
  explicit FileCorrespondenceProvider(const std::filesystem::path& path);
  std::vector<Correspondence> correspondences(int frame) const override;
  std::vector<int> frames() const;

 private:
  std::map<int, std::vector<Correspondence>> matches_;
};

/// Noiseless correspondences from known 3D points, for tests.
class SyntheticCorrespondenceProvider final : public CorrespondenceProvider {
 public:
  SyntheticCorrespondenceProvider(CameraIntrinsics k, double baseline)
      : k_(k), baseline_(baseline) {}

  void set_points(int frame, std::vector<Vec3> points) { points_[frame] = std::move(points); }
  std::vector<Correspondence> correspondences(int frame) const override;

 private:
  CameraIntrinsics k_;
  double baseline_;
  std::map<int, std::vector<Vec3>> points_;
};

}  // namespace advo
