#pragma once

// Rigid-body and quaternion math shared by the dataset, loss and evaluation
// code. Quaternions are stored as (w, x, y, z).

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <span>
#include <vector>

namespace advo {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Validity tolerance for poses produced by internal math.
inline constexpr double kPoseTolerance = 1e-9;
/// Validity tolerance for poses parsed from text (KITTI stores ~6 digits).
inline constexpr double kFilePoseTolerance = 1e-6;

/// Rigid transform in SE(3). Composition `a * b` applies b first.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }
  static Pose from_matrix(const Mat4& m);

  Mat4 matrix() const;
  Pose inverse() const;
  Pose operator*(const Pose& rhs) const;
  Vec3 operator*(const Vec3& point) const { return rotation * point + translation; }
};

/// Relative motion as regressed by the network: translation + unit quaternion.
struct MotionLabel {
  Vec3 x = Vec3::Zero();
  Vec4 q{1.0, 0.0, 0.0, 0.0};  // (w, x, y, z)
};

/// diag(-1, 1, 1): reflection of the camera x axis.
inline Mat3 mirror_matrix() { return Eigen::Vector3d(-1.0, 1.0, 1.0).asDiagonal(); }

bool is_rotation(const Mat3& r, double tol = kPoseTolerance);

/// Throws InvalidPose when the rotation is not in SO(3) within `tol`.
void validate_pose(const Pose& p, double tol = kPoseTolerance);

Mat3 rot_x(double radians);
Mat3 rot_y(double radians);
Mat3 rot_z(double radians);

/// Flips the sign so that w >= 0; when w == 0 the first nonzero component
/// becomes positive.
Vec4 canonicalize_quaternion(const Vec4& q);

/// Shepperd-style conversion branching on the largest of trace and diagonal.
Vec4 rotation_to_quaternion(const Mat3& r);

/// `q` need not be unit; it is normalized first.
Mat3 quaternion_to_rotation(const Vec4& q);

/// Rotation angle in [0, pi], computed with atan2 so that exact identity
/// gives exactly zero.
double rotation_angle(const Mat3& r);
/// Angle of a^T b from the chord |a - b|_F = 2 sqrt(2) sin(theta / 2). Exactly
/// zero for identical inputs, unlike forming the product first.
double rotation_distance(const Mat3& a, const Mat3& b);

/// Motion from frame a to frame b given both camera poses: a^-1 * b.
Pose relative_transform(const Pose& a, const Pose& b, double tol = kPoseTolerance);

MotionLabel pose_to_label(const Pose& p);
Pose label_to_pose(const MotionLabel& label);

/// Mirrored relative motion: R* = M R M, translation kept as-is.
Pose mirror_transform(const Pose& t);

/// output[0] = identity, output[k] = output[k-1] * label_to_pose(rel[k-1]).
/// Quaternions off unit norm by more than 1e-3 are reported and renormalized.
std::vector<Pose> compose_trajectory(std::span<const MotionLabel> rel);

}  // namespace advo
