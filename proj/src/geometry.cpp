#include "advo/geometry.hpp"

#include "advo/error.hpp"
#include "advo/log.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace advo {

Pose Pose::from_matrix(const Mat4& m) {
  Pose p;
  p.rotation = m.topLeftCorner<3, 3>();
  p.translation = m.topRightCorner<3, 1>();
  return p;
}

Mat4 Pose::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

Pose Pose::inverse() const {
  Pose inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

Pose Pose::operator*(const Pose& rhs) const {
  Pose out;
  out.rotation = rotation * rhs.rotation;
  out.translation = rotation * rhs.translation + translation;
  return out;
}

bool is_rotation(const Mat3& r, double tol) {
  if (!r.allFinite()) return false;
  const double ortho = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

void validate_pose(const Pose& p, double tol) {
  if (!p.translation.allFinite()) {
    throw Error(ErrorKind::InvalidPose, "pose translation is not finite");
  }
  if (!is_rotation(p.rotation, tol)) {
    std::ostringstream os;
    os << "pose rotation is not in SO(3) within " << tol << ": |RtR - I|max = "
       << (p.rotation.transpose() * p.rotation - Mat3::Identity()).cwiseAbs().maxCoeff()
       << ", det = " << p.rotation.determinant();
    throw Error(ErrorKind::InvalidPose, os.str());
  }
}

Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }
Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }

Vec4 canonicalize_quaternion(const Vec4& q) {
  for (int i = 0; i < 4; ++i) {
    if (q[i] > 0.0) return q;
    if (q[i] < 0.0) return -q;
  }
  return q;
}

Vec4 rotation_to_quaternion(const Mat3& r) {
  const double trace = r.trace();
  Vec4 q;
  if (trace >= r(0, 0) && trace >= r(1, 1) && trace >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + trace);
    q << 0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s;
  } else if (r(0, 0) >= r(1, 1) && r(0, 0) >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2));
    q << (r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s;
  } else if (r(1, 1) >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 - r(0, 0) + r(1, 1) - r(2, 2));
    q << (r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s;
  } else {
    const double s = 2.0 * std::sqrt(1.0 - r(0, 0) - r(1, 1) + r(2, 2));
    q << (r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s;
  }
  return canonicalize_quaternion(q.normalized());
}

Mat3 quaternion_to_rotation(const Vec4& q_in) {
  if (!(q_in.norm() > 1e-12) || !q_in.allFinite()) {
    throw Error(ErrorKind::InvalidPose, "quaternion has zero or non-finite norm");
  }
  const Vec4 q = q_in.normalized();
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

double rotation_angle(const Mat3& r) {
  const Vec3 axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double sin_part = 0.5 * axis.norm();
  const double cos_part = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
  return std::atan2(sin_part, cos_part);
}

double rotation_distance(const Mat3& a, const Mat3& b) {
  const double half = (a - b).norm() / (2.0 * std::sqrt(2.0));
  return 2.0 * std::asin(std::min(1.0, half));
}

Pose relative_transform(const Pose& a, const Pose& b, double tol) {
  validate_pose(a, tol);
  validate_pose(b, tol);
  return a.inverse() * b;
}

MotionLabel pose_to_label(const Pose& p) {
  return MotionLabel{p.translation, rotation_to_quaternion(p.rotation)};
}

Pose label_to_pose(const MotionLabel& label) {
  Pose p;
  p.rotation = quaternion_to_rotation(label.q);
  p.translation = label.x;
  return p;
}

Pose mirror_transform(const Pose& t) {
  const Mat3 m = mirror_matrix();
  Pose out;
  out.rotation = m * t.rotation * m;
  out.translation = t.translation;
  return out;
}

std::vector<Pose> compose_trajectory(std::span<const MotionLabel> rel) {
  std::vector<Pose> out;
  out.reserve(rel.size() + 1);
  out.push_back(Pose::identity());
  std::size_t renormalized = 0;
  for (const MotionLabel& step : rel) {
    const double n = step.q.norm();
    if (std::abs(n - 1.0) > 1e-3) ++renormalized;
    out.push_back(out.back() * label_to_pose(step));
  }
  if (renormalized > 0) {
    log::warn("compose_trajectory: renormalized ", renormalized,
              " quaternion(s) deviating from unit norm by more than 1e-3");
  }
  return out;
}

}  // namespace advo
