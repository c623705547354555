#include "advo/triangulation.hpp"

#include "advo/error.hpp"
#include "advo/log.hpp"

#include <json.hpp>

#include <Eigen/SVD>

#include <cmath>
#include <fstream>
#include <sstream>

namespace advo {

namespace {

Vec2 normalize_pixel(const Vec2& px, const CameraIntrinsics& k) {
  return {(px.x() - k.cx) / k.fx, (px.y() - k.cy) / k.fy};
}

}  // namespace

Vec3 triangulate_dlt(const Correspondence& c, const CameraIntrinsics& k, double baseline) {
  k.validate();
  if (!(baseline > 0.0)) {
    throw Error(ErrorKind::Triangulation, "stereo baseline must be positive");
  }
  const double disparity = c.left_px.x() - c.right_px.x();
  if (!(disparity > 0.0)) {
    std::ostringstream os;
    os << "non-positive disparity " << disparity;
    throw Error(ErrorKind::Triangulation, os.str());
  }
  if (std::abs(c.left_px.y() - c.right_px.y()) > kMaxEpipolarOffset) {
    throw Error(ErrorKind::Triangulation, "correspondence violates the epipolar constraint");
  }

  // Work in normalized image coordinates so the 4x4 system is well scaled:
  // left camera [I | 0], right camera [I | -b e_x].
  const Vec2 l = normalize_pixel(c.left_px, k);
  const Vec2 r = normalize_pixel(c.right_px, k);
  Eigen::Matrix<double, 3, 4> p_left = Eigen::Matrix<double, 3, 4>::Zero();
  p_left.leftCols<3>().setIdentity();
  Eigen::Matrix<double, 3, 4> p_right = p_left;
  p_right(0, 3) = -baseline;

  Mat4 a;
  a.row(0) = l.x() * p_left.row(2) - p_left.row(0);
  a.row(1) = l.y() * p_left.row(2) - p_left.row(1);
  a.row(2) = r.x() * p_right.row(2) - p_right.row(0);
  a.row(3) = r.y() * p_right.row(2) - p_right.row(1);

  Eigen::JacobiSVD<Mat4> svd(a, Eigen::ComputeFullV);
  const Vec4 s = svd.singularValues();
  if (!(s[2] > 1e-12 * s[0])) {
    throw Error(ErrorKind::Triangulation, "degenerate DLT system");
  }
  const Vec4 h = svd.matrixV().col(3);
  if (std::abs(h[3]) < 1e-15 * h.head<3>().norm()) {
    throw Error(ErrorKind::Triangulation, "triangulated point at infinity");
  }
  const Vec3 point = h.head<3>() / h[3];
  if (!(point.z() > 0.0)) {
    throw Error(ErrorKind::Triangulation, "triangulated point behind the camera");
  }
  return point;
}

Correspondence project_stereo(const Vec3& point, const CameraIntrinsics& k, double baseline) {
  const auto project = [&](const Vec3& p) {
    return Vec2(k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy);
  };
  return {project(point), project(point - Vec3(baseline, 0.0, 0.0))};
}

PointSet build_point_set(std::span<const Correspondence> correspondences,
                         const CameraIntrinsics& k, double baseline, std::size_t max_points) {
  if (correspondences.empty()) {
    throw Error(ErrorKind::EmptyPointSet, "no correspondences to triangulate");
  }
  std::vector<Vec3> good;
  good.reserve(correspondences.size());
  std::size_t failed = 0;
  for (const Correspondence& c : correspondences) {
    try {
      good.push_back(triangulate_dlt(c, k, baseline));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Triangulation) throw;
      ++failed;
    }
  }
  if (good.empty()) {
    throw Error(ErrorKind::EmptyPointSet, "every correspondence failed to triangulate");
  }
  if (failed > 0) log::info("build_point_set: dropped ", failed, " correspondence(s)");

  PointSet out;
  if (max_points == 0 || good.size() <= max_points) {
    out.points = std::move(good);
    return out;
  }
  out.points.reserve(max_points);
  for (std::size_t i = 0; i < max_points; ++i) {
    out.points.push_back(good[i * good.size() / max_points]);
  }
  return out;
}

FileCorrespondenceProvider::FileCorrespondenceProvider(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open correspondence file " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      auto& list = matches_[rec.at("frame").get<int>()];
      for (const auto& m : rec.at("matches")) {
        if (m.size() != 4) throw Error(ErrorKind::Io, "match must have 4 numbers");
        list.push_back({Vec2(m[0].get<double>(), m[1].get<double>()),
                        Vec2(m[2].get<double>(), m[3].get<double>())});
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::Io, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

std::vector<Correspondence> FileCorrespondenceProvider::correspondences(int frame) const {
  const auto it = matches_.find(frame);
  return it == matches_.end() ? std::vector<Correspondence>{} : it->second;
}

std::vector<int> FileCorrespondenceProvider::frames() const {
  std::vector<int> out;
  for (const auto& [frame, _] : matches_) out.push_back(frame);
  return out;
}

std::vector<Correspondence> SyntheticCorrespondenceProvider::correspondences(int frame) const {
  std::vector<Correspondence> out;
  const auto it = points_.find(frame);
  if (it == points_.end()) return out;
  for (const Vec3& p : it->second) out.push_back(project_stereo(p, k_, baseline_));
  return out;
}

}  // namespace advo
