#include "advo/evaluation.hpp"

#include "advo/dataset.hpp"
#include "advo/error.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace advo {

void Trajectory::validate(double tol) const {
  if (poses.empty()) throw Error(ErrorKind::LengthMismatch, "trajectory is empty");
  for (const Pose& p : poses) validate_pose(p, tol);
  if (timestamps && timestamps->size() != poses.size()) {
    throw Error(ErrorKind::LengthMismatch, "trajectory timestamps and poses differ in length");
  }
}

std::vector<double> trajectory_distances(const Trajectory& t) {
  std::vector<double> dist(t.size(), 0.0);
  for (std::size_t i = 1; i < t.size(); ++i) {
    dist[i] = dist[i - 1] + (t.poses[i].translation - t.poses[i - 1].translation).norm();
  }
  return dist;
}

MetricReport kitti_metric(const Trajectory& estimate, const Trajectory& ground_truth,
                          const MetricOptions& options) {
  if (estimate.size() != ground_truth.size()) {
    throw Error(ErrorKind::LengthMismatch,
                "estimate has " + std::to_string(estimate.size()) + " poses, ground truth " +
                    std::to_string(ground_truth.size()));
  }
  if (options.stride < 1) throw Error(ErrorKind::Config, "metric stride must be >= 1");

  const std::vector<double> dist = trajectory_distances(ground_truth);
  const std::size_t n = dist.size();

  MetricReport report;
  double t_sum = 0.0, r_sum = 0.0;
  for (double len : kSubsequenceLengths) {
    LengthBreakdown row;
    row.length = len;
    double t_len = 0.0, r_len = 0.0;
    std::size_t last = 0;
    for (std::size_t first = 0; first < n; first += options.stride) {
      // End frame where the accumulated path first reaches `len`; it only
      // moves forward as the start does.
      last = std::max(last, first);
      while (last < n && dist[last] < dist[first] + len) ++last;
      if (last >= n) break;

      const Pose gt_rel = ground_truth.poses[first].inverse() * ground_truth.poses[last];
      const Pose est_rel = estimate.poses[first].inverse() * estimate.poses[last];
      const Pose err = gt_rel.inverse() * est_rel;
      t_len += err.translation.norm() / len;
      r_len += rotation_distance(gt_rel.rotation, est_rel.rotation) / len;
      ++row.subsequences;
    }
    if (row.subsequences > 0) {
      row.t_rel = 100.0 * t_len / static_cast<double>(row.subsequences);
      row.r_rel = 100.0 * (180.0 / std::numbers::pi) * r_len / static_cast<double>(row.subsequences);
    }
    t_sum += t_len;
    r_sum += r_len;
    report.subsequences += row.subsequences;
    report.per_length.push_back(row);
  }
  if (report.subsequences > 0) {
    const double count = static_cast<double>(report.subsequences);
    report.t_rel = 100.0 * t_sum / count;
    report.r_rel = 100.0 * (180.0 / std::numbers::pi) * r_sum / count;
  }
  return report;
}

Pose Similarity::apply(const Pose& p) const {
  Pose out;
  out.rotation = rotation * p.rotation;
  out.translation = apply(p.translation);
  return out;
}

Similarity umeyama(std::span<const Vec3> source, std::span<const Vec3> target, bool with_scale) {
  if (source.size() != target.size()) {
    throw Error(ErrorKind::LengthMismatch, "umeyama: point sets differ in size");
  }
  const std::size_t n = source.size();
  if (n < 3) throw Error(ErrorKind::Alignment, "umeyama needs at least three points");

  Vec3 mu_src = Vec3::Zero(), mu_dst = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mu_src += source[i];
    mu_dst += target[i];
  }
  mu_src /= static_cast<double>(n);
  mu_dst /= static_cast<double>(n);

  Mat3 cov = Mat3::Zero();
  Mat3 src_scatter = Mat3::Zero();
  double src_var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 s = source[i] - mu_src;
    const Vec3 d = target[i] - mu_dst;
    cov += d * s.transpose();
    src_scatter += s * s.transpose();
    src_var += s.squaredNorm();
  }
  cov /= static_cast<double>(n);
  src_var /= static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Mat3> spread(src_scatter);
  const Vec3 ev = spread.eigenvalues();  // ascending
  if (!(ev[2] > 0.0) || ev[1] <= 1e-12 * ev[2]) {
    throw Error(ErrorKind::Alignment, "umeyama: source points are collinear or coincident");
  }

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 s = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s(2, 2) = -1.0;

  Similarity out;
  out.rotation = svd.matrixU() * s * svd.matrixV().transpose();
  out.scale = with_scale ? (svd.singularValues().asDiagonal() * s).trace() / src_var : 1.0;
  out.translation = mu_dst - out.scale * out.rotation * mu_src;
  return out;
}

Alignment umeyama_align(const Trajectory& estimate, const Trajectory& ground_truth,
                        bool with_scale) {
  std::vector<Vec3> src, dst;
  for (const Pose& p : estimate.poses) src.push_back(p.translation);
  for (const Pose& p : ground_truth.poses) dst.push_back(p.translation);

  Alignment out;
  out.transform = umeyama(src, dst, with_scale);
  out.aligned.timestamps = estimate.timestamps;
  double sq = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    out.aligned.poses.push_back(out.transform.apply(estimate.poses[i]));
    sq += (out.aligned.poses.back().translation - dst[i]).squaredNorm();
  }
  out.rmse = std::sqrt(sq / static_cast<double>(estimate.size()));
  return out;
}

void export_trajectory(const Trajectory& t, const std::filesystem::path& path) {
  write_kitti_poses(path, t.poses);
}

Trajectory import_trajectory(const std::filesystem::path& path, double tol) {
  Trajectory t;
  t.poses = read_kitti_poses(path, tol);
  return t;
}

FiveNumberSummary five_number_summary(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorKind::Usage, "five-number summary of an empty list");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const auto quantile = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return {v.front(), quantile(0.25), quantile(0.5), quantile(0.75), v.back(), v.size()};
}

PlotData plot_data(std::span<const NamedTrajectory> trajectories,
                   std::span<const NamedTimings> timings) {
  if (trajectories.empty() && timings.empty()) {
    throw Error(ErrorKind::Usage, "plot_data needs at least one trajectory or timing list");
  }
  PlotData out;
  for (const auto& t : trajectories) {
    if (t.trajectory.poses.empty()) throw Error(ErrorKind::Usage, "trajectory '" + t.name + "' is empty");
    PathTable table{t.name, {}};
    for (const Pose& p : t.trajectory.poses) table.xz.emplace_back(p.translation.x(), p.translation.z());
    out.paths.push_back(std::move(table));
  }
  for (const auto& t : timings) {
    if (t.milliseconds.empty()) throw Error(ErrorKind::Usage, "timing list '" + t.name + "' is empty");
    out.timings.emplace_back(t.name, five_number_summary(t.milliseconds));
  }
  return out;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << std::setprecision(12);
  return out;
}

}  // namespace

void write_paths_csv(const PlotData& data, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "trajectory,index,x,z\n";
  for (const auto& table : data.paths) {
    for (std::size_t i = 0; i < table.xz.size(); ++i) {
      out << table.name << ',' << i << ',' << table.xz[i].x() << ',' << table.xz[i].y() << '\n';
    }
  }
}

void write_timing_summary_csv(const PlotData& data, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "name,count,min,q1,median,q3,max\n";
  for (const auto& [name, s] : data.timings) {
    out << name << ',' << s.count << ',' << s.min << ',' << s.q1 << ',' << s.median << ','
        << s.q3 << ',' << s.max << '\n';
  }
}

void write_timings_csv(std::span<const double> milliseconds, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "frame,milliseconds\n";
  for (std::size_t i = 0; i < milliseconds.size(); ++i) out << i << ',' << milliseconds[i] << '\n';
}

std::vector<double> read_timings_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::vector<double> out;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    try {
      out.push_back(std::stod(line.substr(comma == std::string::npos ? 0 : comma + 1)));
    } catch (const std::exception&) {
      throw Error(ErrorKind::Io, path.string() + ": malformed timing row '" + line + "'");
    }
  }
  return out;
}

}  // namespace advo
