#pragma once

// Trajectory evaluation: the KITTI odometry error over 100..800 m
// subsequences, closed-form similarity alignment for scale-free estimates,
// KITTI pose-file export and plot-ready tables.

#include "advo/geometry.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace advo {

/// Camera poses in KITTI convention (each pose maps camera to world
/// coordinates, so translations are camera centers).
struct Trajectory {
  std::vector<Pose> poses;
  std::optional<std::vector<double>> timestamps;

  std::size_t size() const { return poses.size(); }
  void validate(double tol = kFilePoseTolerance) const;
};

inline constexpr std::array<double, 8> kSubsequenceLengths = {100, 200, 300, 400,
                                                              500, 600, 700, 800};

struct LengthBreakdown {
  double length = 0.0;
  std::size_t subsequences = 0;
  double t_rel = 0.0;  // percent
  double r_rel = 0.0;  // degrees per 100 m
};

struct MetricReport {
  double t_rel = 0.0;  // percent
  double r_rel = 0.0;  // degrees per 100 m
  std::size_t subsequences = 0;
  std::vector<LengthBreakdown> per_length;

  /// True when the ground truth has no subsequence of 100 m or more.
  bool empty() const { return subsequences == 0; }
};

struct MetricOptions {
  /// Distance in frames between candidate subsequence starts. 1 uses every
  /// frame; 10 matches the KITTI devkit.
  std::size_t stride = 1;
};

/// Cumulative ground-plane-agnostic path length at each frame.
std::vector<double> trajectory_distances(const Trajectory& t);

/// Segment errors are divided by their length and pooled over every start
/// frame and length; per-length means are reported alongside.
MetricReport kitti_metric(const Trajectory& estimate, const Trajectory& ground_truth,
                          const MetricOptions& options = {});

struct Similarity {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
  Pose apply(const Pose& p) const;
};

/// Least-squares similarity mapping `source` onto `target`, with the
/// reflection guard. `with_scale = false` fixes the scale to 1. Throws
/// Alignment on fewer than three points or a collinear source.
Similarity umeyama(std::span<const Vec3> source, std::span<const Vec3> target, bool with_scale);

struct Alignment {
  Similarity transform;
  Trajectory aligned;
  double rmse = 0.0;
};

/// Aligns estimate positions onto ground-truth positions.
Alignment umeyama_align(const Trajectory& estimate, const Trajectory& ground_truth,
                        bool with_scale);

void export_trajectory(const Trajectory& t, const std::filesystem::path& path);
Trajectory import_trajectory(const std::filesystem::path& path, double tol = kFilePoseTolerance);

struct FiveNumberSummary {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  std::size_t count = 0;
};

/// Quartiles by linear interpolation between order statistics.
FiveNumberSummary five_number_summary(std::span<const double> values);

struct NamedTrajectory {
  std::string name;
  Trajectory trajectory;
};

struct NamedTimings {
  std::string name;
  std::vector<double> milliseconds;
};

struct PathTable {
  std::string name;
  std::vector<Vec2> xz;
};

struct PlotData {
  std::vector<PathTable> paths;
  std::vector<std::pair<std::string, FiveNumberSummary>> timings;
};

/// Throws Usage when both inputs are empty or any timing list is empty.
PlotData plot_data(std::span<const NamedTrajectory> trajectories,
                   std::span<const NamedTimings> timings);

/// trajectory,index,x,z
void write_paths_csv(const PlotData& data, const std::filesystem::path& path);
/// name,count,min,q1,median,q3,max
void write_timing_summary_csv(const PlotData& data, const std::filesystem::path& path);

/// frame,milliseconds
void write_timings_csv(std::span<const double> milliseconds, const std::filesystem::path& path);
std::vector<double> read_timings_csv(const std::filesystem::path& path);

}  // namespace advo
