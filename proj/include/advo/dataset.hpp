#pragma once

// KITTI ingestion, preprocessing, mirror augmentation, pair construction and
// the on-disk preprocessed dataset format.
//
// Preprocessed layout:
//   <dir>/frames/<seq>_<index:06>_<o|m>.png   96x128 8-bit grayscale
//   <dir>/index.jsonl                          one record per pair
//   <dir>/intrinsics.json                      optional, preprocessed K
//   <dir>/points.jsonl                         optional, triangulated G_n

#include "advo/camera.hpp"
#include "advo/geometry.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace advo {

inline constexpr int kFrameWidth = 128;
inline constexpr int kFrameHeight = 96;
inline constexpr int kCropWidth = 500;
inline constexpr int kCropHeight = 375;

/// Row-major 8-bit grayscale image.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * width + col]; }
  std::uint8_t at(int row, int col) const {
    return pixels[static_cast<std::size_t>(row) * width + col];
  }
  bool operator==(const GrayImage&) const = default;
};

struct Frame {
  GrayImage image;  // kFrameHeight x kFrameWidth
  std::string sequence;
  int index = 0;
  bool mirrored = false;
};

using FramePtr = std::shared_ptr<const Frame>;

struct FramePair {
  FramePtr first;
  FramePtr second;
};

struct TrainingSample {
  FramePtr first;
  FramePtr second;
  MotionLabel label;
  std::optional<PointSet> points;  // G_n: points seen from `second`
};

/// Central kCropWidth x kCropHeight crop followed by an antialiased bilinear
/// resize to kFrameWidth x kFrameHeight.
Frame preprocess_image(const GrayImage& raw, std::string sequence = {}, int index = 0);

/// Horizontal flip; toggles the mirrored flag.
Frame mirror_image(const Frame& f);

/// Sliding window over consecutive frames. With stride k the pair is
/// (i, i + k). Labels of mirrored frames go through mirror_transform.
std::vector<TrainingSample> build_pairs(std::span<const FramePtr> frames,
                                        std::span<const Pose> poses, int stride = 1);

/// Per-epoch uniform shuffling, deterministic under a fixed seed; the short
/// tail batch is dropped.
class BatchIterator {
 public:
  BatchIterator(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed);

  std::size_t batches_per_epoch() const { return size_ / batch_; }
  std::vector<std::vector<std::size_t>> epoch(std::uint64_t epoch_index) const;

  /// Next batch of the stream; rolls into the following epoch as needed.
  std::vector<std::size_t> next();

 private:
  std::size_t size_;
  std::size_t batch_;
  std::uint64_t seed_;
  std::uint64_t epoch_index_ = 0;
  std::vector<std::vector<std::size_t>> current_;
  std::size_t cursor_ = 0;
};

struct Dataset {
  std::vector<TrainingSample> samples;
  std::optional<CameraIntrinsics> intrinsics;

  std::size_t size() const { return samples.size(); }
  std::vector<std::string> sequences() const;
  /// Drops the sequence and its mirrored twin.
  Dataset without_sequence(const std::string& sequence) const;
  /// Keeps one sequence, optionally only its non-mirrored frames.
  Dataset only_sequence(const std::string& sequence, bool include_mirrored) const;
  std::vector<FramePair> pairs() const;
};

// --- KITTI files ----------------------------------------------------------

GrayImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const GrayImage& image);

/// 12 floats per line, row-major 3x4.
std::vector<Pose> read_kitti_poses(const std::filesystem::path& path,
                                   double tol = kFilePoseTolerance);
void write_kitti_poses(const std::filesystem::path& path, std::span<const Pose> poses);

/// Parses P0 (and P1 for the baseline) from a KITTI calib.txt.
CameraIntrinsics read_kitti_calib(const std::filesystem::path& path);

// --- preprocessed dataset -------------------------------------------------

struct PreprocessOptions {
  std::filesystem::path kitti_root;
  std::filesystem::path out;
  std::vector<std::string> sequences;
  bool mirror = false;
  int stride = 1;
  /// Directory of `<seq>.jsonl` correspondence files; enables points.jsonl.
  std::optional<std::filesystem::path> correspondences;
  std::size_t max_points = 200;
};

struct PreprocessSummary {
  std::size_t frames = 0;
  std::size_t pairs = 0;
  std::size_t point_sets = 0;
};

/// Writes the preprocessed layout. On failure the output directory is removed
/// if this call created it.
PreprocessSummary preprocess_kitti(const PreprocessOptions& options);

std::string frame_file_name(const std::string& sequence, int index, bool mirrored);

Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace advo
