#include "advo/error.hpp"
#include "advo/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace advo {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidPose: return "invalid_pose";
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::LengthMismatch: return "length_mismatch";
    case ErrorKind::EmptyDataset: return "empty_dataset";
    case ErrorKind::PointBehindCamera: return "point_behind_camera";
    case ErrorKind::DegenerateLoss: return "degenerate_loss";
    case ErrorKind::Triangulation: return "triangulation";
    case ErrorKind::EmptyPointSet: return "empty_point_set";
    case ErrorKind::Alignment: return "alignment";
    case ErrorKind::Io: return "io";
    case ErrorKind::Checkpoint: return "checkpoint";
    case ErrorKind::HoldOut: return "hold_out";
    case ErrorKind::NonFinite: return "non_finite";
    case ErrorKind::Config: return "config";
    case ErrorKind::Usage: return "usage";
  }
  return "unknown";
}

bool is_user_error(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NonFinite:
    case ErrorKind::DegenerateLoss:
    case ErrorKind::Shape:
      return false;
    default:
      return true;
  }
}

namespace log {
namespace {
std::atomic<Level> g_level{Level::Info};
std::atomic<std::size_t> g_warnings{0};
std::mutex g_mutex;
}  // namespace

void set_level(Level level) { g_level = level; }
Level level() { return g_level; }
std::size_t warning_count() { return g_warnings; }

void write(Level lvl, const std::string& message) {
  if (lvl >= Level::Warn) ++g_warnings;
  if (lvl < g_level) return;
  static constexpr const char* kTags[] = {"debug", "info", "warn", "error"};
  std::lock_guard lock(g_mutex);
  std::cerr << "[" << kTags[static_cast<int>(lvl)] << "] " << message << '\n';
}
}  // namespace log

}  // namespace advo
