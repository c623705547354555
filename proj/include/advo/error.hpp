#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace advo {

enum class ErrorKind {
  InvalidPose,
  Dimension,
  Shape,
  LengthMismatch,
  EmptyDataset,
  PointBehindCamera,
  DegenerateLoss,
  Triangulation,
  EmptyPointSet,
  Alignment,
  Io,
  Checkpoint,
  HoldOut,
  NonFinite,
  Config,
  Usage,
};

std::string_view to_string(ErrorKind kind);

/// True for errors caused by bad input or configuration rather than by a
/// defect in the program. The CLI maps these to exit code 1.
bool is_user_error(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace advo
