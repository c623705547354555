#include "advo/camera.hpp"

#include "advo/error.hpp"

namespace advo {

Mat3 CameraIntrinsics::matrix() const {
  Mat3 k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw Error(ErrorKind::Config, "camera focal lengths must be positive");
  }
}

CameraIntrinsics CameraIntrinsics::cropped_and_scaled(double offset_x, double offset_y,
                                                      double scale_x, double scale_y) const {
  CameraIntrinsics out = *this;
  out.fx = fx * scale_x;
  out.fy = fy * scale_y;
  out.cx = (cx - offset_x + 0.5) * scale_x - 0.5;
  out.cy = (cy - offset_y + 0.5) * scale_y - 0.5;
  return out;
}

}  // namespace advo
