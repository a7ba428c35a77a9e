#pragma once

#include "nerf/common.hpp"

#include <optional>
#include <string>
#include <vector>

namespace nerf {

/// Pinhole intrinsics in pixels. Integer pixel (u, v) is centred on the
/// continuous image coordinate (u + 0.5, v + 0.5).
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.5;
  double cy = 0.5;
  int width = 1;
  int height = 1;

  void validate() const;
};

/// World-to-camera rigid transform: x_cam = rotation * x_world + translation.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  /// Camera centre in world coordinates.
  Vec3 center() const { return -rotation.transpose() * translation; }
  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
  Vec3 to_world(const Vec3& cam) const { return rotation.transpose() * (cam - translation); }

  /// Throws DomainError unless the rotation is orthonormal with det +1 within tol.
  void validate(double tol = 1e-9) const;

  /// Camera at `eye` looking at `target`; image y axis points along -up.
  static Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up);
};

/// One calibrated image.
struct CameraView {
  std::string name;
  CameraIntrinsics intrinsics;
  Pose pose;
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double t_near = 0.0;
  double t_far = 1.0;

  Vec3 at(double t) const { return origin + t * direction; }
};

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;  // z in the camera frame
};

/// Ray through the centre of pixel (u, v). u in [-0.5, width - 0.5], same for v.
Ray pixel_to_ray(const CameraIntrinsics& cam, const Pose& pose, double u, double v, double t_near, double t_far);

/// Perspective projection of a world point. Returns nullopt when the point is
/// on or behind the image plane (depth <= 0).
std::optional<Projection> project(const CameraIntrinsics& cam, const Pose& pose, const Vec3& point);

/// World point seen at pixel (u, v) with camera-frame depth `depth` (> 0).
Vec3 backproject(const CameraIntrinsics& cam, const Pose& pose, double u, double v, double depth);

/// Dense row-major image with 1 or 3 channels. Invalid pixels hold NaN in every channel.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> data;

  ImageBuffer() = default;
  ImageBuffer(int w, int h, int c, float fill = 0.0f);

  bool empty() const { return data.empty(); }
  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  float& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  float at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }
  bool valid(int x, int y) const;
  Vec3 rgb(int x, int y) const;
  void set_rgb(int x, int y, const Vec3& value);
  void set_invalid(int x, int y);
  void check_layout() const;
};

}  // namespace nerf
