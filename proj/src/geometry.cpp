#include "nerf/geometry.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <limits>
#include <sstream>

namespace nerf {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw DomainError("intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw DomainError("intrinsics: image size must be positive");
  if (!(cx > 0.0 && cx < width) || !(cy > 0.0 && cy < height))
    throw DomainError("intrinsics: principal point outside the image");
}

void Pose::validate(double tol) const {
  const double orth = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  const double det = rotation.determinant();
  if (!(orth <= tol) || !(std::abs(det - 1.0) <= tol)) {
    std::ostringstream msg;
    msg << "pose: rotation not orthonormal (|RtR-I|=" << orth << ", det=" << det << ")";
    throw DomainError(msg.str());
  }
  if (!translation.allFinite()) throw DomainError("pose: non-finite translation");
}

Pose Pose::look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(up);
  if (right.norm() < 1e-12) right = forward.unitOrthogonal();
  right.normalize();
  const Vec3 down = forward.cross(right);
  Pose pose;
  pose.rotation.row(0) = right.transpose();
  pose.rotation.row(1) = down.transpose();
  pose.rotation.row(2) = forward.transpose();
  pose.translation = -pose.rotation * eye;
  return pose;
}

Ray pixel_to_ray(const CameraIntrinsics& cam, const Pose& pose, double u, double v, double t_near, double t_far) {
  if (!(u >= -0.5 && u <= cam.width - 0.5 && v >= -0.5 && v <= cam.height - 0.5)) {
    std::ostringstream msg;
    msg << "pixel_to_ray: pixel (" << u << ", " << v << ") outside " << cam.width << "x" << cam.height;
    throw BoundsError(msg.str());
  }
  if (!(t_near >= 0.0 && t_near < t_far)) throw DomainError("pixel_to_ray: need 0 <= t_near < t_far");
  const Vec3 dir_cam((u + 0.5 - cam.cx) / cam.fx, (v + 0.5 - cam.cy) / cam.fy, 1.0);
  Ray ray;
  ray.origin = pose.center();
  ray.direction = (pose.rotation.transpose() * dir_cam).normalized();
  ray.t_near = t_near;
  ray.t_far = t_far;
  return ray;
}

std::optional<Projection> project(const CameraIntrinsics& cam, const Pose& pose, const Vec3& point) {
  const Vec3 p = pose.to_camera(point);
  if (!(p.z() > 0.0)) return std::nullopt;
  return Projection{cam.fx * p.x() / p.z() + cam.cx - 0.5, cam.fy * p.y() / p.z() + cam.cy - 0.5, p.z()};
}

Vec3 backproject(const CameraIntrinsics& cam, const Pose& pose, double u, double v, double depth) {
  if (!(depth > 0.0)) throw DomainError("backproject: depth must be positive");
  const Vec3 p((u + 0.5 - cam.cx) / cam.fx * depth, (v + 0.5 - cam.cy) / cam.fy * depth, depth);
  return pose.to_world(p);
}

ImageBuffer::ImageBuffer(int w, int h, int c, float fill)
    : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {
  if (w < 0 || h < 0 || (c != 1 && c != 3)) throw ContractError("ImageBuffer: bad dimensions");
}

bool ImageBuffer::valid(int x, int y) const {
  for (int c = 0; c < channels; ++c)
    if (std::isnan(at(x, y, c))) return false;
  return true;
}

Vec3 ImageBuffer::rgb(int x, int y) const {
  if (channels == 1) return Vec3::Constant(at(x, y));
  return Vec3(at(x, y, 0), at(x, y, 1), at(x, y, 2));
}

void ImageBuffer::set_rgb(int x, int y, const Vec3& value) {
  for (int c = 0; c < channels; ++c) at(x, y, c) = static_cast<float>(value[c]);
}

void ImageBuffer::set_invalid(int x, int y) {
  for (int c = 0; c < channels; ++c) at(x, y, c) = std::numeric_limits<float>::quiet_NaN();
}

void ImageBuffer::check_layout() const {
  if (data.size() != static_cast<std::size_t>(width) * height * channels)
    throw ContractError("ImageBuffer: data length does not match width*height*channels");
}

}  // namespace nerf
