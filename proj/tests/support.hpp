#pragma once

// Analytic test doubles shared by unit and acceptance tests.

#include "nerf/field.hpp"
#include "nerf/geometry.hpp"
#include "nerf/synthetic.hpp"

#include <cmath>
#include <functional>

namespace nerf::testing {

/// Density from a closure, constant color.
class FunctionSource final : public RadianceSource {
 public:
  FunctionSource(std::function<double(const Vec3&)> sigma, Vec3 color = Vec3::Constant(0.5))
      : sigma_(std::move(sigma)), color_(color) {}

  void evaluate(Stage, std::span<const Vec3> points, const Vec3&, std::span<double> sigma,
                std::span<Vec3> color) const override {
    for (std::size_t i = 0; i < points.size(); ++i) {
      sigma[i] = sigma_(points[i]);
      color[i] = color_;
    }
  }
  void density(Stage, std::span<const Vec3> points, std::span<double> sigma) const override {
    for (std::size_t i = 0; i < points.size(); ++i) sigma[i] = sigma_(points[i]);
  }

 private:
  std::function<double(const Vec3&)> sigma_;
  Vec3 color_;
};

/// scale inside the sphere, 0 outside, logistic shell of width ~eps.
inline std::function<double(const Vec3&)> soft_sphere(Vec3 center, double radius, double scale, double eps) {
  return [=](const Vec3& x) {
    const double s = (radius - (x - center).norm()) / eps;
    return scale / (1.0 + std::exp(-s));
  };
}

/// Ray-sphere entry distance; negative when missed.
inline double sphere_entry(const Ray& ray, const Vec3& center, double radius) {
  const Vec3 oc = ray.origin - center;
  const double b = ray.direction.dot(oc);
  const double disc = b * b - (oc.squaredNorm() - radius * radius);
  if (disc < 0.0) return -1.0;
  return -b - std::sqrt(disc);
}

inline double angle_deg(const Vec3& a, const Vec3& b) {
  const double c = std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0);
  return std::acos(c) * 180.0 / 3.14159265358979323846;
}

/// Two boxes, planar faces only.
inline AnalyticScene two_boxes() {
  AnalyticScene s;
  s.primitives.push_back({Primitive::Shape::box, Vec3(-0.45, 0.1, 0.0), Vec3(0.35, 0.3, 0.4), Vec3(0.9, 0.4, 0.3)});
  s.primitives.push_back({Primitive::Shape::box, Vec3(0.5, -0.2, -0.1), Vec3(0.3, 0.3, 0.4), Vec3(0.3, 0.55, 0.9)});
  return s;
}

/// Primitive and face seen at a pixel (-1 on background). Sphere pixels are one face.
inline int face_id(const AnalyticScene& scene, const CameraView& view, int x, int y, double t_near, double t_far) {
  const Ray r = pixel_to_ray(view.intrinsics, view.pose, x, y, t_near, t_far);
  const Hit h = raycast(scene, r);
  if (!h.hit) return -1;
  if (scene.primitives[h.primitive].shape == Primitive::Shape::sphere) return 8 * h.primitive;
  int axis = 0;
  h.normal.cwiseAbs().maxCoeff(&axis);
  return 8 * h.primitive + 1 + 2 * axis + (h.normal[axis] > 0);
}

/// Valid pixel whose (2r+1)^2 neighbourhood sees the same face.
inline bool interior_pixel(const AnalyticScene& scene, const CameraView& view, int x, int y, double t_near,
                           double t_far, int r = 3) {
  const int id = face_id(scene, view, x, y, t_near, t_far);
  if (id < 0) return false;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      const int xx = x + dx, yy = y + dy;
      if (xx < 0 || yy < 0 || xx >= view.intrinsics.width || yy >= view.intrinsics.height) return false;
      if (face_id(scene, view, xx, yy, t_near, t_far) != id) return false;
    }
  return true;
}

/// The corrupted-region fixture: a ball over the top of the box.
inline Corruption box_top_corruption(std::uint64_t seed = 7) {
  Corruption c;
  c.center = Vec3(0.5, -0.2, 0.3);
  c.radius = 0.45;
  c.depth_sigma = 0.3;
  c.normal_sigma = 0.5;
  c.invalid_fraction = 0.5;
  c.seed = seed;
  return c;
}

// SSIM straight from its definition: 2-D Gaussian weights, weighted moments
// about the local mean, one window at a time.
inline double ssim_reference(const ImageBuffer& a, const ImageBuffer& b) {
  const int n = 11;
  const double sigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  std::vector<double> w(n * n);
  double total = 0.0;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const double dx = i - 5, dy = j - 5;
      w[j * n + i] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      total += w[j * n + i];
    }
  for (double& v : w) v /= total;
  auto gray = [](const ImageBuffer& im, int x, int y) {
    double s = 0.0;
    for (int c = 0; c < im.channels; ++c) s += im.at(x, y, c);
    return s / im.channels;
  };
  double sum = 0.0;
  int count = 0;
  for (int y0 = 0; y0 + n <= a.height; ++y0)
    for (int x0 = 0; x0 + n <= a.width; ++x0) {
      double ma = 0.0, mb = 0.0;
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
          ma += w[j * n + i] * gray(a, x0 + i, y0 + j);
          mb += w[j * n + i] * gray(b, x0 + i, y0 + j);
        }
      double va = 0.0, vb = 0.0, cov = 0.0;
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
          const double da = gray(a, x0 + i, y0 + j) - ma, db = gray(b, x0 + i, y0 + j) - mb;
          va += w[j * n + i] * da * da;
          vb += w[j * n + i] * db * db;
          cov += w[j * n + i] * da * db;
        }
      sum += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return sum / count;
}

}  // namespace nerf::testing
