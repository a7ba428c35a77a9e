#include "nerf/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <cstdio>

namespace nerf {

AnalyticScene AnalyticScene::sphere_and_box() {
  AnalyticScene s;
  s.primitives.push_back({Primitive::Shape::sphere, Vec3(-0.45, 0.1, 0.0), Vec3::Constant(0.5), Vec3(0.9, 0.35, 0.3)});
  s.primitives.push_back({Primitive::Shape::box, Vec3(0.5, -0.2, -0.1), Vec3(0.3, 0.3, 0.4), Vec3(0.3, 0.55, 0.9)});
  return s;
}

AnalyticScene AnalyticScene::single_sphere(double radius) {
  AnalyticScene s;
  s.primitives.push_back({Primitive::Shape::sphere, Vec3::Zero(), Vec3::Constant(radius), Vec3(0.8, 0.8, 0.8)});
  return s;
}

namespace {

Vec3 half_extent(const Primitive& p) {
  return p.shape == Primitive::Shape::sphere ? Vec3::Constant(p.size.x()) : p.size;
}

double box_distance(const Vec3& lo, const Vec3& hi, const Vec3& x) {
  return (x.cwiseMax(lo).cwiseMin(hi) - x).norm();
}

}  // namespace

Vec3 AnalyticScene::bbox_min() const {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  for (const auto& p : primitives) lo = lo.cwiseMin(p.center - half_extent(p));
  return lo;
}

Vec3 AnalyticScene::bbox_max() const {
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());
  for (const auto& p : primitives) hi = hi.cwiseMax(p.center + half_extent(p));
  return hi;
}

void AnalyticScene::validate() const {
  if (primitives.empty()) throw DomainError("scene: no primitives");
  for (const auto& p : primitives) {
    if ((p.albedo.array() < 0.0).any() || (p.albedo.array() > 1.0).any())
      throw DomainError("scene: albedo outside [0,1]");
    if ((half_extent(p).array() <= 0.0).any()) throw DomainError("scene: primitive size must be positive");
  }
  // Separation test; exact for sphere-sphere and sphere-box, conservative for box-box.
  for (std::size_t i = 0; i < primitives.size(); ++i) {
    for (std::size_t j = i + 1; j < primitives.size(); ++j) {
      const auto& a = primitives[i];
      const auto& b = primitives[j];
      double gap;
      using S = Primitive::Shape;
      if (a.shape == S::sphere && b.shape == S::sphere) {
        gap = (a.center - b.center).norm() - a.size.x() - b.size.x();
      } else if (a.shape == S::box && b.shape == S::box) {
        const Vec3 d = (a.center - b.center).cwiseAbs() - a.size - b.size;
        gap = d.maxCoeff();
      } else {
        const auto& sph = a.shape == S::sphere ? a : b;
        const auto& box = a.shape == S::sphere ? b : a;
        gap = box_distance(box.center - box.size, box.center + box.size, sph.center) - sph.size.x();
      }
      if (!(gap > 0.0)) throw DomainError("scene: primitives overlap");
    }
  }
}

namespace {

bool hit_sphere(const Primitive& p, const Ray& ray, double& t, Vec3& n) {
  const Vec3 oc = ray.origin - p.center;
  const double r = p.size.x();
  const double b = ray.direction.dot(oc);
  const double c = oc.squaredNorm() - r * r;
  const double disc = b * b - c;
  if (disc < 0.0) return false;
  const double s = std::sqrt(disc);
  for (double cand : {-b - s, -b + s}) {
    if (cand >= ray.t_near && cand <= ray.t_far) {
      t = cand;
      n = (ray.at(t) - p.center) / r;
      return true;
    }
  }
  return false;
}

bool hit_box(const Primitive& p, const Ray& ray, double& t, Vec3& n) {
  const Vec3 lo = p.center - p.size;
  const Vec3 hi = p.center + p.size;
  double t_enter = -std::numeric_limits<double>::infinity();
  double t_exit = std::numeric_limits<double>::infinity();
  int axis = -1;
  for (int a = 0; a < 3; ++a) {
    const double inv = 1.0 / ray.direction[a];
    double t0 = (lo[a] - ray.origin[a]) * inv;
    double t1 = (hi[a] - ray.origin[a]) * inv;
    if (std::isnan(t0) || std::isnan(t1)) return false;
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > t_enter) {
      t_enter = t0;
      axis = a;
    }
    t_exit = std::min(t_exit, t1);
  }
  if (axis < 0 || t_enter > t_exit || t_enter < ray.t_near || t_enter > ray.t_far) return false;
  t = t_enter;
  n = Vec3::Zero();
  n[axis] = ray.direction[axis] > 0.0 ? -1.0 : 1.0;
  return true;
}

}  // namespace

Hit raycast(const AnalyticScene& scene, const Ray& ray) {
  Hit best;
  for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
    const auto& p = scene.primitives[i];
    double t;
    Vec3 n;
    const bool hit = p.shape == Primitive::Shape::sphere ? hit_sphere(p, ray, t, n) : hit_box(p, ray, t, n);
    if (hit && (!best.hit || t < best.t)) {
      best.hit = true;
      best.t = t;
      best.normal = n;
      best.primitive = static_cast<int>(i);
    }
  }
  if (best.hit) {
    const auto& p = scene.primitives[static_cast<std::size_t>(best.primitive)];
    const double lambert = std::max(0.0, best.normal.dot(scene.light));
    best.color = (p.albedo * (lambert + scene.ambient)).cwiseMin(1.0);
  }
  return best;
}

std::vector<CameraView> ring_cameras(const AnalyticScene& scene, const RingOptions& opt, int count,
                                     double azimuth_offset, const std::string& prefix) {
  CameraIntrinsics k;
  k.width = opt.width;
  k.height = opt.height;
  k.fx = 0.5 * opt.width / std::tan(0.5 * opt.fov_deg * std::numbers::pi / 180.0);
  k.fy = k.fx;
  k.cx = 0.5 * opt.width;
  k.cy = 0.5 * opt.height;
  const Vec3 target = scene.centroid();
  std::vector<CameraView> views;
  for (int i = 0; i < count; ++i) {
    const double az = 2.0 * std::numbers::pi * (i + azimuth_offset) / count;
    const double el = (i % 2 == 0 ? 1.0 : -1.0) * opt.elevation_deg * std::numbers::pi / 180.0;
    const Vec3 eye = target + opt.radius * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    char name[32];
    std::snprintf(name, sizeof(name), "%s%03d.png", prefix.c_str(), i);
    views.push_back({name, k, Pose::look_at(eye, target, Vec3::UnitZ())});
  }
  return views;
}

RenderedView render_analytic(const AnalyticScene& scene, const CameraView& view, double t_near, double t_far) {
  const auto& k = view.intrinsics;
  RenderedView out{ImageBuffer(k.width, k.height, 3, 0.0f), ImageBuffer(k.width, k.height, 1, 0.0f),
                   ImageBuffer(k.width, k.height, 3, 0.0f)};
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const Ray ray = pixel_to_ray(k, view.pose, x, y, t_near, t_far);
      const Hit hit = raycast(scene, ray);
      if (!hit.hit) {
        out.depth.set_invalid(x, y);
        out.normal.set_invalid(x, y);
        continue;
      }
      out.image.set_rgb(x, y, hit.color);
      out.depth.at(x, y) = static_cast<float>(hit.t * (view.pose.rotation * ray.direction).z());
      out.normal.set_rgb(x, y, hit.normal);
    }
  }
  return out;
}

SyntheticDataset generate_dataset(const AnalyticScene& scene, const RingOptions& opt, int n_test) {
  scene.validate();
  if (opt.n_views < 2) throw DomainError("generate_dataset: need at least two views");
  if (n_test < 0) throw DomainError("generate_dataset: negative test view count");
  SyntheticDataset ds;
  ds.t_near = 0.1 * opt.radius;
  ds.t_far = 2.5 * opt.radius;
  ds.scene_diagonal = scene.diagonal();
  const Vec3 pad = Vec3::Constant(0.25 * ds.scene_diagonal);
  ds.bbox_min = scene.bbox_min() - pad;
  ds.bbox_max = scene.bbox_max() + pad;

  ds.priors.views = ring_cameras(scene, opt, opt.n_views, 0.0, "view_");
  for (const auto& v : ds.priors.views) {
    RenderedView r = render_analytic(scene, v, ds.t_near, ds.t_far);
    ds.images.push_back(std::move(r.image));
    ds.priors.maps.push_back({std::move(r.depth), std::move(r.normal), {}});
  }
  if (n_test > 0) {
    RingOptions test_opt = opt;
    test_opt.elevation_deg = 0.5 * opt.elevation_deg;
    ds.test_views = ring_cameras(scene, test_opt, n_test, 0.5, "test_");
    for (const auto& v : ds.test_views) ds.test_images.push_back(render_analytic(scene, v, ds.t_near, ds.t_far).image);
  }
  return ds;
}

bool in_region(const PriorSet& priors, std::size_t view, int x, int y, const Corruption& c) {
  const auto& m = priors.maps.at(view);
  if (!m.depth.valid(x, y)) return false;
  const auto& v = priors.views[view];
  const Vec3 p = backproject(v.intrinsics, v.pose, x, y, m.depth.at(x, y));
  return (p - c.center).norm() < c.radius;
}

PriorSet corrupt_priors(const PriorSet& priors, const Corruption& c) {
  if (c.depth_sigma < 0.0 || c.normal_sigma < 0.0 || c.invalid_fraction < 0.0 || c.invalid_fraction > 1.0)
    throw DomainError("corrupt_priors: noise levels must be >= 0 and the fraction in [0,1]");
  PriorSet out = priors;
  for (std::size_t i = 0; i < priors.size(); ++i) {
    Rng rng(mix_seed(c.seed, i, 0x636f7272));
    auto& m = out.maps[i];
    for (int y = 0; y < m.depth.height; ++y) {
      for (int x = 0; x < m.depth.width; ++x) {
        if (!in_region(priors, i, x, y, c)) continue;
        // Draw every variate for every region pixel so the stream does not
        // depend on which branch is taken.
        const double hole = rng.uniform();
        const double dn = rng.normal();
        const Vec3 nn(rng.normal(), rng.normal(), rng.normal());
        if (hole < c.invalid_fraction) {
          m.depth.set_invalid(x, y);
          if (!m.normal.empty()) m.normal.set_invalid(x, y);
          continue;
        }
        if (c.depth_sigma > 0.0) {
          const double d = m.depth.at(x, y);
          m.depth.at(x, y) = static_cast<float>(std::max(d + c.depth_sigma * dn, 0.05 * d));
        }
        if (c.normal_sigma > 0.0 && !m.normal.empty() && m.normal.valid(x, y)) {
          const Vec3 n = m.normal.rgb(x, y) + c.normal_sigma * nn;
          if (n.norm() > 1e-12) m.normal.set_rgb(x, y, n.normalized());
        }
      }
    }
  }
  return out;
}

std::vector<Vec3> surface_samples(const AnalyticScene& scene, std::size_t n, std::uint64_t seed) {
  std::vector<Vec3> out;
  if (n == 0) return out;
  std::vector<double> area;
  for (const auto& p : scene.primitives) {
    if (p.shape == Primitive::Shape::sphere) {
      area.push_back(4.0 * std::numbers::pi * p.size.x() * p.size.x());
    } else {
      const Vec3& h = p.size;
      area.push_back(8.0 * (h.x() * h.y() + h.y() * h.z() + h.x() * h.z()));
    }
  }
  std::vector<double> cdf(area.size());
  std::partial_sum(area.begin(), area.end(), cdf.begin());
  Rng rng(mix_seed(seed, 0x73757266));
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    const double pick = rng.uniform() * cdf.back();
    const auto idx = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), pick) - cdf.begin());
    const auto& p = scene.primitives[std::min(idx, area.size() - 1)];
    if (p.shape == Primitive::Shape::sphere) {
      Vec3 d;
      do {
        d = Vec3(rng.normal(), rng.normal(), rng.normal());
      } while (d.norm() < 1e-12);
      out.push_back(p.center + p.size.x() * d.normalized());
    } else {
      const Vec3& h = p.size;
      // Faces in pairs normal to x, y, z; each pair has area 2 * 4 * (product of the other two half extents).
      const double fa[3] = {h.y() * h.z(), h.x() * h.z(), h.x() * h.y()};
      const double r = rng.uniform() * (fa[0] + fa[1] + fa[2]);
      const int axis = r < fa[0] ? 0 : (r < fa[0] + fa[1] ? 1 : 2);
      Vec3 q;
      for (int a = 0; a < 3; ++a) q[a] = (2.0 * rng.uniform() - 1.0) * h[a];
      q[axis] = rng.uniform() < 0.5 ? -h[axis] : h[axis];
      out.push_back(p.center + q);
    }
  }
  return out;
}

}  // namespace nerf
