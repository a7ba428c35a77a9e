#pragma once

// Analytic sphere/box scenes with exact depth, normals and surface samples.
// World frame is z-up; cameras sit on a ring around the scene centre.

#include "nerf/geometry.hpp"
#include "nerf/io.hpp"
#include "nerf/priors.hpp"

#include <vector>

namespace nerf {

struct Primitive {
  enum class Shape { sphere, box };
  Shape shape = Shape::sphere;
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Constant(0.5);  // sphere: size.x() is the radius; box: half extents
  Vec3 albedo = Vec3::Constant(0.8);
};

struct AnalyticScene {
  std::vector<Primitive> primitives;
  Vec3 light = Vec3(0.4, -0.5, 0.75).normalized();
  double ambient = 0.1;

  /// Sphere (r = 0.5) next to a box, diagonal about 2.
  static AnalyticScene sphere_and_box();
  /// Single sphere of the given radius at the origin.
  static AnalyticScene single_sphere(double radius);

  Vec3 bbox_min() const;
  Vec3 bbox_max() const;
  Vec3 centroid() const { return 0.5 * (bbox_min() + bbox_max()); }
  double diagonal() const { return (bbox_max() - bbox_min()).norm(); }
  /// Throws DomainError for overlapping primitives or albedo outside [0,1].
  void validate() const;
};

struct Hit {
  bool hit = false;
  double t = 0.0;
  Vec3 normal = Vec3::Zero();
  Vec3 color = Vec3::Zero();
  int primitive = -1;
};

/// Nearest intersection with t in [t_near, t_far].
Hit raycast(const AnalyticScene& scene, const Ray& ray);

struct RingOptions {
  int n_views = 20;
  int width = 64;
  int height = 64;
  double radius = 3.0;
  double fov_deg = 45.0;
  double elevation_deg = 25.0;  // views alternate between +elevation and -elevation
};

struct SyntheticDataset {
  PriorSet priors;                  // exact depth and world normals for the training views
  std::vector<ImageBuffer> images;  // linear RGB, one per training view
  std::vector<CameraView> test_views;
  std::vector<ImageBuffer> test_images;
  double t_near = 0.0;
  double t_far = 1.0;
  Vec3 bbox_min = Vec3::Zero();
  Vec3 bbox_max = Vec3::Zero();
  double scene_diagonal = 1.0;
};

/// Ring cameras looking at the scene centroid, alternately above and below it.
std::vector<CameraView> ring_cameras(const AnalyticScene& scene, const RingOptions& opt, int count,
                                     double azimuth_offset, const std::string& prefix);

struct RenderedView {
  ImageBuffer image;   // linear RGB, black background
  ImageBuffer depth;   // camera z, NaN on background
  ImageBuffer normal;  // world normals, NaN on background
};

RenderedView render_analytic(const AnalyticScene& scene, const CameraView& view, double t_near, double t_far);

/// `n_test` held-out views sit halfway between training azimuths.
SyntheticDataset generate_dataset(const AnalyticScene& scene, const RingOptions& opt, int n_test = 4);

struct Corruption {
  Vec3 center = Vec3::Zero();  // corrupted region: ball in world space
  double radius = 0.0;
  double depth_sigma = 0.0;       // Gaussian depth noise, world units
  double normal_sigma = 0.0;      // per-component Gaussian noise before renormalization
  double invalid_fraction = 0.0;  // fraction of region pixels turned into NaN holes
  std::uint64_t seed = 0;
};

/// True when pixel (x, y) of view i sees a surface point inside the region.
bool in_region(const PriorSet& priors, std::size_t view, int x, int y, const Corruption& c);

PriorSet corrupt_priors(const PriorSet& priors, const Corruption& c);

/// Uniform area-weighted samples over all primitive surfaces.
std::vector<Vec3> surface_samples(const AnalyticScene& scene, std::size_t n, std::uint64_t seed);

}  // namespace nerf
