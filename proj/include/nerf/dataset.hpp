#pragma once

// On-disk dataset layout shared by every command:
//
//   cameras.txt, images.txt   poses of the training views
//   images/<name>             8-bit sRGB PNG
//   depth/<stem>.pfm          camera z-depth priors (NaN = none)
//   normal/<stem>.pfm         world-frame normal priors
//   confidence/<stem>.pfm     written by the confidence command
//   dataset.cfg               near, far, bbox_min, bbox_max, scene_diagonal
//   gt_points.ply             reference surface samples (synthetic scenes)
//   test/                     held-out views: cameras.txt, images.txt, images/

#include "nerf/priors.hpp"
#include "nerf/synthetic.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace nerf {

using KeyValues = std::map<std::string, std::string>;

/// `key = value` lines; `#` starts a comment. Duplicate keys: last one wins.
KeyValues read_key_values(const std::filesystem::path& path);
void write_key_values(const std::filesystem::path& path, const KeyValues& kv);
std::string format_vec3(const Vec3& v);
Vec3 parse_vec3(const std::string& text);
std::string format_double(double v);

struct Dataset {
  PriorSet priors;
  std::vector<ImageBuffer> images;  // linear RGB
  double t_near = 0.0;
  double t_far = 1.0;
  Vec3 bbox_min = Vec3::Zero();
  Vec3 bbox_max = Vec3::Zero();
  double scene_diagonal = 1.0;

  const std::vector<CameraView>& views() const { return priors.views; }
};

/// Reads poses, images, priors and dataset.cfg. Without dataset.cfg the
/// bounds come from the depth priors. Images must match their cameras.
Dataset load_dataset(const std::filesystem::path& dir, bool normals_in_camera_frame = false);

struct TestSet {
  std::vector<CameraView> views;
  std::vector<ImageBuffer> images;
};
TestSet load_test_set(const std::filesystem::path& dir);

void write_dataset(const std::filesystem::path& dir, const SyntheticDataset& ds);

/// In-memory equivalent of write_dataset followed by load_dataset, without
/// the 8-bit image quantization.
Dataset to_dataset(const SyntheticDataset& ds);

}  // namespace nerf
