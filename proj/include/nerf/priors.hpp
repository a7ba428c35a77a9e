#pragma once

// Depth/normal priors per view and their multi-view consistency.
//
// A pixel's error is the forward-backward reprojection error: lift it with
// its own depth, look the point up in a source view's depth map, lift it
// again from there and project back. The mean of the K smallest per-source
// squared pixel errors is mapped to a confidence exp(-(e / e_bar)^2).

#include "nerf/geometry.hpp"
#include "nerf/io.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace nerf {

struct ViewPrior {
  ImageBuffer depth;       // 1 channel, camera z, NaN = invalid
  ImageBuffer normal;      // 3 channels, unit, world frame, NaN = invalid
  ImageBuffer confidence;  // 1 channel in [0, 1]; empty until computed
};

struct PriorSet {
  std::vector<CameraView> views;
  std::vector<ViewPrior> maps;

  std::size_t size() const { return views.size(); }
  /// Checks map sizes against the cameras and the value invariants.
  void validate() const;
};

struct ConfidenceConfig {
  int k = 4;
  bool binary = false;
  double contributed_px = 1.0;     // binary variant: round-trip distance below this counts as consistent
  double min_mean_error = 0.25;    // floor on e_bar in px^2
  int threads = 1;
};

/// Depth lookup with pixel centres on integer coordinates. Interpolates
/// inverse depth bilinearly, which is exact on planar surfaces. Any NaN
/// corner or a position outside [0, w-1] x [0, h-1] gives nullopt.
std::optional<double> sample_bilinear(const ImageBuffer& depth, double u, double v);

/// Squared round-trip pixel error against every source view that yields a
/// valid round trip, in source order. Empty when the reference pixel is invalid.
std::vector<double> source_errors(const PriorSet& priors, std::size_t ref, int u, int v);

/// Mean of the k smallest per-source errors; nullopt when fewer than k sources are valid.
std::optional<double> reprojection_error(const PriorSet& priors, std::size_t ref, int u, int v, int k);

/// Arithmetic mean over valid (non-NaN) entries. Throws DomainError when none are valid.
double mean_error(std::span<const float> errors);

/// exp(-(e / e_bar)^2); 0 for invalid e.
double confidence(double e, double e_bar);

double binary_confidence(double e, bool contributed);

/// Per-pixel reprojection errors of one view (NaN where invalid).
ImageBuffer error_map(const PriorSet& priors, std::size_t ref, int k, int threads = 1);

/// Fills `confidence` for every view.
void build_confidence_maps(PriorSet& priors, const ConfidenceConfig& cfg);

/// Back-projects valid pixels with confidence >= min_conf (confidence treated
/// as 1 when not computed) and attaches their normals.
PointCloud fuse_pointcloud(const PriorSet& priors, double min_conf);

/// `depth/<stem>.pfm`, `normal/<stem>.pfm` and, when present, `confidence/<stem>.pfm`
/// under `dir`, one per view. Camera-frame normals are rotated to world when asked.
PriorSet load_priors(const std::filesystem::path& dir, const std::vector<CameraView>& views,
                     bool normals_in_camera_frame = false);
void save_depth_normal(const std::filesystem::path& dir, const PriorSet& priors);
void save_confidence(const std::filesystem::path& dir, const PriorSet& priors);

/// Image name without directory or extension.
std::string view_stem(const std::string& name);

}  // namespace nerf
