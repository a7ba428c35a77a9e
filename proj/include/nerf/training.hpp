#pragma once

// Losses, ray batches and the optimization loop.
//
// total = L_rgb(coarse) + L_rgb(fine) + lambda_geom * (L_depth + L_norm)
// Depth and normal terms use the fine render only and are weighted per ray
// by the prior confidence. All losses are sums over the batch.

#include "nerf/dataset.hpp"
#include "nerf/field.hpp"
#include "nerf/render.hpp"

#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace nerf {

struct RayBatch {
  std::vector<Ray> rays;
  std::vector<Vec3> gt_color;
  std::vector<double> gt_depth;   // distance along the ray; NaN = unsupervised
  std::vector<Vec3> gt_normal;    // world frame; NaN = unsupervised
  std::vector<double> confidence;

  std::size_t size() const { return rays.size(); }
  void validate() const;
};

struct LossConfig {
  double lambda_geom = 0.1;
  double huber_delta_depth = 1.0;   // in depth units
  double huber_delta_normal = 1.0;
  double depth_unit = 1.0;          // depth residuals are divided by this
  bool use_depth = true;
  bool use_normal = true;
  double min_acc = 0.01;            // rays below this skip the geometric terms

  void validate() const;
  bool geometric() const { return lambda_geom > 0.0 && (use_depth || use_normal); }
  bool needs_normals() const { return lambda_geom > 0.0 && use_normal; }
};

/// 0.5 r^2 for |r| < delta, else delta (|r| - delta / 2), with r = x - y.
double huber(double x, double y, double delta);
/// Component-wise sum.
double huber(const Vec3& x, const Vec3& y, double delta);
/// d huber / d x.
double huber_grad(double x, double y, double delta);

/// Sum over rays of |gt - rendered|^2 for one stage.
double loss_rgb(const RayBatch& batch, std::span<const RenderResult> rendered);
double loss_depth(const RayBatch& batch, std::span<const RenderResult> fine, const LossConfig& cfg);
double loss_norm(const RayBatch& batch, std::span<const RenderResult> fine, const LossConfig& cfg);

struct LossTerms {
  double rgb = 0.0;     // coarse + fine
  double depth = 0.0;
  double normal = 0.0;
  double total = 0.0;

  LossTerms& operator+=(const LossTerms& o);
};

/// Loss value and, when the adjoint vectors are given, d loss / d rendered outputs.
LossTerms total_loss(const RayBatch& batch, std::span<const RayRender> rendered, const LossConfig& cfg,
                     std::vector<RenderAdjoint>* coarse_adj = nullptr, std::vector<RenderAdjoint>* fine_adj = nullptr);

/// Flat index over all pixels of all views: view offset + y * width + x.
struct PixelIndex {
  std::vector<std::size_t> offsets;  // one per view, plus the total at the end

  explicit PixelIndex(const std::vector<CameraView>& views);
  std::size_t total() const { return offsets.back(); }
  void locate(std::size_t id, std::size_t& view, int& x, int& y, const std::vector<CameraView>& views) const;
};

/// n distinct pixel ids, uniform over all pixels (Floyd's algorithm).
std::vector<std::size_t> sample_pixels(std::size_t total, std::size_t n, Rng& rng);

enum class ConfidenceSource { maps, ones };

RayBatch make_batch(const Dataset& data, std::span<const std::size_t> pixel_ids, ConfidenceSource conf);
RayBatch sample_batch(const Dataset& data, std::size_t n, Rng& rng, ConfidenceSource conf = ConfidenceSource::maps);

class Adam {
 public:
  Adam(std::size_t n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-7);
  void step(std::span<float> params, std::span<const float> grad, double lr);
  int steps() const { return t_; }

 private:
  std::vector<double> m_;
  std::vector<double> v_;
  double beta1_, beta2_, eps_;
  int t_ = 0;
};

struct TrainConfig {
  FieldConfig field = FieldConfig::small();
  InitOptions init;
  RenderConfig render;
  LossConfig loss;
  ConfidenceSource confidence = ConfidenceSource::maps;
  int iterations = 2000;
  std::size_t batch_size = 1024;
  double lr = 5e-4;
  double lr_final = 5e-5;
  double depth_unit_fraction = 1.0 / 20.0;  // depth unit = scene diagonal * this
  std::uint64_t seed = 0;
  int threads = 1;
  std::size_t chunk = 64;
  int checkpoint_every = 0;                 // 0: only the final checkpoint
  std::filesystem::path checkpoint_path;    // empty: none written

  void validate() const;
};

struct LossRecord {
  int iteration = 0;
  LossTerms terms;
};

using ProgressFn = std::function<void(const LossRecord&)>;

/// Runs the optimization. Throws Error naming the iteration on a non-finite loss.
FieldParams<float> train(const Dataset& data, const TrainConfig& cfg, std::vector<LossRecord>* history = nullptr,
                         const ProgressFn& progress = {});

/// Columns: iteration, l_rgb, l_depth, l_norm, total.
void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& history);

}  // namespace nerf
