#pragma once

// Volumetric rendering by quadrature: stratified and hierarchical sampling,
// alpha-compositing weights, expected color/depth/normal per ray.
//
// Two entry points:
//   render_ray  - generic, any RadianceSource (analytic doubles, inference)
//   RenderPass  - batched over many rays on one network pair, keeps the
//                 activation traces and backpropagates per-ray adjoints

#include "nerf/field.hpp"
#include "nerf/geometry.hpp"

#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace nerf {

/// Source of uniform draws in [0, 1). An Rng converts implicitly.
using UniformFn = std::function<double()>;

struct RenderConfig {
  int n_coarse = 64;
  int n_fine = 128;
  bool normals = true;
  double normal_weight_threshold = 1e-4;  // per-sample normals only where w_i exceeds this
  double fd_step = 1e-2;                  // central-difference step for density gradients
  bool perturb = true;                    // false: bin midpoints, no random draws

  void validate() const;
};

inline constexpr double kResampleFloor = 1e-5;
inline constexpr double kMinNormalNorm = 1e-8;

/// Samples along one ray and the field values at them.
struct SampleSet {
  std::vector<double> t;
  std::vector<double> delta;
  std::vector<double> sigma;
  std::vector<Vec3> color;
  std::vector<Vec3> normal;          // empty, or one per sample (zero where invalid)
  std::vector<char> normal_valid;

  std::size_t size() const { return t.size(); }
};

struct RenderResult {
  Vec3 color = Vec3::Zero();
  double depth = 0.0;
  Vec3 normal = Vec3::Zero();
  bool normal_valid = false;
  std::vector<double> t;
  std::vector<double> weights;
  double acc = 0.0;
};

/// One draw per equal bin of [t_near, t_far], ascending.
std::vector<double> stratified_samples(const Ray& ray, int n, const UniformFn& u01);
/// Bin midpoints.
std::vector<double> midpoint_samples(const Ray& ray, int n);

/// delta_i = t_{i+1} - t_i, last one t_far - t_N.
std::vector<double> sample_deltas(std::span<const double> t, double t_far);

/// w_i = T_i (1 - exp(-sigma_i delta_i)), T_i = prod_{j<i} exp(-sigma_j delta_j).
std::vector<double> quadrature_weights(std::span<const double> sigma, std::span<const double> delta);

Vec3 render_color(const SampleSet& samples);
double render_depth(const SampleSet& samples);
/// Normalized sum of w_i n_i over valid sample normals; nullopt when the sum vanishes.
std::optional<Vec3> render_normal(const SampleSet& samples);

/// All three integrals plus weights and acc in one pass.
RenderResult integrate(const SampleSet& samples);

/// Inverse-transform draws from the piecewise-constant pdf of the coarse
/// weights (bins [t_i, t_{i+1}), last bin ends at t_far, floor kResampleFloor),
/// merged and sorted with the coarse samples. All-zero weights fall back to
/// stratified sampling.
std::vector<double> hierarchical_resample(const Ray& ray, std::span<const double> coarse_t,
                                          std::span<const double> coarse_weights, int n_fine, const UniformFn& u01);

/// Coarse weights averaged with their successor. Under the left-endpoint
/// quadrature a surface crossing lies in the bin before the first opaque
/// sample, so the fine pdf puts half of that sample's mass there.
std::vector<double> resampling_weights(std::span<const double> coarse_weights);

struct RayRender {
  RenderResult coarse;
  RenderResult fine;
};

/// Coarse pass, resample from resampling_weights(), fine pass over the union,
/// fine-network normals.
RayRender render_ray(const RadianceSource& source, const Ray& ray, const RenderConfig& cfg, const UniformFn& u01);

/// Adjoint of the loss with respect to one rendered ray.
struct RenderAdjoint {
  Vec3 color = Vec3::Zero();
  double depth = 0.0;
  Vec3 normal = Vec3::Zero();  // with respect to the normalized rendered normal
};

/// Sample positions used for one ray; recorded by forward() and replayable.
struct RaySchedule {
  std::vector<double> coarse_t;
  std::vector<double> fine_t;          // union of coarse and fine draws
  std::vector<char> normal_mask;       // per fine sample; empty when normals are off
};

template <typename T>
class RenderPass {
 public:
  RenderPass(const FieldParams<T>& params, const RenderConfig& cfg) : params_(params), cfg_(cfg) {}

  /// Renders `rays`, drawing sample positions from `u01`.
  void forward(std::span<const Ray> rays, const UniformFn& u01, bool normals);
  /// Renders `rays` at previously recorded sample positions.
  void forward(std::span<const Ray> rays, std::span<const RaySchedule> schedules, bool normals);

  const std::vector<RayRender>& results() const { return results_; }
  const std::vector<RaySchedule>& schedules() const { return schedules_; }

  /// Fingerprint of every ReLU on/off state in the last forward pass. Equal
  /// fingerprints mean both passes sit on the same linear piece of the networks.
  std::uint64_t activation_pattern() const;

  /// Accumulates parameter gradients. Coarse adjoints use only `color`.
  /// Sample positions are treated as constants.
  void backward(std::span<const RenderAdjoint> coarse, std::span<const RenderAdjoint> fine,
                std::span<T> grad_coarse, std::span<T> grad_fine) const;

 private:
  struct StageCache {
    std::vector<SampleSet> samples;
    std::vector<std::vector<double>> trans_after;  // T_{i+1}
    std::vector<std::size_t> offset;               // first column of each ray in the trace
    ForwardTrace<T> trace;
  };

  void run(std::span<const Ray> rays, const UniformFn* u01, std::span<const RaySchedule> frozen, bool normals);
  void evaluate_stage(Stage stage, std::span<const Ray> rays, StageCache& cache, bool fine);
  void compute_normals(std::span<const Ray> rays);
  void finish_stage(StageCache& cache, bool fine);

  const FieldParams<T>& params_;
  RenderConfig cfg_;
  bool normals_ = false;
  std::vector<RaySchedule> schedules_;
  std::vector<RayRender> results_;
  StageCache coarse_;
  StageCache fine_;
  // Per ray: fine-sample indices that received a normal, their gradient norms,
  // and the first column of their six offset points in normal_trace_.
  std::vector<std::vector<int>> normal_index_;
  std::vector<std::vector<double>> grad_norm_;
  std::vector<std::size_t> normal_offset_;
  std::vector<double> rendered_norm_;  // |sum w_i n_i| per ray
  ForwardTrace<T> normal_trace_;
};

/// Renders rays with a trained field, in chunks of `chunk` rays on `threads`
/// workers. Sample jitter is seeded per chunk so results do not depend on
/// the thread count.
template <typename T>
std::vector<RayRender> render_rays(const FieldParams<T>& params, std::span<const Ray> rays, const RenderConfig& cfg,
                                   std::uint64_t seed, int threads, std::size_t chunk = 64);

}  // namespace nerf
