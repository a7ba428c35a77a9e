#pragma once

// Image and geometry metrics: PSNR, SSIM, Chamfer distance.

#include "nerf/dataset.hpp"
#include "nerf/field.hpp"
#include "nerf/io.hpp"
#include "nerf/render.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace nerf {

double mean_squared_error(const ImageBuffer& a, const ImageBuffer& b);
/// -10 log10(MSE); +infinity for identical images.
double psnr(const ImageBuffer& rendered, const ImageBuffer& gt);
double psnr_from_mse(double mse);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double range = 1.0;
};

/// Mean local SSIM over window positions that fit inside the image, on the
/// channel-mean grayscale image.
double ssim(const ImageBuffer& rendered, const ImageBuffer& gt, const SsimOptions& opt = {});
/// Channel-mean grayscale as a 1-channel image.
ImageBuffer to_gray(const ImageBuffer& image);
/// Normalized 1-D Gaussian weights of length `window`.
std::vector<double> gaussian_window(int window, double sigma);

double squared_distance(const Vec3& a, const Vec3& b);

/// Exact nearest-neighbour queries over a fixed point set.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points);
  /// Smallest squared_distance(query, p) over the set.
  double nearest_squared(const Vec3& query) const;
  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    int axis = -1;  // -1 for leaves
    double split = 0.0;
    std::uint32_t begin = 0, end = 0;  // leaf range in order_
    std::uint32_t left = 0, right = 0;
  };
  std::uint32_t build(std::uint32_t begin, std::uint32_t end);
  void search(std::uint32_t node, const Vec3& q, double& best) const;

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

/// mean_p min_q |p-q|^2 + mean_q min_p |p-q|^2.
double chamfer(std::span<const Vec3> p, std::span<const Vec3> q);
double chamfer_brute_force(std::span<const Vec3> p, std::span<const Vec3> q);

struct ViewMetrics {
  std::string name;
  double psnr = 0.0;
  double ssim = 0.0;
};

/// Renders each test view (fine color) and scores it against its image.
template <typename T>
std::vector<ViewMetrics> eval_views(const FieldParams<T>& params, const TestSet& test, double t_near, double t_far,
                                    const RenderConfig& cfg, std::uint64_t seed, int threads);

/// Renders one view: fine color, depth and normal images.
struct ViewRender {
  ImageBuffer color;
  ImageBuffer depth;   // expected ray distance over acc, NaN where acc < 0.5
  ImageBuffer normal;  // NaN where invalid
};
template <typename T>
ViewRender render_view(const FieldParams<T>& params, const CameraView& view, double t_near, double t_far,
                       const RenderConfig& cfg, std::uint64_t seed, int threads);

/// Chamfer between mesh vertices and reference points.
double eval_mesh(const TriangleMesh& mesh, std::span<const Vec3> gt_points);

/// name, psnr, ssim rows plus a final "mean" row.
void write_views_csv(const std::filesystem::path& path, const std::vector<ViewMetrics>& rows);
void write_mesh_csv(const std::filesystem::path& path, double chamfer_value);

}  // namespace nerf
