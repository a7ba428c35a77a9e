#include "nerf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

namespace nerf {

namespace {

void check_same(const ImageBuffer& a, const ImageBuffer& b, const char* what) {
  a.check_layout();
  b.check_layout();
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw ContractError(std::string(what) + ": image dimensions differ");
  if (a.empty()) throw ContractError(std::string(what) + ": empty image");
}

}  // namespace

double mean_squared_error(const ImageBuffer& a, const ImageBuffer& b) {
  check_same(a, b, "mse");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.data.size());
}

double psnr_from_mse(double mse) {
  if (!(mse >= 0.0)) throw DomainError("psnr: invalid MSE");
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

double psnr(const ImageBuffer& rendered, const ImageBuffer& gt) {
  return psnr_from_mse(mean_squared_error(rendered, gt));
}

ImageBuffer to_gray(const ImageBuffer& image) {
  ImageBuffer g(image.width, image.height, 1);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      double s = 0.0;
      for (int c = 0; c < image.channels; ++c) s += image.at(x, y, c);
      g.at(x, y) = static_cast<float>(s / image.channels);
    }
  return g;
}

std::vector<double> gaussian_window(int window, double sigma) {
  if (window < 1 || !(sigma > 0.0)) throw DomainError("gaussian_window: need window >= 1 and sigma > 0");
  std::vector<double> w(static_cast<std::size_t>(window));
  const double c = 0.5 * (window - 1);
  for (int i = 0; i < window; ++i) w[static_cast<std::size_t>(i)] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= s;
  return w;
}

double ssim(const ImageBuffer& rendered, const ImageBuffer& gt, const SsimOptions& opt) {
  check_same(rendered, gt, "ssim");
  const int n = opt.window;
  if (rendered.width < n || rendered.height < n) throw DomainError("ssim: image smaller than the window");
  const ImageBuffer ga = to_gray(rendered), gb = to_gray(gt);
  const int w = ga.width, h = ga.height;
  const int ow = w - n + 1, oh = h - n + 1;
  const auto win = gaussian_window(n, opt.sigma);

  // Separable valid-region filtering of x, y, x^2, y^2, xy.
  auto filter = [&](auto&& value) {
    std::vector<double> rows(static_cast<std::size_t>(ow) * h), out(static_cast<std::size_t>(ow) * oh);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < ow; ++x) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += win[static_cast<std::size_t>(i)] * value(x + i, y);
        rows[static_cast<std::size_t>(y) * ow + x] = s;
      }
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += win[static_cast<std::size_t>(i)] * rows[static_cast<std::size_t>(y + i) * ow + x];
        out[static_cast<std::size_t>(y) * ow + x] = s;
      }
    return out;
  };
  auto a = [&](int x, int y) { return static_cast<double>(ga.at(x, y)); };
  auto b = [&](int x, int y) { return static_cast<double>(gb.at(x, y)); };
  const auto mu_a = filter(a);
  const auto mu_b = filter(b);
  const auto aa = filter([&](int x, int y) { return a(x, y) * a(x, y); });
  const auto bb = filter([&](int x, int y) { return b(x, y) * b(x, y); });
  const auto ab = filter([&](int x, int y) { return a(x, y) * b(x, y); });

  const double c1 = (opt.k1 * opt.range) * (opt.k1 * opt.range);
  const double c2 = (opt.k2 * opt.range) * (opt.k2 * opt.range);
  double sum = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double va = aa[i] - mu_a[i] * mu_a[i];
    const double vb = bb[i] - mu_b[i] * mu_b[i];
    const double cov = ab[i] - mu_a[i] * mu_b[i];
    sum += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
           ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
  }
  return sum / static_cast<double>(mu_a.size());
}

double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x() - b.x(), dy = a.y() - b.y(), dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

KdTree::KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  if (points_.empty()) throw DomainError("KdTree: empty point set");
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * points_.size() / 8 + 2);
  build(0, static_cast<std::uint32_t>(points_.size()));
}

std::uint32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
  constexpr std::uint32_t kLeaf = 8;
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back({});
  if (end - begin <= kLeaf) {
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    return id;
  }
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis;
  (hi - lo).maxCoeff(&axis);
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) { return points_[a][axis] < points_[b][axis]; });
  const double split = points_[order_[mid]][axis];
  const std::uint32_t left = build(begin, mid);
  const std::uint32_t right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(std::uint32_t id, const Vec3& q, double& best) const {
  const Node& node = nodes_[id];
  if (node.axis < 0) {
    for (std::uint32_t i = node.begin; i < node.end; ++i) best = std::min(best, squared_distance(q, points_[order_[i]]));
    return;
  }
  // Left holds coordinates <= split, right holds >= split.
  const double d = q[node.axis] - node.split;
  const std::uint32_t near = d < 0.0 ? node.left : node.right;
  const std::uint32_t far = d < 0.0 ? node.right : node.left;
  search(near, q, best);
  if (d * d <= best) search(far, q, best);
}

double KdTree::nearest_squared(const Vec3& query) const {
  double best = std::numeric_limits<double>::infinity();
  search(0, query, best);
  return best;
}

namespace {

double directed(std::span<const Vec3> from, const KdTree& to) {
  double sum = 0.0;
  for (const Vec3& p : from) sum += to.nearest_squared(p);
  return sum / static_cast<double>(from.size());
}

double directed_brute(std::span<const Vec3> from, std::span<const Vec3> to) {
  double sum = 0.0;
  for (const Vec3& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& q : to) best = std::min(best, squared_distance(p, q));
    sum += best;
  }
  return sum / static_cast<double>(from.size());
}

void check_nonempty(std::span<const Vec3> p, std::span<const Vec3> q) {
  if (p.empty() || q.empty()) throw DomainError("chamfer: empty point set");
}

}  // namespace

double chamfer(std::span<const Vec3> p, std::span<const Vec3> q) {
  check_nonempty(p, q);
  const KdTree tp(p), tq(q);
  return directed(p, tq) + directed(q, tp);
}

double chamfer_brute_force(std::span<const Vec3> p, std::span<const Vec3> q) {
  check_nonempty(p, q);
  return directed_brute(p, q) + directed_brute(q, p);
}

template <typename T>
ViewRender render_view(const FieldParams<T>& params, const CameraView& view, double t_near, double t_far,
                       const RenderConfig& cfg, std::uint64_t seed, int threads) {
  const auto& k = view.intrinsics;
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(k.width) * k.height);
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x) rays.push_back(pixel_to_ray(k, view.pose, x, y, t_near, t_far));
  const auto out = render_rays(params, std::span<const Ray>(rays), cfg, seed, threads);
  ViewRender r{ImageBuffer(k.width, k.height, 3), ImageBuffer(k.width, k.height, 1), ImageBuffer(k.width, k.height, 3)};
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * k.width + x;
      const RenderResult& f = out[i].fine;
      r.color.set_rgb(x, y, f.color.cwiseMax(0.0).cwiseMin(1.0));
      if (f.acc >= 0.5)
        r.depth.at(x, y) = static_cast<float>(f.depth / f.acc);
      else
        r.depth.set_invalid(x, y);
      if (f.normal_valid)
        r.normal.set_rgb(x, y, f.normal);
      else
        r.normal.set_invalid(x, y);
    }
  }
  return r;
}

template <typename T>
std::vector<ViewMetrics> eval_views(const FieldParams<T>& params, const TestSet& test, double t_near, double t_far,
                                    const RenderConfig& cfg, std::uint64_t seed, int threads) {
  if (test.views.empty()) throw ContractError("eval: empty test set");
  if (test.images.size() != test.views.size()) throw ContractError("eval: one image per test view required");
  RenderConfig color_only = cfg;
  color_only.normals = false;
  std::vector<ViewMetrics> rows;
  for (std::size_t i = 0; i < test.views.size(); ++i) {
    const ViewRender r = render_view(params, test.views[i], t_near, t_far, color_only, mix_seed(seed, i), threads);
    rows.push_back({test.views[i].name, psnr(r.color, test.images[i]), ssim(r.color, test.images[i])});
  }
  return rows;
}

double eval_mesh(const TriangleMesh& mesh, std::span<const Vec3> gt_points) {
  if (mesh.vertices.empty()) throw DomainError("eval_mesh: mesh has no vertices");
  return chamfer(mesh.vertices, gt_points);
}

void write_views_csv(const std::filesystem::path& path, const std::vector<ViewMetrics>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "name,psnr,ssim\n";
  char line[256];
  double sp = 0.0, ss = 0.0;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%s,%.9g,%.9g\n", r.name.c_str(), r.psnr, r.ssim);
    out << line;
    sp += r.psnr;
    ss += r.ssim;
  }
  if (!rows.empty()) {
    std::snprintf(line, sizeof(line), "mean,%.9g,%.9g\n", sp / rows.size(), ss / rows.size());
    out << line;
  }
  if (!out) throw Error("cannot write " + path.string());
}

void write_mesh_csv(const std::filesystem::path& path, double chamfer_value) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  char line[64];
  std::snprintf(line, sizeof(line), "%.12g\n", chamfer_value);
  out << "chamfer\n" << line;
  if (!out) throw Error("cannot write " + path.string());
}

template std::vector<ViewMetrics> eval_views<float>(const FieldParams<float>&, const TestSet&, double, double,
                                                    const RenderConfig&, std::uint64_t, int);
template std::vector<ViewMetrics> eval_views<double>(const FieldParams<double>&, const TestSet&, double, double,
                                                     const RenderConfig&, std::uint64_t, int);
template ViewRender render_view<float>(const FieldParams<float>&, const CameraView&, double, double,
                                       const RenderConfig&, std::uint64_t, int);
template ViewRender render_view<double>(const FieldParams<double>&, const CameraView&, double, double,
                                        const RenderConfig&, std::uint64_t, int);

}  // namespace nerf
