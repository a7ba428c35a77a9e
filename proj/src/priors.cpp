#include "nerf/priors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace nerf {

namespace fs = std::filesystem;

void PriorSet::validate() const {
  if (maps.size() != views.size()) throw ContractError("priors: one map set per view required");
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& cam = views[i].intrinsics;
    const auto& m = maps[i];
    const std::string& name = views[i].name;
    auto check_dims = [&](const ImageBuffer& img, int channels, const char* what) {
      if (img.width != cam.width || img.height != cam.height || img.channels != channels)
        throw ContractError("priors: " + std::string(what) + " map of " + name + " does not match the camera");
      img.check_layout();
    };
    check_dims(m.depth, 1, "depth");
    if (!m.normal.empty()) check_dims(m.normal, 3, "normal");
    if (!m.confidence.empty()) check_dims(m.confidence, 1, "confidence");
    for (int y = 0; y < cam.height; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        if (m.depth.valid(x, y) && !(m.depth.at(x, y) > 0.0f))
          throw DomainError("priors: non-positive depth in " + name);
        if (!m.normal.empty() && m.normal.valid(x, y) && std::abs(m.normal.rgb(x, y).norm() - 1.0) > 1e-3)
          throw DomainError("priors: non-unit normal in " + name);
        if (!m.confidence.empty()) {
          const float c = m.confidence.at(x, y);
          if (!(c >= 0.0f && c <= 1.0f)) throw DomainError("priors: confidence outside [0,1] in " + name);
        }
      }
    }
  }
}

std::optional<double> sample_bilinear(const ImageBuffer& depth, double u, double v) {
  if (!(u >= 0.0 && v >= 0.0 && u <= depth.width - 1 && v <= depth.height - 1)) return std::nullopt;
  const int x0 = std::min(static_cast<int>(u), std::max(depth.width - 2, 0));
  const int y0 = std::min(static_cast<int>(v), std::max(depth.height - 2, 0));
  const int x1 = std::min(x0 + 1, depth.width - 1);
  const int y1 = std::min(y0 + 1, depth.height - 1);
  const double fx = u - x0;
  const double fy = v - y0;
  const double d00 = depth.at(x0, y0), d10 = depth.at(x1, y0);
  const double d01 = depth.at(x0, y1), d11 = depth.at(x1, y1);
  if (!(d00 > 0.0 && d10 > 0.0 && d01 > 0.0 && d11 > 0.0)) return std::nullopt;  // NaN fails too
  // 1/z is affine in image coordinates across a plane; z is not.
  const double inv = (1 - fy) * ((1 - fx) / d00 + fx / d10) + fy * ((1 - fx) / d01 + fx / d11);
  return 1.0 / inv;
}

std::vector<double> source_errors(const PriorSet& priors, std::size_t ref, int u, int v) {
  std::vector<double> errors;
  const CameraView& rv = priors.views.at(ref);
  const ImageBuffer& rd = priors.maps.at(ref).depth;
  if (u < 0 || v < 0 || u >= rd.width || v >= rd.height) throw BoundsError("source_errors: pixel outside image");
  const double d = rd.at(u, v);
  if (!(d > 0.0)) return errors;
  const Vec3 x = backproject(rv.intrinsics, rv.pose, u, v, d);
  for (std::size_t k = 0; k < priors.size(); ++k) {
    if (k == ref) continue;
    const CameraView& sv = priors.views[k];
    const auto p = project(sv.intrinsics, sv.pose, x);
    if (!p) continue;
    const auto ds = sample_bilinear(priors.maps[k].depth, p->u, p->v);
    if (!ds || !(*ds > 0.0)) continue;
    const Vec3 y = backproject(sv.intrinsics, sv.pose, p->u, p->v, *ds);
    const auto q = project(rv.intrinsics, rv.pose, y);
    if (!q) continue;
    const double du = u - q->u;
    const double dv = v - q->v;
    errors.push_back(du * du + dv * dv);
  }
  return errors;
}

namespace {

std::optional<double> mean_of_smallest(std::vector<double> errors, int k) {
  if (k < 1) throw DomainError("reprojection_error: K must be >= 1");
  if (errors.size() < static_cast<std::size_t>(k)) return std::nullopt;
  std::partial_sort(errors.begin(), errors.begin() + k, errors.end());
  double sum = 0.0;
  for (int i = 0; i < k; ++i) sum += errors[static_cast<std::size_t>(i)];
  return sum / k;
}

}  // namespace

std::optional<double> reprojection_error(const PriorSet& priors, std::size_t ref, int u, int v, int k) {
  return mean_of_smallest(source_errors(priors, ref, u, v), k);
}

double mean_error(std::span<const float> errors) {
  double sum = 0.0;
  std::size_t n = 0;
  for (float e : errors) {
    if (std::isnan(e)) continue;
    sum += e;
    ++n;
  }
  if (n == 0) throw DomainError("mean_error: no valid errors");
  return sum / static_cast<double>(n);
}

double confidence(double e, double e_bar) {
  if (!(e >= 0.0) || std::isinf(e)) return 0.0;
  if (!(e_bar > 0.0)) throw DomainError("confidence: mean error must be positive");
  const double r = e / e_bar;
  return std::exp(-r * r);
}

double binary_confidence(double /*e*/, bool contributed) { return contributed ? 1.0 : 0.0; }

ImageBuffer error_map(const PriorSet& priors, std::size_t ref, int k, int threads) {
  const ImageBuffer& depth = priors.maps.at(ref).depth;
  ImageBuffer out(depth.width, depth.height, 1, std::numeric_limits<float>::quiet_NaN());
  parallel_for(static_cast<std::size_t>(depth.height), threads, [&](std::size_t y) {
    for (int x = 0; x < depth.width; ++x) {
      const auto e = reprojection_error(priors, ref, x, static_cast<int>(y), k);
      if (e) out.at(x, static_cast<int>(y)) = static_cast<float>(*e);
    }
  });
  return out;
}

void build_confidence_maps(PriorSet& priors, const ConfidenceConfig& cfg) {
  if (cfg.k < 1) throw DomainError("confidence: K must be >= 1");
  if (priors.size() < static_cast<std::size_t>(cfg.k) + 1)
    throw ContractError("confidence: need at least K+1 views");
  for (std::size_t ref = 0; ref < priors.size(); ++ref) {
    const ImageBuffer& depth = priors.maps[ref].depth;
    ImageBuffer conf(depth.width, depth.height, 1, 0.0f);
    if (cfg.binary) {
      const double limit = cfg.contributed_px * cfg.contributed_px;
      parallel_for(static_cast<std::size_t>(depth.height), cfg.threads, [&](std::size_t y) {
        for (int x = 0; x < depth.width; ++x) {
          const auto errs = source_errors(priors, ref, x, static_cast<int>(y));
          const auto good = std::count_if(errs.begin(), errs.end(), [&](double e) { return e < limit; });
          conf.at(x, static_cast<int>(y)) = static_cast<float>(binary_confidence(0.0, good >= cfg.k));
        }
      });
    } else {
      const ImageBuffer errors = error_map(priors, ref, cfg.k, cfg.threads);
      const bool any = std::any_of(errors.data.begin(), errors.data.end(), [](float e) { return !std::isnan(e); });
      if (any) {
        const double e_bar = std::max(mean_error(errors.data), cfg.min_mean_error);
        for (std::size_t i = 0; i < errors.data.size(); ++i)
          conf.data[i] = static_cast<float>(std::isnan(errors.data[i]) ? 0.0 : confidence(errors.data[i], e_bar));
      }
    }
    priors.maps[ref].confidence = std::move(conf);
  }
}

PointCloud fuse_pointcloud(const PriorSet& priors, double min_conf) {
  PointCloud cloud;
  bool with_normals = true;
  for (const auto& m : priors.maps) with_normals = with_normals && !m.normal.empty();
  for (std::size_t i = 0; i < priors.size(); ++i) {
    const auto& view = priors.views[i];
    const auto& m = priors.maps[i];
    for (int y = 0; y < m.depth.height; ++y) {
      for (int x = 0; x < m.depth.width; ++x) {
        if (!m.depth.valid(x, y)) continue;
        const double c = m.confidence.empty() ? 1.0 : m.confidence.at(x, y);
        if (!(c >= min_conf)) continue;
        if (with_normals && !m.normal.valid(x, y)) continue;
        cloud.points.push_back(backproject(view.intrinsics, view.pose, x, y, m.depth.at(x, y)));
        if (with_normals) cloud.normals.push_back(m.normal.rgb(x, y));
      }
    }
  }
  return cloud;
}

std::string view_stem(const std::string& name) { return fs::path(name).stem().string(); }

PriorSet load_priors(const fs::path& dir, const std::vector<CameraView>& views, bool normals_in_camera_frame) {
  PriorSet priors;
  priors.views = views;
  priors.maps.resize(views.size());
  for (std::size_t i = 0; i < views.size(); ++i) {
    const std::string stem = view_stem(views[i].name) + ".pfm";
    auto& m = priors.maps[i];
    m.depth = read_pfm(dir / "depth" / stem);
    const fs::path normal_path = dir / "normal" / stem;
    if (fs::exists(normal_path)) {
      m.normal = read_pfm(normal_path);
      if (normals_in_camera_frame && m.normal.channels == 3) {
        const Mat3 rt = views[i].pose.rotation.transpose();
        for (int y = 0; y < m.normal.height; ++y)
          for (int x = 0; x < m.normal.width; ++x)
            if (m.normal.valid(x, y)) m.normal.set_rgb(x, y, rt * m.normal.rgb(x, y));
      }
    }
    const fs::path conf_path = dir / "confidence" / stem;
    if (fs::exists(conf_path)) m.confidence = read_pfm(conf_path);
  }
  priors.validate();
  return priors;
}

void save_depth_normal(const fs::path& dir, const PriorSet& priors) {
  for (std::size_t i = 0; i < priors.size(); ++i) {
    const std::string stem = view_stem(priors.views[i].name) + ".pfm";
    write_pfm(dir / "depth" / stem, priors.maps[i].depth);
    if (!priors.maps[i].normal.empty()) write_pfm(dir / "normal" / stem, priors.maps[i].normal);
  }
}

void save_confidence(const fs::path& dir, const PriorSet& priors) {
  for (std::size_t i = 0; i < priors.size(); ++i) {
    if (priors.maps[i].confidence.empty()) throw ContractError("save_confidence: confidence not computed");
    write_pfm(dir / "confidence" / (view_stem(priors.views[i].name) + ".pfm"), priors.maps[i].confidence);
  }
}

}  // namespace nerf
