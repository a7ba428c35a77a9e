#include "nerf/render.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nerf {

void RenderConfig::validate() const {
  if (n_coarse < 1) throw ContractError("render: n_coarse must be >= 1");
  if (n_fine < 0) throw ContractError("render: n_fine must be >= 0");
  if (!(fd_step > 0.0)) throw ContractError("render: fd_step must be positive");
  if (!(normal_weight_threshold >= 0.0)) throw ContractError("render: normal threshold must be >= 0");
}

namespace {

void check_ray(const Ray& ray) {
  if (!(ray.t_near >= 0.0 && ray.t_near < ray.t_far)) throw DomainError("render: need 0 <= t_near < t_far");
  if (std::abs(ray.direction.norm() - 1.0) > 1e-9) throw DomainError("render: ray direction must be unit length");
}

// Weights and transmittance after each sample.
void composite(std::span<const double> sigma, std::span<const double> delta, std::vector<double>& w,
               std::vector<double>* trans_after) {
  if (sigma.size() != delta.size()) throw ContractError("quadrature: sigma and delta lengths differ");
  w.resize(sigma.size());
  if (trans_after) trans_after->resize(sigma.size());
  double trans = 1.0;
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    const double tau = sigma[i] * delta[i];
    w[i] = trans * -std::expm1(-tau);
    trans *= std::exp(-tau);
    if (trans_after) (*trans_after)[i] = trans;
  }
}

}  // namespace

std::vector<double> stratified_samples(const Ray& ray, int n, const UniformFn& u01) {
  if (n < 1) throw ContractError("stratified_samples: n must be >= 1");
  const double span = ray.t_far - ray.t_near;
  std::vector<double> t(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) t[static_cast<std::size_t>(i)] = ray.t_near + (i + u01()) / n * span;
  return t;
}

std::vector<double> midpoint_samples(const Ray& ray, int n) {
  return stratified_samples(ray, n, [] { return 0.5; });
}

std::vector<double> sample_deltas(std::span<const double> t, double t_far) {
  std::vector<double> d(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) d[i] = (i + 1 < t.size() ? t[i + 1] : t_far) - t[i];
  return d;
}

std::vector<double> quadrature_weights(std::span<const double> sigma, std::span<const double> delta) {
  for (std::size_t i = 0; i < sigma.size(); ++i)
    if (!(sigma[i] >= 0.0)) throw DomainError("quadrature: negative or NaN density");
  for (std::size_t i = 0; i < delta.size(); ++i)
    if (!(delta[i] >= 0.0)) throw DomainError("quadrature: negative or NaN interval");
  std::vector<double> w;
  composite(sigma, delta, w, nullptr);
  return w;
}

RenderResult integrate(const SampleSet& s) {
  RenderResult r;
  r.t = s.t;
  r.weights = quadrature_weights(s.sigma, s.delta);
  if (s.color.size() != s.size()) throw ContractError("integrate: color count differs from sample count");
  const bool with_normals = !s.normal.empty();
  if (with_normals && (s.normal.size() != s.size() || s.normal_valid.size() != s.size()))
    throw ContractError("integrate: normal count differs from sample count");
  Vec3 m = Vec3::Zero();
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double w = r.weights[i];
    r.color += w * s.color[i];
    r.depth += w * s.t[i];
    r.acc += w;
    if (with_normals && s.normal_valid[i]) m += w * s.normal[i];
  }
  const double norm = m.norm();
  if (norm > kMinNormalNorm) {
    r.normal = m / norm;
    r.normal_valid = true;
  }
  return r;
}

Vec3 render_color(const SampleSet& samples) { return integrate(samples).color; }
double render_depth(const SampleSet& samples) { return integrate(samples).depth; }

std::optional<Vec3> render_normal(const SampleSet& samples) {
  const RenderResult r = integrate(samples);
  if (!r.normal_valid) return std::nullopt;
  return r.normal;
}

std::vector<double> hierarchical_resample(const Ray& ray, std::span<const double> coarse_t,
                                          std::span<const double> coarse_weights, int n_fine, const UniformFn& u01) {
  if (coarse_t.size() != coarse_weights.size() || coarse_t.empty())
    throw ContractError("hierarchical_resample: need matching non-empty t and weights");
  if (n_fine < 0) throw ContractError("hierarchical_resample: negative sample count");
  std::vector<double> out(coarse_t.begin(), coarse_t.end());
  if (n_fine == 0) return out;

  const double total = std::accumulate(coarse_weights.begin(), coarse_weights.end(), 0.0);
  if (!(total > 0.0)) {
    const auto extra = stratified_samples(ray, n_fine, u01);
    out.insert(out.end(), extra.begin(), extra.end());
    std::sort(out.begin(), out.end());
    return out;
  }

  const std::size_t n = coarse_t.size();
  std::vector<double> cdf(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) cdf[i + 1] = cdf[i] + std::max(coarse_weights[i], 0.0) + kResampleFloor;
  const double norm = cdf[n];
  for (double& c : cdf) c /= norm;

  for (int j = 0; j < n_fine; ++j) {
    const double u = (j + u01()) / n_fine;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    std::size_t b = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, (it - cdf.begin()) - 1));
    b = std::min(b, n - 1);
    const double lo = coarse_t[b];
    const double hi = b + 1 < n ? coarse_t[b + 1] : ray.t_far;
    const double p = cdf[b + 1] - cdf[b];
    const double frac = p > 0.0 ? std::clamp((u - cdf[b]) / p, 0.0, 1.0) : 0.0;
    out.push_back(std::min(lo + frac * (hi - lo), std::nextafter(hi, lo)));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<double> resampling_weights(std::span<const double> coarse_weights) {
  std::vector<double> out(coarse_weights.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 0.5 * (coarse_weights[i] + (i + 1 < out.size() ? coarse_weights[i + 1] : 0.0));
  return out;
}

namespace {

SampleSet evaluate_samples(const RadianceSource& source, Stage stage, const Ray& ray, std::vector<double> t) {
  SampleSet s;
  s.t = std::move(t);
  s.delta = sample_deltas(s.t, ray.t_far);
  std::vector<Vec3> points(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) points[i] = ray.at(s.t[i]);
  s.sigma.resize(s.size());
  s.color.resize(s.size());
  source.evaluate(stage, points, ray.direction, s.sigma, s.color);
  return s;
}

}  // namespace

RayRender render_ray(const RadianceSource& source, const Ray& ray, const RenderConfig& cfg, const UniformFn& u01) {
  cfg.validate();
  check_ray(ray);
  const UniformFn half = [] { return 0.5; };
  const UniformFn& draw = cfg.perturb ? u01 : half;

  RayRender out;
  SampleSet coarse = evaluate_samples(source, Stage::coarse, ray, stratified_samples(ray, cfg.n_coarse, draw));
  out.coarse = integrate(coarse);

  auto fine_t = hierarchical_resample(ray, coarse.t, resampling_weights(out.coarse.weights), cfg.n_fine, draw);
  SampleSet fine = evaluate_samples(source, Stage::fine, ray, std::move(fine_t));

  if (cfg.normals) {
    const auto w = quadrature_weights(fine.sigma, fine.delta);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < fine.size(); ++i)
      if (w[i] > cfg.normal_weight_threshold) idx.push_back(i);
    std::vector<Vec3> probes;
    probes.reserve(idx.size() * 6);
    const double h = cfg.fd_step;
    for (std::size_t i : idx) {
      const Vec3 x = ray.at(fine.t[i]);
      for (int a = 0; a < 3; ++a) {
        Vec3 e = Vec3::Zero();
        e[a] = h;
        probes.push_back(x + e);
        probes.push_back(x - e);
      }
    }
    std::vector<double> ps(probes.size());
    if (!probes.empty()) source.density(Stage::fine, probes, ps);
    fine.normal.assign(fine.size(), Vec3::Zero());
    fine.normal_valid.assign(fine.size(), 0);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      Vec3 g;
      for (int a = 0; a < 3; ++a) g[a] = (ps[6 * k + 2 * a] - ps[6 * k + 2 * a + 1]) / (2.0 * h);
      const double gn = g.norm();
      if (gn > kMinGradientNorm) {
        fine.normal[idx[k]] = -g / gn;
        fine.normal_valid[idx[k]] = 1;
      }
    }
  }
  out.fine = integrate(fine);
  return out;
}

template <typename T>
void RenderPass<T>::forward(std::span<const Ray> rays, const UniformFn& u01, bool normals) {
  run(rays, &u01, {}, normals);
}

template <typename T>
void RenderPass<T>::forward(std::span<const Ray> rays, std::span<const RaySchedule> schedules, bool normals) {
  if (schedules.size() != rays.size()) throw ContractError("RenderPass: one schedule per ray required");
  run(rays, nullptr, schedules, normals);
}

template <typename T>
void RenderPass<T>::evaluate_stage(Stage stage, std::span<const Ray> rays, StageCache& cache, bool fine) {
  const std::size_t n = rays.size();
  cache.offset.assign(n, 0);
  std::size_t cols = 0;
  for (std::size_t r = 0; r < n; ++r) {
    cache.offset[r] = cols;
    cols += fine ? schedules_[r].fine_t.size() : schedules_[r].coarse_t.size();
  }
  Matrix3X<T> points(3, static_cast<Eigen::Index>(cols));
  Matrix3X<T> dirs(3, static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < n; ++r) {
    const auto& t = fine ? schedules_[r].fine_t : schedules_[r].coarse_t;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const auto c = static_cast<Eigen::Index>(cache.offset[r] + i);
      points.col(c) = rays[r].at(t[i]).template cast<T>();
      dirs.col(c) = rays[r].direction.template cast<T>();
    }
  }
  nerf::forward<T>(params_.stage(stage), points, &dirs, cache.trace);

  cache.samples.resize(n);
  cache.trans_after.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    SampleSet& s = cache.samples[r];
    s.t = fine ? schedules_[r].fine_t : schedules_[r].coarse_t;
    s.delta = sample_deltas(s.t, rays[r].t_far);
    s.sigma.resize(s.size());
    s.color.resize(s.size());
    s.normal.clear();
    s.normal_valid.clear();
    for (std::size_t i = 0; i < s.size(); ++i) {
      const auto c = static_cast<Eigen::Index>(cache.offset[r] + i);
      s.sigma[i] = static_cast<double>(cache.trace.sigma(c));
      s.color[i] = cache.trace.color.col(c).template cast<double>();
    }
  }
}

template <typename T>
void RenderPass<T>::finish_stage(StageCache& cache, bool fine) {
  for (std::size_t r = 0; r < cache.samples.size(); ++r) {
    const SampleSet& s = cache.samples[r];
    RenderResult res;
    res.t = s.t;
    composite(s.sigma, s.delta, res.weights, &cache.trans_after[r]);
    Vec3 m = Vec3::Zero();
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double w = res.weights[i];
      res.color += w * s.color[i];
      res.depth += w * s.t[i];
      res.acc += w;
      if (!s.normal.empty() && s.normal_valid[i]) m += w * s.normal[i];
    }
    if (fine) {
      rendered_norm_[r] = m.norm();
      if (rendered_norm_[r] > kMinNormalNorm) {
        res.normal = m / rendered_norm_[r];
        res.normal_valid = true;
      }
      results_[r].fine = std::move(res);
    } else {
      results_[r].coarse = std::move(res);
    }
  }
}

template <typename T>
void RenderPass<T>::compute_normals(std::span<const Ray> rays) {
  const std::size_t n = rays.size();
  const double h = cfg_.fd_step;
  normal_index_.assign(n, {});
  grad_norm_.assign(n, {});
  normal_offset_.assign(n, 0);
  std::size_t cols = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const auto& mask = schedules_[r].normal_mask;
    if (mask.size() != fine_.samples[r].size()) throw ContractError("RenderPass: normal mask length mismatch");
    normal_offset_[r] = cols;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) normal_index_[r].push_back(static_cast<int>(i));
    cols += 6 * normal_index_[r].size();
  }
  Matrix3X<T> probes(3, static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < n; ++r) {
    Eigen::Index c = static_cast<Eigen::Index>(normal_offset_[r]);
    for (int i : normal_index_[r]) {
      const Vec3 x = rays[r].at(fine_.samples[r].t[static_cast<std::size_t>(i)]);
      for (int a = 0; a < 3; ++a) {
        Vec3 e = Vec3::Zero();
        e[a] = h;
        probes.col(c++) = (x + e).template cast<T>();
        probes.col(c++) = (x - e).template cast<T>();
      }
    }
  }
  nerf::forward<T>(params_.fine, probes, nullptr, normal_trace_);

  for (std::size_t r = 0; r < n; ++r) {
    SampleSet& s = fine_.samples[r];
    s.normal.assign(s.size(), Vec3::Zero());
    s.normal_valid.assign(s.size(), 0);
    grad_norm_[r].assign(normal_index_[r].size(), 0.0);
    for (std::size_t k = 0; k < normal_index_[r].size(); ++k) {
      const auto c = static_cast<Eigen::Index>(normal_offset_[r] + 6 * k);
      Vec3 g;
      for (int a = 0; a < 3; ++a)
        g[a] = (static_cast<double>(normal_trace_.sigma(c + 2 * a)) -
                static_cast<double>(normal_trace_.sigma(c + 2 * a + 1))) /
               (2.0 * h);
      const double gn = g.norm();
      grad_norm_[r][k] = gn;
      if (gn > kMinGradientNorm) {
        const auto i = static_cast<std::size_t>(normal_index_[r][k]);
        s.normal[i] = -g / gn;
        s.normal_valid[i] = 1;
      }
    }
  }
}

template <typename T>
void RenderPass<T>::run(std::span<const Ray> rays, const UniformFn* u01, std::span<const RaySchedule> frozen,
                        bool normals) {
  cfg_.validate();
  for (const Ray& ray : rays) check_ray(ray);
  const std::size_t n = rays.size();
  normals_ = normals;
  const UniformFn half = [] { return 0.5; };
  const UniformFn* draw = (u01 && cfg_.perturb) ? u01 : &half;

  results_.assign(n, {});
  rendered_norm_.assign(n, 0.0);
  if (frozen.empty()) {
    schedules_.assign(n, {});
    for (std::size_t r = 0; r < n; ++r) schedules_[r].coarse_t = stratified_samples(rays[r], cfg_.n_coarse, *draw);
  } else {
    schedules_.assign(frozen.begin(), frozen.end());
  }

  evaluate_stage(Stage::coarse, rays, coarse_, false);
  finish_stage(coarse_, false);

  if (frozen.empty())
    for (std::size_t r = 0; r < n; ++r)
      schedules_[r].fine_t =
          hierarchical_resample(rays[r], schedules_[r].coarse_t, resampling_weights(results_[r].coarse.weights),
                                cfg_.n_fine, *draw);
  evaluate_stage(Stage::fine, rays, fine_, true);

  if (normals) {
    if (frozen.empty()) {
      for (std::size_t r = 0; r < n; ++r) {
        const SampleSet& s = fine_.samples[r];
        std::vector<double> w;
        composite(s.sigma, s.delta, w, nullptr);
        auto& mask = schedules_[r].normal_mask;
        mask.assign(s.size(), 0);
        for (std::size_t i = 0; i < s.size(); ++i) mask[i] = w[i] > cfg_.normal_weight_threshold;
      }
    }
    compute_normals(rays);
  } else {
    for (auto& s : schedules_) s.normal_mask.clear();
    normal_index_.assign(n, {});
    grad_norm_.assign(n, {});
  }
  finish_stage(fine_, true);
}

template <typename T>
void RenderPass<T>::backward(std::span<const RenderAdjoint> coarse, std::span<const RenderAdjoint> fine,
                             std::span<T> grad_coarse, std::span<T> grad_fine) const {
  const std::size_t n = results_.size();
  if (coarse.size() != n || fine.size() != n) throw ContractError("RenderPass::backward: one adjoint per ray required");

  // dQ/dsigma_k = delta_k (T_{k+1} s_k - sum_{i>k} w_i s_i) for Q = sum_i w_i s_i.
  auto stage_adjoints = [&](const StageCache& cache, bool is_fine, RowVectorX<T>& d_sigma, Matrix3X<T>& d_color) {
    const auto cols = cache.trace.size();
    d_sigma.setZero(cols);
    d_color.setZero(3, cols);
    for (std::size_t r = 0; r < n; ++r) {
      const SampleSet& s = cache.samples[r];
      const RenderResult& res = is_fine ? results_[r].fine : results_[r].coarse;
      const RenderAdjoint& adj = is_fine ? fine[r] : coarse[r];
      Vec3 g_m = Vec3::Zero();
      if (is_fine && res.normal_valid && normals_) {
        const Vec3& nn = res.normal;
        g_m = (adj.normal - nn * nn.dot(adj.normal)) / rendered_norm_[r];
      }
      const double g_d = is_fine ? adj.depth : 0.0;
      const bool use_n = is_fine && !s.normal.empty();
      double suffix = 0.0;
      for (std::size_t k = s.size(); k-- > 0;) {
        double sk = adj.color.dot(s.color[k]) + g_d * s.t[k];
        if (use_n && s.normal_valid[k]) sk += g_m.dot(s.normal[k]);
        const auto c = static_cast<Eigen::Index>(cache.offset[r] + k);
        d_sigma(c) = static_cast<T>(s.delta[k] * (cache.trans_after[r][k] * sk - suffix));
        d_color.col(c) = (adj.color * res.weights[k]).template cast<T>();
        suffix += res.weights[k] * sk;
      }
    }
  };

  RowVectorX<T> d_sigma;
  Matrix3X<T> d_color;
  stage_adjoints(coarse_, false, d_sigma, d_color);
  nerf::backward<T>(params_.coarse, coarse_.trace, d_sigma, &d_color, grad_coarse);
  stage_adjoints(fine_, true, d_sigma, d_color);
  nerf::backward<T>(params_.fine, fine_.trace, d_sigma, &d_color, grad_fine);

  if (!normals_ || normal_trace_.size() == 0) return;
  RowVectorX<T> d_probe = RowVectorX<T>::Zero(normal_trace_.size());
  const double h = cfg_.fd_step;
  for (std::size_t r = 0; r < n; ++r) {
    const RenderResult& res = results_[r].fine;
    if (!res.normal_valid) continue;
    const Vec3 g_m = (fine[r].normal - res.normal * res.normal.dot(fine[r].normal)) / rendered_norm_[r];
    const SampleSet& s = fine_.samples[r];
    for (std::size_t k = 0; k < normal_index_[r].size(); ++k) {
      const auto i = static_cast<std::size_t>(normal_index_[r][k]);
      if (!s.normal_valid[i]) continue;
      const Vec3& nn = s.normal[i];
      const Vec3 dn = g_m * res.weights[i];
      const Vec3 dg = -(dn - nn * nn.dot(dn)) / grad_norm_[r][k];
      const auto c = static_cast<Eigen::Index>(normal_offset_[r] + 6 * k);
      for (int a = 0; a < 3; ++a) {
        d_probe(c + 2 * a) = static_cast<T>(dg[a] / (2.0 * h));
        d_probe(c + 2 * a + 1) = static_cast<T>(-dg[a] / (2.0 * h));
      }
    }
  }
  nerf::backward<T>(params_.fine, normal_trace_, d_probe, nullptr, grad_fine);
}

template <typename T>
std::vector<RayRender> render_rays(const FieldParams<T>& params, std::span<const Ray> rays, const RenderConfig& cfg,
                                   std::uint64_t seed, int threads, std::size_t chunk) {
  if (chunk == 0) throw ContractError("render_rays: chunk must be positive");
  std::vector<RayRender> out(rays.size());
  const std::size_t chunks = (rays.size() + chunk - 1) / chunk;
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t begin = c * chunk;
    const std::size_t end = std::min(rays.size(), begin + chunk);
    Rng rng(mix_seed(seed, c));
    RenderPass<T> pass(params, cfg);
    pass.forward(rays.subspan(begin, end - begin), UniformFn(std::ref(rng)), cfg.normals);
    for (std::size_t i = begin; i < end; ++i) out[i] = pass.results()[i - begin];
  });
  return out;
}

namespace {

template <typename T>
void hash_pattern(const ForwardTrace<T>& trace, std::uint64_t& h) {
  std::vector<unsigned char> bits;
  auto add = [&](const MatrixX<T>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) bits.push_back(m.data()[i] > T(0));
  };
  for (const auto& hidden : trace.hidden) add(hidden);
  add(trace.color_hidden);
  h = fnv1a(bits.data(), bits.size(), h);
}

}  // namespace

template <typename T>
std::uint64_t RenderPass<T>::activation_pattern() const {
  std::uint64_t h = fnv1a(nullptr, 0);
  hash_pattern(coarse_.trace, h);
  hash_pattern(fine_.trace, h);
  hash_pattern(normal_trace_, h);
  return h;
}

template class RenderPass<float>;
template class RenderPass<double>;
template std::vector<RayRender> render_rays<float>(const FieldParams<float>&, std::span<const Ray>,
                                                   const RenderConfig&, std::uint64_t, int, std::size_t);
template std::vector<RayRender> render_rays<double>(const FieldParams<double>&, std::span<const Ray>,
                                                    const RenderConfig&, std::uint64_t, int, std::size_t);

}  // namespace nerf
