#include "nerf/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <unordered_set>

namespace nerf {

void RayBatch::validate() const {
  const std::size_t n = rays.size();
  if (gt_color.size() != n || gt_depth.size() != n || gt_normal.size() != n || confidence.size() != n)
    throw ContractError("RayBatch: parallel arrays differ in length");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(confidence[i] >= 0.0 && confidence[i] <= 1.0)) throw ContractError("RayBatch: confidence outside [0,1]");
    if ((std::isnan(gt_depth[i]) || gt_normal[i].hasNaN()) && confidence[i] != 0.0)
      throw ContractError("RayBatch: confidence must be 0 where a prior is missing");
  }
}

void LossConfig::validate() const {
  if (!(lambda_geom >= 0.0)) throw ContractError("loss: lambda_geom must be >= 0");
  if (!(huber_delta_depth > 0.0) || !(huber_delta_normal > 0.0)) throw ContractError("loss: huber delta must be > 0");
  if (!(depth_unit > 0.0)) throw ContractError("loss: depth unit must be > 0");
}

double huber(double x, double y, double delta) {
  if (!(delta > 0.0)) throw DomainError("huber: delta must be positive");
  const double r = std::abs(x - y);
  return r < delta ? 0.5 * r * r : delta * (r - 0.5 * delta);
}

double huber(const Vec3& x, const Vec3& y, double delta) {
  return huber(x.x(), y.x(), delta) + huber(x.y(), y.y(), delta) + huber(x.z(), y.z(), delta);
}

double huber_grad(double x, double y, double delta) {
  const double r = x - y;
  return std::abs(r) < delta ? r : (r > 0.0 ? delta : -delta);
}

namespace {

bool depth_supervised(const RayBatch& b, std::size_t i, const RenderResult& r, const LossConfig& cfg) {
  return cfg.use_depth && !std::isnan(b.gt_depth[i]) && b.confidence[i] > 0.0 && r.acc >= cfg.min_acc;
}

bool normal_supervised(const RayBatch& b, std::size_t i, const RenderResult& r, const LossConfig& cfg) {
  return cfg.use_normal && !b.gt_normal[i].hasNaN() && b.confidence[i] > 0.0 && r.acc >= cfg.min_acc &&
         r.normal_valid;
}

void check_sizes(const RayBatch& batch, std::size_t n) {
  if (n != batch.size()) throw ContractError("loss: one render per ray required");
}

}  // namespace

double loss_rgb(const RayBatch& batch, std::span<const RenderResult> rendered) {
  check_sizes(batch, rendered.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < rendered.size(); ++i) sum += (batch.gt_color[i] - rendered[i].color).squaredNorm();
  return sum;
}

double loss_depth(const RayBatch& batch, std::span<const RenderResult> fine, const LossConfig& cfg) {
  check_sizes(batch, fine.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < fine.size(); ++i)
    if (depth_supervised(batch, i, fine[i], cfg))
      sum += batch.confidence[i] *
             huber(fine[i].depth / cfg.depth_unit, batch.gt_depth[i] / cfg.depth_unit, cfg.huber_delta_depth);
  return sum;
}

double loss_norm(const RayBatch& batch, std::span<const RenderResult> fine, const LossConfig& cfg) {
  check_sizes(batch, fine.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < fine.size(); ++i)
    if (normal_supervised(batch, i, fine[i], cfg))
      sum += batch.confidence[i] * huber(fine[i].normal, batch.gt_normal[i], cfg.huber_delta_normal);
  return sum;
}

LossTerms& LossTerms::operator+=(const LossTerms& o) {
  rgb += o.rgb;
  depth += o.depth;
  normal += o.normal;
  total += o.total;
  return *this;
}

LossTerms total_loss(const RayBatch& batch, std::span<const RayRender> rendered, const LossConfig& cfg,
                     std::vector<RenderAdjoint>* coarse_adj, std::vector<RenderAdjoint>* fine_adj) {
  check_sizes(batch, rendered.size());
  const std::size_t n = rendered.size();
  LossTerms out;
  for (std::size_t i = 0; i < n; ++i) {
    out.rgb += (batch.gt_color[i] - rendered[i].coarse.color).squaredNorm();
    out.rgb += (batch.gt_color[i] - rendered[i].fine.color).squaredNorm();
  }
  if (coarse_adj) coarse_adj->assign(n, {});
  if (fine_adj) fine_adj->assign(n, {});
  for (std::size_t i = 0; i < n && coarse_adj && fine_adj; ++i) {
    (*coarse_adj)[i].color = 2.0 * (rendered[i].coarse.color - batch.gt_color[i]);
    (*fine_adj)[i].color = 2.0 * (rendered[i].fine.color - batch.gt_color[i]);
  }
  if (!cfg.geometric()) {
    out.total = out.rgb;
    return out;
  }

  const double lambda = cfg.lambda_geom;
  for (std::size_t i = 0; i < n; ++i) {
    const RenderResult& r = rendered[i].fine;
    const double c = batch.confidence[i];
    if (depth_supervised(batch, i, r, cfg)) {
      const double x = r.depth / cfg.depth_unit;
      const double y = batch.gt_depth[i] / cfg.depth_unit;
      out.depth += c * huber(x, y, cfg.huber_delta_depth);
      if (fine_adj) (*fine_adj)[i].depth = lambda * c * huber_grad(x, y, cfg.huber_delta_depth) / cfg.depth_unit;
    }
    if (normal_supervised(batch, i, r, cfg)) {
      out.normal += c * huber(r.normal, batch.gt_normal[i], cfg.huber_delta_normal);
      if (fine_adj)
        for (int a = 0; a < 3; ++a)
          (*fine_adj)[i].normal[a] = lambda * c * huber_grad(r.normal[a], batch.gt_normal[i][a], cfg.huber_delta_normal);
    }
  }
  out.total = out.rgb + lambda * (out.depth + out.normal);
  return out;
}

PixelIndex::PixelIndex(const std::vector<CameraView>& views) {
  offsets.push_back(0);
  for (const auto& v : views)
    offsets.push_back(offsets.back() + static_cast<std::size_t>(v.intrinsics.width) * v.intrinsics.height);
}

void PixelIndex::locate(std::size_t id, std::size_t& view, int& x, int& y, const std::vector<CameraView>& views) const {
  if (id >= total()) throw BoundsError("pixel id out of range");
  view = static_cast<std::size_t>(std::upper_bound(offsets.begin(), offsets.end(), id) - offsets.begin()) - 1;
  const std::size_t local = id - offsets[view];
  const int w = views[view].intrinsics.width;
  x = static_cast<int>(local % static_cast<std::size_t>(w));
  y = static_cast<int>(local / static_cast<std::size_t>(w));
}

std::vector<std::size_t> sample_pixels(std::size_t total, std::size_t n, Rng& rng) {
  if (n > total) throw ContractError("sample_batch: batch of " + std::to_string(n) + " exceeds " +
                                    std::to_string(total) + " pixels");
  std::vector<std::size_t> out;
  out.reserve(n);
  std::unordered_set<std::size_t> seen;
  seen.reserve(2 * n);
  for (std::size_t j = total - n; j < total; ++j) {
    const std::size_t r = rng.below(j + 1);
    const std::size_t pick = seen.count(r) ? j : r;
    seen.insert(pick);
    out.push_back(pick);
  }
  return out;
}

RayBatch make_batch(const Dataset& data, std::span<const std::size_t> pixel_ids, ConfidenceSource conf) {
  const auto& views = data.views();
  const PixelIndex index(views);
  RayBatch b;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t id : pixel_ids) {
    std::size_t v;
    int x, y;
    index.locate(id, v, x, y, views);
    const CameraView& view = views[v];
    const ViewPrior& prior = data.priors.maps[v];
    const Ray ray = pixel_to_ray(view.intrinsics, view.pose, x, y, data.t_near, data.t_far);
    b.rays.push_back(ray);
    b.gt_color.push_back(data.images[v].rgb(x, y));
    double depth = nan;
    if (prior.depth.valid(x, y)) depth = prior.depth.at(x, y) / (view.pose.rotation * ray.direction).z();
    Vec3 normal = Vec3::Constant(nan);
    if (!prior.normal.empty() && prior.normal.valid(x, y)) normal = prior.normal.rgb(x, y);
    double c = 0.0;
    if (!std::isnan(depth) && !normal.hasNaN()) {
      if (conf == ConfidenceSource::ones || prior.confidence.empty())
        c = 1.0;
      else
        c = std::clamp(static_cast<double>(prior.confidence.at(x, y)), 0.0, 1.0);
    }
    b.gt_depth.push_back(depth);
    b.gt_normal.push_back(normal);
    b.confidence.push_back(c);
  }
  return b;
}

RayBatch sample_batch(const Dataset& data, std::size_t n, Rng& rng, ConfidenceSource conf) {
  const PixelIndex index(data.views());
  const auto ids = sample_pixels(index.total(), n, rng);
  return make_batch(data, ids, conf);
}

Adam::Adam(std::size_t n, double beta1, double beta2, double eps)
    : m_(n, 0.0), v_(n, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(std::span<float> params, std::span<const float> grad, double lr) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw ContractError("Adam: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
    const double mh = m_[i] / c1;
    const double vh = v_[i] / c2;
    params[i] = static_cast<float>(params[i] - lr * mh / (std::sqrt(vh) + eps_));
  }
}

void TrainConfig::validate() const {
  field.validate();
  render.validate();
  loss.validate();
  if (iterations < 0) throw ContractError("train: iterations must be >= 0");
  if (batch_size == 0) throw ContractError("train: batch size must be positive");
  if (!(lr > 0.0) || !(lr_final > 0.0)) throw ContractError("train: learning rates must be positive");
  if (chunk == 0) throw ContractError("train: chunk must be positive");
  if (!(depth_unit_fraction > 0.0)) throw ContractError("train: depth unit fraction must be positive");
}

namespace {

RayBatch slice(const RayBatch& b, std::size_t begin, std::size_t end) {
  RayBatch s;
  s.rays.assign(b.rays.begin() + begin, b.rays.begin() + end);
  s.gt_color.assign(b.gt_color.begin() + begin, b.gt_color.begin() + end);
  s.gt_depth.assign(b.gt_depth.begin() + begin, b.gt_depth.begin() + end);
  s.gt_normal.assign(b.gt_normal.begin() + begin, b.gt_normal.begin() + end);
  s.confidence.assign(b.confidence.begin() + begin, b.confidence.begin() + end);
  return s;
}

bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

}  // namespace

FieldParams<float> train(const Dataset& data, const TrainConfig& cfg, std::vector<LossRecord>* history,
                         const ProgressFn& progress) {
  cfg.validate();
  if (data.images.size() != data.priors.size()) throw ContractError("train: one image per view required");
  FieldParams<float> params = make_field<float>(cfg.field, cfg.init);
  LossConfig loss = cfg.loss;
  loss.depth_unit = data.scene_diagonal * cfg.depth_unit_fraction;

  const std::size_t n_coarse = params.coarse.parameter_count();
  const std::size_t n_fine = params.fine.parameter_count();
  Adam adam_coarse(n_coarse), adam_fine(n_fine);
  const PixelIndex index(data.views());
  if (cfg.batch_size > index.total()) throw ContractError("train: batch larger than the pixel count");
  if (history) history->clear();

  std::vector<float> grad_coarse(n_coarse), grad_fine(n_fine);
  for (int it = 0; it < cfg.iterations; ++it) {
    const double lr = cfg.lr * std::pow(cfg.lr_final / cfg.lr, static_cast<double>(it) / cfg.iterations);
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(it), 0x6261746368));
    const RayBatch batch = make_batch(data, sample_pixels(index.total(), cfg.batch_size, rng), cfg.confidence);

    const std::size_t chunks = (batch.size() + cfg.chunk - 1) / cfg.chunk;
    std::vector<std::vector<float>> gc(chunks), gf(chunks);
    std::vector<LossTerms> terms(chunks);
    parallel_for(chunks, cfg.threads, [&](std::size_t c) {
      const std::size_t begin = c * cfg.chunk;
      const std::size_t end = std::min(batch.size(), begin + cfg.chunk);
      const RayBatch sub = slice(batch, begin, end);
      Rng chunk_rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(it), c + 1));
      RenderPass<float> pass(params, cfg.render);
      pass.forward(sub.rays, UniformFn(std::ref(chunk_rng)), loss.needs_normals());
      std::vector<RenderAdjoint> ca, fa;
      terms[c] = total_loss(sub, pass.results(), loss, &ca, &fa);
      gc[c].assign(n_coarse, 0.0f);
      gf[c].assign(n_fine, 0.0f);
      pass.backward(ca, fa, gc[c], gf[c]);
    });

    LossRecord rec;
    rec.iteration = it;
    std::fill(grad_coarse.begin(), grad_coarse.end(), 0.0f);
    std::fill(grad_fine.begin(), grad_fine.end(), 0.0f);
    for (std::size_t c = 0; c < chunks; ++c) {
      rec.terms += terms[c];
      for (std::size_t i = 0; i < n_coarse; ++i) grad_coarse[i] += gc[c][i];
      for (std::size_t i = 0; i < n_fine; ++i) grad_fine[i] += gf[c][i];
    }
    if (!std::isfinite(rec.terms.total) || !all_finite(grad_coarse) || !all_finite(grad_fine))
      throw Error("train: non-finite loss or gradient at iteration " + std::to_string(it));

    adam_coarse.step(params.coarse.values(), grad_coarse, lr);
    adam_fine.step(params.fine.values(), grad_fine, lr);
    if (history) history->push_back(rec);
    if (progress) progress(rec);
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() && (it + 1) % cfg.checkpoint_every == 0)
      save_checkpoint(cfg.checkpoint_path, params);
  }
  if (!cfg.checkpoint_path.empty()) save_checkpoint(cfg.checkpoint_path, params);
  return params;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& history) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << "iteration,l_rgb,l_depth,l_norm,total\n";
  char line[160];
  for (const auto& r : history) {
    std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g,%.9g\n", r.iteration, r.terms.rgb, r.terms.depth,
                  r.terms.normal, r.terms.total);
    out << line;
  }
  if (!out) throw Error("cannot write " + path.string());
}

}  // namespace nerf
