#include "nerf/render.hpp"
#include "nerf/training.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace nerf;

namespace {

SampleSet two_samples() {
  SampleSet s;
  s.t = {1.0, 2.0};
  s.delta = {1.0, 1.0};
  s.sigma = {1.0, 1.0};
  s.color = {Vec3(1, 0, 0), Vec3(0, 1, 0)};
  return s;
}

Ray unit_ray() {
  Ray r;
  r.t_near = 0.0;
  r.t_far = 1.0;
  return r;
}

}  // namespace

TEST_CASE("stratified samples") {
  Rng rng(1);
  Ray r = unit_ray();
  r.t_near = 2.0;
  r.t_far = 6.0;
  const auto one = stratified_samples(r, 1, rng);
  REQUIRE(one.size() == 1);
  CHECK(one[0] >= 2.0);
  CHECK(one[0] <= 6.0);

  const int n = 37;
  const auto t = stratified_samples(r, n, rng);
  for (int i = 0; i < n; ++i) {
    CHECK(t[i] >= 2.0 + 4.0 * i / n);
    CHECK(t[i] < 2.0 + 4.0 * (i + 1) / n);
    if (i > 0) CHECK(t[i] > t[i - 1]);
  }

  const auto mid = stratified_samples(unit_ray(), 4, [] { return 0.5; });
  CHECK(mid == std::vector<double>{0.125, 0.375, 0.625, 0.875});
  CHECK(midpoint_samples(unit_ray(), 4) == mid);

  Rng a(9), b(9);
  CHECK(stratified_samples(r, 16, a) == stratified_samples(r, 16, b));
}

TEST_CASE("quadrature weights") {
  const auto zero = quadrature_weights(std::vector<double>{0, 0, 0}, std::vector<double>{1, 1, 1});
  for (double w : zero) CHECK(w == 0.0);

  const auto opaque = quadrature_weights(std::vector<double>{1e6}, std::vector<double>{1.0});
  CHECK(opaque[0] == doctest::Approx(1.0).epsilon(1e-15));

  const auto w = quadrature_weights(std::vector<double>{1, 1}, std::vector<double>{1, 1});
  const double e = std::exp(-1.0);
  CHECK(w[0] == doctest::Approx(1 - e).epsilon(1e-14));
  CHECK(w[1] == doctest::Approx(e * (1 - e)).epsilon(1e-14));
  CHECK(std::abs(w[0] - 0.63212) < 1e-5);
  CHECK(std::abs(w[1] - 0.23254) < 1e-5);

  CHECK_THROWS_AS(quadrature_weights(std::vector<double>{1, 1}, std::vector<double>{1}), ContractError);
  CHECK_THROWS_AS(quadrature_weights(std::vector<double>{-1}, std::vector<double>{1}), DomainError);
}

TEST_CASE("accumulated weight identity") {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(64);
    std::vector<double> sigma(n), delta(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sigma[i] = 5.0 * rng.uniform();
      delta[i] = 0.2 * rng.uniform();
      total += sigma[i] * delta[i];
    }
    const auto w = quadrature_weights(sigma, delta);
    for (double wi : w) {
      CHECK(wi >= 0.0);
      CHECK(wi <= 1.0);
    }
    CHECK(std::abs(std::accumulate(w.begin(), w.end(), 0.0) + std::expm1(-total)) < 1e-12);
  }
}

TEST_CASE("render color depth and normal") {
  SampleSet s = two_samples();
  const Vec3 c = render_color(s);
  CHECK(std::abs(c.x() - 0.63212) < 1e-5);
  CHECK(std::abs(c.y() - 0.23254) < 1e-5);
  CHECK(c.z() == 0.0);
  CHECK(std::abs(render_depth(s) - 1.09720) < 1e-5);

  s.normal = {Vec3(1, 0, 0), Vec3(0, 1, 0)};
  s.normal_valid = {1, 1};
  const auto n = render_normal(s);
  REQUIRE(n.has_value());
  const Vec3 expect = Vec3(1 - std::exp(-1.0), std::exp(-1.0) * (1 - std::exp(-1.0)), 0).normalized();
  CHECK((*n - expect).norm() < 1e-12);

  s.normal = {Vec3(0, 0, 1), Vec3(0, 0, 1)};
  CHECK((*render_normal(s) - Vec3(0, 0, 1)).norm() < 1e-12);

  SampleSet empty = two_samples();
  empty.sigma = {0, 0};
  empty.normal = {Vec3(0, 0, 1), Vec3(0, 0, 1)};
  empty.normal_valid = {1, 1};
  CHECK(render_color(empty) == Vec3::Zero());
  CHECK(render_depth(empty) == 0.0);
  CHECK_FALSE(render_normal(empty).has_value());
  CHECK(integrate(empty).acc == 0.0);

  SampleSet red;
  red.t = {2.5};
  red.delta = {1.0};
  red.sigma = {1e9};
  red.color = {Vec3(1, 0, 0)};
  CHECK((render_color(red) - Vec3(1, 0, 0)).norm() < 1e-12);
  CHECK(render_depth(red) == doctest::Approx(2.5));
}

TEST_CASE("hierarchical resampling follows the coarse pdf") {
  const Ray r = unit_ray();
  SUBCASE("uniform weights") {
    std::vector<double> t(8), w(8, 0.1);
    for (int i = 0; i < 8; ++i) t[i] = i / 8.0;
    Rng rng(3);
    const int n = 10000;
    const auto out = hierarchical_resample(r, t, w, n, rng);
    REQUIRE(out.size() == static_cast<std::size_t>(n + 8));
    CHECK(std::is_sorted(out.begin(), out.end()));
    std::vector<int> count(8, 0);
    for (double x : out) ++count[std::min(7, static_cast<int>(x * 8))];
    double chi2 = 0.0;
    for (int c : count) chi2 += std::pow((c - 1) - n / 8.0, 2) / (n / 8.0);
    CHECK(chi2 < 24.3);  // 99.9% quantile, 7 dof
  }
  SUBCASE("one bin") {
    const std::vector<double> t{0.0, 0.25, 0.5, 0.75}, w{0.0, 1.0, 0.0, 0.0};
    Rng rng(4);
    const auto out = hierarchical_resample(r, t, w, 1000, rng);
    int inside = 0;
    for (double x : out) inside += (x >= 0.25 && x < 0.5);
    CHECK(inside - 1 >= 998);
  }
  SUBCASE("two bins") {
    const std::vector<double> t{0.0, 0.5}, w{0.75, 0.25};
    Rng rng(5);
    const int n = 100000;
    const auto out = hierarchical_resample(r, t, w, n, rng);
    int first = 0;
    for (double x : out) first += x < 0.5;
    const double freq = (first - 1) / static_cast<double>(n);
    CHECK(std::abs(freq - 0.75) < 0.02);
  }
  SUBCASE("zero weights fall back to stratified") {
    const std::vector<double> t{0.0, 0.5}, w{0.0, 0.0};
    Rng rng(6);
    const auto out = hierarchical_resample(r, t, w, 10, rng);
    CHECK(out.size() == 12);
    CHECK(std::is_sorted(out.begin(), out.end()));
    for (double x : out) CHECK((x >= 0.0 && x <= 1.0));
  }
}

TEST_CASE("render_ray through an analytic sphere") {
  const Vec3 center(0.1, -0.2, 0.05);
  const double radius = 0.5;
  const testing::FunctionSource src(testing::soft_sphere(center, radius, 1000.0, 0.005));
  RenderConfig cfg;
  const double t_near = 0.3, t_far = 7.5;
  const double bin = (t_far - t_near) / (cfg.n_coarse + cfg.n_fine);
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    const Vec3 eye = center + 3.0 * Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
    const Vec3 aim = center + 0.3 * Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
    Ray ray{eye, (aim - eye).normalized(), t_near, t_far};
    const double t_hit = testing::sphere_entry(ray, center, radius);
    REQUIRE(t_hit > 0);
    const RayRender out = render_ray(src, ray, cfg, rng);
    CHECK(out.fine.acc > 0.999);
    CHECK(std::abs(out.fine.depth - t_hit) < 2 * bin);
    REQUIRE(out.fine.normal_valid);
    const Vec3 n_true = (ray.at(t_hit) - center).normalized();
    CHECK(testing::angle_deg(out.fine.normal, n_true) < 5.0);
  }

  Ray miss{Vec3(0, 0, 5), Vec3(1, 0, 0), t_near, t_far};
  const RayRender m = render_ray(src, miss, cfg, rng);
  CHECK(m.fine.acc < 1e-6);
  CHECK(m.coarse.acc < 1e-6);

  Ray ray{Vec3(3, 0, 0), Vec3(-1, 0, 0), t_near, t_far};
  Rng a(42), b(42);
  const RayRender ra = render_ray(src, ray, cfg, a);
  const RayRender rb = render_ray(src, ray, cfg, b);
  CHECK(ra.fine.depth == rb.fine.depth);
  CHECK(ra.fine.t == rb.fine.t);
  CHECK(ra.fine.weights == rb.fine.weights);
  CHECK(ra.fine.color == rb.fine.color);
  CHECK(ra.fine.normal == rb.fine.normal);
}

TEST_CASE("depth converges with sample count") {
  const Vec3 center = Vec3::Zero();
  const auto sigma = testing::soft_sphere(center, 0.5, 5.0, 0.1);
  const Ray ray{Vec3(0, 0, 3), Vec3(0, 0, -1), 1.0, 5.0};
  auto depth = [&](int n) {
    SampleSet s;
    s.t = midpoint_samples(ray, n);
    s.delta = sample_deltas(s.t, ray.t_far);
    for (double t : s.t) {
      s.sigma.push_back(sigma(ray.at(t)));
      s.color.push_back(Vec3::Zero());
    }
    return render_depth(s);
  };
  const double ref = depth(1 << 16);
  double prev = std::abs(depth(16) - ref);
  for (int n = 32; n <= 512; n *= 2) {
    const double err = std::abs(depth(n) - ref);
    // At least first order; midpoints on a smooth density do better.
    CHECK(err < 0.75 * prev);
    prev = err;
  }
}

TEST_CASE("RenderPass matches render_ray and its gradients match finite differences") {
  const FieldConfig fc{2, 8, 1, 2, 1};
  auto params = make_field<double>(fc, {13});
  RenderConfig cfg;
  cfg.n_coarse = 8;
  cfg.n_fine = 8;
  cfg.normal_weight_threshold = 0.0;

  Rng rng(10);
  RayBatch batch;
  for (int i = 0; i < 8; ++i) {
    const Vec3 o(rng.uniform() - 0.5, rng.uniform() - 0.5, -2.0);
    const Vec3 d = Vec3(0.2 * rng.normal(), 0.2 * rng.normal(), 1.0).normalized();
    batch.rays.push_back({o, d, 1.0, 3.0});
    batch.gt_color.push_back(Vec3(rng.uniform(), rng.uniform(), rng.uniform()));
    batch.gt_depth.push_back(1.0 + rng.uniform());
    batch.gt_normal.push_back(Vec3(rng.normal(), rng.normal(), rng.normal()).normalized());
    batch.confidence.push_back(0.5 + 0.5 * rng.uniform());
  }
  LossConfig lc;
  lc.lambda_geom = 0.5;
  lc.huber_delta_depth = 0.3;
  lc.huber_delta_normal = 0.2;

  RenderPass<double> pass(params, cfg);
  Rng draws(77);
  pass.forward(batch.rays, draws, true);
  const auto schedules = pass.schedules();

  // The batched pass agrees with the generic renderer on the same draws.
  {
    const FieldSource<double> src(params);
    Rng d1(77);
    RenderPass<double> one(params, cfg);
    one.forward(std::span<const Ray>(batch.rays.data(), 1), d1, true);
    Rng d2(77);
    const RayRender ref = render_ray(src, batch.rays[0], cfg, d2);
    CHECK(one.results()[0].fine.depth == doctest::Approx(ref.fine.depth).epsilon(1e-10));
    CHECK((one.results()[0].fine.color - ref.fine.color).norm() < 1e-10);
    CHECK((one.results()[0].coarse.color - ref.coarse.color).norm() < 1e-10);
    if (ref.fine.normal_valid) CHECK((one.results()[0].fine.normal - ref.fine.normal).norm() < 1e-8);
  }

  std::vector<RenderAdjoint> ca, fa;
  const LossTerms base = total_loss(batch, pass.results(), lc, &ca, &fa);
  CHECK(base.depth > 0.0);
  CHECK(base.normal > 0.0);
  std::vector<double> gc(params.coarse.parameter_count(), 0.0), gf(params.fine.parameter_count(), 0.0);
  pass.backward(ca, fa, gc, gf);

  // Normals are central differences of sigma, so the loss has ReLU kinks
  // amplified by 1 / (2 fd_step). A small step keeps the stencil on one
  // linear piece; pieces are compared to be sure.
  auto loss_at = [&](std::uint64_t& pattern) {
    RenderPass<double> p(params, cfg);
    p.forward(batch.rays, schedules, true);
    pattern = p.activation_pattern();
    return total_loss(batch, p.results(), lc).total;
  };
  const std::uint64_t base_pattern = pass.activation_pattern();
  int checked = 0;
  for (int n = 0; n < 40; ++n) {
    const bool fine = n % 2;
    auto vals = params.stage(fine ? Stage::fine : Stage::coarse).values();
    const std::size_t p = rng.below(vals.size());
    const double g = fine ? gf[p] : gc[p];
    const double keep = vals[p];
    const double h = 1e-6;
    std::uint64_t pp = 0, pm = 0;
    vals[p] = keep + h;
    const double lp = loss_at(pp);
    vals[p] = keep - h;
    const double lm = loss_at(pm);
    vals[p] = keep;
    if (pp != base_pattern || pm != base_pattern) continue;
    const double fd = (lp - lm) / (2 * h);
    const double scale = std::max({std::abs(fd), std::abs(g), 1e-6});
    CHECK_MESSAGE(std::abs(g - fd) <= 1e-4 * scale, "param ", p, " stage ", int(fine), " grad ", g, " fd ", fd);
    ++checked;
  }
  CHECK(checked >= 30);
}

TEST_CASE("render_rays is independent of the thread count") {
  const auto params = make_field<float>(FieldConfig::small(), {1});
  RenderConfig cfg;
  cfg.n_coarse = 16;
  cfg.n_fine = 16;
  std::vector<Ray> rays;
  for (int i = 0; i < 150; ++i) rays.push_back({Vec3(0.01 * i, 0, -2), Vec3::UnitZ(), 0.5, 4.0});
  const auto a = render_rays(params, rays, cfg, 5, 1, 32);
  const auto b = render_rays(params, rays, cfg, 5, 3, 32);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].fine.color == b[i].fine.color);
    CHECK(a[i].fine.depth == b[i].fine.depth);
  }
}
