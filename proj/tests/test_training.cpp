#include "nerf/training.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

using namespace nerf;

namespace {

const double kNaN = std::numeric_limits<double>::quiet_NaN();

RayBatch one_ray_batch(double depth, Vec3 normal, double conf) {
  RayBatch b;
  b.rays.push_back({Vec3::Zero(), Vec3(0, 0, 1), 0.1, 5.0});
  b.gt_color.push_back(Vec3(1, 0, 0));
  b.gt_depth.push_back(depth);
  b.gt_normal.push_back(normal);
  b.confidence.push_back(conf);
  return b;
}

RenderResult rendered(Vec3 color, double depth, Vec3 normal) {
  RenderResult r;
  r.color = color;
  r.depth = depth;
  r.normal = normal;
  r.normal_valid = true;
  r.acc = 1.0;
  return r;
}

Dataset sphere_dataset(int views, int size) {
  RingOptions opt;
  opt.n_views = views;
  opt.width = size;
  opt.height = size;
  return to_dataset(generate_dataset(AnalyticScene::single_sphere(0.5), opt, 0));
}

}  // namespace

TEST_CASE("huber") {
  CHECK(huber(1.5, 1.5, 1.0) == 0.0);
  CHECK(huber(2.0, 2.5, 1.0) == doctest::Approx(0.125).epsilon(1e-15));
  CHECK(huber(3.0, 0.0, 1.0) == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(huber(0.0, 3.0, 1.0) == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(huber(Vec3(0.5, 0, 3), Vec3::Zero(), 1.0) == doctest::Approx(0.125 + 2.5));
  // Continuous at the switch.
  CHECK(huber(1.0 - 1e-12, 0.0, 1.0) == doctest::Approx(huber(1.0 + 1e-12, 0.0, 1.0)).epsilon(1e-10));
  CHECK(huber_grad(0.3, 0.0, 1.0) == doctest::Approx(0.3));
  CHECK(huber_grad(-4.0, 0.0, 1.0) == -1.0);
  CHECK(huber_grad(0.0, 4.0, 0.5) == -0.5);
}

TEST_CASE("rgb loss") {
  RayBatch b = one_ray_batch(kNaN, Vec3::Constant(kNaN), 0.0);
  std::vector<RenderResult> r{rendered(Vec3(1, 0, 0), 1.0, Vec3::UnitZ())};
  CHECK(loss_rgb(b, r) == 0.0);
  r[0].color = Vec3::Zero();
  CHECK(loss_rgb(b, r) == 1.0);

  // Two rays by hand: (0.2^2 + 0.1^2 + 0) + (0.5^2 + 0.5^2 + 0.25^2).
  b.rays.push_back(b.rays[0]);
  b.gt_color.push_back(Vec3(0.5, 0.5, 0.5));
  b.gt_depth.push_back(kNaN);
  b.gt_normal.push_back(Vec3::Constant(kNaN));
  b.confidence.push_back(0.0);
  r[0].color = Vec3(0.8, 0.1, 0.0);
  r.push_back(rendered(Vec3(0.0, 1.0, 0.25), 1.0, Vec3::UnitZ()));
  CHECK(loss_rgb(b, r) == doctest::Approx(0.04 + 0.01 + 0.25 + 0.25 + 0.0625).epsilon(1e-14));

  r.pop_back();
  CHECK_THROWS_AS(loss_rgb(b, r), ContractError);
}

TEST_CASE("depth loss") {
  LossConfig cfg;
  std::vector<RenderResult> r{rendered(Vec3::Zero(), 2.0, Vec3::UnitZ())};
  CHECK(loss_depth(one_ray_batch(2.5, Vec3::UnitZ(), 0.0), r, cfg) == 0.0);
  CHECK(loss_depth(one_ray_batch(2.5, Vec3::UnitZ(), 1.0), r, cfg) == doctest::Approx(0.125).epsilon(1e-15));
  CHECK(loss_depth(one_ray_batch(2.5, Vec3::UnitZ(), 0.5), r, cfg) == doctest::Approx(0.0625).epsilon(1e-15));
  // Unsupervised rays and rays without accumulated opacity contribute nothing.
  CHECK(loss_depth(one_ray_batch(kNaN, Vec3::UnitZ(), 0.0), r, cfg) == 0.0);
  r[0].acc = 0.001;
  CHECK(loss_depth(one_ray_batch(2.5, Vec3::UnitZ(), 1.0), r, cfg) == 0.0);
  r[0].acc = 1.0;
  cfg.use_depth = false;
  CHECK(loss_depth(one_ray_batch(2.5, Vec3::UnitZ(), 1.0), r, cfg) == 0.0);
  // Residuals are measured in depth units.
  cfg.use_depth = true;
  cfg.depth_unit = 0.5;
  CHECK(loss_depth(one_ray_batch(2.5, Vec3::UnitZ(), 1.0), r, cfg) == doctest::Approx(0.5));
}

TEST_CASE("normal loss") {
  LossConfig cfg;
  const Vec3 gt(0.5, 0, 0);
  std::vector<RenderResult> r{rendered(Vec3::Zero(), 1.0, Vec3::Zero())};
  CHECK(loss_norm(one_ray_batch(1.0, gt, 0.0), r, cfg) == 0.0);
  CHECK(loss_norm(one_ray_batch(1.0, gt, 1.0), r, cfg) == doctest::Approx(0.125).epsilon(1e-15));
  CHECK(loss_norm(one_ray_batch(1.0, gt, 0.5), r, cfg) == doctest::Approx(0.0625).epsilon(1e-15));
  r[0].normal_valid = false;
  CHECK(loss_norm(one_ray_batch(1.0, gt, 1.0), r, cfg) == 0.0);
}

TEST_CASE("total loss") {
  RayBatch b = one_ray_batch(2.5, Vec3(0.5, 0, 0), 0.7);
  b.rays.push_back(b.rays[0]);
  b.gt_color.push_back(Vec3(0.1, 0.9, 0.3));
  b.gt_depth.push_back(1.0);
  b.gt_normal.push_back(Vec3(0, 1, 0));
  b.confidence.push_back(1.0);
  std::vector<RayRender> rr(2);
  rr[0].coarse = rendered(Vec3(0.3, 0.2, 0.1), 2.1, Vec3::Zero());
  rr[0].fine = rendered(Vec3(0.9, 0.1, 0.05), 2.0, Vec3::Zero());
  rr[1].coarse = rendered(Vec3(0.2, 0.2, 0.2), 1.3, Vec3(0, 0, 1));
  rr[1].fine = rendered(Vec3(0.15, 0.8, 0.33), 4.0, Vec3(0, 0, 1));
  std::vector<RenderResult> coarse{rr[0].coarse, rr[1].coarse}, fine{rr[0].fine, rr[1].fine};

  SUBCASE("lambda 0 is the rgb loss, bit for bit") {
    LossConfig cfg;
    cfg.lambda_geom = 0.0;
    const LossTerms t = total_loss(b, rr, cfg);
    double expect = 0.0;
    for (int i = 0; i < 2; ++i) {
      expect += (b.gt_color[i] - rr[i].coarse.color).squaredNorm();
      expect += (b.gt_color[i] - rr[i].fine.color).squaredNorm();
    }
    CHECK(std::memcmp(&t.total, &expect, sizeof(double)) == 0);
    CHECK(t.depth == 0.0);
    CHECK(t.normal == 0.0);
    CHECK(t.rgb == doctest::Approx(loss_rgb(b, coarse) + loss_rgb(b, fine)));
  }

  SUBCASE("weighted sum and adjoints") {
    LossConfig cfg;
    cfg.lambda_geom = 0.1;
    std::vector<RenderAdjoint> ca, fa;
    const LossTerms t = total_loss(b, rr, cfg, &ca, &fa);
    CHECK(t.depth == doctest::Approx(loss_depth(b, fine, cfg)));
    CHECK(t.normal == doctest::Approx(loss_norm(b, fine, cfg)));
    CHECK(t.total == doctest::Approx(t.rgb + 0.1 * (t.depth + t.normal)));
    // Second ray: depth residual 3 is in the linear branch, slope delta.
    CHECK(fa[1].depth == doctest::Approx(0.1 * 1.0 * 1.0));
    CHECK(fa[0].depth == doctest::Approx(0.1 * 0.7 * -0.5));
    CHECK((ca[0].color - 2.0 * (rr[0].coarse.color - b.gt_color[0])).norm() < 1e-15);
    CHECK(fa[1].normal.y() == doctest::Approx(0.1 * -1.0 * 1.0));
    CHECK(fa[1].normal.z() == doctest::Approx(0.1 * 1.0 * 1.0));

    // Zero confidence removes the geometric terms and their gradients.
    b.confidence = {0.0, 0.0};
    const LossTerms z = total_loss(b, rr, cfg, &ca, &fa);
    CHECK(z.depth == 0.0);
    CHECK(z.normal == 0.0);
    CHECK(fa[0].depth == 0.0);
    CHECK(fa[1].normal.norm() == 0.0);
  }
}

TEST_CASE("ray batch validation") {
  RayBatch b = one_ray_batch(kNaN, Vec3::UnitZ(), 0.5);
  CHECK_THROWS_AS(b.validate(), ContractError);
  b.confidence[0] = 0.0;
  CHECK_NOTHROW(b.validate());
  b.confidence.push_back(0.0);
  CHECK_THROWS_AS(b.validate(), ContractError);
}

TEST_CASE("pixel sampling") {
  Rng rng(1);
  CHECK_THROWS_AS(sample_pixels(10, 11, rng), ContractError);

  Rng a(5), b(5);
  const auto pa = sample_pixels(1000, 50, a);
  CHECK(pa == sample_pixels(1000, 50, b));
  std::vector<std::size_t> sorted = pa;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
  CHECK(sorted.back() < 1000);
  CHECK(sample_pixels(20, 20, a).size() == 20);

  // Four 16x16 views, 10^5 draws: each view gets a quarter within 3 sigma.
  const Dataset data = sphere_dataset(4, 16);
  const PixelIndex index(data.views());
  REQUIRE(index.total() == 1024);
  std::array<double, 4> count{};
  Rng draws(2024);
  const int calls = 1000, per_call = 100;
  for (int c = 0; c < calls; ++c)
    for (std::size_t id : sample_pixels(index.total(), per_call, draws)) {
      std::size_t v;
      int x, y;
      index.locate(id, v, x, y, data.views());
      count[v] += 1.0;
    }
  const double n = calls * per_call, expect = n / 4.0, sd = std::sqrt(n * 0.25 * 0.75);
  for (double c : count) CHECK(std::abs(c - expect) < 3.0 * sd);
}

TEST_CASE("batches carry ray-distance depth and confidence") {
  Dataset data = sphere_dataset(4, 16);
  const AnalyticScene scene = AnalyticScene::single_sphere(0.5);
  std::vector<std::size_t> ids(1024);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  const RayBatch b = make_batch(data, ids, ConfidenceSource::maps);
  CHECK_NOTHROW(b.validate());
  int hits = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const Hit h = raycast(scene, b.rays[i]);
    if (!h.hit) {
      CHECK(b.confidence[i] == 0.0);
      continue;
    }
    ++hits;
    CHECK(b.gt_depth[i] == doctest::Approx(h.t).epsilon(1e-5));
    CHECK((b.gt_normal[i] - h.normal).norm() < 1e-5);
    // No confidence maps yet: every valid prior counts fully.
    CHECK(b.confidence[i] == 1.0);
  }
  CHECK(hits > 100);

  for (auto& m : data.priors.maps) m.confidence = ImageBuffer(16, 16, 1, 0.25f);
  const RayBatch maps = make_batch(data, ids, ConfidenceSource::maps);
  const RayBatch ones = make_batch(data, ids, ConfidenceSource::ones);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (std::isnan(maps.gt_depth[i])) continue;
    CHECK(maps.confidence[i] == 0.25);
    CHECK(ones.confidence[i] == 1.0);
  }
}

TEST_CASE("adam") {
  Adam adam(3);
  std::vector<float> p{1.0f, -2.0f, 0.5f};
  const std::vector<float> g{0.5f, -3.0f, 0.0f};
  adam.step(p, g, 0.1);
  // First step: bias-corrected m / sqrt(v) is sign(g).
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(-1.9).epsilon(1e-6));
  CHECK(p[2] == 0.5f);
  CHECK(adam.steps() == 1);
  std::vector<float> wrong(2);
  CHECK_THROWS_AS(adam.step(wrong, g, 0.1), ContractError);
}

TEST_CASE("training") {
  const Dataset data = sphere_dataset(4, 16);
  TrainConfig cfg;
  cfg.batch_size = 64;
  cfg.render.n_coarse = 16;
  cfg.render.n_fine = 16;
  cfg.seed = 3;

  SUBCASE("zero iterations return the initial parameters") {
    cfg.iterations = 0;
    const auto trained = train(data, cfg);
    const auto init = make_field<float>(cfg.field, cfg.init);
    CHECK(std::equal(trained.coarse.values().begin(), trained.coarse.values().end(), init.coarse.values().begin()));
    CHECK(std::equal(trained.fine.values().begin(), trained.fine.values().end(), init.fine.values().begin()));
  }

  SUBCASE("batch larger than the dataset") {
    cfg.batch_size = 2000;
    CHECK_THROWS_AS(train(data, cfg), ContractError);
  }

  SUBCASE("non-finite loss names the iteration") {
    Dataset bad = data;
    for (auto& v : bad.images[0].data) v = std::numeric_limits<float>::quiet_NaN();
    cfg.iterations = 5;
    try {
      train(bad, cfg);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("iteration 0") != std::string::npos);
    }
  }

  SUBCASE("deterministic, loss decreases, history is written") {
    cfg.iterations = 40;
    cfg.batch_size = 128;  // two chunks
    std::vector<LossRecord> h1, h2;
    const auto p1 = train(data, cfg, &h1);
    cfg.threads = 2;
    const auto p2 = train(data, cfg, &h2);
    REQUIRE(h1.size() == 40);
    CHECK(std::memcmp(p1.fine.values().data(), p2.fine.values().data(), p1.fine.values().size() * sizeof(float)) == 0);
    CHECK(h1.back().terms.total == h2.back().terms.total);

    const auto dir = std::filesystem::temp_directory_path() / "nerf_test_training";
    write_loss_csv(dir / "loss.csv", h1);
    std::ifstream in(dir / "loss.csv");
    std::string header, first;
    std::getline(in, header);
    std::getline(in, first);
    CHECK(header == "iteration,l_rgb,l_depth,l_norm,total");
    CHECK(first.rfind("0,", 0) == 0);
    std::filesystem::remove_all(dir);
  }
}

TEST_CASE("rgb loss falls below a quarter of its start") {
  const Dataset data = sphere_dataset(8, 16);
  TrainConfig cfg;
  cfg.batch_size = 64;
  cfg.render.n_coarse = 16;
  cfg.render.n_fine = 16;
  cfg.loss.lambda_geom = 0.0;
  cfg.iterations = 2000;
  cfg.seed = 1;
  std::vector<LossRecord> h;
  train(data, cfg, &h);
  auto window_mean = [&](std::size_t begin) {
    double s = 0.0;
    for (std::size_t i = begin; i < begin + 50; ++i) s += h[i].terms.rgb;
    return s / 50.0;
  };
  const double first = window_mean(0), last = window_mean(h.size() - 50);
  MESSAGE("rgb loss " << first << " -> " << last);
  CHECK(last < 0.25 * first);
}
