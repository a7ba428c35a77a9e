#include "pipeline.hpp"

#include "nerf/dataset.hpp"
#include "nerf/extraction.hpp"
#include "nerf/metrics.hpp"
#include "nerf/training.hpp"

#include <algorithm>
#include <concepts>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace nerf::pipeline {

namespace {

constexpr const char* kVersion = "0.1.0";

std::string format_value(const fs::path& p) { return p.string(); }
std::string format_value(const std::string& s) { return s; }
std::string format_value(bool b) { return b ? "true" : "false"; }
template <std::integral I>
std::string format_value(I v) {
  return std::to_string(v);
}
std::string format_value(double v) { return format_double(v); }
std::string format_value(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

std::uint64_t hash_file(const fs::path& path, std::uint64_t h) {
  std::ifstream in(path, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a(bytes.data(), bytes.size(), h);
}

std::string hex(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
  return buf;
}

std::string file_hash(const fs::path& path) { return hex(hash_file(path, fnv1a(nullptr, 0))); }

/// Hash of relative names and contents of the given files and directory trees.
std::string hash_inputs(const fs::path& root, const std::vector<std::string>& entries) {
  std::vector<fs::path> files;
  for (const auto& e : entries) {
    const fs::path p = root / e;
    if (fs::is_regular_file(p)) files.push_back(p);
    if (fs::is_directory(p))
      for (const auto& f : fs::recursive_directory_iterator(p))
        if (f.is_regular_file()) files.push_back(f.path());
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = fnv1a(nullptr, 0);
  for (const auto& f : files) {
    const std::string rel = fs::relative(f, root).generic_string();
    h = fnv1a(rel.data(), rel.size(), h);
    h = hash_file(f, h);
  }
  return hex(h);
}

template <typename Options>
fs::path write_manifest(const fs::path& dir, const std::string& command, Options& o,
                        const std::vector<std::pair<std::string, std::string>>& inputs) {
  std::vector<std::pair<std::string, std::string>> config;
  o.visit([&](const char* key, auto& value, const char*, bool = false) { config.emplace_back(key, format_value(value)); });
  std::string text;
  for (const auto& [k, v] : config) text += k + "=" + v + "\n";
  const std::string hash = hex(fnv1a(text.data(), text.size()));

  fs::create_directories(dir);
  const fs::path path = dir / (command + ".manifest.txt");
  std::ofstream out(path);
  out << "command = " << command << "\n";
  for (const auto& [k, v] : config) out << "config." << k << " = " << v << "\n";
  out << "config_hash = " << hash << "\n";
  for (const auto& [k, v] : inputs) out << "input." << k << " = " << v << "\n";
  out << "version.nerf = " << kVersion << "\n";
  out << "version.eigen = " << EIGEN_WORLD_VERSION << "." << EIGEN_MAJOR_VERSION << "." << EIGEN_MINOR_VERSION << "\n";
  out << "version.compiler = " << __VERSION__ << "\n";
  if (!out) throw Error("cannot write " + path.string());
  return path;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw UsageError(message);
}

void require_dir(const fs::path& dir, const std::string& flag) {
  require(!dir.empty(), flag + " is required");
  require(fs::is_directory(dir), flag + " " + dir.string() + " is not a directory");
}

void require_file(const fs::path& file, const std::string& what, const std::string& hint) {
  if (!fs::is_regular_file(file)) throw UsageError(what + " " + file.string() + " not found; " + hint);
}

FieldConfig preset(const std::string& name) {
  if (name == "small") return FieldConfig::small();
  if (name == "standard") return FieldConfig::standard();
  throw UsageError("unknown preset '" + name + "'; use small or standard");
}

RenderConfig eval_render(int n_coarse, int n_fine) {
  RenderConfig cfg;
  cfg.n_coarse = n_coarse;
  cfg.n_fine = n_fine;
  cfg.perturb = false;
  cfg.validate();
  return cfg;
}

}  // namespace

fs::path gen_scene(GenSceneOptions o) {
  require(!o.out.empty(), "--out is required");
  AnalyticScene scene;
  if (o.scene == "sphere_box")
    scene = AnalyticScene::sphere_and_box();
  else if (o.scene == "sphere")
    scene = AnalyticScene::single_sphere(0.5);
  else
    throw UsageError("unknown scene '" + o.scene + "'; use sphere_box or sphere");
  require(o.views >= 2, "--views must be at least 2");
  require(o.width > 0 && o.height > 0, "--width and --height must be positive");
  require(o.test_views >= 0, "--test-views must be >= 0");
  require(o.corrupt_center.size() == 3, "--corrupt-center needs three values");

  RingOptions ring;
  ring.n_views = o.views;
  ring.width = o.width;
  ring.height = o.height;
  ring.radius = o.ring_radius;
  ring.fov_deg = o.fov;
  ring.elevation_deg = o.elevation;
  SyntheticDataset ds = generate_dataset(scene, ring, o.test_views);
  if (o.corrupt_radius > 0.0) {
    Corruption c;
    c.center = Vec3(o.corrupt_center[0], o.corrupt_center[1], o.corrupt_center[2]);
    c.radius = o.corrupt_radius;
    c.depth_sigma = o.corrupt_depth_sigma;
    c.normal_sigma = o.corrupt_normal_sigma;
    c.invalid_fraction = o.corrupt_invalid;
    c.seed = o.seed;
    ds.priors = corrupt_priors(ds.priors, c);
  }
  fs::create_directories(o.out);
  write_dataset(o.out, ds);
  PointCloud gt;
  gt.points = surface_samples(scene, o.gt_samples, o.seed);
  write_pointcloud_ply(o.out / "gt_points.ply", gt);
  return write_manifest(o.out, "gen-scene", o, {});
}

fs::path confidence(ConfidenceOptions o) {
  require_dir(o.data, "--data");
  require(o.mode == "continuous" || o.mode == "binary", "unknown mode '" + o.mode + "'; use continuous or binary");
  require(o.k >= 1, "--k must be positive");
  require(o.threads >= 1, "--threads must be positive");
  const std::string inputs = hash_inputs(o.data, {"cameras.txt", "images.txt", "depth", "normal"});
  const auto views = read_poses(o.data);
  PriorSet priors = load_priors(o.data, views, o.normals_in_camera_frame);
  ConfidenceConfig cfg;
  cfg.k = o.k;
  cfg.binary = o.mode == "binary";
  cfg.contributed_px = o.contributed_px;
  cfg.min_mean_error = o.min_mean_error;
  cfg.threads = o.threads;
  build_confidence_maps(priors, cfg);
  save_confidence(o.data, priors);

  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& m : priors.maps)
    for (int y = 0; y < m.depth.height; ++y)
      for (int x = 0; x < m.depth.width; ++x)
        if (m.depth.valid(x, y)) {
          sum += m.confidence.at(x, y);
          ++n;
        }
  std::cerr << "confidence: " << priors.size() << " views, mean over valid priors "
            << sum / std::max<std::size_t>(n, 1) << "\n";
  return write_manifest(o.data, "confidence", o, {{"priors", inputs}});
}

fs::path train(TrainOptions o, const std::function<void(int, double)>& progress) {
  require_dir(o.data, "--data");
  require(o.confidence == "maps" || o.confidence == "ones",
          "unknown confidence source '" + o.confidence + "'; use maps or ones");
  require(o.iters >= 0, "--iters must be >= 0");
  require(o.threads >= 1, "--threads must be positive");
  if (o.ckpt.empty()) o.ckpt = o.data / "ckpt";
  if (o.loss_csv.empty()) o.loss_csv = o.ckpt.parent_path() / "loss.csv";

  const Dataset data = load_dataset(o.data, o.normals_in_camera_frame);
  const bool geometric = o.lambda_geom > 0.0 && (o.depth_loss || o.normal_loss);
  if (geometric && o.confidence == "maps")
    for (std::size_t i = 0; i < data.priors.size(); ++i)
      if (data.priors.maps[i].confidence.empty())
        throw UsageError("no confidence map for view " + data.views()[i].name +
                         "; run the confidence command first or pass --confidence ones");

  TrainConfig cfg;
  cfg.field = preset(o.preset);
  cfg.init.seed = o.seed;
  cfg.render.n_coarse = o.n_coarse;
  cfg.render.n_fine = o.n_fine;
  cfg.render.fd_step = o.normal_step;
  cfg.loss.lambda_geom = o.lambda_geom;
  cfg.loss.use_depth = o.depth_loss;
  cfg.loss.use_normal = o.normal_loss;
  cfg.loss.huber_delta_depth = o.huber_depth;
  cfg.loss.huber_delta_normal = o.huber_normal;
  cfg.confidence = o.confidence == "ones" ? ConfidenceSource::ones : ConfidenceSource::maps;
  cfg.iterations = o.iters;
  cfg.batch_size = o.batch;
  cfg.lr = o.lr;
  cfg.lr_final = o.lr_final;
  cfg.depth_unit_fraction = o.depth_unit;
  cfg.seed = o.seed;
  cfg.threads = o.threads;
  cfg.checkpoint_every = o.checkpoint_every;
  cfg.checkpoint_path = o.ckpt;

  const std::string inputs =
      hash_inputs(o.data, {"cameras.txt", "images.txt", "images", "depth", "normal", "confidence", "dataset.cfg"});
  std::vector<LossRecord> history;
  const int every = std::max(1, o.iters / 20);
  nerf::train(data, cfg, &history, [&](const LossRecord& r) {
    if (progress) progress(r.iteration, r.terms.total);
    if ((r.iteration + 1) % every == 0)
      std::cerr << "train: iteration " << r.iteration + 1 << "/" << o.iters << " loss " << r.terms.total
                << " rgb " << r.terms.rgb << " depth " << r.terms.depth << " normal " << r.terms.normal << "\n";
  });
  write_loss_csv(o.loss_csv, history);
  return write_manifest(o.ckpt.parent_path(), "train", o, {{"dataset", inputs}});
}

fs::path render(RenderOptions o) {
  require_dir(o.data, "--data");
  require(o.split == "test" || o.split == "train", "unknown split '" + o.split + "'; use test or train");
  if (o.ckpt.empty()) o.ckpt = o.data / "ckpt";
  if (o.out.empty()) o.out = o.data / "renders";
  require_file(o.ckpt, "checkpoint", "run the train command first or pass --ckpt");
  const Dataset data = load_dataset(o.data);
  const auto params = load_checkpoint<float>(o.ckpt);
  const RenderConfig cfg = eval_render(o.n_coarse, o.n_fine);

  const std::vector<CameraView> views = o.split == "test" ? load_test_set(o.data / "test").views : data.views();
  fs::create_directories(o.out);
  for (std::size_t i = 0; i < views.size(); ++i) {
    const ViewRender r = render_view(params, views[i], data.t_near, data.t_far, cfg, mix_seed(o.seed, i), o.threads);
    const std::string stem = view_stem(views[i].name);
    write_png_srgb(o.out / (stem + ".png"), r.color);
    write_pfm(o.out / (stem + "_depth.pfm"), r.depth);
    write_pfm(o.out / (stem + "_normal.pfm"), r.normal);
  }
  std::cerr << "render: " << views.size() << " views written to " << o.out.string() << "\n";
  return write_manifest(o.out, "render", o, {{"ckpt", file_hash(o.ckpt)}});
}

fs::path extract(ExtractOptions o, std::size_t* vertex_count) {
  require(!o.out.empty(), "--out is required");
  require_file(o.ckpt, "checkpoint", "run the train command first or pass --ckpt");
  require(o.resolution >= 2, "--resolution must be at least 2");
  Vec3 lo, hi;
  if (!o.bbox.empty()) {
    require(o.bbox.size() == 6, "--bbox needs six values: min_x,min_y,min_z,max_x,max_y,max_z");
    lo = Vec3(o.bbox[0], o.bbox[1], o.bbox[2]);
    hi = Vec3(o.bbox[3], o.bbox[4], o.bbox[5]);
  } else {
    require(!o.data.empty(), "pass --bbox or --data to fix the extraction volume");
    require_file(o.data / "dataset.cfg", "dataset config", "pass --bbox instead");
    const KeyValues kv = read_key_values(o.data / "dataset.cfg");
    require(kv.count("bbox_min") && kv.count("bbox_max"), "dataset.cfg has no bbox_min/bbox_max; pass --bbox");
    lo = parse_vec3(kv.at("bbox_min"));
    hi = parse_vec3(kv.at("bbox_max"));
  }
  const auto params = load_checkpoint<float>(o.ckpt);
  const TriangleMesh mesh = nerf::extract(params, lo, hi, {o.resolution, o.resolution, o.resolution}, o.tau, o.threads);
  if (mesh.triangles.empty()) std::cerr << "extract: warning: empty mesh at tau " << o.tau << "\n";
  std::cerr << "extract: " << mesh.vertices.size() << " vertices, " << mesh.triangles.size() << " triangles\n";
  if (vertex_count) *vertex_count = mesh.vertices.size();
  write_mesh_ply(o.out, mesh);
  return write_manifest(o.out.parent_path().empty() ? fs::path(".") : o.out.parent_path(), "extract", o,
                        {{"ckpt", file_hash(o.ckpt)}});
}

fs::path eval(EvalOptions o, EvalResult* result) {
  require_dir(o.data, "--data");
  require(!o.ckpt.empty() || !o.mesh.empty(), "nothing to evaluate; pass --ckpt and/or --mesh");
  if (o.out.empty()) o.out = o.data;
  EvalResult res;
  std::vector<std::pair<std::string, std::string>> inputs;
  if (!o.ckpt.empty()) {
    require_file(o.ckpt, "checkpoint", "run the train command first");
    require(fs::is_directory(o.data / "test"), "dataset has no test/ views");
    const Dataset data = load_dataset(o.data);
    const TestSet test = load_test_set(o.data / "test");
    const auto params = load_checkpoint<float>(o.ckpt);
    const auto rows = eval_views(params, test, data.t_near, data.t_far, eval_render(o.n_coarse, o.n_fine), o.seed,
                                 o.threads);
    write_views_csv(o.out / "views.csv", rows);
    for (const auto& r : rows) {
      res.mean_psnr += r.psnr / rows.size();
      res.mean_ssim += r.ssim / rows.size();
    }
    std::cerr << "eval: mean PSNR " << res.mean_psnr << " dB, mean SSIM " << res.mean_ssim << "\n";
    inputs.emplace_back("ckpt", file_hash(o.ckpt));
  }
  if (!o.mesh.empty()) {
    require_file(o.mesh, "mesh", "run the extract command first");
    require_file(o.data / "gt_points.ply", "reference points", "the dataset needs gt_points.ply");
    const TriangleMesh mesh = read_ply(o.mesh);
    const TriangleMesh gt = read_ply(o.data / "gt_points.ply");
    res.chamfer = eval_mesh(mesh, gt.vertices);
    write_mesh_csv(o.out / "mesh.csv", res.chamfer);
    std::cerr << "eval: Chamfer " << res.chamfer << "\n";
    inputs.emplace_back("mesh", file_hash(o.mesh));
  }
  if (result) *result = res;
  return write_manifest(o.out, "eval", o, inputs);
}

}  // namespace nerf::pipeline
