#pragma once

// Pipeline stages behind the command-line tool. Every option struct lists its
// fields once in visit(); the CLI flags, config-file keys and manifests are all
// generated from that list.

#include "nerf/common.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace nerf::pipeline {

namespace fs = std::filesystem;

/// Bad option value or missing input; the message says how to fix it.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct GenSceneOptions {
  fs::path out;
  std::string scene = "sphere_box";  // sphere_box | sphere
  int views = 20;
  int width = 64;
  int height = 64;
  int test_views = 4;
  double ring_radius = 3.0;
  double fov = 45.0;
  double elevation = 25.0;
  std::size_t gt_samples = 10000;
  std::uint64_t seed = 0;
  // Prior corruption inside a ball; radius 0 disables it.
  std::vector<double> corrupt_center{0.0, 0.0, 0.0};
  double corrupt_radius = 0.0;
  double corrupt_depth_sigma = 0.0;
  double corrupt_normal_sigma = 0.0;
  double corrupt_invalid = 0.0;

  template <typename V>
  void visit(V&& v) {
    v("out", out, "output dataset directory", true);
    v("scene", scene, "sphere_box or sphere");
    v("views", views, "training views on the camera ring");
    v("width", width, "image width in pixels");
    v("height", height, "image height in pixels");
    v("test-views", test_views, "held-out views between training azimuths");
    v("ring-radius", ring_radius, "camera distance from the scene centre");
    v("fov", fov, "horizontal field of view, degrees");
    v("elevation", elevation, "camera elevation, degrees (alternating sign)");
    v("gt-samples", gt_samples, "surface samples written to gt_points.ply");
    v("seed", seed, "seed for surface samples and corruption");
    v("corrupt-center", corrupt_center, "centre of the corrupted ball (x,y,z)");
    v("corrupt-radius", corrupt_radius, "radius of the corrupted ball; 0 disables");
    v("corrupt-depth-sigma", corrupt_depth_sigma, "Gaussian depth noise in the ball");
    v("corrupt-normal-sigma", corrupt_normal_sigma, "Gaussian normal noise in the ball");
    v("corrupt-invalid", corrupt_invalid, "fraction of ball pixels turned into holes");
  }
};

struct ConfidenceOptions {
  fs::path data;
  std::string mode = "continuous";  // continuous | binary
  int k = 4;
  double contributed_px = 1.0;
  double min_mean_error = 0.25;
  bool normals_in_camera_frame = false;
  int threads = default_threads();

  template <typename V>
  void visit(V&& v) {
    v("data", data, "dataset directory; confidence/ is written inside it", true);
    v("mode", mode, "continuous or binary");
    v("k", k, "number of source views kept per pixel");
    v("contributed-px", contributed_px, "binary mode: consistent below this round-trip distance (px)");
    v("min-mean-error", min_mean_error, "floor on the per-view mean error (px^2)");
    v("normals-in-camera-frame", normals_in_camera_frame, "normal priors are stored in camera coordinates");
    v("threads", threads, "worker threads");
  }
};

struct TrainOptions {
  fs::path data;
  fs::path ckpt;  // default: <data>/ckpt
  fs::path loss_csv;  // default: next to the checkpoint
  std::string preset = "small";  // small | standard
  int iters = 2000;
  std::size_t batch = 1024;
  int n_coarse = 64;
  int n_fine = 128;
  double normal_step = 1e-2;
  double lambda_geom = 0.1;
  bool depth_loss = true;
  bool normal_loss = true;
  std::string confidence = "maps";  // maps | ones
  double huber_depth = 1.0;
  double huber_normal = 1.0;
  double depth_unit = 1.0 / 20.0;
  double lr = 5e-4;
  double lr_final = 5e-5;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;
  bool normals_in_camera_frame = false;
  int threads = default_threads();

  template <typename V>
  void visit(V&& v) {
    v("data", data, "dataset directory", true);
    v("ckpt", ckpt, "checkpoint path (default <data>/ckpt)");
    v("loss-csv", loss_csv, "loss history path (default loss.csv next to the checkpoint)");
    v("preset", preset, "network size: small or standard");
    v("iters", iters, "optimization steps");
    v("batch", batch, "rays per step");
    v("n-coarse", n_coarse, "stratified samples per ray");
    v("n-fine", n_fine, "importance samples per ray");
    v("normal-step", normal_step, "central-difference step for rendered normals");
    v("lambda-geom", lambda_geom, "weight of the depth and normal losses; 0 gives plain RGB training");
    v("depth-loss", depth_loss, "enable the depth loss");
    v("normal-loss", normal_loss, "enable the normal loss");
    v("confidence", confidence, "maps (from the confidence command) or ones");
    v("huber-depth", huber_depth, "Huber threshold for depth, in depth units");
    v("huber-normal", huber_normal, "Huber threshold for normals");
    v("depth-unit", depth_unit, "depth unit as a fraction of the scene diagonal");
    v("lr", lr, "initial learning rate");
    v("lr-final", lr_final, "learning rate at the last step (exponential decay)");
    v("seed", seed, "seed for initialization, batches and samples");
    v("checkpoint-every", checkpoint_every, "write the checkpoint every N steps; 0 only at the end");
    v("normals-in-camera-frame", normals_in_camera_frame, "normal priors are stored in camera coordinates");
    v("threads", threads, "worker threads");
  }
};

struct RenderOptions {
  fs::path data;
  fs::path ckpt;
  fs::path out;
  std::string split = "test";  // test | train
  int n_coarse = 64;
  int n_fine = 128;
  std::uint64_t seed = 0;
  int threads = default_threads();

  template <typename V>
  void visit(V&& v) {
    v("data", data, "dataset directory", true);
    v("ckpt", ckpt, "checkpoint (default <data>/ckpt)");
    v("out", out, "output directory (default <data>/renders)");
    v("split", split, "test or train views");
    v("n-coarse", n_coarse, "stratified samples per ray");
    v("n-fine", n_fine, "importance samples per ray");
    v("seed", seed, "seed for resampling draws");
    v("threads", threads, "worker threads");
  }
};

struct ExtractOptions {
  fs::path ckpt;
  fs::path out;
  fs::path data;  // bounding box from dataset.cfg when --bbox is absent
  std::vector<double> bbox;
  int resolution = 256;
  double tau = 50.0;
  int threads = default_threads();

  template <typename V>
  void visit(V&& v) {
    v("ckpt", ckpt, "checkpoint", true);
    v("out", out, "output mesh (PLY)", true);
    v("data", data, "dataset directory supplying the bounding box");
    v("bbox", bbox, "bounding box min_x,min_y,min_z,max_x,max_y,max_z");
    v("resolution", resolution, "grid nodes per axis");
    v("tau", tau, "density threshold");
    v("threads", threads, "worker threads");
  }
};

struct EvalOptions {
  fs::path data;
  fs::path ckpt;
  fs::path mesh;
  fs::path out;
  int n_coarse = 64;
  int n_fine = 128;
  std::uint64_t seed = 0;
  int threads = default_threads();

  template <typename V>
  void visit(V&& v) {
    v("data", data, "dataset directory with test/ and gt_points.ply", true);
    v("ckpt", ckpt, "checkpoint; test views are scored when given");
    v("mesh", mesh, "mesh; Chamfer to gt_points.ply is scored when given");
    v("out", out, "directory for views.csv and mesh.csv (default <data>)");
    v("n-coarse", n_coarse, "stratified samples per ray");
    v("n-fine", n_fine, "importance samples per ray");
    v("seed", seed, "seed for resampling draws");
    v("threads", threads, "worker threads");
  }
};

struct EvalResult {
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double chamfer = -1.0;  // -1 when no mesh was scored
};

/// Each stage validates its inputs, writes its outputs and a manifest
/// (<command>.manifest.txt) in its output directory, and returns the manifest path.
fs::path gen_scene(GenSceneOptions o);
fs::path confidence(ConfidenceOptions o);
fs::path train(TrainOptions o, const std::function<void(int, double)>& progress = {});
fs::path render(RenderOptions o);
fs::path extract(ExtractOptions o, std::size_t* vertex_count = nullptr);
fs::path eval(EvalOptions o, EvalResult* result = nullptr);

}  // namespace nerf::pipeline
