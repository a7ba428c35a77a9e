#include "nerf/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace nerf {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues read_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || trim(line.substr(0, eq)).empty())
      throw ParseError(path.filename().string() + ":" + std::to_string(lineno) + ": expected key = value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

void write_key_values(const fs::path& path, const KeyValues& kv) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
  if (!out) throw Error("cannot write " + path.string());
}

std::string format_double(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

std::string format_vec3(const Vec3& v) {
  return format_double(v.x()) + " " + format_double(v.y()) + " " + format_double(v.z());
}

Vec3 parse_vec3(const std::string& text) {
  std::string cleaned = text;
  std::replace(cleaned.begin(), cleaned.end(), ',', ' ');
  std::istringstream in(cleaned);
  Vec3 v;
  if (!(in >> v.x() >> v.y() >> v.z())) throw ParseError("expected three numbers, got '" + text + "'");
  std::string rest;
  if (in >> rest) throw ParseError("expected three numbers, got '" + text + "'");
  return v;
}

namespace {

std::vector<ImageBuffer> load_images(const fs::path& dir, const std::vector<CameraView>& views) {
  std::vector<ImageBuffer> images;
  for (const auto& v : views) {
    ImageBuffer img = read_png_linear(dir / "images" / v.name);
    if (img.width != v.intrinsics.width || img.height != v.intrinsics.height)
      throw ContractError("image " + v.name + " is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                          " but its camera says " + std::to_string(v.intrinsics.width) + "x" +
                          std::to_string(v.intrinsics.height));
    images.push_back(std::move(img));
  }
  return images;
}

}  // namespace

Dataset load_dataset(const fs::path& dir, bool normals_in_camera_frame) {
  Dataset ds;
  const auto views = read_poses(dir);
  if (views.empty()) throw ContractError("dataset " + dir.string() + " has no views");
  ds.priors = load_priors(dir, views, normals_in_camera_frame);
  ds.images = load_images(dir, views);

  const fs::path cfg = dir / "dataset.cfg";
  if (fs::exists(cfg)) {
    const KeyValues kv = read_key_values(cfg);
    auto need = [&](const std::string& key) -> const std::string& {
      auto it = kv.find(key);
      if (it == kv.end()) throw ParseError("dataset.cfg: missing key '" + key + "'");
      return it->second;
    };
    ds.t_near = std::stod(need("near"));
    ds.t_far = std::stod(need("far"));
    ds.bbox_min = parse_vec3(need("bbox_min"));
    ds.bbox_max = parse_vec3(need("bbox_max"));
    ds.scene_diagonal = kv.count("scene_diagonal") ? std::stod(kv.at("scene_diagonal"))
                                                   : (ds.bbox_max - ds.bbox_min).norm();
  } else {
    // Bounds from the priors: every valid depth must lie inside [near, far].
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    Vec3 bmin = Vec3::Constant(lo), bmax = Vec3::Constant(-lo);
    for (std::size_t i = 0; i < views.size(); ++i) {
      const auto& d = ds.priors.maps[i].depth;
      for (int y = 0; y < d.height; ++y)
        for (int x = 0; x < d.width; ++x) {
          if (!d.valid(x, y)) continue;
          lo = std::min(lo, static_cast<double>(d.at(x, y)));
          hi = std::max(hi, static_cast<double>(d.at(x, y)));
          const Vec3 p = backproject(views[i].intrinsics, views[i].pose, x, y, d.at(x, y));
          bmin = bmin.cwiseMin(p);
          bmax = bmax.cwiseMax(p);
        }
    }
    if (!(hi > 0.0)) throw ContractError("dataset " + dir.string() + " has no dataset.cfg and no valid depth");
    ds.t_near = 0.5 * lo;
    ds.t_far = 1.5 * hi;
    const Vec3 pad = 0.05 * (bmax - bmin);
    ds.bbox_min = bmin - pad;
    ds.bbox_max = bmax + pad;
    ds.scene_diagonal = (bmax - bmin).norm();
  }
  if (!(ds.t_near >= 0.0 && ds.t_near < ds.t_far)) throw ContractError("dataset: need 0 <= near < far");
  if (!(ds.scene_diagonal > 0.0)) throw ContractError("dataset: scene diagonal must be positive");
  return ds;
}

Dataset to_dataset(const SyntheticDataset& ds) {
  Dataset out;
  out.priors = ds.priors;
  out.images = ds.images;
  out.t_near = ds.t_near;
  out.t_far = ds.t_far;
  out.bbox_min = ds.bbox_min;
  out.bbox_max = ds.bbox_max;
  out.scene_diagonal = ds.scene_diagonal;
  return out;
}

TestSet load_test_set(const fs::path& dir) {
  TestSet t;
  t.views = read_poses(dir);
  t.images = load_images(dir, t.views);
  return t;
}

void write_dataset(const fs::path& dir, const SyntheticDataset& ds) {
  write_poses(dir, ds.priors.views);
  for (std::size_t i = 0; i < ds.images.size(); ++i)
    write_png_srgb(dir / "images" / ds.priors.views[i].name, ds.images[i]);
  save_depth_normal(dir, ds.priors);
  KeyValues kv;
  kv["near"] = format_double(ds.t_near);
  kv["far"] = format_double(ds.t_far);
  kv["bbox_min"] = format_vec3(ds.bbox_min);
  kv["bbox_max"] = format_vec3(ds.bbox_max);
  kv["scene_diagonal"] = format_double(ds.scene_diagonal);
  write_key_values(dir / "dataset.cfg", kv);
  if (!ds.test_views.empty()) {
    write_poses(dir / "test", ds.test_views);
    for (std::size_t i = 0; i < ds.test_images.size(); ++i)
      write_png_srgb(dir / "test" / "images" / ds.test_views[i].name, ds.test_images[i]);
  }
}

}  // namespace nerf
