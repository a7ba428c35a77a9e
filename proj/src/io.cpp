#include "nerf/io.hpp"

#include <Eigen/Geometry>
#include <png.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

namespace nerf {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> tokenize(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::uint32_t swap_bytes(std::uint32_t v) { return __builtin_bswap32(v); }

bool is_comment_or_blank(const std::string& line) {
  const auto pos = line.find_first_not_of(" \t\r");
  return pos == std::string::npos || line[pos] == '#';
}

template <typename T>
T parse_number(const std::string& tok, const std::string& where) {
  std::istringstream in(tok);
  T value{};
  in >> value;
  if (in.fail() || !in.eof()) throw ParseError(where + ": cannot parse '" + tok + "'");
  return value;
}

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw ParseError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, mode);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

}  // namespace

std::vector<CameraView> read_poses(const fs::path& cameras_txt, const fs::path& images_txt) {
  std::map<long, CameraIntrinsics> cameras;
  {
    auto in = open_in(cameras_txt);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (is_comment_or_blank(line)) continue;
      const std::string where = cameras_txt.filename().string() + ":" + std::to_string(lineno);
      const auto tok = tokenize(line);
      if (tok.size() != 8) throw ParseError(where + ": expected 'CAM_ID PINHOLE WIDTH HEIGHT fx fy cx cy'");
      if (tok[1] != "PINHOLE") throw ParseError(where + ": camera model '" + tok[1] + "' unsupported (PINHOLE only)");
      const long id = parse_number<long>(tok[0], where);
      CameraIntrinsics cam;
      cam.width = parse_number<int>(tok[2], where);
      cam.height = parse_number<int>(tok[3], where);
      cam.fx = parse_number<double>(tok[4], where);
      cam.fy = parse_number<double>(tok[5], where);
      cam.cx = parse_number<double>(tok[6], where);
      cam.cy = parse_number<double>(tok[7], where);
      try {
        cam.validate();
      } catch (const DomainError& e) {
        throw ParseError(where + ": camera " + tok[0] + ": " + e.what());
      }
      if (!cameras.emplace(id, cam).second) throw ParseError(where + ": duplicate camera id " + tok[0]);
    }
  }

  std::vector<CameraView> views;
  auto in = open_in(images_txt);
  std::string line;
  int lineno = 0;
  bool after_image = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (is_comment_or_blank(line) && line.find('#') != std::string::npos) continue;
    const auto tok = tokenize(line);
    const std::string where = images_txt.filename().string() + ":" + std::to_string(lineno);
    if (tok.size() != 10) {
      // COLMAP follows each image record with a keypoint line of (x, y, id) triplets.
      if (after_image && tok.size() % 3 == 0) {
        after_image = false;
        continue;
      }
      if (tok.empty()) continue;
      throw ParseError(where + ": expected 'IMG_ID qw qx qy qz tx ty tz CAM_ID NAME'");
    }
    const Eigen::Quaterniond q(parse_number<double>(tok[1], where), parse_number<double>(tok[2], where),
                               parse_number<double>(tok[3], where), parse_number<double>(tok[4], where));
    CameraView view;
    // A non-unit quaternion yields a non-orthonormal matrix here and is rejected below.
    view.pose.rotation = q.toRotationMatrix();
    view.pose.translation = Vec3(parse_number<double>(tok[5], where), parse_number<double>(tok[6], where),
                                 parse_number<double>(tok[7], where));
    try {
      view.pose.validate(1e-6);
    } catch (const DomainError& e) {
      throw ParseError(where + ": image " + tok[0] + " (" + tok[9] + "): " + e.what());
    }
    const long cam_id = parse_number<long>(tok[8], where);
    const auto cam = cameras.find(cam_id);
    if (cam == cameras.end()) throw ParseError(where + ": image " + tok[0] + " references unknown camera " + tok[8]);
    view.intrinsics = cam->second;
    view.name = tok[9];
    views.push_back(std::move(view));
    after_image = true;
  }
  return views;
}

std::vector<CameraView> read_poses(const fs::path& dir) {
  return read_poses(dir / "cameras.txt", dir / "images.txt");
}

void write_poses(const fs::path& dir, const std::vector<CameraView>& views) {
  auto cams = open_out(dir / "cameras.txt");
  auto imgs = open_out(dir / "images.txt");
  cams << "# CAM_ID MODEL WIDTH HEIGHT fx fy cx cy\n" << std::setprecision(17);
  imgs << "# IMG_ID qw qx qy qz tx ty tz CAM_ID NAME\n" << std::setprecision(17);
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& v = views[i];
    const auto& k = v.intrinsics;
    cams << i + 1 << " PINHOLE " << k.width << ' ' << k.height << ' ' << k.fx << ' ' << k.fy << ' ' << k.cx << ' '
         << k.cy << '\n';
    Eigen::Quaterniond q(v.pose.rotation);
    if (q.w() < 0) q.coeffs() *= -1.0;
    const auto& t = v.pose.translation;
    imgs << i + 1 << ' ' << q.w() << ' ' << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << t.x() << ' ' << t.y()
         << ' ' << t.z() << ' ' << i + 1 << ' ' << v.name << "\n\n";
  }
  if (!cams || !imgs) throw Error("write_poses: I/O failure in " + dir.string());
}

ImageBuffer read_pfm(const fs::path& path) {
  auto in = open_in(path, std::ios::binary);
  const std::string name = path.filename().string();
  auto token = [&](const char* what) {
    std::string tok;
    if (!(in >> tok)) throw ParseError(name + ": truncated header (missing " + what + ")");
    return tok;
  };
  const std::string magic = token("magic");
  int channels = 0;
  if (magic == "Pf") {
    channels = 1;
  } else if (magic == "PF") {
    channels = 3;
  } else {
    throw ParseError(name + ": bad magic '" + magic + "'");
  }
  const int width = parse_number<int>(token("width"), name + " header");
  const int height = parse_number<int>(token("height"), name + " header");
  const double scale = parse_number<double>(token("scale"), name + " header");
  if (width <= 0 || height <= 0) throw ParseError(name + ": non-positive dimensions");
  if (scale == 0.0 || !std::isfinite(scale)) throw ParseError(name + ": invalid scale field");
  if (in.get() == EOF) throw ParseError(name + ": truncated header");
  const bool little = scale < 0.0;

  ImageBuffer image(width, height, channels);
  const std::size_t row_values = static_cast<std::size_t>(width) * channels;
  std::vector<std::uint32_t> row(row_values);
  for (int r = 0; r < height; ++r) {
    if (!in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row_values * 4)))
      throw ParseError(name + ": truncated payload at row " + std::to_string(r));
    const int y = height - 1 - r;  // bottom-to-top on disk
    for (std::size_t i = 0; i < row_values; ++i) {
      std::uint32_t bits = row[i];
      if (little != (std::endian::native == std::endian::little)) bits = swap_bytes(bits);
      image.data[static_cast<std::size_t>(y) * row_values + i] = std::bit_cast<float>(bits);
    }
  }
  return image;
}

void write_pfm(const fs::path& path, const ImageBuffer& image) {
  image.check_layout();
  auto out = open_out(path, std::ios::binary);
  out << (image.channels == 1 ? "Pf" : "PF") << '\n' << image.width << ' ' << image.height << "\n-1\n";
  const std::size_t row_values = static_cast<std::size_t>(image.width) * image.channels;
  std::vector<std::uint32_t> row(row_values);
  for (int y = image.height - 1; y >= 0; --y) {
    for (std::size_t i = 0; i < row_values; ++i) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(image.data[static_cast<std::size_t>(y) * row_values + i]);
      if constexpr (std::endian::native != std::endian::little) bits = swap_bytes(bits);
      row[i] = bits;
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row_values * 4));
  }
  if (!out) throw Error("write_pfm: I/O failure on " + path.string());
}

namespace {

void write_ply_header(std::ostream& out, std::size_t vertices, bool normals, std::size_t faces) {
  out << "ply\nformat ascii 1.0\n";
  out << "element vertex " << vertices << "\nproperty float x\nproperty float y\nproperty float z\n";
  if (normals) out << "property float nx\nproperty float ny\nproperty float nz\n";
  out << "element face " << faces << "\nproperty list uchar int vertex_indices\n";
  out << "end_header\n";
}

void write_float3(std::ostream& out, const Vec3& v) {
  out << static_cast<float>(v.x()) << ' ' << static_cast<float>(v.y()) << ' ' << static_cast<float>(v.z());
}

}  // namespace

void write_mesh_ply(const fs::path& path, const TriangleMesh& mesh) {
  auto out = open_out(path);
  out << std::setprecision(std::numeric_limits<float>::max_digits10);
  write_ply_header(out, mesh.vertices.size(), false, mesh.triangles.size());
  for (const auto& v : mesh.vertices) {
    write_float3(out, v);
    out << '\n';
  }
  for (const auto& t : mesh.triangles) out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  if (!out) throw Error("write_mesh_ply: I/O failure on " + path.string());
}

void write_pointcloud_ply(const fs::path& path, const PointCloud& cloud) {
  const bool normals = !cloud.normals.empty();
  if (normals && cloud.normals.size() != cloud.points.size())
    throw ContractError("write_pointcloud_ply: normals/points length mismatch");
  auto out = open_out(path);
  out << std::setprecision(std::numeric_limits<float>::max_digits10);
  write_ply_header(out, cloud.points.size(), normals, 0);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    write_float3(out, cloud.points[i]);
    if (normals) {
      out << ' ';
      write_float3(out, cloud.normals[i]);
    }
    out << '\n';
  }
  if (!out) throw Error("write_pointcloud_ply: I/O failure on " + path.string());
}

TriangleMesh read_ply(const fs::path& path) {
  auto in = open_in(path);
  const std::string name = path.filename().string();
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) throw ParseError(name + ": missing 'ply' magic");
  std::size_t n_vertices = 0, n_faces = 0, vertex_props = 0;
  std::string current;
  bool ascii = false;
  while (std::getline(in, line)) {
    const auto tok = tokenize(line);
    if (tok.empty()) continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "format") {
      ascii = tok.size() > 1 && tok[1] == "ascii";
    } else if (tok[0] == "element" && tok.size() == 3) {
      current = tok[1];
      if (current == "vertex") n_vertices = parse_number<std::size_t>(tok[2], name + " header");
      if (current == "face") n_faces = parse_number<std::size_t>(tok[2], name + " header");
    } else if (tok[0] == "property" && current == "vertex") {
      ++vertex_props;
    }
  }
  if (!ascii) throw ParseError(name + ": only ASCII PLY is supported");
  if (n_vertices > 0 && vertex_props < 3) throw ParseError(name + ": vertex element lacks x y z");
  TriangleMesh mesh;
  mesh.vertices.reserve(n_vertices);
  for (std::size_t i = 0; i < n_vertices; ++i) {
    if (!std::getline(in, line)) throw ParseError(name + ": truncated at vertex " + std::to_string(i));
    const auto tok = tokenize(line);
    if (tok.size() < vertex_props) throw ParseError(name + ": short vertex record " + std::to_string(i));
    const std::string where = name + " vertex " + std::to_string(i);
    mesh.vertices.emplace_back(parse_number<float>(tok[0], where), parse_number<float>(tok[1], where),
                               parse_number<float>(tok[2], where));
  }
  for (std::size_t i = 0; i < n_faces; ++i) {
    if (!std::getline(in, line)) throw ParseError(name + ": truncated at face " + std::to_string(i));
    const auto tok = tokenize(line);
    const std::string where = name + " face " + std::to_string(i);
    if (tok.size() != 4 || tok[0] != "3") throw ParseError(where + ": only triangles are supported");
    std::array<std::uint32_t, 3> tri{};
    for (int k = 0; k < 3; ++k) {
      const auto idx = parse_number<std::uint64_t>(tok[1 + k], where);
      if (idx >= n_vertices) throw ParseError(where + ": index out of range");
      tri[k] = static_cast<std::uint32_t>(idx);
    }
    mesh.triangles.push_back(tri);
  }
  return mesh;
}

double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double c) {
  c = std::clamp(c, 0.0, 1.0);
  return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

ImageBuffer read_png_linear(const fs::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str()))
    throw ParseError(path.filename().string() + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw ParseError(path.filename().string() + ": " + msg);
  }
  double lut[256];
  for (int i = 0; i < 256; ++i) lut[i] = srgb_to_linear(i / 255.0);
  ImageBuffer out(static_cast<int>(img.width), static_cast<int>(img.height), 3);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = static_cast<float>(lut[buffer[i]]);
  return out;
}

void write_png_srgb(const fs::path& path, const ImageBuffer& image) {
  image.check_layout();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::vector<png_byte> buffer(static_cast<std::size_t>(image.width) * image.height * 3);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) {
        float value = image.at(x, y, image.channels == 3 ? c : 0);
        if (std::isnan(value)) value = 0.0f;
        buffer[(static_cast<std::size_t>(y) * image.width + x) * 3 + c] =
            static_cast<png_byte>(std::lround(linear_to_srgb(value) * 255.0));
      }
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buffer.data(), 0, nullptr))
    throw Error(path.string() + ": " + img.message);
}

}  // namespace nerf
