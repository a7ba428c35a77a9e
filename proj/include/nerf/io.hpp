#pragma once

// File formats: COLMAP-style text poses, PFM float maps, ASCII PLY, 8-bit PNG.

#include "nerf/geometry.hpp"

#include <array>
#include <filesystem>
#include <vector>

namespace nerf {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;
};

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;  // empty or same length as points
};

/// Reads `cameras.txt` + `images.txt`. Views come back in file order of images.txt.
/// Rotations deviating from orthonormal by more than 1e-6 are rejected.
std::vector<CameraView> read_poses(const std::filesystem::path& cameras_txt, const std::filesystem::path& images_txt);
std::vector<CameraView> read_poses(const std::filesystem::path& dir);
void write_poses(const std::filesystem::path& dir, const std::vector<CameraView>& views);

/// PFM reader; accepts either byte order. Rows are returned top-to-bottom.
ImageBuffer read_pfm(const std::filesystem::path& path);
/// Little-endian PFM writer (`Pf` for 1 channel, `PF` for 3).
void write_pfm(const std::filesystem::path& path, const ImageBuffer& image);

void write_mesh_ply(const std::filesystem::path& path, const TriangleMesh& mesh);
void write_pointcloud_ply(const std::filesystem::path& path, const PointCloud& cloud);
/// Reads vertices (and faces when present) of an ASCII PLY written by this project or similar tools.
TriangleMesh read_ply(const std::filesystem::path& path);

/// 8-bit sRGB PNG in, linear RGB [0,1] out.
ImageBuffer read_png_linear(const std::filesystem::path& path);
/// Linear RGB [0,1] in, 8-bit sRGB PNG out. NaN pixels are written black.
void write_png_srgb(const std::filesystem::path& path, const ImageBuffer& image);

double srgb_to_linear(double c);
double linear_to_srgb(double c);

}  // namespace nerf
