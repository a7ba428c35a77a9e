#pragma once

// Density grid sampling and marching-cubes isosurface extraction.

#include "nerf/field.hpp"
#include "nerf/io.hpp"

#include <array>
#include <functional>
#include <span>
#include <vector>

namespace nerf {

struct DensityGrid {
  Vec3 bbox_min = Vec3::Zero();
  Vec3 bbox_max = Vec3::Ones();
  std::array<int, 3> resolution{2, 2, 2};  // nodes per axis, corners included
  std::vector<double> values;              // x fastest, then y, then z

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * resolution[1] + j) * resolution[0] + i;
  }
  double at(int i, int j, int k) const { return values[index(i, j, k)]; }
  Vec3 spacing() const;
  Vec3 node(int i, int j, int k) const;
  void validate() const;
};

/// Evaluates `density` (a batch of points in, one value per point out) at
/// every node, one z slab at a time. Throws DomainError naming the first
/// node with a non-finite or negative value.
using BatchDensityFn = std::function<void(std::span<const Vec3>, std::span<double>)>;
DensityGrid sample_density_grid(const BatchDensityFn& density, const Vec3& bbox_min, const Vec3& bbox_max,
                                std::array<int, 3> resolution, int threads = 1);

/// Fine-network density of a trained field.
template <typename T>
DensityGrid sample_density_grid(const FieldParams<T>& params, const Vec3& bbox_min, const Vec3& bbox_max,
                                std::array<int, 3> resolution, int threads = 1);

/// Isosurface at `tau` with vertices shared through their grid edge. Triangle
/// normals (counter-clockwise) point towards decreasing density.
TriangleMesh marching_cubes(const DensityGrid& grid, double tau, int threads = 1);

template <typename T>
TriangleMesh extract(const FieldParams<T>& params, const Vec3& bbox_min, const Vec3& bbox_max,
                     std::array<int, 3> resolution, double tau, int threads = 1);

inline constexpr double kDefaultTau = 50.0;

}  // namespace nerf
