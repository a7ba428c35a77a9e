#include "nerf/extraction.hpp"

#include <cmath>
#include <sstream>
#include <unordered_map>

namespace nerf {

namespace {
#include "mc_tables.inc"

// Corner offsets and edge endpoints in the table's labelling.
constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                              {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
}  // namespace

Vec3 DensityGrid::spacing() const {
  return Vec3((bbox_max.x() - bbox_min.x()) / (resolution[0] - 1), (bbox_max.y() - bbox_min.y()) / (resolution[1] - 1),
              (bbox_max.z() - bbox_min.z()) / (resolution[2] - 1));
}

Vec3 DensityGrid::node(int i, int j, int k) const {
  const Vec3 h = spacing();
  return bbox_min + Vec3(i * h.x(), j * h.y(), k * h.z());
}

void DensityGrid::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (resolution[a] < 2) throw DomainError("grid: resolution must be >= 2 per axis");
    if (!(bbox_min[a] < bbox_max[a])) throw DomainError("grid: bbox min must be below max on every axis");
  }
  if (values.size() != static_cast<std::size_t>(resolution[0]) * resolution[1] * resolution[2])
    throw ContractError("grid: value count does not match the resolution");
}

DensityGrid sample_density_grid(const BatchDensityFn& density, const Vec3& bbox_min, const Vec3& bbox_max,
                                std::array<int, 3> resolution, int threads) {
  DensityGrid grid;
  grid.bbox_min = bbox_min;
  grid.bbox_max = bbox_max;
  grid.resolution = resolution;
  for (int a = 0; a < 3; ++a)
    if (resolution[a] < 2) throw DomainError("grid: resolution must be >= 2 per axis");
  if (!(bbox_min.array() < bbox_max.array()).all() || !bbox_min.allFinite() || !bbox_max.allFinite())
    throw DomainError("grid: bbox min must be below max on every axis");
  const auto [nx, ny, nz] = resolution;
  grid.values.assign(static_cast<std::size_t>(nx) * ny * nz, 0.0);
  const std::size_t slab = static_cast<std::size_t>(nx) * ny;
  parallel_for(static_cast<std::size_t>(nz), threads, [&](std::size_t k) {
    std::vector<Vec3> points(slab);
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) points[static_cast<std::size_t>(j) * nx + i] = grid.node(i, j, static_cast<int>(k));
    density(points, std::span<double>(grid.values.data() + k * slab, slab));
  });
  for (std::size_t n = 0; n < grid.values.size(); ++n) {
    const double v = grid.values[n];
    if (!std::isfinite(v) || v < 0.0) {
      const std::size_t i = n % nx, j = (n / nx) % ny, k = n / slab;
      std::ostringstream msg;
      msg << "grid: density " << v << " at node (" << i << ", " << j << ", " << k << ")";
      throw DomainError(msg.str());
    }
  }
  return grid;
}

template <typename T>
DensityGrid sample_density_grid(const FieldParams<T>& params, const Vec3& bbox_min, const Vec3& bbox_max,
                                std::array<int, 3> resolution, int threads) {
  const FieldSource<T> source(params);
  return sample_density_grid(
      [&](std::span<const Vec3> points, std::span<double> sigma) {
        // Bounded batches keep the activation trace small.
        constexpr std::size_t kBatch = 4096;
        for (std::size_t b = 0; b < points.size(); b += kBatch) {
          const std::size_t e = std::min(points.size(), b + kBatch);
          source.density(Stage::fine, points.subspan(b, e - b), sigma.subspan(b, e - b));
        }
      },
      bbox_min, bbox_max, resolution, threads);
}

namespace {

struct SlabMesh {
  std::vector<std::uint64_t> keys;  // global edge key per local vertex
  std::vector<Vec3> positions;
  std::vector<std::array<std::uint32_t, 3>> triangles;  // local indices
};

void march_slab(const DensityGrid& g, double tau, int k, SlabMesh& out) {
  const auto [nx, ny, nz] = g.resolution;
  std::unordered_map<std::uint64_t, std::uint32_t> local;
  double val[8];
  for (int j = 0; j + 1 < ny; ++j) {
    for (int i = 0; i + 1 < nx; ++i) {
      int cube = 0;
      for (int c = 0; c < 8; ++c) {
        val[c] = g.at(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2]);
        if (val[c] < tau) cube |= 1 << c;
      }
      const int edges = kEdgeTable[cube];
      if (edges == 0) continue;
      std::uint32_t vid[12] = {};
      for (int e = 0; e < 12; ++e) {
        if (!(edges & (1 << e))) continue;
        const int a = kEdge[e][0], b = kEdge[e][1];
        int lo = a, hi = b;
        // Key by the lower endpoint and the axis the edge runs along.
        int axis = 0;
        for (int d = 0; d < 3; ++d)
          if (kCorner[a][d] != kCorner[b][d]) axis = d;
        if (kCorner[a][axis] > kCorner[b][axis]) std::swap(lo, hi);
        const std::uint64_t node =
            g.index(i + kCorner[lo][0], j + kCorner[lo][1], k + kCorner[lo][2]);
        const std::uint64_t key = node * 3 + static_cast<std::uint64_t>(axis);
        auto [it, inserted] = local.try_emplace(key, static_cast<std::uint32_t>(out.keys.size()));
        if (inserted) {
          const double t = (tau - val[lo]) / (val[hi] - val[lo]);
          const Vec3 pa = g.node(i + kCorner[lo][0], j + kCorner[lo][1], k + kCorner[lo][2]);
          const Vec3 pb = g.node(i + kCorner[hi][0], j + kCorner[hi][1], k + kCorner[hi][2]);
          out.keys.push_back(key);
          out.positions.push_back(pa + t * (pb - pa));
        }
        vid[e] = it->second;
      }
      for (int t = 0; kTriTable[cube][t] != -1; t += 3) {
        // With "below tau" as the inside bit the table already winds
        // counter-clockwise towards lower density.
        out.triangles.push_back({vid[kTriTable[cube][t]], vid[kTriTable[cube][t + 1]], vid[kTriTable[cube][t + 2]]});
      }
    }
  }
}

}  // namespace

TriangleMesh marching_cubes(const DensityGrid& grid, double tau, int threads) {
  grid.validate();
  if (!std::isfinite(tau)) throw DomainError("marching_cubes: tau must be finite");
  const int slabs = grid.resolution[2] - 1;
  std::vector<SlabMesh> parts(static_cast<std::size_t>(slabs));
  parallel_for(parts.size(), threads, [&](std::size_t k) { march_slab(grid, tau, static_cast<int>(k), parts[k]); });

  TriangleMesh mesh;
  std::unordered_map<std::uint64_t, std::uint32_t> global;
  for (const SlabMesh& part : parts) {
    std::vector<std::uint32_t> remap(part.keys.size());
    for (std::size_t v = 0; v < part.keys.size(); ++v) {
      auto [it, inserted] = global.try_emplace(part.keys[v], static_cast<std::uint32_t>(mesh.vertices.size()));
      if (inserted) mesh.vertices.push_back(part.positions[v]);
      remap[v] = it->second;
    }
    for (const auto& tri : part.triangles) {
      const std::array<std::uint32_t, 3> t{remap[tri[0]], remap[tri[1]], remap[tri[2]]};
      const Vec3& a = mesh.vertices[t[0]];
      const double area2 = (mesh.vertices[t[1]] - a).cross(mesh.vertices[t[2]] - a).norm();
      if (!(area2 > 0.0)) continue;
      mesh.triangles.push_back(t);
    }
  }
  return mesh;
}

template <typename T>
TriangleMesh extract(const FieldParams<T>& params, const Vec3& bbox_min, const Vec3& bbox_max,
                     std::array<int, 3> resolution, double tau, int threads) {
  return marching_cubes(sample_density_grid(params, bbox_min, bbox_max, resolution, threads), tau, threads);
}

template DensityGrid sample_density_grid<float>(const FieldParams<float>&, const Vec3&, const Vec3&, std::array<int, 3>,
                                                int);
template DensityGrid sample_density_grid<double>(const FieldParams<double>&, const Vec3&, const Vec3&,
                                                 std::array<int, 3>, int);
template TriangleMesh extract<float>(const FieldParams<float>&, const Vec3&, const Vec3&, std::array<int, 3>, double,
                                     int);
template TriangleMesh extract<double>(const FieldParams<double>&, const Vec3&, const Vec3&, std::array<int, 3>, double,
                                      int);

}  // namespace nerf
