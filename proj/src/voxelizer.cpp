#include "urbanflow/voxelizer.hpp"

#include <algorithm>
#include <cmath>

#include "urbanflow/errors.hpp"

namespace urbanflow {

namespace {

// Index range [lo, hi) of voxel centers inside [a, b).
std::pair<std::int64_t, std::int64_t> center_range(double a, double b, double origin,
                                                   double res, std::int64_t n) {
  // center_i = origin + (i + 0.5) * res; need a <= center_i < b.
  auto lo = static_cast<std::int64_t>(std::ceil((a - origin) / res - 0.5));
  auto hi = static_cast<std::int64_t>(std::ceil((b - origin) / res - 0.5));
  return {std::clamp<std::int64_t>(lo, 0, n), std::clamp<std::int64_t>(hi, 0, n)};
}

}  // namespace

VoxelGrid voxelize(const Scene& scene) {
  scene.domain.validate();
  const Dims3 dims = scene.domain.grid_dims();
  const double res = scene.domain.resolution;
  VoxelGrid grid(dims, 1, res);
  for (const auto& b : scene.buildings) {
    const auto hi = b.max_corner();
    const auto [x0, x1] = center_range(b.min_corner[0], hi[0], 0.0, res, dims[0]);
    const auto [y0, y1] = center_range(b.min_corner[1], hi[1], 0.0, res, dims[1]);
    const auto [z0, z1] = center_range(b.min_corner[2], hi[2], 0.0, res, dims[2]);
    for (auto z = z0; z < z1; ++z)
      for (auto y = y0; y < y1; ++y)
        for (auto x = x0; x < x1; ++x) grid.at(x, y, z) = 1.0f;
  }
  return grid;
}

VoxelGrid voxelize_mesh(const TriangleMesh& mesh, const DomainSpec& domain) {
  domain.validate();
  const Dims3 dims = domain.grid_dims();
  const double res = domain.resolution;
  VoxelGrid grid(dims, 1, res);
  for (std::int64_t z = 0; z < dims[2]; ++z)
    for (std::int64_t y = 0; y < dims[1]; ++y)
      for (std::int64_t x = 0; x < dims[0]; ++x) {
        const Vec3 c{(x + 0.5) * res, (y + 0.5) * res, (z + 0.5) * res};
        if (point_in_mesh(mesh, c)) grid.at(x, y, z) = 1.0f;
      }
  return grid;
}

double occupancy_fraction(const VoxelGrid& grid) {
  require_channels(grid, 1, "occupancy_fraction");
  std::int64_t occupied = 0;
  for (float v : grid.data()) occupied += (v == 1.0f);
  return static_cast<double>(occupied) / static_cast<double>(grid.voxel_count());
}

TriangleMesh grid_to_mesh(const VoxelGrid& grid, double iso) {
  require_channels(grid, 1, "grid_to_mesh");
  if (!(iso > 0.0 && iso < 1.0)) throw ValidationError("grid_to_mesh: iso must lie in (0, 1)");
  const auto [nx, ny, nz] = grid.dims();
  const double r = grid.resolution();
  const Vec3 o = grid.origin();
  auto solid = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
    if (x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz) return false;
    return grid.at(x, y, z) >= iso;
  };

  TriangleMesh mesh;
  // Emits the quad of voxel (x,y,z) on the face normal to `axis` at side
  // `positive`, wound so the normal points out of the voxel.
  auto emit = [&](std::int64_t x, std::int64_t y, std::int64_t z, int axis, bool positive) {
    const Vec3 lo{o[0] + x * r, o[1] + y * r, o[2] + z * r};
    const int u = (axis + 1) % 3;
    const int v = (axis + 2) % 3;
    std::array<Vec3, 4> q;
    for (auto& p : q) p = lo;
    for (auto& p : q) p[axis] += positive ? r : 0.0;
    q[1][u] += r;
    q[2][u] += r;
    q[2][v] += r;
    q[3][v] += r;
    const auto base = static_cast<std::uint32_t>(mesh.vertices.size());
    mesh.vertices.insert(mesh.vertices.end(), q.begin(), q.end());
    // (u, v, axis) is right-handed, so 0-1-2 faces +axis.
    if (positive) {
      mesh.triangles.push_back({base, base + 1, base + 2});
      mesh.triangles.push_back({base, base + 2, base + 3});
    } else {
      mesh.triangles.push_back({base, base + 2, base + 1});
      mesh.triangles.push_back({base, base + 3, base + 2});
    }
  };

  for (std::int64_t z = 0; z < nz; ++z)
    for (std::int64_t y = 0; y < ny; ++y)
      for (std::int64_t x = 0; x < nx; ++x) {
        if (!solid(x, y, z)) continue;
        if (!solid(x - 1, y, z)) emit(x, y, z, 0, false);
        if (!solid(x + 1, y, z)) emit(x, y, z, 0, true);
        if (!solid(x, y - 1, z)) emit(x, y, z, 1, false);
        if (!solid(x, y + 1, z)) emit(x, y, z, 1, true);
        if (!solid(x, y, z - 1)) emit(x, y, z, 2, false);
        if (!solid(x, y, z + 1)) emit(x, y, z, 2, true);
      }
  return mesh;
}

}  // namespace urbanflow
