#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "urbanflow/voxel_grid.hpp"

namespace urbanflow {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;

  std::size_t triangle_count() const { return triangles.size(); }
  bool empty() const { return triangles.empty(); }
};

struct Aabb {
  Vec3 min{0, 0, 0};
  Vec3 max{0, 0, 0};
};

/// Appends an axis-aligned box as 8 vertices and 12 outward-facing triangles.
void append_box(TriangleMesh& mesh, const Vec3& lo, const Vec3& hi);

Aabb bounding_box(const TriangleMesh& mesh);
double triangle_area(const TriangleMesh& mesh, std::size_t t);

/// Wavefront OBJ text (1-based indices).
std::string to_obj(const TriangleMesh& mesh);
nlohmann::json to_json(const TriangleMesh& mesh);

/// Parity ray-cast inside test for a closed mesh. The result for points lying
/// exactly on the surface is unspecified.
bool point_in_mesh(const TriangleMesh& mesh, const Vec3& p);

}  // namespace urbanflow
