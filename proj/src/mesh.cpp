#include "urbanflow/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

namespace urbanflow {

void append_box(TriangleMesh& mesh, const Vec3& lo, const Vec3& hi) {
  const auto base = static_cast<std::uint32_t>(mesh.vertices.size());
  // Vertex k has bit 0 -> x, bit 1 -> y, bit 2 -> z selecting hi over lo.
  for (int k = 0; k < 8; ++k) {
    mesh.vertices.push_back({(k & 1) ? hi[0] : lo[0], (k & 2) ? hi[1] : lo[1],
                             (k & 4) ? hi[2] : lo[2]});
  }
  static constexpr std::array<std::array<std::uint32_t, 3>, 12> kFaces{{
      {0, 2, 1}, {1, 2, 3},  // z = lo
      {4, 5, 6}, {5, 7, 6},  // z = hi
      {0, 1, 4}, {1, 5, 4},  // y = lo
      {2, 6, 3}, {3, 6, 7},  // y = hi
      {0, 4, 2}, {2, 4, 6},  // x = lo
      {1, 3, 5}, {3, 7, 5},  // x = hi
  }};
  for (const auto& f : kFaces) {
    mesh.triangles.push_back({base + f[0], base + f[1], base + f[2]});
  }
}

Aabb bounding_box(const TriangleMesh& mesh) {
  Aabb box;
  if (mesh.vertices.empty()) return box;
  box.min = box.max = mesh.vertices.front();
  for (const auto& v : mesh.vertices) {
    for (int a = 0; a < 3; ++a) {
      box.min[a] = std::min(box.min[a], v[a]);
      box.max[a] = std::max(box.max[a], v[a]);
    }
  }
  return box;
}

namespace {

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

}  // namespace

double triangle_area(const TriangleMesh& mesh, std::size_t t) {
  const auto& tri = mesh.triangles[t];
  const auto& a = mesh.vertices[tri[0]];
  const Vec3 n = cross(sub(mesh.vertices[tri[1]], a), sub(mesh.vertices[tri[2]], a));
  return 0.5 * std::sqrt(dot(n, n));
}

std::string to_obj(const TriangleMesh& mesh) {
  std::ostringstream out;
  out.precision(9);
  for (const auto& v : mesh.vertices) out << "v " << v[0] << ' ' << v[1] << ' ' << v[2] << '\n';
  for (const auto& t : mesh.triangles) {
    out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  }
  return out.str();
}

nlohmann::json to_json(const TriangleMesh& mesh) {
  nlohmann::json j;
  j["vertices"] = nlohmann::json::array();
  for (const auto& v : mesh.vertices) j["vertices"].push_back({v[0], v[1], v[2]});
  j["triangles"] = nlohmann::json::array();
  for (const auto& t : mesh.triangles) j["triangles"].push_back({t[0], t[1], t[2]});
  return j;
}

bool point_in_mesh(const TriangleMesh& mesh, const Vec3& p) {
  // Skewed direction so rays do not graze the edges of axis-aligned faces.
  static const Vec3 dir{1.0, 0.000123456789, 0.0000987654321};
  constexpr double eps = 1e-12;
  int crossings = 0;
  for (const auto& tri : mesh.triangles) {
    const auto& v0 = mesh.vertices[tri[0]];
    const Vec3 e1 = sub(mesh.vertices[tri[1]], v0);
    const Vec3 e2 = sub(mesh.vertices[tri[2]], v0);
    const Vec3 h = cross(dir, e2);
    const double det = dot(e1, h);
    if (std::abs(det) < eps) continue;
    const double inv = 1.0 / det;
    const Vec3 s = sub(p, v0);
    const double u = inv * dot(s, h);
    if (u < 0.0 || u > 1.0) continue;
    const Vec3 q = cross(s, e1);
    const double v = inv * dot(dir, q);
    if (v < 0.0 || u + v > 1.0) continue;
    if (inv * dot(e2, q) > eps) ++crossings;
  }
  return (crossings % 2) == 1;
}

}  // namespace urbanflow
