#pragma once

#include "urbanflow/mesh.hpp"
#include "urbanflow/scene.hpp"
#include "urbanflow/voxel_grid.hpp"

namespace urbanflow {

/// Occupancy grid (C=1) of the scene at the domain resolution. A voxel is
/// occupied iff its center c satisfies min <= c < max on every axis for some
/// building.
VoxelGrid voxelize(const Scene& scene);

/// Same grid computed through a point-in-mesh test on voxel centers. Slow;
/// intended for cross-checking `voxelize`.
VoxelGrid voxelize_mesh(const TriangleMesh& mesh, const DomainSpec& domain);

/// Fraction of occupied voxels. Requires C == 1.
double occupancy_fraction(const VoxelGrid& grid);

/// Blocky surface of {value >= iso}: two triangles per voxel face that
/// separates a selected voxel from an unselected one (or from the outside).
TriangleMesh grid_to_mesh(const VoxelGrid& grid, double iso = 0.5);

}  // namespace urbanflow
