#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "urbanflow/voxel_grid.hpp"

namespace urbanflow {

/// Per-voxel Euclidean norm of a 3-channel field.
VoxelGrid magnitude(const VoxelGrid& field);

/// 1 where mag < cutoff and the voxel is air, else 0. `occupancy` must share
/// dims with `mag`.
VoxelGrid threshold_low_wind(const VoxelGrid& mag, double cutoff, const VoxelGrid& occupancy);

enum class MaskOp { Paint, Erase };
MaskOp mask_op_from_string(const std::string& s);

/// Half-open voxel box [lo, hi) per axis, in (x, y, z) order.
struct VoxelBox {
  Dims3 lo{0, 0, 0};
  Dims3 hi{0, 0, 0};
};

/// Sets the box to 1 (paint) or 0 (erase); the box must lie inside the grid.
VoxelGrid edit_mask(const VoxelGrid& mask, MaskOp op, const VoxelBox& region);

/// Reverse-net input for a mask: (ambient_speed, 0, 0) where the mask is 0,
/// zero velocity where it is 1.
VoxelGrid mask_to_target_field(const VoxelGrid& mask, double ambient_speed);

}  // namespace urbanflow
