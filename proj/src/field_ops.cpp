#include "urbanflow/field_ops.hpp"

#include <cmath>

#include "urbanflow/errors.hpp"

namespace urbanflow {

VoxelGrid magnitude(const VoxelGrid& field) {
  require_channels(field, 3, "magnitude input");
  VoxelGrid out(field.dims(), 1, field.resolution(), field.origin());
  auto ux = field.channel(0), uy = field.channel(1), uz = field.channel(2);
  auto m = out.data();
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double a = ux[i], b = uy[i], c = uz[i];
    m[i] = static_cast<float>(std::sqrt(a * a + b * b + c * c));
  }
  return out;
}

VoxelGrid threshold_low_wind(const VoxelGrid& mag, double cutoff, const VoxelGrid& occupancy) {
  require_channels(mag, 1, "threshold input");
  require_channels(occupancy, 1, "occupancy");
  if (!(cutoff > 0) || !std::isfinite(cutoff))
    throw ValidationError("threshold cutoff must be a positive speed in m/s");
  if (mag.dims() != occupancy.dims())
    throw ShapeError("threshold: magnitude and occupancy grids have different dims");
  VoxelGrid out(mag.dims(), 1, mag.resolution(), mag.origin());
  auto m = mag.data();
  auto occ = occupancy.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = (m[i] < cutoff && occ[i] < 0.5f) ? 1.0f : 0.0f;
  return out;
}

MaskOp mask_op_from_string(const std::string& s) {
  if (s == "paint") return MaskOp::Paint;
  if (s == "erase") return MaskOp::Erase;
  throw ValidationError("mask op must be \"paint\" or \"erase\", got \"" + s + "\"");
}

VoxelGrid edit_mask(const VoxelGrid& mask, MaskOp op, const VoxelBox& r) {
  require_channels(mask, 1, "mask");
  for (int a = 0; a < 3; ++a)
    if (r.lo[a] < 0 || r.hi[a] > mask.dims()[a] || r.lo[a] > r.hi[a])
      throw ValidationError("mask edit region [" + std::to_string(r.lo[a]) + ", " +
                            std::to_string(r.hi[a]) + ") on axis " + "xyz"[a] +
                            " is outside [0, " + std::to_string(mask.dims()[a]) + ")");
  VoxelGrid out = mask;
  const float v = op == MaskOp::Paint ? 1.0f : 0.0f;
  for (std::int64_t z = r.lo[2]; z < r.hi[2]; ++z)
    for (std::int64_t y = r.lo[1]; y < r.hi[1]; ++y)
      for (std::int64_t x = r.lo[0]; x < r.hi[0]; ++x) out.at(x, y, z) = v;
  return out;
}

VoxelGrid mask_to_target_field(const VoxelGrid& mask, double ambient_speed) {
  require_channels(mask, 1, "mask");
  if (!mask.is_binary()) throw ValidationError("mask must contain only 0 and 1");
  VoxelGrid out(mask.dims(), 3, mask.resolution(), mask.origin());
  auto m = mask.data();
  auto ux = out.channel(0);
  for (std::size_t i = 0; i < m.size(); ++i)
    ux[i] = m[i] == 0.0f ? static_cast<float>(ambient_speed) : 0.0f;
  return out;
}

}  // namespace urbanflow
