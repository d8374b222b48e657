#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace urbanflow {

using Vec3 = std::array<double, 3>;
using Dims3 = std::array<std::int64_t, 3>;

/// Dense multi-channel scalar field over a regular grid.
///
/// Storage is x-fastest, then y, then z, then channel. The same layout is the
/// body of the VXG1 file format, and it coincides with a row-major
/// [C, nz, ny, nx] tensor.
class VoxelGrid {
 public:
  VoxelGrid() = default;
  VoxelGrid(Dims3 dims, int channels, double resolution = 1.0,
            Vec3 origin = {0.0, 0.0, 0.0});
  VoxelGrid(Dims3 dims, int channels, std::vector<float> data,
            double resolution = 1.0, Vec3 origin = {0.0, 0.0, 0.0});

  const Dims3& dims() const { return dims_; }
  std::int64_t nx() const { return dims_[0]; }
  std::int64_t ny() const { return dims_[1]; }
  std::int64_t nz() const { return dims_[2]; }
  int channels() const { return channels_; }
  double resolution() const { return resolution_; }
  const Vec3& origin() const { return origin_; }

  std::int64_t voxel_count() const { return dims_[0] * dims_[1] * dims_[2]; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(std::int64_t x, std::int64_t y, std::int64_t z,
                    int c = 0) const {
    return static_cast<std::size_t>(
        ((c * dims_[2] + z) * dims_[1] + y) * dims_[0] + x);
  }
  float& at(std::int64_t x, std::int64_t y, std::int64_t z, int c = 0) {
    return data_[index(x, y, z, c)];
  }
  float at(std::int64_t x, std::int64_t y, std::int64_t z, int c = 0) const {
    return data_[index(x, y, z, c)];
  }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::span<float> channel(int c);
  std::span<const float> channel(int c) const;

  /// Same dims, resolution and origin (channel count may differ).
  bool same_geometry(const VoxelGrid& other) const;
  bool all_finite() const;
  bool is_binary() const;

  bool operator==(const VoxelGrid& other) const = default;

 private:
  Dims3 dims_{0, 0, 0};
  int channels_ = 0;
  double resolution_ = 1.0;
  Vec3 origin_{0.0, 0.0, 0.0};
  std::vector<float> data_;
};

/// Throws ChannelError unless `grid` has exactly `channels` channels.
void require_channels(const VoxelGrid& grid, int channels,
                      std::string_view what);

// VXG1 serialization: 'V','X','G','1', u32 nx, ny, nz, C, f32 origin[3],
// f32 resolution, then the float body. All little-endian.
std::string encode_vxg(const VoxelGrid& grid);
VoxelGrid decode_vxg(std::string_view bytes);
void write_vxg(const std::filesystem::path& path, const VoxelGrid& grid);
VoxelGrid read_vxg(const std::filesystem::path& path);

/// Little-endian float body only, without the header.
std::string encode_vxg_body(const VoxelGrid& grid);

inline constexpr std::size_t kVxgHeaderBytes = 4 + 4 * 4 + 4 * 4;

}  // namespace urbanflow
