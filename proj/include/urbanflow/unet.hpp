#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "urbanflow/tensor.hpp"
#include "urbanflow/voxel_grid.hpp"

namespace urbanflow {

enum class Direction { Forward, Reverse };

std::string to_string(Direction d);
Direction direction_from_string(const std::string& s);

struct ModelConfig {
  Direction direction = Direction::Forward;
  int levels = 4;
  int base_channels = 16;
  int channel_cap = 256;
  int in_channels = 1;
  int out_channels = 3;
  /// Sigmoid-gated residual merge; false uses plain addition.
  bool gated = true;
  /// Velocities are divided by this before entering or leaving the network.
  double velocity_scale_mps = 5.0;

  /// Default channel counts for the direction.
  static ModelConfig for_direction(Direction d);
  void validate() const;
  /// Channels after activation at encoder level l: min(base * 2^l, cap).
  int level_channels(int level) const;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Number of times each axis is halved: min(levels, floor(log2 n)).
std::array<int, 3> halving_counts(const Dims3& dims, int levels);
/// True when every axis is divisible by 2^halving_count.
bool dims_supported(const Dims3& dims, int levels);
/// Smallest supported dims that are >= dims on every axis.
Dims3 padded_dims(const Dims3& dims, int levels);

struct LayerInfo {
  std::string name;
  Shape shape;
  std::int64_t count;
};

/// Residual U-net over [N, C, nz, ny, nx] tensors.
///
/// Encoder level l: 4^3 stride-2 conv -> CELU -> 3^3 conv, merged with a
/// strided 1^3 projection of the block input through a sigmoid gate, then
/// CELU. Decoder: per level a 4^3 stride-2 transposed conv -> CELU, concat
/// with the encoder features of that resolution, 3^3 conv -> CELU. The last
/// decoder stage returns to full resolution and concatenates the raw input;
/// a 1^3 conv produces the output (sigmoid in the reverse direction).
///
/// An axis that has reached size 1 is not halved further; on such axes the
/// 4-tap kernels run with stride 1 and padding (1, 2) so only one tap
/// touches data.
class UNet {
 public:
  UNet(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  /// Input [N, in_channels, D, H, W] in normalised units.
  Tensor forward(const Tensor& x) const;

  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  const std::vector<std::string>& parameter_names() const { return names_; }
  std::vector<LayerInfo> layer_table() const;
  std::int64_t count_parameters() const;

  /// Physical units in and out: occupancy -> velocity (m/s, zero inside
  /// buildings) or velocity (m/s) -> occupancy probability.
  VoxelGrid predict(const VoxelGrid& input) const;

 private:
  const Tensor& param(const std::string& name) const;
  void add_param(const std::string& name, Shape shape, std::mt19937_64& rng, bool bias);

  ModelConfig cfg_;
  std::vector<Tensor> params_;
  std::vector<std::string> names_;
};

/// [1, C, nz, ny, nx] view of a grid, optionally scaled.
Tensor grid_to_tensor(const VoxelGrid& g, float scale = 1.0f);
VoxelGrid tensor_to_grid(const Tensor& t, std::int64_t sample, double resolution,
                         const Vec3& origin, float scale = 1.0f);

}  // namespace urbanflow
