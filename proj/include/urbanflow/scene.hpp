#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "urbanflow/mesh.hpp"
#include "urbanflow/voxel_grid.hpp"

namespace urbanflow {

/// Simulation box in meters. Every size must be an integer multiple of the
/// resolution.
struct DomainSpec {
  Vec3 size{64.0, 32.0, 16.0};
  double resolution = 1.0;

  Dims3 grid_dims() const;
  /// Throws ValidationError if sizes are not integer multiples of resolution
  /// or if a grid dimension is below 4.
  void validate() const;
  bool operator==(const DomainSpec&) const = default;
};

struct Building {
  Vec3 min_corner{0, 0, 0};
  Vec3 extent{1, 1, 1};

  Vec3 max_corner() const {
    return {min_corner[0] + extent[0], min_corner[1] + extent[1], min_corner[2] + extent[2]};
  }
  double volume() const { return extent[0] * extent[1] * extent[2]; }
  bool operator==(const Building&) const = default;
};

/// Open-interior overlap test; boxes that share a face do not overlap.
bool boxes_overlap(const Building& a, const Building& b);

/// Heights follow a log-normal with the given median and log-space sigma,
/// truncated to [min_height, max_height].
struct HeightDistribution {
  double median = 6.0;
  double sigma = 0.5;
  double min_height = 2.0;
  double max_height = 12.0;

  double sample(std::mt19937_64& rng) const;
  /// Inverse CDF of the truncated distribution.
  double quantile(double p) const;
};

struct SceneParams {
  int count_min = 2;
  int count_max = 5;
  double width_min = 4.0;   // x extent
  double width_max = 12.0;
  double depth_min = 4.0;   // y extent
  double depth_max = 12.0;
  HeightDistribution height;
  /// Keep-out band at the inlet/outlet ends (x) and lateral sides (y).
  double margin_x = 8.0;
  double margin_y = 2.0;
  int retry_budget = 100;
  /// Always included verbatim, ahead of the random ones.
  std::vector<Building> fixed_buildings;

  void validate() const;
};

struct Scene {
  DomainSpec domain;
  std::vector<Building> buildings;
  std::uint64_t seed = 0;

  /// Checks every Scene invariant. Throws ValidationError on violation.
  void validate() const;
  bool operator==(const Scene&) const = default;
};

/// Deterministic in (domain, params, seed).
Scene generate_scene(const DomainSpec& domain, const SceneParams& params, std::uint64_t seed);

/// 12 triangles per building.
TriangleMesh scene_to_mesh(const Scene& scene);

nlohmann::json to_json(const DomainSpec& domain);
nlohmann::json to_json(const Scene& scene);
DomainSpec domain_from_json(const nlohmann::json& j);
Scene scene_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SceneParams& params);

/// Uniform double in [0, 1) from the top 53 bits of the generator.
double uniform01(std::mt19937_64& rng);
/// Uniform integer in [lo, hi], unbiased by rejection.
std::int64_t uniform_int(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi);
/// SplitMix64 finalizer; derives independent stream seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace urbanflow
