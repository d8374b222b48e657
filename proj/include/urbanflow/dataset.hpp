#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "urbanflow/flow_oracle.hpp"
#include "urbanflow/scene.hpp"
#include "urbanflow/tensor.hpp"
#include "urbanflow/unet.hpp"
#include "urbanflow/voxel_grid.hpp"

namespace urbanflow {

struct DatasetSpec {
  int count = 200;
  DomainSpec domain;
  SceneParams scene;
  FlowConfig flow;
  std::uint64_t seed = 1;
  /// Extra attempts allowed across the whole build for samples whose solve
  /// did not converge.
  int retry_budget = 50;
  /// Samples solved concurrently (each solve single-threaded).
  int workers = 1;

  void validate() const;
};

struct SampleMeta {
  std::string id;
  std::uint64_t seed = 0;
  int attempt = 0;
  int steps = 0;
  double residual = 0.0;
  bool converged = false;
};

nlohmann::json to_json(const SampleMeta& m);
SampleMeta sample_meta_from_json(const nlohmann::json& j);

struct DatasetManifest {
  std::vector<std::string> ids;
  Dims3 dims{0, 0, 0};
  double resolution = 1.0;
  /// Stored velocities are m/s divided by this.
  double velocity_scale_mps = 1.0;
  nlohmann::json spec;  // the build parameters, echoed
  int retries = 0;
};

nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest dataset_manifest_from_json(const nlohmann::json& j);

/// Samples are solved, checked for convergence and written as
///   samples/<id>.occ.vxg, samples/<id>.vel.vxg, samples/<id>.meta.json
/// followed by manifest.json. Samples already on disk with a converged
/// sidecar are reused, so an interrupted build resumes. `progress` is called
/// after every finished sample.
DatasetManifest build_dataset(const std::filesystem::path& dir, const DatasetSpec& spec,
                              const std::function<void(const SampleMeta&)>& progress = {});

DatasetManifest load_manifest(const std::filesystem::path& dir);

struct SplitManifest {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  double ratio = 0.95;
  std::uint64_t seed = 0;
};

/// Deterministic shuffle, then the first round(n * ratio) ids train.
SplitManifest split(const std::vector<std::string>& ids, double ratio, std::uint64_t seed);
nlohmann::json to_json(const SplitManifest& s);
SplitManifest split_from_json(const nlohmann::json& j);
void write_split(const std::filesystem::path& dir, const SplitManifest& s);
SplitManifest read_split(const std::filesystem::path& dir);

struct Sample {
  std::string id;
  VoxelGrid occupancy;  // C = 1
  VoxelGrid velocity;   // C = 3, normalised
};

Sample load_sample(const std::filesystem::path& dir, const std::string& id);
std::vector<Sample> load_samples(const std::filesystem::path& dir,
                                 const std::vector<std::string>& ids);

struct BatchOptions {
  Direction direction = Direction::Forward;
  /// Reverse only: feed the synthetic field of the thresholded low-wind
  /// mask instead of the raw velocity field.
  bool mask_input = false;
  /// Low-wind cutoff for mask_input, in normalised velocity units.
  double mask_cutoff = 0.3;
  /// Mirror a pseudo-random half of the samples in y (uy flips sign).
  bool mirror_y = false;
};

struct Batch {
  Tensor input;
  Tensor target;
  std::vector<std::string> ids;
};

/// Visit order of one epoch: a permutation of [0, n) fixed by (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

/// Tensors for samples[idx...] in the given direction.
Batch make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx,
                 const BatchOptions& opt, std::uint64_t seed = 0, int epoch = 0);

/// Calls `fn` once per batch; every sample appears exactly once per epoch.
void iterate_batches(const std::vector<Sample>& samples, int batch_size, std::uint64_t seed,
                     int epoch, const BatchOptions& opt, const std::function<void(const Batch&)>& fn);

}  // namespace urbanflow
