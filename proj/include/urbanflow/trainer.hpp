#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "urbanflow/dataset.hpp"
#include "urbanflow/unet.hpp"

namespace urbanflow {

enum class LossKind { Mse, Bce };
std::string to_string(LossKind k);
LossKind loss_from_string(const std::string& s);

struct TrainConfig {
  Direction direction = Direction::Forward;
  int epochs = 50;
  int batch_size = 4;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  /// Extra epoch_<n>.ckp snapshots every n epochs; 0 disables them.
  int checkpoint_every = 0;
  /// Test loss is computed every n epochs and always after the last one.
  int eval_every = 1;
  /// Reverse only; BCE is an experiment, MSE on the sigmoid is the default.
  LossKind loss = LossKind::Mse;
  bool mask_input = false;
  double mask_cutoff = 0.3;
  bool mirror_y = false;

  void validate() const;
  BatchOptions batch_options() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct TrainRecord {
  int epoch = 0;
  double train_mse = 0.0;
  std::optional<double> test_mse;  // absent on epochs without evaluation
  double seconds = 0.0;            // cumulative wall clock
};

struct TrainLog {
  std::vector<TrainRecord> records;

  /// Columns: epoch, train_mse, test_mse, seconds.
  std::string to_csv() const;
  nlohmann::json to_json() const;
};

struct TrainResult {
  UNet best;
  UNet final;
  TrainLog log;
  int best_epoch = -1;  // -1: the initial parameters
  double best_loss = 0.0;
};

/// Independent copy of the parameters.
UNet clone_model(const UNet& model);

/// Adam on mini-batches of `train`. The parameters of `model` are updated in
/// place. With a non-empty `out_dir` it receives best.ckp, final.ckp,
/// train_log.csv and train_log.json; best.ckp tracks the lowest test loss
/// (train loss when `test` is empty). A non-finite loss throws
/// NonFiniteLoss and leaves the files of the last good epoch in place.
TrainResult train(UNet& model, const std::vector<Sample>& train, const std::vector<Sample>& test,
                  const TrainConfig& cfg, const std::filesystem::path& out_dir = {},
                  const std::function<void(const TrainRecord&)>& progress = {});

/// Loss of `model` on one batch, with gradients recorded.
Tensor batch_loss(const UNet& model, const Batch& batch, LossKind loss);

/// MSE on `test` of always predicting the per-voxel mean target of `train`.
double eval_baseline(const std::vector<Sample>& train, const std::vector<Sample>& test,
                     const BatchOptions& opt);

struct EvalMetrics {
  Direction direction = Direction::Forward;
  std::int64_t samples = 0;
  double mse = 0.0;  // normalised units
  std::array<double, 3> mae_mps{0, 0, 0};  // forward
  double iou = 0.0;       // reverse, pooled over all samples
  double accuracy = 0.0;  // reverse

  nlohmann::json to_json() const;
};

/// Accumulates metrics over prediction/target pairs in normalised units.
class MetricAccumulator {
 public:
  MetricAccumulator(Direction d, double velocity_scale_mps);
  void add(std::span<const float> pred, std::span<const float> target, std::int64_t samples);
  EvalMetrics finish() const;

 private:
  Direction dir_;
  double scale_;
  std::int64_t samples_ = 0, count_ = 0;
  double sq_ = 0.0;
  std::array<double, 3> abs_{0, 0, 0};
  std::int64_t inter_ = 0, uni_ = 0, correct_ = 0;
};

EvalMetrics evaluate(const UNet& model, const std::vector<Sample>& samples, const BatchOptions& opt,
                     int batch_size = 4);

}  // namespace urbanflow
