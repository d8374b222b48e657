#include "urbanflow/trainer.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "urbanflow/checkpoint.hpp"
#include "urbanflow/errors.hpp"
#include "urbanflow/optim.hpp"

namespace urbanflow {

namespace fs = std::filesystem;

std::string to_string(LossKind k) { return k == LossKind::Mse ? "mse" : "bce"; }

LossKind loss_from_string(const std::string& s) {
  if (s == "mse") return LossKind::Mse;
  if (s == "bce") return LossKind::Bce;
  throw ValidationError("train.loss must be \"mse\" or \"bce\", got \"" + s + "\"");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ValidationError("train.epochs must be >= 0");
  if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate))
    throw ValidationError("train.learning_rate must be > 0");
  if (checkpoint_every < 0) throw ValidationError("train.checkpoint_every must be >= 0");
  if (eval_every < 1) throw ValidationError("train.eval_every must be >= 1");
  if (loss == LossKind::Bce && direction == Direction::Forward)
    throw ValidationError("train.loss = bce needs direction = reverse");
  if (mask_input && direction == Direction::Forward)
    throw ValidationError("train.mask_input needs direction = reverse");
  if (!(mask_cutoff > 0)) throw ValidationError("train.mask_cutoff must be > 0");
}

BatchOptions TrainConfig::batch_options() const {
  BatchOptions o;
  o.direction = direction;
  o.mask_input = mask_input;
  o.mask_cutoff = mask_cutoff;
  o.mirror_y = mirror_y;
  return o;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"direction", to_string(c.direction)},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"eval_every", c.eval_every},
          {"loss", to_string(c.loss)},
          {"mask_input", c.mask_input},
          {"mask_cutoff", c.mask_cutoff},
          {"mirror_y", c.mirror_y}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  if (j.contains("direction")) c.direction = direction_from_string(j["direction"].get<std::string>());
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.eval_every = j.value("eval_every", c.eval_every);
  if (j.contains("loss")) c.loss = loss_from_string(j["loss"].get<std::string>());
  c.mask_input = j.value("mask_input", c.mask_input);
  c.mask_cutoff = j.value("mask_cutoff", c.mask_cutoff);
  c.mirror_y = j.value("mirror_y", c.mirror_y);
  return c;
}

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os.precision(9);
  os << "epoch,train_mse,test_mse,seconds\n";
  for (const auto& r : records) {
    os << r.epoch << ',' << r.train_mse << ',';
    if (r.test_mse) os << *r.test_mse;
    os << ',' << r.seconds << '\n';
  }
  return os.str();
}

nlohmann::json TrainLog::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& r : records)
    arr.push_back({{"epoch", r.epoch},
                   {"train_mse", r.train_mse},
                   {"test_mse", r.test_mse ? nlohmann::json(*r.test_mse) : nlohmann::json()},
                   {"seconds", r.seconds}});
  return arr;
}

UNet clone_model(const UNet& model) {
  UNet out(model.config(), 0);
  for (std::size_t i = 0; i < out.parameters().size(); ++i) {
    auto src = model.parameters()[i].values();
    auto dst = out.parameters()[i].values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return out;
}

Tensor batch_loss(const UNet& model, const Batch& batch, LossKind loss) {
  const Tensor pred = model.forward(batch.input);
  return loss == LossKind::Bce ? bce_loss(pred, batch.target) : mse_loss(pred, batch.target);
}

namespace {

double mse_of(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

void check_direction(const UNet& model, Direction d) {
  if (model.config().direction != d)
    throw ValidationError("model direction is " + to_string(model.config().direction) +
                          " but the data is prepared for " + to_string(d));
}

}  // namespace

TrainResult train(UNet& model, const std::vector<Sample>& train_set, const std::vector<Sample>& test_set,
                  const TrainConfig& cfg, const fs::path& out_dir,
                  const std::function<void(const TrainRecord&)>& progress) {
  cfg.validate();
  check_direction(model, cfg.direction);
  if (train_set.empty()) throw ValidationError("training split is empty");
  if (!out_dir.empty()) fs::create_directories(out_dir);
  FlushDenormalsGuard ftz;

  const BatchOptions opt = cfg.batch_options();
  BatchOptions eval_opt = opt;
  eval_opt.mirror_y = false;
  AdamConfig adam;
  adam.lr = cfg.learning_rate;
  AdamState state;

  const nlohmann::json cfg_json = to_json(cfg);
  auto save = [&](const std::string& name, const UNet& m, int epoch, const TrainRecord* r) {
    if (out_dir.empty()) return;
    nlohmann::json extra{{"epoch", epoch}, {"train_config", cfg_json}};
    if (r) {
      extra["train_mse"] = r->train_mse;
      if (r->test_mse) extra["test_mse"] = *r->test_mse;
    }
    save_checkpoint(out_dir / name, m, extra);
  };
  auto write_logs = [&](const TrainLog& log, int best_epoch, double best_loss) {
    if (out_dir.empty()) return;
    write_file_atomic(out_dir / "train_log.csv", log.to_csv());
    nlohmann::json j{{"config", cfg_json},
                     {"model", to_json(model.config())},
                     {"best_epoch", best_epoch},
                     {"best_loss", best_loss},
                     {"records", log.to_json()}};
    write_file_atomic(out_dir / "train_log.json", j.dump(2) + "\n");
  };

  TrainResult res{clone_model(model), model, {}, -1, std::numeric_limits<double>::infinity()};
  if (cfg.epochs == 0) {
    res.final = clone_model(model);
    res.best_loss = test_set.empty() ? 0.0 : evaluate(model, test_set, eval_opt, cfg.batch_size).mse;
    save("best.ckp", res.best, -1, nullptr);
    save("final.ckp", res.final, -1, nullptr);
    write_logs(res.log, -1, res.best_loss);
    return res;
  }

  const auto t0 = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double sq_sum = 0.0;
    std::int64_t n = 0;
    int batch_index = 0;
    iterate_batches(train_set, cfg.batch_size, cfg.seed, epoch, opt, [&](const Batch& batch) {
      for (auto& p : model.parameters()) p.zero_grad();
      const Tensor pred = model.forward(batch.input);
      const Tensor loss =
          cfg.loss == LossKind::Bce ? bce_loss(pred, batch.target) : mse_loss(pred, batch.target);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        std::ostringstream os;
        os << "non-finite training loss at epoch " << epoch << ", batch " << batch_index;
        throw NonFiniteLoss(epoch, batch_index, os.str());
      }
      loss.backward();
      adam_step(model.parameters(), state, adam);
      const auto b = static_cast<std::int64_t>(batch.ids.size());
      sq_sum += mse_of(pred.values(), batch.target.values()) * static_cast<double>(b);
      n += b;
      ++batch_index;
    });

    TrainRecord rec;
    rec.epoch = epoch;
    rec.train_mse = sq_sum / static_cast<double>(n);
    const bool eval_now = (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs;
    if (eval_now && !test_set.empty()) {
      rec.test_mse = evaluate(model, test_set, eval_opt, cfg.batch_size).mse;
      if (!std::isfinite(*rec.test_mse)) {
        std::ostringstream os;
        os << "non-finite test loss after epoch " << epoch;
        throw NonFiniteLoss(epoch, -1, os.str());
      }
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.log.records.push_back(rec);

    const bool selectable = test_set.empty() || rec.test_mse.has_value();
    const double sel = test_set.empty() ? rec.train_mse : rec.test_mse.value_or(0.0);
    if (selectable && sel <= res.best_loss) {
      res.best_loss = sel;
      res.best_epoch = epoch;
      res.best = clone_model(model);
      save("best.ckp", res.best, epoch, &rec);
    }
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0)
      save("epoch_" + std::to_string(epoch + 1) + ".ckp", model, epoch, &rec);
    write_logs(res.log, res.best_epoch, res.best_loss);
    if (progress) progress(rec);
  }
  res.final = clone_model(model);
  save("final.ckp", res.final, cfg.epochs - 1, &res.log.records.back());
  return res;
}

double eval_baseline(const std::vector<Sample>& train_set, const std::vector<Sample>& test_set,
                     const BatchOptions& opt) {
  if (train_set.empty() || test_set.empty())
    throw ValidationError("eval_baseline needs non-empty train and test splits");
  BatchOptions o = opt;
  o.mirror_y = false;
  std::vector<double> mean;
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    const Batch b = make_batch(train_set, {i}, o);
    auto t = b.target.values();
    if (mean.empty()) mean.assign(t.size(), 0.0);
    if (t.size() != mean.size()) throw ShapeError("eval_baseline: samples differ in size");
    for (std::size_t k = 0; k < t.size(); ++k) mean[k] += t[k];
  }
  for (auto& m : mean) m /= static_cast<double>(train_set.size());
  double s = 0.0;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    const Batch b = make_batch(test_set, {i}, o);
    auto t = b.target.values();
    if (t.size() != mean.size()) throw ShapeError("eval_baseline: test sample differs in size");
    for (std::size_t k = 0; k < t.size(); ++k) {
      const double d = mean[k] - t[k];
      s += d * d;
    }
    n += static_cast<std::int64_t>(t.size());
  }
  return s / static_cast<double>(n);
}

nlohmann::json EvalMetrics::to_json() const {
  nlohmann::json j{{"direction", to_string(direction)}, {"samples", samples}, {"mse", mse}};
  if (direction == Direction::Forward) {
    j["mae_mps"] = mae_mps;
  } else {
    j["iou"] = iou;
    j["accuracy"] = accuracy;
  }
  return j;
}

MetricAccumulator::MetricAccumulator(Direction d, double velocity_scale_mps)
    : dir_(d), scale_(velocity_scale_mps) {}

void MetricAccumulator::add(std::span<const float> pred, std::span<const float> target, std::int64_t samples) {
  if (pred.size() != target.size()) throw ShapeError("metrics: prediction and target sizes differ");
  if (samples < 1 || pred.size() % static_cast<std::size_t>(samples) != 0)
    throw ShapeError("metrics: size is not a multiple of the sample count");
  const std::size_t per_sample = pred.size() / static_cast<std::size_t>(samples);
  const int channels = dir_ == Direction::Forward ? 3 : 1;
  if (per_sample % channels != 0) throw ShapeError("metrics: size is not a multiple of the channel count");
  const std::size_t per_channel = per_sample / channels;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - target[i];
    sq_ += d * d;
    if (dir_ == Direction::Forward) {
      abs_[(i / per_channel) % 3] += std::abs(d);
    } else {
      const bool p = pred[i] >= 0.5f, t = target[i] >= 0.5f;
      inter_ += p && t;
      uni_ += p || t;
      correct_ += p == t;
    }
  }
  count_ += static_cast<std::int64_t>(pred.size());
  samples_ += samples;
}

EvalMetrics MetricAccumulator::finish() const {
  EvalMetrics m;
  m.direction = dir_;
  m.samples = samples_;
  if (count_ == 0) return m;
  m.mse = sq_ / static_cast<double>(count_);
  if (dir_ == Direction::Forward) {
    const double per = static_cast<double>(count_) / 3.0;
    for (int c = 0; c < 3; ++c) m.mae_mps[c] = abs_[c] / per * scale_;
  } else {
    // two empty sets agree perfectly
    m.iou = uni_ == 0 ? 1.0 : static_cast<double>(inter_) / static_cast<double>(uni_);
    m.accuracy = static_cast<double>(correct_) / static_cast<double>(count_);
  }
  return m;
}

EvalMetrics evaluate(const UNet& model, const std::vector<Sample>& samples, const BatchOptions& opt,
                     int batch_size) {
  check_direction(model, opt.direction);
  if (samples.empty()) throw ValidationError("evaluate: no samples");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  NoGradGuard no_grad;
  FlushDenormalsGuard ftz;
  BatchOptions o = opt;
  o.mirror_y = false;
  MetricAccumulator acc(opt.direction, model.config().velocity_scale_mps);
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) idx.push_back(i);
    const Batch b = make_batch(samples, idx, o);
    const Tensor pred = model.forward(b.input);
    acc.add(pred.values(), b.target.values(), static_cast<std::int64_t>(idx.size()));
  }
  return acc.finish();
}

}  // namespace urbanflow
