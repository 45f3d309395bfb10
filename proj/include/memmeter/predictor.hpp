#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "memmeter/augment.hpp"
#include "memmeter/checkpoint.hpp"
#include "memmeter/dataset.hpp"
#include "memmeter/machine.hpp"
#include "memmeter/metrics.hpp"
#include "memmeter/optim.hpp"
#include "memmeter/random.hpp"
#include "memmeter/score_table.hpp"

namespace memmeter {

struct RegressionConfig {
  std::size_t epochs = 30;
  double lr = 0.01;
  std::size_t batch_size = 16;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t split_seed = 0;
  double test_fraction = 0.2;
  bool augment = true;
  std::uint64_t seed = 0;
  // Input dimensions are taken from the dataset when training.
  std::vector<std::size_t> conv_channels{16, 32};
  std::vector<std::size_t> hidden{64};

  void validate() const {
    if (epochs < 1) throw config_error("predictor epochs must be at least 1");
    if (batch_size < 1) throw config_error("predictor batch_size must be at least 1");
    if (!(lr >= 0.0)) throw config_error("predictor lr must be nonnegative");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw config_error("test_fraction must lie in (0, 1)");
  }
};

inline void to_json(nlohmann::json& j, const RegressionConfig& c) {
  j = {{"epochs", c.epochs},         {"lr", c.lr},
       {"batch_size", c.batch_size}, {"momentum", c.momentum},
       {"weight_decay", c.weight_decay}, {"split_seed", c.split_seed},
       {"test_fraction", c.test_fraction}, {"augment", c.augment},
       {"seed", c.seed},             {"conv_channels", c.conv_channels},
       {"hidden", c.hidden}};
}

inline void from_json(const nlohmann::json& j, RegressionConfig& c) {
  RegressionConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.lr = j.value("lr", d.lr);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.momentum = j.value("momentum", d.momentum);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.split_seed = j.value("split_seed", d.split_seed);
  c.test_fraction = j.value("test_fraction", d.test_fraction);
  c.augment = j.value("augment", d.augment);
  c.seed = j.value("seed", d.seed);
  c.conv_channels = j.value("conv_channels", d.conv_channels);
  c.hidden = j.value("hidden", d.hidden);
}

// small_cnn backbone with a 1-wide head; output = sigmoid(logit).
class PredictorModel {
 public:
  explicit PredictorModel(Machine machine) : machine_(std::move(machine)) {
    if (machine_.head_width() != 1) throw config_error("predictor needs a 1-wide head");
  }

  static PredictorModel create(const MachineSpec& spec, std::uint64_t seed) {
    return PredictorModel(Machine(spec, 1, seed));
  }

  const Machine& machine() const { return machine_; }
  Machine& machine() { return machine_; }

  // Deterministic forward pass in batches; scores in (0, 1).
  std::vector<double> predict(std::span<const ImageTensor* const> images, std::size_t batch_size = 64) const {
    NoGradGuard no_grad;
    std::vector<double> out;
    out.reserve(images.size());
    for (std::size_t start = 0; start < images.size(); start += batch_size) {
      const auto chunk = images.subspan(start, std::min(batch_size, images.size() - start));
      const Tensor probs = ops::sigmoid(machine_.forward(to_batch(chunk)));
      for (double p : probs.data()) {
        out.push_back(std::clamp(p, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0)));
      }
    }
    return out;
  }

 private:
  Machine machine_;
};

struct TrainedPredictor {
  PredictorModel model;
  std::vector<double> history;  // train-set MSE after each epoch
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

struct Split {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

// Sorted ids, seeded shuffle, first round(test_fraction * N) go to test.
// Independent of the table's row order.
inline Split split_ids(std::vector<std::string> ids, double test_fraction, std::uint64_t seed) {
  if (ids.size() < 2) throw config_error("predictor needs at least 2 scored images");
  std::sort(ids.begin(), ids.end());
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(std::span<std::string>(ids));
  const auto n = ids.size();
  const auto test = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(test_fraction * n)), 1, n - 1);
  Split out;
  out.test.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(test));
  out.train.assign(ids.begin() + static_cast<std::ptrdiff_t>(test), ids.end());
  return out;
}

inline MachineSpec predictor_spec(const Dataset& dataset, const RegressionConfig& config) {
  return MachineSpec::small_cnn(dataset.channels(), dataset.height(), dataset.width(), config.conv_channels,
                                config.hidden);
}

inline double mean_squared_error(const PredictorModel& model, std::span<const ImageTensor* const> images,
                                 std::span<const double> targets) {
  const auto preds = model.predict(images);
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) total += (preds[i] - targets[i]) * (preds[i] - targets[i]);
  return total / static_cast<double>(preds.size());
}

// Trains a predictor on an explicit training set, minimizing MSE between
// sigmoid output and score.
inline TrainedPredictor train_predictor_on(const ScoreTable& scores, const Dataset& dataset,
                                           const RegressionConfig& config, Split split) {
  config.validate();
  const auto lookup = scores.as_map();
  std::vector<const ImageTensor*> images;
  std::vector<double> targets;
  std::sort(split.train.begin(), split.train.end());
  for (const auto& id : split.train) {
    if (!dataset.contains(id)) throw config_error("scored image " + id + " is missing from the dataset");
    images.push_back(&dataset.at(id));
    targets.push_back(lookup.at(id));
  }
  for (const auto& id : split.test) {
    if (!dataset.contains(id)) throw config_error("scored image " + id + " is missing from the dataset");
  }

  auto model = PredictorModel::create(predictor_spec(dataset, config), derive_seed(config.seed, "init"));
  const std::size_t steps_per_epoch = (images.size() + config.batch_size - 1) / config.batch_size;
  Sgd sgd(model.machine(), config.lr, config.epochs * steps_per_epoch, config.momentum, config.weight_decay);

  std::vector<double> history;
  std::vector<std::size_t> order(images.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config.seed, "shuffle", epoch));
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<ImageTensor> augmented;
      std::vector<const ImageTensor*> batch;
      std::vector<double> batch_targets;
      augmented.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        if (config.augment) {
          augmented.push_back(
              augment_for_regression(*images[idx], derive_seed(config.seed, "augment", epoch * order.size() + idx)));
        } else {
          augmented.push_back(*images[idx]);
        }
        batch_targets.push_back(targets[idx]);
      }
      for (const auto& img : augmented) batch.push_back(&img);
      const Tensor pred = ops::sigmoid(model.machine().forward(to_batch(batch)));
      const Tensor target({batch_targets.size(), 1}, batch_targets);
      backward(ops::mse_loss(pred, target));
      sgd.step(model.machine());
    }
    history.push_back(mean_squared_error(model, images, targets));
  }
  return {std::move(model), std::move(history), std::move(split.train), std::move(split.test)};
}

inline TrainedPredictor train_predictor(const ScoreTable& scores, const Dataset& dataset,
                                        const RegressionConfig& config) {
  config.validate();
  std::vector<std::string> ids;
  for (const auto& r : scores.rows) {
    if (!dataset.contains(r.image_id)) throw config_error("scored image " + r.image_id + " is missing from the dataset");
    ids.push_back(r.image_id);
  }
  return train_predictor_on(scores, dataset, config, split_ids(std::move(ids), config.test_fraction, config.split_seed));
}

inline std::vector<ScoreRow> predict(const PredictorModel& model, std::span<const ImageTensor> images) {
  std::vector<const ImageTensor*> ptrs;
  for (const auto& img : images) ptrs.push_back(&img);
  const auto scores = model.predict(ptrs);
  std::vector<ScoreRow> out;
  for (std::size_t i = 0; i < images.size(); ++i) out.push_back({images[i].id, scores[i]});
  return out;
}

// Spearman rho between predicted and measured scores on `ids`.
inline std::optional<double> evaluate_predictions(const std::unordered_map<std::string, double>& predicted,
                                                  const ScoreTable& measured, std::span<const std::string> ids) {
  if (ids.empty()) throw usage_error("evaluation on an empty split");
  const auto truth = measured.as_map();
  std::vector<double> xs, ys;
  for (const auto& id : ids) {
    xs.push_back(predicted.at(id));
    ys.push_back(truth.at(id));
  }
  return spearman(xs, ys);
}

inline std::optional<double> evaluate_predictor(const PredictorModel& model, const ScoreTable& measured,
                                                const Dataset& dataset, std::span<const std::string> ids) {
  std::vector<const ImageTensor*> ptrs;
  for (const auto& id : ids) ptrs.push_back(&dataset.at(id));
  const auto scores = model.predict(ptrs);
  std::unordered_map<std::string, double> predicted;
  for (std::size_t i = 0; i < ids.size(); ++i) predicted[ids[i]] = scores[i];
  return evaluate_predictions(predicted, measured, ids);
}

// Model directory layout: model.mmt (parameters) + model.json (spec).
inline void save_predictor(const PredictorModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_checkpoint(model.machine(), (dir / "model.mmt").string());
  std::ofstream meta(dir / "model.json");
  meta << nlohmann::json{{"machine", model.machine().spec()}, {"head_width", 1}}.dump(2) << '\n';
}

inline PredictorModel load_predictor(const std::filesystem::path& dir) {
  const auto meta_path = dir / "model.json";
  const auto weights_path = dir / "model.mmt";
  if (!std::filesystem::exists(meta_path) || !std::filesystem::exists(weights_path)) {
    throw config_error("no trained predictor in " + dir.string() + " (expected model.json and model.mmt)");
  }
  std::ifstream in(meta_path);
  const auto meta = nlohmann::json::parse(in);
  auto model = PredictorModel::create(meta.at("machine").get<MachineSpec>(), 0);
  load_checkpoint(model.machine(), weights_path.string());
  return model;
}

}  // namespace memmeter
