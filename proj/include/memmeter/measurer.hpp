#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "memmeter/json_enum.hpp"
#include "memmeter/dataset.hpp"
#include "memmeter/episode_sets.hpp"
#include "memmeter/error.hpp"
#include "memmeter/machine.hpp"
#include "memmeter/metrics.hpp"
#include "memmeter/objectives.hpp"
#include "memmeter/optim.hpp"
#include "memmeter/random.hpp"
#include "memmeter/score_table.hpp"

namespace memmeter {

enum class CalibrationMode { seen_only, held_out };

MEMMETER_JSON_ENUM(CalibrationMode, {{CalibrationMode::seen_only, "seen_only"},
                                               {CalibrationMode::held_out, "held_out"}})

// Stage-(a) training budgets per machine family.
enum class MachineCategory { conventional, classic_cnn, modern_cnn, vit, pretrained };

struct StageASchedule {
  std::size_t epochs;
  double learning_rate;
};

inline StageASchedule default_stage_a_schedule(MachineCategory category) {
  switch (category) {
    case MachineCategory::conventional: return {60, 0.01};
    case MachineCategory::classic_cnn: return {70, 0.0005};
    case MachineCategory::modern_cnn: return {60, 0.01};
    case MachineCategory::vit: return {70, 0.0005};
    case MachineCategory::pretrained: return {30, 0.01};
  }
  return {60, 0.01};
}

inline MachineCategory category_of(MachineKind kind) {
  return kind == MachineKind::small_cnn ? MachineCategory::modern_cnn : MachineCategory::conventional;
}

struct EpisodeConfig {
  std::size_t n = 500;
  std::size_t m = 100;
  std::size_t epochs_a = 60;
  std::size_t epochs_b = 10;
  double lr_a = 0.01;
  double lr_b = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double accuracy_gate = 0.80;
  PretextMode pretext_mode = PretextMode::four_way;
  CalibrationMode calibration_mode = CalibrationMode::seen_only;
  std::uint64_t base_seed = 0;
  MachineSpec machine;

  // Category defaults for `spec`: stage-(a) budget and learning rate, the
  // same learning rate for stage (b), binary pretext for linear machines.
  static EpisodeConfig defaults_for(const MachineSpec& spec) {
    EpisodeConfig c;
    c.machine = spec;
    const auto schedule = default_stage_a_schedule(category_of(spec.kind));
    c.epochs_a = schedule.epochs;
    c.lr_a = c.lr_b = schedule.learning_rate;
    c.pretext_mode = spec.kind == MachineKind::linear ? PretextMode::binary : PretextMode::four_way;
    return c;
  }

  std::size_t held_out_count() const { return calibration_mode == CalibrationMode::held_out ? n / 5 : 0; }

  void validate() const {
    if (n < 1) throw config_error("n must be at least 1");
    if (m < 1) throw config_error("m must be at least 1");
    if (epochs_a < 1 || epochs_b < 1) throw config_error("epoch counts must be at least 1");
    if (!(accuracy_gate > 0.0 && accuracy_gate <= 1.0)) throw config_error("accuracy_gate must lie in (0, 1]");
    if (!(lr_a >= 0.0) || !(lr_b >= 0.0)) throw config_error("learning rates must be nonnegative");
    if (calibration_mode == CalibrationMode::held_out && n < 5)
      throw config_error("held-out calibration needs n >= 5");
    machine.validate();
  }
};

inline void to_json(nlohmann::json& j, const EpisodeConfig& c) {
  j = {{"n", c.n},
       {"m", c.m},
       {"epochs_a", c.epochs_a},
       {"epochs_b", c.epochs_b},
       {"lr_a", c.lr_a},
       {"lr_b", c.lr_b},
       {"momentum", c.momentum},
       {"weight_decay", c.weight_decay},
       {"accuracy_gate", c.accuracy_gate},
       {"pretext_mode", c.pretext_mode},
       {"calibration_mode", c.calibration_mode},
       {"base_seed", c.base_seed},
       {"machine", c.machine}};
}

// Fields absent from `j` keep the category defaults of the given machine.
inline void from_json(const nlohmann::json& j, EpisodeConfig& c) {
  MachineSpec spec = c.machine;
  if (j.contains("machine")) spec = j.at("machine").get<MachineSpec>();
  EpisodeConfig d = EpisodeConfig::defaults_for(spec);
  c.machine = spec;
  c.n = j.value("n", d.n);
  c.m = j.value("m", d.m);
  c.epochs_a = j.value("epochs_a", d.epochs_a);
  c.epochs_b = j.value("epochs_b", d.epochs_b);
  c.lr_a = j.value("lr_a", d.lr_a);
  c.lr_b = j.value("lr_b", c.lr_a);
  c.momentum = j.value("momentum", d.momentum);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.accuracy_gate = j.value("accuracy_gate", d.accuracy_gate);
  c.pretext_mode = j.value("pretext_mode", d.pretext_mode);
  c.calibration_mode = j.value("calibration_mode", d.calibration_mode);
  c.base_seed = j.value("base_seed", d.base_seed);
}

// Stable digest of the canonical (key-sorted) JSON serialization.
inline std::string config_hash(const nlohmann::json& canonical) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(canonical.dump())));
  return buf;
}

inline std::string config_hash(const EpisodeConfig& config) { return config_hash(nlohmann::json(config)); }

enum class Stage { a, b, c };

// Test seams. All callbacks are optional and run on the episode's worker.
struct EpisodeHooks {
  std::function<void(Stage, const std::string&)> on_gradient_step;
  std::function<void(Machine&)> after_stage_a;
  std::function<void(Machine&, std::size_t epoch)> after_stage_b_epoch;
  // Replaces the measured calibration error of a stage-(b)/(c) round.
  std::function<double(std::size_t epoch, double measured)> calibration_override;
};

// Resolves an image id against the main dataset and the optional unseen pool.
class ImageSource {
 public:
  explicit ImageSource(const Dataset& main, const Dataset* unseen = nullptr) : main_(main), unseen_(unseen) {}

  const ImageTensor& at(const std::string& id) const {
    if (main_.contains(id)) return main_.at(id);
    if (unseen_ && unseen_->contains(id)) return unseen_->at(id);
    throw data_error("unknown image id " + id);
  }

 private:
  const Dataset& main_;
  const Dataset* unseen_;
};

// ---------------------------------------------------------------------------
// Stage (a): rotation pretext on A u B, batch size 1, one step per image.
// Returns rotation top-1 accuracy over every rotated copy of the pool.

inline double rotation_accuracy(const Machine& machine, std::span<const Tensor> rotation_batches, PretextMode mode) {
  NoGradGuard no_grad;
  std::size_t hits = 0, total = 0;
  for (const auto& batch : rotation_batches) {
    const Tensor logits = machine.forward(batch);
    const std::size_t classes = logits.dim(1);
    for (std::size_t r = 0; r < 4; ++r) {
      const auto row = logits.data().subspan(r * classes, classes);
      hits += argmax_lowest(row) == rotation_label(kRotations[r], mode) ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

inline double stage_a(Machine& machine, const ImageSource& images, std::span<const std::string> pool,
                      const EpisodeConfig& config, std::uint64_t seed, const EpisodeHooks* hooks = nullptr) {
  require_head_width(machine, pretext_classes(config.pretext_mode), "stage (a)");
  if (pool.empty()) throw config_error("stage (a) needs at least one image");
  std::vector<Tensor> batches;
  batches.reserve(pool.size());
  for (const auto& id : pool) batches.push_back(rotation_batch(images.at(id)));
  const Tensor targets = rotation_targets(config.pretext_mode);

  Sgd sgd(machine, config.lr_a, config.epochs_a * pool.size(), config.momentum, config.weight_decay);
  std::vector<std::size_t> order(pool.size());
  for (std::size_t epoch = 0; epoch < config.epochs_a; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "shuffle-a", epoch));
    rng.shuffle(std::span<std::size_t>(order));
    for (auto idx : order) {
      if (hooks && hooks->on_gradient_step) hooks->on_gradient_step(Stage::a, pool[idx]);
      const Tensor loss = ops::softmax_cross_entropy(machine.forward(batches[idx]), targets);
      backward(loss);
      sgd.step(machine);
    }
  }
  return rotation_accuracy(machine, batches, config.pretext_mode);
}

// ---------------------------------------------------------------------------
// Stage (b): one epoch of seen (B) vs unseen (C) fine-tuning of the whole
// network. `sgd` carries the cosine schedule across epochs.

inline void stage_b_epoch(Machine& machine, Sgd& sgd, const ImageSource& images, std::span<const std::string> set_b,
                          std::span<const std::string> set_c, std::uint64_t seed, std::size_t epoch,
                          const EpisodeHooks* hooks = nullptr) {
  require_head_width(machine, 2, "stage (b)");
  if (set_b.size() != set_c.size()) {
    throw config_error("stage (b) needs |B| == |C|, got " + std::to_string(set_b.size()) + " and " +
                       std::to_string(set_c.size()));
  }
  struct Sample {
    const std::string* id;
    SeenLabel label;
  };
  std::vector<Sample> samples;
  samples.reserve(set_b.size() * 2);
  for (const auto& id : set_b) samples.push_back({&id, SeenLabel::seen});
  for (const auto& id : set_c) samples.push_back({&id, SeenLabel::unseen});
  Rng rng(derive_seed(seed, "shuffle-b", epoch));
  rng.shuffle(std::span<Sample>(samples));
  for (const auto& s : samples) {
    if (hooks && hooks->on_gradient_step) hooks->on_gradient_step(Stage::b, *s.id);
    backward(seen_loss(machine, images.at(*s.id), s.label));
    sgd.step(machine);
  }
}

// ---------------------------------------------------------------------------
// Stage (c): seen/unseen verdicts for A without any update, plus the
// calibration error that decides which round counts.

struct StageCResult {
  std::vector<SeenLabel> verdicts;  // aligned with set A
  double calibration_error = 0.0;
};

inline std::vector<PredictionRecord> seen_predictions(const Machine& machine, const ImageSource& images,
                                                      std::span<const std::string> ids, SeenLabel truth) {
  NoGradGuard no_grad;
  std::vector<const ImageTensor*> ptrs;
  for (const auto& id : ids) ptrs.push_back(&images.at(id));
  std::vector<PredictionRecord> records;
  if (ptrs.empty()) return records;
  const Tensor logits = machine.forward(to_batch(ptrs));
  const auto probs = ops::softmax_rows(logits);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    records.push_back(make_record(ids[i], {probs[2 * i], probs[2 * i + 1]}, static_cast<std::size_t>(truth)));
  }
  return records;
}

inline StageCResult stage_c(const Machine& machine, const ImageSource& images, std::span<const std::string> set_a,
                            const EpisodeConfig& config, std::span<const std::string> held_seen = {},
                            std::span<const std::string> held_unseen = {}) {
  require_head_width(machine, 2, "stage (c)");
  StageCResult out;
  const auto records = seen_predictions(machine, images, set_a, SeenLabel::seen);
  for (const auto& r : records) out.verdicts.push_back(static_cast<SeenLabel>(r.predicted_class));
  if (config.calibration_mode == CalibrationMode::seen_only) {
    out.calibration_error = rms_calibration_error(records).rms_error;
  } else {
    auto held = seen_predictions(machine, images, held_seen, SeenLabel::seen);
    auto unseen = seen_predictions(machine, images, held_unseen, SeenLabel::unseen);
    held.insert(held.end(), unseen.begin(), unseen.end());
    out.calibration_error = rms_calibration_error(held).rms_error;
  }
  return out;
}

// 1-based epoch with the smallest calibration error; the earliest wins ties.
inline std::size_t select_lowest_calibration(std::span<const double> trace) {
  if (trace.empty()) throw usage_error("empty calibration trace");
  std::size_t best = 0;
  for (std::size_t i = 1; i < trace.size(); ++i) {
    if (trace[i] < trace[best]) best = i;
  }
  return best + 1;
}

// ---------------------------------------------------------------------------

struct EpisodeResult {
  std::size_t episode_index = 0;
  std::uint64_t seed = 0;
  bool passed_gate = false;
  double stage_a_accuracy = 0.0;
  std::size_t chosen_epoch = 0;  // 0 when the gate failed
  std::vector<double> calibration_trace;
  std::vector<std::string> set_a;
  std::vector<SeenLabel> seen_verdict;  // aligned with set_a; empty when the gate failed
};

inline void to_json(nlohmann::json& j, const EpisodeResult& r) {
  nlohmann::json verdicts = nlohmann::json::object();
  for (std::size_t i = 0; i < r.seen_verdict.size(); ++i) {
    verdicts[r.set_a[i]] = r.seen_verdict[i] == SeenLabel::seen ? "seen" : "unseen";
  }
  j = {{"episode_index", r.episode_index},
       {"seed", r.seed},
       {"passed_gate", r.passed_gate},
       {"stage_a_accuracy", r.stage_a_accuracy},
       {"chosen_epoch", r.chosen_epoch},
       {"calibration_trace", r.calibration_trace},
       {"seen_verdict", verdicts}};
}

inline std::uint64_t episode_seed(std::uint64_t base_seed, std::size_t episode_index) {
  return derive_seed(base_seed, "episode", episode_index);
}

// One full measurer episode: fresh machine, fresh B/C, stage (a), accuracy
// gate, then epochs_b rounds of stage (b) + stage (c). The verdicts kept are
// those of the round with the lowest calibration error.
inline EpisodeResult run_episode(const Dataset& dataset, std::span<const std::string> set_a,
                                 const EpisodeConfig& config, std::size_t episode_index,
                                 const EpisodeHooks* hooks = nullptr, const Dataset* unseen_pool = nullptr) {
  config.validate();
  EpisodeResult result;
  result.episode_index = episode_index;
  result.seed = episode_seed(config.base_seed, episode_index);
  result.set_a.assign(set_a.begin(), set_a.end());

  const auto sets =
      sample_episode_sets(dataset, set_a, config.n, result.seed, config.held_out_count(), unseen_pool);
  const ImageSource images(dataset, unseen_pool);

  Machine machine(config.machine, pretext_classes(config.pretext_mode), derive_seed(result.seed, "init"));
  std::vector<std::string> pool = sets.set_a;
  pool.insert(pool.end(), sets.set_b.begin(), sets.set_b.end());
  pool.insert(pool.end(), sets.held_seen.begin(), sets.held_seen.end());
  result.stage_a_accuracy = stage_a(machine, images, pool, config, result.seed, hooks);
  if (hooks && hooks->after_stage_a) hooks->after_stage_a(machine);
  result.passed_gate = result.stage_a_accuracy >= config.accuracy_gate;
  if (!result.passed_gate) return result;

  machine.replace_head(2, derive_seed(result.seed, "head-b"));
  Sgd sgd(machine, config.lr_b, config.epochs_b * (sets.set_b.size() + sets.set_c.size()), config.momentum,
          config.weight_decay);
  std::vector<std::vector<SeenLabel>> verdicts_per_epoch;
  for (std::size_t epoch = 1; epoch <= config.epochs_b; ++epoch) {
    stage_b_epoch(machine, sgd, images, sets.set_b, sets.set_c, result.seed, epoch, hooks);
    if (hooks && hooks->after_stage_b_epoch) hooks->after_stage_b_epoch(machine, epoch);
    auto c = stage_c(machine, images, sets.set_a, config, sets.held_seen, sets.held_unseen);
    double err = c.calibration_error;
    if (hooks && hooks->calibration_override) err = hooks->calibration_override(epoch, err);
    result.calibration_trace.push_back(err);
    verdicts_per_epoch.push_back(std::move(c.verdicts));
  }
  result.chosen_epoch = select_lowest_calibration(result.calibration_trace);
  result.seen_verdict = std::move(verdicts_per_epoch[result.chosen_epoch - 1]);
  return result;
}

struct MeasureOptions {
  std::size_t workers = 1;
  const EpisodeHooks* hooks = nullptr;
  const Dataset* unseen_pool = nullptr;
};

struct Measurement {
  ScoreTable scores;
  std::vector<EpisodeResult> episodes;  // in episode-index order
};

// Folds episode results into scores: seen count / number of gate-passing
// episodes.
inline ScoreTable aggregate_scores(std::span<const std::string> set_a, std::span<const EpisodeResult> episodes,
                                   const EpisodeConfig& config) {
  std::vector<std::size_t> seen(set_a.size(), 0);
  std::size_t effective = 0;
  for (const auto& e : episodes) {
    if (!e.passed_gate) continue;
    ++effective;
    for (std::size_t i = 0; i < set_a.size(); ++i) seen[i] += e.seen_verdict.at(i) == SeenLabel::seen ? 1 : 0;
  }
  if (effective == 0) {
    throw measurement_failure("no episode reached the stage-(a) accuracy gate of " +
                              std::to_string(config.accuracy_gate));
  }
  ScoreTable table;
  table.m_effective = effective;
  table.config_hash = config_hash(config);
  table.machine = config.machine.descriptor();
  table.base_seed = config.base_seed;
  for (std::size_t i = 0; i < set_a.size(); ++i) {
    table.rows.push_back({set_a[i], static_cast<double>(seen[i]) / static_cast<double>(effective)});
  }
  return table;
}

// Runs m independent episodes on up to `workers` threads. Results do not
// depend on the worker count or scheduling.
inline Measurement measure(const Dataset& dataset, std::span<const std::string> set_a, const EpisodeConfig& config,
                           const MeasureOptions& options = {}) {
  config.validate();
  // Fail fast on set sizes before spending any training time.
  sample_episode_sets(dataset, set_a, config.n, 0, config.held_out_count(), options.unseen_pool);

  std::vector<std::optional<EpisodeResult>> slots(config.m);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    while (true) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= config.m) return;
      try {
        slots[idx] = run_episode(dataset, set_a, config, idx, options.hooks, options.unseen_pool);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = config.m;
        return;
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(options.workers, 1, config.m);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  Measurement out;
  for (auto& slot : slots) {
    if (!slot->passed_gate) {
      spdlog::warn("episode {} excluded: stage-(a) accuracy {:.4f} below gate {:.2f}", slot->episode_index,
                   slot->stage_a_accuracy, config.accuracy_gate);
    }
    out.episodes.push_back(std::move(*slot));
  }
  out.scores = aggregate_scores(set_a, out.episodes, config);
  return out;
}

inline std::string episodes_jsonl(std::span<const EpisodeResult> episodes) {
  std::string out;
  for (const auto& e : episodes) out += nlohmann::json(e).dump() + "\n";
  return out;
}

}  // namespace memmeter
