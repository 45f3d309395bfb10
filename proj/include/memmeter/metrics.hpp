#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "memmeter/error.hpp"

namespace memmeter {

// One classifier output. probs sums to 1; predicted_class is the argmax
// with ties going to the lowest index.
struct PredictionRecord {
  std::string image_id;
  std::vector<double> probs;
  std::size_t predicted_class = 0;
  std::optional<std::size_t> true_class;

  double confidence() const { return probs.at(predicted_class); }
  bool correct() const { return true_class && *true_class == predicted_class; }
};

inline std::size_t argmax_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

inline PredictionRecord make_record(std::string id, std::vector<double> probs,
                                    std::optional<std::size_t> true_class = std::nullopt) {
  if (probs.empty()) throw usage_error("prediction record without probabilities");
  const std::size_t predicted = argmax_lowest(probs);
  return {std::move(id), std::move(probs), predicted, true_class};
}

struct CalibrationBin {
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
};

struct CalibrationReport {
  double rms_error = 0.0;
  std::size_t bin_count = 0;
  std::vector<CalibrationBin> bins;
};

// Default adaptive bin count: min(ceil(sqrt(N)), N).
inline std::size_t adaptive_bin_count(std::size_t n) {
  const auto b = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  return std::min(std::max<std::size_t>(b, 1), n);
}

// RMS calibration error over equal-count bins of records sorted by
// confidence (ties by image id):
//   sqrt( sum_k |B_k|/N * (mean_conf_k - acc_k)^2 )
// Earlier bins absorb the remainder when N is not divisible by the bin count.
inline CalibrationReport rms_calibration_error(std::span<const PredictionRecord> records,
                                               std::optional<std::size_t> bins_override = std::nullopt) {
  if (records.empty()) throw usage_error("calibration error of an empty record set");
  for (const auto& r : records) {
    if (!r.true_class) throw usage_error("calibration record " + r.image_id + " has no true class");
  }
  const std::size_t n = records.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ca = records[a].confidence(), cb = records[b].confidence();
    if (ca != cb) return ca < cb;
    return records[a].image_id < records[b].image_id;
  });

  CalibrationReport report;
  report.bin_count = bins_override ? std::clamp<std::size_t>(*bins_override, 1, n) : adaptive_bin_count(n);
  const std::size_t base = n / report.bin_count, extra = n % report.bin_count;
  std::size_t pos = 0;
  double sum_sq = 0.0;
  for (std::size_t k = 0; k < report.bin_count; ++k) {
    CalibrationBin bin;
    bin.count = base + (k < extra ? 1 : 0);
    double conf = 0.0, acc = 0.0;
    for (std::size_t i = 0; i < bin.count; ++i, ++pos) {
      const auto& r = records[order[pos]];
      conf += r.confidence();
      acc += r.correct() ? 1.0 : 0.0;
    }
    bin.mean_confidence = conf / static_cast<double>(bin.count);
    bin.accuracy = acc / static_cast<double>(bin.count);
    const double gap = bin.mean_confidence - bin.accuracy;
    sum_sq += static_cast<double>(bin.count) / static_cast<double>(n) * gap * gap;
    report.bins.push_back(bin);
  }
  report.rms_error = std::sqrt(sum_sq);
  return report;
}

inline double top1_accuracy(std::span<const PredictionRecord> records) {
  if (records.empty()) throw usage_error("accuracy of an empty record set");
  std::size_t hits = 0;
  for (const auto& r : records) {
    if (!r.true_class) throw usage_error("accuracy record " + r.image_id + " has no true class");
    hits += r.correct() ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

// 1-based mid-ranks: tied values share the average of their positions.
inline std::vector<double> mid_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    // positions i..j-1 (0-based) -> average 1-based rank (i + 1 + j) / 2
    const double rank = static_cast<double>(i + 1 + j) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}

// Two-pass Pearson correlation; nullopt when either side has zero variance.
inline std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw usage_error("pearson on sequences of different length");
  const std::size_t n = xs.size();
  if (n == 0) return std::nullopt;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// Spearman's rho with mid-ranks for ties. nullopt means undefined (one side
// is constant) and is reported as "n/a".
inline std::optional<double> spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) {
    throw usage_error("spearman on sequences of different length (" + std::to_string(xs.size()) + " vs " +
                      std::to_string(ys.size()) + ")");
  }
  if (xs.size() < 3) throw usage_error("spearman needs at least 3 paired values");
  const auto rx = mid_ranks(xs);
  const auto ry = mid_ranks(ys);
  return pearson(rx, ry);
}

}  // namespace memmeter
