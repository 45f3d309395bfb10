#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "memmeter/dataset.hpp"
#include "memmeter/random.hpp"
#include "memmeter/score_table.hpp"

namespace memmeter::synthetic {

inline std::string fixture_id(const std::string& prefix, std::size_t i) {
  std::string digits = std::to_string(i);
  if (digits.size() < 4) digits.insert(0, 4 - digits.size(), '0');
  return prefix + digits;
}

// Square RGB images with a bright upper half and a dark lower half plus
// per-image tint and pixel noise. Orientation is unambiguous, so rotation
// prediction is easy.
inline Dataset structured_images(std::size_t count, std::size_t side, std::uint64_t seed,
                                 const std::string& prefix = "pat") {
  Rng rng(derive_seed(seed, "structured"));
  std::vector<ImageTensor> images;
  for (std::size_t i = 0; i < count; ++i) {
    ImageTensor img(fixture_id(prefix, i), 3, side, side);
    double tint[3];
    for (double& t : tint) t = rng.uniform(-0.1, 0.1);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
          const double base = y < side / 2 ? 0.85 : 0.15;
          img.at(c, y, x) = std::clamp(base + tint[c] + rng.uniform(-0.08, 0.08), 0.0, 1.0);
        }
    images.push_back(std::move(img));
  }
  return Dataset(std::move(images), {}, "structured-fixture");
}

// Unstructured mid-gray noise images: distributionally distinct from
// structured_images.
inline Dataset noise_images(std::size_t count, std::size_t side, std::uint64_t seed,
                            const std::string& prefix = "noise") {
  Rng rng(derive_seed(seed, "noise"));
  std::vector<ImageTensor> images;
  for (std::size_t i = 0; i < count; ++i) {
    ImageTensor img(fixture_id(prefix, i), 3, side, side);
    for (auto& v : img.pixels) v = rng.uniform(0.3, 0.7);
    images.push_back(std::move(img));
  }
  return Dataset(std::move(images), {}, "noise-fixture");
}

// Random RGB images, uniform pixels, optionally labelled round-robin.
inline Dataset random_images(std::size_t count, std::size_t side, std::uint64_t seed, const std::string& prefix = "img",
                             std::size_t label_count = 0) {
  Rng rng(derive_seed(seed, "random-images"));
  std::vector<ImageTensor> images;
  std::map<std::string, std::string> labels;
  for (std::size_t i = 0; i < count; ++i) {
    ImageTensor img(fixture_id(prefix, i), 3, side, side);
    for (auto& v : img.pixels) v = rng.uniform();
    if (label_count > 0) labels[img.id] = "class" + std::to_string(i % label_count);
    images.push_back(std::move(img));
  }
  return Dataset(std::move(images), std::move(labels), "random-fixture");
}

struct ScoredFixture {
  Dataset dataset;
  ScoreTable scores;
};

// Images whose brightness pattern varies smoothly with a hidden score in
// [0.05, 0.95]: a bright square whose size grows with the score on a noisy
// background.
inline ScoredFixture scored_images(std::size_t count, std::size_t side, std::uint64_t seed,
                                   const std::string& prefix = "reg") {
  Rng rng(derive_seed(seed, "scored"));
  std::vector<ImageTensor> images;
  ScoreTable table;
  for (std::size_t i = 0; i < count; ++i) {
    const double score = rng.uniform(0.05, 0.95);
    ImageTensor img(fixture_id(prefix, i), 3, side, side);
    const double half = 0.5 * score * static_cast<double>(side);
    const double centre = 0.5 * static_cast<double>(side);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
          const bool inside = std::abs(static_cast<double>(y) + 0.5 - centre) < half &&
                              std::abs(static_cast<double>(x) + 0.5 - centre) < half;
          img.at(c, y, x) = std::clamp((inside ? 0.8 : 0.2) + rng.uniform(-0.1, 0.1), 0.0, 1.0);
        }
    table.rows.push_back({img.id, score});
    images.push_back(std::move(img));
  }
  return {Dataset(std::move(images), {}, "scored-fixture"), std::move(table)};
}

}  // namespace memmeter::synthetic
