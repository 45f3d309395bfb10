#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "memmeter/image.hpp"
#include "memmeter/random.hpp"

namespace memmeter {

// Random decisions for one augmentation draw, exposed so callers can inspect
// what a seed does without touching pixels.
struct AugmentPlan {
  bool flip = false;
  bool erase = false;
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t erase_height = 0;
  std::size_t erase_width = 0;
  std::uint64_t noise_seed = 0;
};

inline constexpr double kFlipProbability = 0.5;
inline constexpr double kEraseProbability = 0.5;
inline constexpr double kEraseMinArea = 0.02;
inline constexpr double kEraseMaxArea = 0.20;
inline constexpr double kEraseMinAspect = 0.3;

// Rectangle area is drawn uniformly from 2-20% of the image, aspect ratio
// log-uniformly in [0.3, 1/0.3], then clamped to fit.
inline AugmentPlan plan_augmentation(std::size_t height, std::size_t width, std::uint64_t seed) {
  Rng rng(seed);
  AugmentPlan plan;
  plan.flip = rng.bernoulli(kFlipProbability);
  plan.erase = rng.bernoulli(kEraseProbability);
  const double area = rng.uniform(kEraseMinArea, kEraseMaxArea) * static_cast<double>(height * width);
  const double log_aspect = rng.uniform(std::log(kEraseMinAspect), -std::log(kEraseMinAspect));
  const double aspect = std::exp(log_aspect);
  const auto clamp_dim = [](double v, std::size_t limit) {
    return std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(v)), 1, limit);
  };
  plan.erase_height = clamp_dim(std::sqrt(area * aspect), height);
  plan.erase_width = clamp_dim(std::sqrt(area / aspect), width);
  plan.top = static_cast<std::size_t>(rng.below(height - plan.erase_height + 1));
  plan.left = static_cast<std::size_t>(rng.below(width - plan.erase_width + 1));
  plan.noise_seed = rng.next_u64();
  return plan;
}

inline ImageTensor apply_augmentation(const ImageTensor& image, const AugmentPlan& plan) {
  ImageTensor out = plan.flip ? flip_horizontal(image) : image;
  if (plan.erase) {
    Rng noise(plan.noise_seed);
    for (std::size_t c = 0; c < out.channels; ++c)
      for (std::size_t y = plan.top; y < plan.top + plan.erase_height; ++y)
        for (std::size_t x = plan.left; x < plan.left + plan.erase_width; ++x) out.at(c, y, x) = noise.uniform();
  }
  return out;
}

// Horizontal flip with probability 0.5, then random erasing with
// probability 0.5 (uniform noise fill). Deterministic in `seed`.
inline ImageTensor augment_for_regression(const ImageTensor& image, std::uint64_t seed) {
  return apply_augmentation(image, plan_augmentation(image.height, image.width, seed));
}

}  // namespace memmeter
