#include <cmath>

#include <gtest/gtest.h>

#include "memmeter/attributes.hpp"
#include "memmeter/image.hpp"
#include "memmeter/random.hpp"
#include "oracles.hpp"

using namespace memmeter;

namespace {

ImageTensor constant_image(double r, double g, double b, std::size_t side = 4) {
  ImageTensor img("c", 3, side, side);
  for (std::size_t i = 0; i < img.plane(); ++i) {
    img.pixels[i] = r;
    img.pixels[img.plane() + i] = g;
    img.pixels[2 * img.plane() + i] = b;
  }
  return img;
}

ImageTensor random_image(Rng& rng, std::size_t side, std::size_t channels = 3) {
  ImageTensor img("r", channels, side, side);
  for (auto& v : img.pixels) v = rng.uniform();
  return img;
}

// Gray image whose 8-bit levels cover 0..255 exactly once each (16x16).
ImageTensor all_levels_image() {
  ImageTensor img("levels", 1, 16, 16);
  for (std::size_t i = 0; i < 256; ++i) img.pixels[i] = static_cast<double>(i) / 255.0;
  return img;
}

ImageTensor permute_pixels(const ImageTensor& img, Rng& rng) {
  std::vector<std::size_t> order(img.plane());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(std::span<std::size_t>(order));
  ImageTensor out = img;
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t i = 0; i < img.plane(); ++i) out.pixels[c * img.plane() + i] = img.pixels[c * img.plane() + order[i]];
  return out;
}

}  // namespace

TEST(Hsv, PureRed) {
  const auto s = hsv_stats(constant_image(1, 0, 0));
  ASSERT_TRUE(s.hue.has_value());
  EXPECT_NEAR(*s.hue, 0.0, 1e-12);
  EXPECT_EQ(s.saturation, 1.0);
  EXPECT_EQ(s.value, 1.0);
}

TEST(Hsv, GrayHasNoHue) {
  const auto s = hsv_stats(constant_image(0.5, 0.5, 0.5));
  EXPECT_FALSE(s.hue.has_value());
  EXPECT_EQ(s.saturation, 0.0);
  EXPECT_EQ(s.value, 0.5);
}

TEST(Hsv, PerPixelConversions) {
  const auto green = rgb_to_hsv(0, 1, 0), blue = rgb_to_hsv(0, 0, 1), magenta = rgb_to_hsv(1, 0, 1);
  EXPECT_NEAR(*green.h, 120.0, 1e-12);
  EXPECT_NEAR(*blue.h, 240.0, 1e-12);
  EXPECT_NEAR(*magenta.h, 300.0, 1e-12);
  EXPECT_FALSE(rgb_to_hsv(0, 0, 0).h.has_value());
  EXPECT_EQ(rgb_to_hsv(0, 0, 0).s, 0.0);
}

TEST(Hsv, CircularMeanAcrossZero) {
  // hues 350 and 10 average to 0, not 180
  ImageTensor img("w", 3, 1, 2);
  // (1, 0, 1/6) has hue 350; (1, 1/6, 0) has hue 10
  img.pixels = {1.0, 1.0, 0.0, 1.0 / 6.0, 1.0 / 6.0, 0.0};
  const auto s = hsv_stats(img);
  ASSERT_TRUE(s.hue.has_value());
  EXPECT_NEAR(std::min(*s.hue, 360.0 - *s.hue), 0.0, 1e-9);
}

TEST(Hsv, MatchesScalarOracle) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto img = random_image(rng, 4);
    const auto got = hsv_stats(img);
    const auto want = oracle::scalar_hsv(img);
    ASSERT_TRUE(got.hue && want.hue);
    EXPECT_NEAR(*got.hue, *want.hue, 1e-9);
    EXPECT_NEAR(got.saturation, want.saturation, 1e-9);
    EXPECT_NEAR(got.value, want.value, 1e-9);
  }
}

TEST(Hsv, WrongChannelsIsUsageError) {
  EXPECT_THROW(hsv_stats(ImageTensor("g", 1, 2, 2)), usage_error);
  EXPECT_THROW(colorfulness(ImageTensor("g", 1, 2, 2)), usage_error);
}

TEST(Contrast, ConstantAndSinglePixel) {
  EXPECT_EQ(global_contrast(constant_image(0.3, 0.6, 0.9, 16)), 0.0);
  EXPECT_EQ(global_contrast(constant_image(0.3, 0.6, 0.9, 1)), 0.0);
}

TEST(Contrast, CheckerboardTwoByTwo) {
  ImageTensor img("cb", 1, 2, 2, {1.0, 0.0, 0.0, 1.0});
  // level 1: every pixel differs from both neighbours by 100; level 2 is 1x1.
  const double expected = ((-0.406385 / 9.0 + 0.334573) / 9.0 + 0.0877526) * 100.0;
  EXPECT_NEAR(global_contrast(img), expected, 1e-12);
  EXPECT_NEAR(global_contrast(img), oracle::scalar_gcf(img), 1e-12);
}

TEST(Contrast, MatchesScalarOracle) {
  Rng rng(2);
  for (std::size_t side : {2u, 4u, 8u, 16u, 32u, 7u, 10u}) {
    const auto img = random_image(rng, side);
    EXPECT_NEAR(global_contrast(img), oracle::scalar_gcf(img), 1e-9) << side;
  }
  EXPECT_NEAR(gcf_weight(9), (-0.406385 + 0.334573) + 0.0877526, 1e-15);
}

TEST(Colorfulness, GrayIsZero) {
  Rng rng(3);
  ImageTensor img("g", 3, 6, 6);
  for (std::size_t i = 0; i < img.plane(); ++i) {
    const double v = rng.uniform();
    img.pixels[i] = img.pixels[img.plane() + i] = img.pixels[2 * img.plane() + i] = v;
  }
  EXPECT_EQ(colorfulness(img), 0.0);
}

TEST(Colorfulness, HalfRedHalfGreen) {
  ImageTensor img("rg", 3, 2, 2);
  // left column red, right column green
  img.pixels = {1, 0, 1, 0, 0, 1, 0, 1, 0, 0, 0, 0};
  // rg = +-255 (mean 0, variance 255^2); yb = 127.5 everywhere
  const double expected = std::sqrt(255.0 * 255.0) + 0.3 * 127.5;
  EXPECT_NEAR(colorfulness(img), expected, 1e-9);
  EXPECT_NEAR(colorfulness(img), oracle::scalar_colorfulness(img), 1e-9);
}

TEST(Colorfulness, MatchesOracleAndPermutationInvariant) {
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const auto img = random_image(rng, 8);
    EXPECT_NEAR(colorfulness(img), oracle::scalar_colorfulness(img), 1e-9);
    EXPECT_NEAR(colorfulness(permute_pixels(img, rng)), colorfulness(img), 1e-9);
  }
}

TEST(Entropy, ConstantIsZero) {
  EXPECT_EQ(entropy(constant_image(0.2, 0.4, 0.6)), 0.0);
}

TEST(Entropy, AllLevelsIsEightBits) {
  EXPECT_EQ(entropy(all_levels_image()), 8.0);
}

TEST(Entropy, MatchesHistogramOracle) {
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const auto img = random_image(rng, 16);
    EXPECT_NEAR(entropy(img), oracle::histogram_entropy(img), 1e-12);
  }
}

TEST(Entropy, RoundHalfUp) {
  EXPECT_EQ(gray_level(0.5 / 255.0), 1u);
  EXPECT_EQ(gray_level(0.4999 / 255.0), 0u);
  EXPECT_EQ(gray_level(1.0), 255u);
  EXPECT_EQ(gray_level(0.0), 0u);
}

TEST(Attributes, SpatialPermutationInvariance) {
  Rng rng(6);
  for (int i = 0; i < 50; ++i) {
    const auto img = random_image(rng, 8);
    const auto p = permute_pixels(img, rng);
    const auto a = compute_attributes(img), b = compute_attributes(p);
    EXPECT_NEAR(*a.hue, *b.hue, 1e-9);
    EXPECT_NEAR(a.saturation, b.saturation, 1e-12);
    EXPECT_NEAR(a.value, b.value, 1e-12);
    EXPECT_NEAR(a.entropy, b.entropy, 1e-12);
    EXPECT_NEAR(a.colorfulness, b.colorfulness, 1e-9);
  }
}

TEST(Attributes, HalfTurnInvariance) {
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    const auto img = random_image(rng, 8);
    const auto a = compute_attributes(img), b = compute_attributes(rotate(img, Rotation::r180));
    EXPECT_NEAR(*a.hue, *b.hue, 1e-9);
    EXPECT_NEAR(a.saturation, b.saturation, 1e-12);
    EXPECT_NEAR(a.value, b.value, 1e-12);
    EXPECT_NEAR(a.contrast, b.contrast, 1e-9);
    EXPECT_NEAR(a.colorfulness, b.colorfulness, 1e-9);
    EXPECT_EQ(a.entropy, b.entropy);
  }
}

TEST(Attributes, ValueOfInvertedGray) {
  Rng rng(8);
  for (int i = 0; i < 50; ++i) {
    ImageTensor img("g", 3, 5, 5), inv("i", 3, 5, 5);
    for (std::size_t k = 0; k < img.plane(); ++k) {
      const double v = rng.uniform();
      for (std::size_t c = 0; c < 3; ++c) {
        img.pixels[c * img.plane() + k] = v;
        inv.pixels[c * img.plane() + k] = 1.0 - v;
      }
    }
    EXPECT_NEAR(hsv_stats(img).value, 1.0 - hsv_stats(inv).value, 1e-12);
  }
}

TEST(Attributes, RangesOnRandomImages) {
  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    const auto a = compute_attributes(random_image(rng, 8));
    EXPECT_GE(*a.hue, 0.0);
    EXPECT_LT(*a.hue, 360.0);
    EXPECT_GE(a.saturation, 0.0);
    EXPECT_LE(a.saturation, 1.0);
    EXPECT_GE(a.contrast, 0.0);
    EXPECT_GE(a.colorfulness, 0.0);
    EXPECT_GE(a.entropy, 0.0);
    EXPECT_LE(a.entropy, 8.0);
  }
}
