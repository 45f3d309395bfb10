#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "memmeter/error.hpp"
#include "memmeter/image.hpp"

namespace memmeter {

// Pixel-statistic attributes of one image. hue is nullopt when the image
// has no dominant hue direction (e.g. grayscale).
struct AttributeVector {
  std::optional<double> hue;  // degrees in [0, 360)
  double saturation = 0.0;
  double value = 0.0;
  double contrast = 0.0;
  double colorfulness = 0.0;
  double entropy = 0.0;  // bits
};

inline const std::vector<std::string>& attribute_names() {
  static const std::vector<std::string> names{"hue", "saturation", "value", "contrast", "colorfulness", "entropy"};
  return names;
}

struct HsvStats {
  std::optional<double> hue;
  double saturation = 0.0;
  double value = 0.0;
};

struct Hsv {
  std::optional<double> h;
  double s;
  double v;
};

// Hexcone RGB -> HSV for one pixel; h undefined for achromatic pixels.
inline Hsv rgb_to_hsv(double r, double g, double b) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double delta = mx - mn;
  Hsv out{std::nullopt, mx > 0.0 ? delta / mx : 0.0, mx};
  if (delta > 0.0) {
    double h;
    if (mx == r) {
      h = 60.0 * std::fmod((g - b) / delta, 6.0);
    } else if (mx == g) {
      h = 60.0 * ((b - r) / delta + 2.0);
    } else {
      h = 60.0 * ((r - g) / delta + 4.0);
    }
    if (h < 0.0) h += 360.0;
    out.h = h;
  }
  return out;
}

inline void require_rgb(const ImageTensor& image, const char* what) {
  if (image.channels != 3) {
    throw usage_error(std::string(what) + " needs a 3-channel image, " + image.id + " has " +
                      std::to_string(image.channels));
  }
}

// Mean saturation and value; hue is the circular mean of per-pixel hue
// angles (achromatic pixels contribute a zero vector).
inline HsvStats hsv_stats(const ImageTensor& image) {
  require_rgb(image, "hsv_stats");
  const std::size_t n = image.plane();
  double sum_s = 0.0, sum_v = 0.0, sum_cos = 0.0, sum_sin = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto px = rgb_to_hsv(image.pixels[i], image.pixels[n + i], image.pixels[2 * n + i]);
    sum_s += px.s;
    sum_v += px.v;
    if (px.h) {
      const double rad = *px.h * std::numbers::pi / 180.0;
      sum_cos += std::cos(rad);
      sum_sin += std::sin(rad);
    }
  }
  HsvStats out;
  out.saturation = sum_s / static_cast<double>(n);
  out.value = sum_v / static_cast<double>(n);
  const double mc = sum_cos / static_cast<double>(n), ms = sum_sin / static_cast<double>(n);
  if (std::hypot(mc, ms) >= 1e-9) {
    double deg = std::atan2(ms, mc) * 180.0 / std::numbers::pi;
    if (deg < 0.0) deg += 360.0;
    if (deg >= 360.0) deg -= 360.0;
    out.hue = deg;
  }
  return out;
}

inline constexpr std::array<double, 3> kLumaWeights{0.299, 0.587, 0.114};

// Rec.601 luma in [0, 1]; single-channel images are used as-is.
inline std::vector<double> grayscale(const ImageTensor& image) {
  const std::size_t n = image.plane();
  std::vector<double> gray(n);
  if (image.channels == 1) {
    gray.assign(image.pixels.begin(), image.pixels.end());
  } else if (image.channels == 3) {
    for (std::size_t i = 0; i < n; ++i) {
      gray[i] = kLumaWeights[0] * image.pixels[i] + kLumaWeights[1] * image.pixels[n + i] +
                kLumaWeights[2] * image.pixels[2 * n + i];
    }
  } else {
    throw usage_error("grayscale conversion needs 1 or 3 channels");
  }
  return gray;
}

inline constexpr std::size_t kGcfLevels = 9;

inline double gcf_weight(std::size_t level) {
  const double t = static_cast<double>(level) / 9.0;
  return (-0.406385 * t + 0.334573) * t + 0.0877526;
}

// Mean over pixels of the average absolute difference to 4-neighbours.
inline double local_contrast(const std::vector<double>& lum, std::size_t h, std::size_t w) {
  double total = 0.0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double c = lum[y * w + x];
      double sum = 0.0;
      int count = 0;
      if (x > 0) sum += std::abs(c - lum[y * w + x - 1]), ++count;
      if (x + 1 < w) sum += std::abs(c - lum[y * w + x + 1]), ++count;
      if (y > 0) sum += std::abs(c - lum[(y - 1) * w + x]), ++count;
      if (y + 1 < h) sum += std::abs(c - lum[(y + 1) * w + x]), ++count;
      total += sum / count;
    }
  }
  return total / static_cast<double>(h * w);
}

// Global contrast factor. Linear luminance (gamma 2.2) is averaged into
// 2x2 superpixels for each coarser level; perceptual luminance is
// 100 * sqrt(linear). Levels smaller than 2x2 contribute nothing.
inline double global_contrast(const ImageTensor& image) {
  std::vector<double> linear = grayscale(image);
  for (auto& v : linear) v = std::pow(v, 2.2);
  std::size_t h = image.height, w = image.width;
  double gcf = 0.0;
  for (std::size_t level = 1; level <= kGcfLevels; ++level) {
    if (h < 2 || w < 2) break;
    std::vector<double> perceptual(linear.size());
    for (std::size_t i = 0; i < linear.size(); ++i) perceptual[i] = 100.0 * std::sqrt(linear[i]);
    gcf += gcf_weight(level) * local_contrast(perceptual, h, w);
    const std::size_t nh = h / 2, nw = w / 2;
    std::vector<double> next(nh * nw);
    for (std::size_t y = 0; y < nh; ++y)
      for (std::size_t x = 0; x < nw; ++x) {
        next[y * nw + x] = (linear[(2 * y) * w + 2 * x] + linear[(2 * y) * w + 2 * x + 1] +
                            linear[(2 * y + 1) * w + 2 * x] + linear[(2 * y + 1) * w + 2 * x + 1]) /
                           4.0;
      }
    linear = std::move(next);
    h = nh;
    w = nw;
  }
  return gcf;
}

// Opponent-channel colorfulness on the 0-255 scale:
//   sqrt(var_rg + var_yb) + 0.3 * sqrt(mean_rg^2 + mean_yb^2)
inline double colorfulness(const ImageTensor& image) {
  require_rgb(image, "colorfulness");
  const std::size_t n = image.plane();
  double sum_rg = 0.0, sum_yb = 0.0;
  std::vector<double> rg(n), yb(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = 255.0 * image.pixels[i], g = 255.0 * image.pixels[n + i], b = 255.0 * image.pixels[2 * n + i];
    rg[i] = r - g;
    yb[i] = 0.5 * (r + g) - b;
    sum_rg += rg[i];
    sum_yb += yb[i];
  }
  const double mean_rg = sum_rg / static_cast<double>(n), mean_yb = sum_yb / static_cast<double>(n);
  double var_rg = 0.0, var_yb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    var_rg += (rg[i] - mean_rg) * (rg[i] - mean_rg);
    var_yb += (yb[i] - mean_yb) * (yb[i] - mean_yb);
  }
  var_rg /= static_cast<double>(n);
  var_yb /= static_cast<double>(n);
  return std::sqrt(var_rg + var_yb) + 0.3 * std::sqrt(mean_rg * mean_rg + mean_yb * mean_yb);
}

// 8-bit gray level with round-half-up.
inline std::size_t gray_level(double gray) {
  const double scaled = std::floor(gray * 255.0 + 0.5);
  return static_cast<std::size_t>(std::clamp(scaled, 0.0, 255.0));
}

// Shannon entropy (bits) of the 256-bin histogram of the 8-bit gray image.
inline double entropy(const ImageTensor& image) {
  const auto gray = grayscale(image);
  std::array<std::size_t, 256> hist{};
  for (double g : gray) ++hist[gray_level(g)];
  const double n = static_cast<double>(gray.size());
  double bits = 0.0;
  for (auto count : hist) {
    if (count == 0) continue;
    const double p = static_cast<double>(count) / n;
    bits -= p * std::log2(p);
  }
  return bits;
}

inline AttributeVector compute_attributes(const ImageTensor& image) {
  const auto hsv = hsv_stats(image);
  return {hsv.hue, hsv.saturation, hsv.value, global_contrast(image), colorfulness(image), entropy(image)};
}

}  // namespace memmeter
