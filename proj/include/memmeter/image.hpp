#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "memmeter/error.hpp"
#include "memmeter/tensor.hpp"

namespace memmeter {

// One decoded image, channel-major, pixel values in [0, 1].
struct ImageTensor {
  std::string id;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  ImageTensor() = default;
  ImageTensor(std::string id_, std::size_t c, std::size_t h, std::size_t w)
      : id(std::move(id_)), channels(c), height(h), width(w), pixels(c * h * w, 0.0) {}
  ImageTensor(std::string id_, std::size_t c, std::size_t h, std::size_t w, std::vector<double> px)
      : id(std::move(id_)), channels(c), height(h), width(w), pixels(std::move(px)) {
    validate();
  }

  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }
  std::size_t plane() const { return height * width; }

  void validate() const {
    if (channels == 0 || height == 0 || width == 0) throw config_error("image " + id + " has an empty dimension");
    if (pixels.size() != channels * height * width)
      throw config_error("image " + id + " pixel count does not match its dimensions");
    for (double v : pixels) {
      if (!(v >= 0.0 && v <= 1.0)) throw config_error("image " + id + " has a pixel outside [0, 1]");
    }
  }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;
};

enum class Rotation : std::size_t { r0 = 0, r90 = 1, r180 = 2, r270 = 3 };

inline constexpr std::array<Rotation, 4> kRotations{Rotation::r0, Rotation::r90, Rotation::r180, Rotation::r270};

// Counterclockwise rotation by a multiple of 90 degrees. Quarter turns
// require a square image.
inline ImageTensor rotate(const ImageTensor& image, Rotation r) {
  const std::size_t h = image.height, w = image.width;
  if ((r == Rotation::r90 || r == Rotation::r270) && h != w) {
    throw config_error("rotating non-square image " + image.id + " by a quarter turn");
  }
  if (r == Rotation::r0) return image;
  ImageTensor out(image.id, image.channels, h, w);
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double v = 0.0;
        switch (r) {
          case Rotation::r90: v = image.at(c, x, w - 1 - y); break;
          case Rotation::r180: v = image.at(c, h - 1 - y, w - 1 - x); break;
          case Rotation::r270: v = image.at(c, h - 1 - x, y); break;
          case Rotation::r0: break;
        }
        out.at(c, y, x) = v;
      }
    }
  }
  return out;
}

inline ImageTensor flip_horizontal(const ImageTensor& image) {
  ImageTensor out = image;
  for (std::size_t c = 0; c < image.channels; ++c)
    for (std::size_t y = 0; y < image.height; ++y)
      for (std::size_t x = 0; x < image.width; ++x) out.at(c, y, x) = image.at(c, y, image.width - 1 - x);
  return out;
}

// Stacks images into a [B, C, H, W] tensor. All images must share dimensions.
inline Tensor to_batch(std::span<const ImageTensor* const> images) {
  if (images.empty()) throw usage_error("to_batch on an empty image list");
  const auto& first = *images.front();
  std::vector<double> data;
  data.reserve(images.size() * first.pixels.size());
  for (const auto* img : images) {
    if (img->channels != first.channels || img->height != first.height || img->width != first.width) {
      throw config_error("cannot batch images of different dimensions (" + img->id + ")");
    }
    data.insert(data.end(), img->pixels.begin(), img->pixels.end());
  }
  return Tensor({images.size(), first.channels, first.height, first.width}, std::move(data));
}

inline Tensor to_batch(const ImageTensor& image) {
  const ImageTensor* one[] = {&image};
  return to_batch(std::span<const ImageTensor* const>(one));
}

}  // namespace memmeter
