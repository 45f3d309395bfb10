#pragma once

#include <array>
#include <cstddef>

#include <nlohmann/json.hpp>

#include "memmeter/json_enum.hpp"
#include "memmeter/image.hpp"
#include "memmeter/machine.hpp"
#include "memmeter/tensor.hpp"

namespace memmeter {

// four_way predicts the rotation itself; binary groups {0, 90} against
// {180, 270} for machines too weak for the 4-way task.
enum class PretextMode { four_way, binary };

MEMMETER_JSON_ENUM(PretextMode, {{PretextMode::four_way, "four_way"}, {PretextMode::binary, "binary"}})

inline std::size_t pretext_classes(PretextMode mode) { return mode == PretextMode::four_way ? 4 : 2; }

inline std::size_t rotation_label(Rotation r, PretextMode mode) {
  const auto idx = static_cast<std::size_t>(r);
  return mode == PretextMode::four_way ? idx : idx / 2;
}

// The four rotated copies of `image` as a [4, C, H, W] batch (0, 90, 180, 270).
inline Tensor rotation_batch(const ImageTensor& image) {
  std::array<ImageTensor, 4> rotated;
  std::array<const ImageTensor*, 4> ptrs{};
  for (std::size_t i = 0; i < 4; ++i) {
    rotated[i] = rotate(image, kRotations[i]);
    ptrs[i] = &rotated[i];
  }
  return to_batch(std::span<const ImageTensor* const>(ptrs));
}

inline Tensor rotation_targets(PretextMode mode) {
  std::array<std::size_t, 4> labels{};
  for (std::size_t i = 0; i < 4; ++i) labels[i] = rotation_label(kRotations[i], mode);
  return ops::one_hot(labels, pretext_classes(mode));
}

inline void require_head_width(const Machine& machine, std::size_t width, const char* what) {
  if (machine.head_width() != width) {
    throw config_error(std::string(what) + " needs a " + std::to_string(width) + "-way head, machine has " +
                       std::to_string(machine.head_width()));
  }
}

// Average cross entropy over the four rotated copies of one image.
inline Tensor rotation_loss(const Machine& machine, const Tensor& rotations, PretextMode mode) {
  require_head_width(machine, pretext_classes(mode), "rotation loss");
  return ops::softmax_cross_entropy(machine.forward(rotations), rotation_targets(mode));
}

inline Tensor rotation_loss(const Machine& machine, const ImageTensor& image,
                            PretextMode mode = PretextMode::four_way) {
  return rotation_loss(machine, rotation_batch(image), mode);
}

enum class SeenLabel : std::size_t { seen = 0, unseen = 1 };

inline Tensor seen_loss(const Machine& machine, const ImageTensor& image, SeenLabel label) {
  require_head_width(machine, 2, "seen/unseen loss");
  const std::size_t cls[] = {static_cast<std::size_t>(label)};
  return ops::softmax_cross_entropy(machine.forward(to_batch(image)), ops::one_hot(cls, 2));
}

}  // namespace memmeter
