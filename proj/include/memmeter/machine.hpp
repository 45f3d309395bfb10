#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "memmeter/json_enum.hpp"
#include "memmeter/error.hpp"
#include "memmeter/random.hpp"
#include "memmeter/tensor.hpp"

namespace memmeter {

enum class MachineKind { linear, mlp, small_cnn };

MEMMETER_JSON_ENUM(MachineKind, {{MachineKind::linear, "linear"},
                                           {MachineKind::mlp, "mlp"},
                                           {MachineKind::small_cnn, "small_cnn"}})

inline std::string to_string(MachineKind kind) { return nlohmann::json(kind).get<std::string>(); }

// Architecture description. `conv_channels` is only used by small_cnn and
// `hidden` by mlp and small_cnn; a linear machine has neither.
struct MachineSpec {
  MachineKind kind = MachineKind::small_cnn;
  std::vector<std::size_t> conv_channels{16, 32};
  std::vector<std::size_t> hidden{64};
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;

  static MachineSpec linear(std::size_t c, std::size_t h, std::size_t w) {
    return {MachineKind::linear, {}, {}, c, h, w};
  }
  static MachineSpec mlp(std::size_t c, std::size_t h, std::size_t w, std::vector<std::size_t> hidden = {64}) {
    return {MachineKind::mlp, {}, std::move(hidden), c, h, w};
  }
  static MachineSpec small_cnn(std::size_t c, std::size_t h, std::size_t w,
                               std::vector<std::size_t> conv = {16, 32},
                               std::vector<std::size_t> hidden = {64}) {
    return {MachineKind::small_cnn, std::move(conv), std::move(hidden), c, h, w};
  }

  void validate() const {
    if (channels == 0 || height == 0 || width == 0) throw config_error("machine input dimensions must be positive");
    switch (kind) {
      case MachineKind::linear:
        if (!hidden.empty() || !conv_channels.empty())
          throw config_error("a linear machine has no hidden or convolution layers");
        break;
      case MachineKind::mlp:
        if (!conv_channels.empty()) throw config_error("an mlp machine has no convolution layers");
        break;
      case MachineKind::small_cnn: {
        if (conv_channels.empty()) throw config_error("small_cnn needs at least one convolution stage");
        std::size_t h = height, w = width;
        for (std::size_t i = 0; i < conv_channels.size(); ++i) {
          if (h < 2 || w < 2) throw config_error("input too small for " + std::to_string(conv_channels.size()) + " pooling stages");
          h /= 2;
          w /= 2;
        }
        break;
      }
    }
    for (auto v : hidden)
      if (v == 0) throw config_error("hidden widths must be positive");
    for (auto v : conv_channels)
      if (v == 0) throw config_error("convolution widths must be positive");
  }

  std::string descriptor() const {
    std::string out = to_string(kind);
    auto list = [&out](char tag, const std::vector<std::size_t>& xs) {
      for (auto v : xs) out += std::string("-") + tag + std::to_string(v);
    };
    list('c', conv_channels);
    list('h', hidden);
    out += "@" + std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
    return out;
  }

  friend bool operator==(const MachineSpec&, const MachineSpec&) = default;
};

inline void to_json(nlohmann::json& j, const MachineSpec& s) {
  j = {{"kind", s.kind},     {"conv_channels", s.conv_channels}, {"hidden", s.hidden},
       {"channels", s.channels}, {"height", s.height},           {"width", s.width}};
}

inline void from_json(const nlohmann::json& j, MachineSpec& s) {
  MachineSpec d;
  s.kind = j.value("kind", d.kind);
  // Kind-dependent defaults: a linear machine never inherits the cnn widths.
  if (s.kind != MachineKind::small_cnn) d.conv_channels.clear();
  if (s.kind == MachineKind::linear) d.hidden.clear();
  s.conv_channels = j.value("conv_channels", d.conv_channels);
  s.hidden = j.value("hidden", d.hidden);
  s.channels = j.value("channels", d.channels);
  s.height = j.value("height", d.height);
  s.width = j.value("width", d.width);
}

struct LinearLayer {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]
};
struct ConvLayer {
  Tensor weight;  // [out, in, 3, 3]
  Tensor bias;    // [out]
};
struct ReluLayer {};
struct MaxPoolLayer {};
struct FlattenLayer {};

using Layer = std::variant<LinearLayer, ConvLayer, ReluLayer, MaxPoolLayer, FlattenLayer>;

namespace detail {

// He-uniform weights, zero bias.
inline std::pair<Tensor, Tensor> he_uniform(Shape weight_shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> w(shape_numel(weight_shape));
  for (auto& v : w) v = rng.uniform(-bound, bound);
  const std::size_t out = weight_shape[0];
  return {Tensor(std::move(weight_shape), std::move(w), true), Tensor({out}, true)};
}

}  // namespace detail

// A differentiable model: a backbone of layers followed by a linear head
// whose width equals the class count of the current task.
class Machine {
 public:
  Machine(MachineSpec spec, std::size_t head_width, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    Rng rng(seed);
    std::size_t features = 0;
    if (spec_.kind == MachineKind::small_cnn) {
      std::size_t in_ch = spec_.channels, h = spec_.height, w = spec_.width;
      for (auto out_ch : spec_.conv_channels) {
        auto [weight, bias] = detail::he_uniform({out_ch, in_ch, 3, 3}, in_ch * 9, rng);
        backbone_.emplace_back(ConvLayer{weight, bias});
        backbone_.emplace_back(ReluLayer{});
        backbone_.emplace_back(MaxPoolLayer{});
        in_ch = out_ch;
        h /= 2;
        w /= 2;
      }
      features = in_ch * h * w;
    } else {
      features = spec_.channels * spec_.height * spec_.width;
    }
    backbone_.emplace_back(FlattenLayer{});
    for (auto width : spec_.hidden) {
      auto [weight, bias] = detail::he_uniform({width, features}, features, rng);
      backbone_.emplace_back(LinearLayer{weight, bias});
      backbone_.emplace_back(ReluLayer{});
      features = width;
    }
    feature_width_ = features;
    replace_head(head_width, rng.next_u64());
  }

  Machine(const Machine& other)
      : spec_(other.spec_), feature_width_(other.feature_width_), head_(clone_layer(other.head_)) {
    backbone_.reserve(other.backbone_.size());
    for (const auto& layer : other.backbone_) backbone_.push_back(clone_layer(layer));
  }
  Machine& operator=(const Machine& other) {
    if (this != &other) *this = Machine(other);
    return *this;
  }
  Machine(Machine&&) noexcept = default;
  Machine& operator=(Machine&&) noexcept = default;

  const MachineSpec& spec() const { return spec_; }
  const std::vector<Layer>& backbone() const { return backbone_; }
  const LinearLayer& head() const { return head_; }
  LinearLayer& head() { return head_; }
  std::size_t head_width() const { return head_.weight.dim(0); }
  std::size_t feature_width() const { return feature_width_; }

  // Fresh He-uniform head; the backbone is untouched.
  void replace_head(std::size_t width, std::uint64_t seed) {
    if (width == 0) throw config_error("head width must be positive");
    Rng rng(seed);
    auto [weight, bias] = detail::he_uniform({width, feature_width_}, feature_width_, rng);
    head_ = LinearLayer{weight, bias};
  }

  // Backbone parameters in layer order, then head weight and bias.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < backbone_.size(); ++i) {
      const std::string prefix = "backbone." + std::to_string(i) + ".";
      if (const auto* l = std::get_if<LinearLayer>(&backbone_[i])) {
        out.emplace_back(prefix + "weight", l->weight);
        out.emplace_back(prefix + "bias", l->bias);
      } else if (const auto* c = std::get_if<ConvLayer>(&backbone_[i])) {
        out.emplace_back(prefix + "weight", c->weight);
        out.emplace_back(prefix + "bias", c->bias);
      }
    }
    out.emplace_back("head.weight", head_.weight);
    out.emplace_back("head.bias", head_.bias);
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::vector<Tensor> backbone_parameters() const {
    auto all = parameters();
    all.resize(all.size() - 2);
    return all;
  }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& t : parameters()) total += t.numel();
    return total;
  }

  void zero_grad() {
    for (auto& t : parameters()) t.zero_grad();
  }

  // Accepts [B, C, H, W] (or [B, C*H*W] for machines without convolutions).
  Tensor forward(const Tensor& batch) const {
    check_input(batch);
    Tensor x = batch;
    for (const auto& layer : backbone_) {
      x = std::visit(
          [&x](const auto& l) -> Tensor {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, LinearLayer>) return ops::linear(x, l.weight, l.bias);
            else if constexpr (std::is_same_v<L, ConvLayer>) return ops::conv2d(x, l.weight, l.bias);
            else if constexpr (std::is_same_v<L, ReluLayer>) return ops::relu(x);
            else if constexpr (std::is_same_v<L, MaxPoolLayer>) return ops::max_pool2d(x);
            else return x.rank() == 2 ? x : ops::flatten(x);
          },
          layer);
    }
    return ops::linear(x, head_.weight, head_.bias);
  }

 private:
  void check_input(const Tensor& batch) const {
    const Shape expected{spec_.channels, spec_.height, spec_.width};
    bool ok = batch.defined() && batch.rank() >= 2;
    if (ok && batch.rank() == 4) {
      ok = Shape(batch.shape().begin() + 1, batch.shape().end()) == expected;
    } else if (ok && batch.rank() == 2) {
      ok = spec_.kind != MachineKind::small_cnn && batch.dim(1) == shape_numel(expected);
    } else {
      ok = false;
    }
    if (!ok) {
      throw config_error("input batch " + (batch.defined() ? shape_to_string(batch.shape()) : std::string("<empty>")) +
                         " does not match machine input [B," + std::to_string(spec_.channels) + "," +
                         std::to_string(spec_.height) + "," + std::to_string(spec_.width) + "]");
    }
  }

  static Layer clone_layer(const Layer& layer) {
    return std::visit(
        [](const auto& l) -> Layer {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, LinearLayer> || std::is_same_v<L, ConvLayer>) {
            return L{l.weight.clone(), l.bias.clone()};
          } else {
            return l;
          }
        },
        layer);
  }
  static LinearLayer clone_layer(const LinearLayer& l) { return {l.weight.clone(), l.bias.clone()}; }

  MachineSpec spec_;
  std::vector<Layer> backbone_;
  std::size_t feature_width_ = 0;
  LinearLayer head_;
};

inline Tensor forward(const Machine& machine, const Tensor& batch) { return machine.forward(batch); }

}  // namespace memmeter
