#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "memmeter/error.hpp"

namespace memmeter {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Node&)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_mode_enabled() { return detail::grad_mode_flag(); }

// Shared handle to a dense row-major array of doubles with an optional
// gradient. Copies of a Tensor alias the same storage; use clone() for a
// deep copy.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : Tensor(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad) {}

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    for (auto d : shape) {
      if (d == 0) throw config_error("tensor dimensions must be positive, got " + shape_to_string(shape));
    }
    if (shape_numel(shape) != data.size()) {
      throw config_error("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_to_string(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<double> data() { return node_->data; }
  std::span<const double> data() const { return node_->data; }
  double operator[](std::size_t i) const { return node_->data[i]; }

  double item() const {
    if (numel() != 1) throw usage_error("item() on a tensor with " + std::to_string(numel()) + " elements");
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  // Deep copy with no graph history; keeps the requires_grad flag.
  Tensor clone() const { return Tensor(node_->shape, node_->data, node_->requires_grad); }

  // Same values, detached from any graph, never tracked.
  Tensor detach() const { return Tensor(node_->shape, node_->data, false); }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  // Internal: used by operations to build graph nodes.
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Creates the output node of an operation. The graph is only recorded when
// grad mode is on and at least one input is tracked.
inline Tensor make_result(Shape shape, std::vector<double> data,
                          std::initializer_list<Tensor> inputs,
                          std::function<void(const Node&)> backward_fn) {
  Tensor out(std::move(shape), std::move(data), false);
  if (!grad_mode_enabled()) return out;
  bool track = false;
  for (const auto& in : inputs) track = track || in.requires_grad();
  if (!track) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  for (const auto& in : inputs) node.parents.push_back(in.node());
  node.backward_fn = std::move(backward_fn);
  return out;
}

inline void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw numeric_error(std::string("non-finite value in ") + what);
  }
}

}  // namespace detail

// Reverse-mode sweep from a scalar. Gradients accumulate into every tracked
// leaf reachable from `loss`.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw usage_error("backward() requires a scalar loss");
  }
  if (!loss.requires_grad()) throw usage_error("backward() on a tensor that is not tracked");

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  // Iterative post-order DFS.
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

namespace ops {

inline Tensor sum(const Tensor& x) {
  const auto& xs = x.data();
  double total = 0.0;
  for (double v : xs) total += v;
  auto xn = x.node();
  return detail::make_result({1}, {total}, {x}, [xn](const detail::Node& self) {
    auto& g = xn->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw config_error("mul shape mismatch " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto an = a.node();
  auto bn = b.node();
  return detail::make_result(a.shape(), std::move(out), {a, b}, [an, bn](const detail::Node& self) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->data[i];
    }
  });
}

inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  auto xn = x.node();
  return detail::make_result(x.shape(), std::move(out), {x}, [xn](const detail::Node& self) {
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xn->data[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

inline Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x[i];
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  auto xn = x.node();
  return detail::make_result(x.shape(), std::move(out), {x}, [xn](const detail::Node& self) {
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = self.data[i];
      g[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

// Collapses every axis after the first: [B, ...] -> [B, rest].
inline Tensor flatten(const Tensor& x) {
  if (x.rank() < 1) throw config_error("flatten needs a batch axis");
  const std::size_t batch = x.dim(0);
  std::vector<double> out(x.data().begin(), x.data().end());
  auto xn = x.node();
  return detail::make_result({batch, x.numel() / batch}, std::move(out), {x},
                             [xn](const detail::Node& self) {
                               auto& g = xn->ensure_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                             });
}

// y = x W^T + b with x [B, in], W [out, in], b [out].
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || bias.rank() != 1 || x.dim(1) != weight.dim(1) ||
      bias.dim(0) != weight.dim(0)) {
    throw config_error("linear shape mismatch: input " + shape_to_string(x.shape()) + ", weight " +
                       shape_to_string(weight.shape()) + ", bias " + shape_to_string(bias.shape()));
  }
  const std::size_t batch = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  std::vector<double> out(batch * out_dim);
  const auto xs = x.data();
  const auto ws = weight.data();
  const auto bs = bias.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xr = xs.data() + b * in;
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wr = ws.data() + o * in;
      double acc = bs[o];
      for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
      out[b * out_dim + o] = acc;
    }
  }
  auto xn = x.node(), wn = weight.node(), bn = bias.node();
  return detail::make_result(
      {batch, out_dim}, std::move(out), {x, weight, bias},
      [xn, wn, bn, batch, in, out_dim](const detail::Node& self) {
        const auto& go = self.grad;
        if (xn->requires_grad) {
          auto& gx = xn->ensure_grad();
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t o = 0; o < out_dim; ++o) {
              const double g = go[b * out_dim + o];
              const double* wr = wn->data.data() + o * in;
              double* gxr = gx.data() + b * in;
              for (std::size_t i = 0; i < in; ++i) gxr[i] += g * wr[i];
            }
        }
        if (wn->requires_grad) {
          auto& gw = wn->ensure_grad();
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t o = 0; o < out_dim; ++o) {
              const double g = go[b * out_dim + o];
              const double* xr = xn->data.data() + b * in;
              double* gwr = gw.data() + o * in;
              for (std::size_t i = 0; i < in; ++i) gwr[i] += g * xr[i];
            }
        }
        if (bn->requires_grad) {
          auto& gb = bn->ensure_grad();
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t o = 0; o < out_dim; ++o) gb[o] += go[b * out_dim + o];
        }
      });
}

// Stride-1 convolution with zero "same" padding. x [B, C, H, W],
// weight [O, C, K, K] with odd K, bias [O].
inline Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 4 || weight.rank() != 4 || bias.rank() != 1 || x.dim(1) != weight.dim(1) ||
      weight.dim(2) != weight.dim(3) || weight.dim(2) % 2 == 0 || bias.dim(0) != weight.dim(0)) {
    throw config_error("conv2d shape mismatch: input " + shape_to_string(x.shape()) + ", weight " +
                       shape_to_string(weight.shape()) + ", bias " + shape_to_string(bias.shape()));
  }
  const std::size_t batch = x.dim(0), channels = x.dim(1), height = x.dim(2), width = x.dim(3);
  const std::size_t out_ch = weight.dim(0), k = weight.dim(2);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t plane = height * width;

  // For each kernel offset, the valid output range [lo, hi) along one axis.
  auto valid_range = [pad](std::size_t kk, std::size_t extent) {
    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kk) - pad;
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(extent),
                                                       static_cast<std::ptrdiff_t>(extent) - shift);
    return std::pair{lo, hi};
  };

  std::vector<double> out(batch * out_ch * plane);
  const auto xs = x.data();
  const auto ws = weight.data();
  const auto bs = bias.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out_ch; ++o) {
      double* op = out.data() + (b * out_ch + o) * plane;
      std::fill(op, op + plane, bs[o]);
      for (std::size_t c = 0; c < channels; ++c) {
        const double* ip = xs.data() + (b * channels + c) * plane;
        const double* wp = ws.data() + ((o * channels + c) * k) * k;
        for (std::size_t ky = 0; ky < k; ++ky) {
          const auto [ylo, yhi] = valid_range(ky, height);
          const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const auto [xlo, xhi] = valid_range(kx, width);
            const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
            const double w = wp[ky * k + kx];
            for (std::ptrdiff_t y = ylo; y < yhi; ++y) {
              double* orow = op + y * static_cast<std::ptrdiff_t>(width);
              const double* irow = ip + (y + dy) * static_cast<std::ptrdiff_t>(width) + dx;
              for (std::ptrdiff_t xx = xlo; xx < xhi; ++xx) orow[xx] += w * irow[xx];
            }
          }
        }
      }
    }
  }

  auto xn = x.node(), wn = weight.node(), bn = bias.node();
  return detail::make_result(
      {batch, out_ch, height, width}, std::move(out), {x, weight, bias},
      [=](const detail::Node& self) {
        const auto& go = self.grad;
        double* gx = xn->requires_grad ? xn->ensure_grad().data() : nullptr;
        double* gw = wn->requires_grad ? wn->ensure_grad().data() : nullptr;
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t o = 0; o < out_ch; ++o) {
            const double* gop = go.data() + (b * out_ch + o) * plane;
            if (bn->requires_grad) {
              auto& gb = bn->ensure_grad();
              double acc = 0.0;
              for (std::size_t i = 0; i < plane; ++i) acc += gop[i];
              gb[o] += acc;
            }
            for (std::size_t c = 0; c < channels; ++c) {
              const double* ip = xn->data.data() + (b * channels + c) * plane;
              double* gip = gx ? gx + (b * channels + c) * plane : nullptr;
              const double* wp = wn->data.data() + ((o * channels + c) * k) * k;
              double* gwp = gw ? gw + ((o * channels + c) * k) * k : nullptr;
              for (std::size_t ky = 0; ky < k; ++ky) {
                const auto [ylo, yhi] = valid_range(ky, height);
                const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const auto [xlo, xhi] = valid_range(kx, width);
                  const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
                  const double w = wp[ky * k + kx];
                  double wacc = 0.0;
                  for (std::ptrdiff_t y = ylo; y < yhi; ++y) {
                    const std::ptrdiff_t row = y * static_cast<std::ptrdiff_t>(width);
                    const std::ptrdiff_t irow = (y + dy) * static_cast<std::ptrdiff_t>(width) + dx;
                    for (std::ptrdiff_t xx = xlo; xx < xhi; ++xx) {
                      const double g = gop[row + xx];
                      wacc += g * ip[irow + xx];
                      if (gip) gip[irow + xx] += g * w;
                    }
                  }
                  if (gwp) gwp[ky * k + kx] += wacc;
                }
              }
            }
          }
        }
      });
}

// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
// Ties resolve to the first element in row-major window order.
inline Tensor max_pool2d(const Tensor& x) {
  if (x.rank() != 4 || x.dim(2) < 2 || x.dim(3) < 2) {
    throw config_error("max_pool2d needs [B,C,H,W] with H,W >= 2, got " + shape_to_string(x.shape()));
  }
  const std::size_t batch = x.dim(0), channels = x.dim(1), height = x.dim(2), width = x.dim(3);
  const std::size_t oh = height / 2, ow = width / 2;
  std::vector<double> out(batch * channels * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const auto xs = x.data();
  for (std::size_t bc = 0; bc < batch * channels; ++bc) {
    const double* ip = xs.data() + bc * height * width;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t best = (2 * y) * width + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (2 * y + dy) * width + 2 * xx + dx;
            if (ip[idx] > ip[best]) best = idx;
          }
        const std::size_t o = bc * oh * ow + y * ow + xx;
        out[o] = ip[best];
        argmax[o] = bc * height * width + best;
      }
    }
  }
  auto xn = x.node();
  return detail::make_result({batch, channels, oh, ow}, std::move(out), {x},
                             [xn, argmax = std::move(argmax)](const detail::Node& self) {
                               auto& g = xn->ensure_grad();
                               for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += self.grad[i];
                             });
}

// Row-wise softmax of [B, C] logits, no graph.
inline std::vector<double> softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw config_error("softmax expects [B, C] logits");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<double> probs(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* lr = logits.data().data() + r * cols;
    const double mx = *std::max_element(lr, lr + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(lr[c] - mx);
    for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] = std::exp(lr[c] - mx) / z;
  }
  return probs;
}

// Mean over the batch of -sum(target * log_softmax(logits)).
inline Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& targets) {
  if (logits.rank() != 2 || logits.shape() != targets.shape()) {
    throw config_error("cross entropy needs matching [B, C] logits and targets, got " +
                       shape_to_string(logits.shape()) + " and " + shape_to_string(targets.shape()));
  }
  detail::require_finite(logits.data(), "logits");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<double> log_probs(rows * cols);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* lr = logits.data().data() + r * cols;
    const double mx = *std::max_element(lr, lr + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(lr[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) {
      log_probs[r * cols + c] = lr[c] - lse;
      loss -= targets[r * cols + c] * log_probs[r * cols + c];
    }
  }
  loss /= static_cast<double>(rows);
  auto ln = logits.node(), tn = targets.node();
  return detail::make_result(
      {1}, {loss}, {logits, targets}, [ln, tn, rows, cols, log_probs = std::move(log_probs)](const detail::Node& self) {
        const double scale = self.grad[0] / static_cast<double>(rows);
        if (ln->requires_grad) {
          auto& g = ln->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            double target_mass = 0.0;
            for (std::size_t c = 0; c < cols; ++c) target_mass += tn->data[r * cols + c];
            for (std::size_t c = 0; c < cols; ++c) {
              const std::size_t i = r * cols + c;
              g[i] += scale * (std::exp(log_probs[i]) * target_mass - tn->data[i]);
            }
          }
        }
        if (tn->requires_grad) {
          auto& g = tn->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] -= scale * log_probs[i];
        }
      });
}

// Mean of (prediction - target)^2 over all elements.
inline Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) {
    throw config_error("mse shape mismatch " + shape_to_string(prediction.shape()) + " vs " +
                       shape_to_string(target.shape()));
  }
  const std::size_t count = prediction.numel();
  double loss = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double d = prediction[i] - target[i];
    loss += d * d;
  }
  loss /= static_cast<double>(count);
  auto pn = prediction.node(), tn = target.node();
  return detail::make_result({1}, {loss}, {prediction, target}, [pn, tn, count](const detail::Node& self) {
    const double scale = 2.0 * self.grad[0] / static_cast<double>(count);
    if (pn->requires_grad) {
      auto& g = pn->ensure_grad();
      for (std::size_t i = 0; i < count; ++i) g[i] += scale * (pn->data[i] - tn->data[i]);
    }
    if (tn->requires_grad) {
      auto& g = tn->ensure_grad();
      for (std::size_t i = 0; i < count; ++i) g[i] -= scale * (pn->data[i] - tn->data[i]);
    }
  });
}

// One-hot [rows, classes] tensor.
inline Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes) {
  std::vector<double> data(labels.size() * classes, 0.0);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= classes) throw usage_error("label index out of range for one_hot");
    data[r * classes + labels[r]] = 1.0;
  }
  return Tensor({labels.size(), classes}, std::move(data));
}

}  // namespace ops
}  // namespace memmeter
