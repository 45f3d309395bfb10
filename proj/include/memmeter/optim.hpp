#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "memmeter/error.hpp"
#include "memmeter/machine.hpp"

namespace memmeter {

// 0.5 * base * (1 + cos(pi * step / total)).
inline double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) throw usage_error("cosine_lr needs total_steps >= 1");
  if (step > total_steps) throw usage_error("cosine_lr step beyond total_steps");
  if (step == total_steps) return 0.0;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * t));
}

struct OptimizerState {
  double learning_rate_base = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<std::vector<double>> velocity;
  std::size_t step_index = 0;
  std::size_t total_steps = 1;
};

// SGD with momentum and L2 weight decay on a cosine schedule:
//   v <- momentum * v + grad + weight_decay * param
//   param <- param - lr(t) * v
class Sgd {
 public:
  Sgd(const Machine& machine, double base_lr, std::size_t total_steps, double momentum = 0.9,
      double weight_decay = 1e-4) {
    if (!(base_lr >= 0.0)) throw config_error("learning rate must be nonnegative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw config_error("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw config_error("weight decay must be nonnegative");
    if (total_steps == 0) throw config_error("optimizer needs at least one step");
    state_.learning_rate_base = base_lr;
    state_.momentum = momentum;
    state_.weight_decay = weight_decay;
    state_.total_steps = total_steps;
    for (const auto& p : machine.parameters()) state_.velocity.emplace_back(p.numel(), 0.0);
  }

  const OptimizerState& state() const { return state_; }
  double current_lr() const {
    return cosine_lr(state_.learning_rate_base, std::min(state_.step_index, state_.total_steps), state_.total_steps);
  }

  void step(Machine& machine) {
    auto params = machine.parameters();
    if (params.size() != state_.velocity.size()) throw usage_error("optimizer was built for a different parameter set");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].numel() != state_.velocity[i].size())
        throw usage_error("optimizer velocity does not match parameter shape");
      if (!params[i].has_grad()) throw usage_error("sgd step without gradients; call backward() first");
    }
    const double lr = current_lr();
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto data = params[i].data();
      auto grad = params[i].grad();
      auto& vel = state_.velocity[i];
      for (std::size_t j = 0; j < data.size(); ++j) {
        vel[j] = state_.momentum * vel[j] + grad[j] + state_.weight_decay * data[j];
        data[j] -= lr * vel[j];
      }
      params[i].zero_grad();
    }
    ++state_.step_index;
  }

 private:
  OptimizerState state_;
};

}  // namespace memmeter
