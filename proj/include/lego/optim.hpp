#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lego/tensor.hpp"

namespace lego {

template <std::floating_point T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<ag::Buffer<T>> first_moment;
  std::vector<ag::Buffer<T>> second_moment;

  void reset() {
    step = 0;
    first_moment.clear();
    second_moment.clear();
  }
};

// One bias-corrected Adam update over `params`, then zeroes their grads.
// Every parameter must hold a gradient buffer.
template <std::floating_point T>
void adam_step(std::vector<ag::Tensor<T>>& params, AdamState<T>& state, double lr);

enum class LrMode { global, restart };

// Cosine annealing stepped once per epoch:
//   lr(t) = min_lr + (base_lr - min_lr) * (1 + cos(pi * t / t_max)) / 2
// In global mode t counts epochs from the start of the run; in restart mode
// it counts from the start of the current experience.
struct LrSchedule {
  double base_lr = 5e-5;
  double min_lr = 0.0;
  int t_max = 200;
  LrMode mode = LrMode::global;
  // Linear ramp over the first optimizer steps (0 = off).
  int warmup_steps = 0;

  double warmup_factor(std::int64_t step) const {
    return warmup_steps > 0 && step < warmup_steps ? static_cast<double>(step) / warmup_steps : 1.0;
  }

  double at(int epoch) const;
  double at(int global_epoch, int epoch_in_phase) const {
    return at(mode == LrMode::global ? global_epoch : epoch_in_phase);
  }
};

inline double lr_at(const LrSchedule& schedule, int epoch) { return schedule.at(epoch); }

std::string to_string(LrMode mode);
LrMode lr_mode_from_string(const std::string& text);

}  // namespace lego
