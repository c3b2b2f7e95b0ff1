#include "lego/optim.hpp"

#include <cmath>
#include <numbers>

#include "lego/errors.hpp"

namespace lego {

template <std::floating_point T>
void adam_step(std::vector<ag::Tensor<T>>& params, AdamState<T>& state, double lr) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) {
      throw TrainingError("adam_step: parameter " + std::to_string(i) + " has no gradient");
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
      state.second_moment.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw TrainingError("adam_step: optimizer state tracks a different parameter list");
  }

  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  const T step_size = static_cast<T>(lr / c1);
  const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(c2));
  const T eps = static_cast<T>(state.eps);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].mutable_values();
    auto grads = params[i].mutable_grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const T g = grads[j];
      m[j] = b1 * m[j] + (T(1) - b1) * g;
      v[j] = b2 * v[j] + (T(1) - b2) * g * g;
      values[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_c2 + eps);
      grads[j] = T(0);
    }
  }
}

template void adam_step<float>(std::vector<ag::Tensor<float>>&, AdamState<float>&, double);
template void adam_step<double>(std::vector<ag::Tensor<double>>&, AdamState<double>&, double);

double LrSchedule::at(int epoch) const {
  if (t_max <= 0) return base_lr;
  const double t = static_cast<double>(std::max(epoch, 0));
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * t / t_max));
}

std::string to_string(LrMode mode) { return mode == LrMode::global ? "global" : "restart"; }

LrMode lr_mode_from_string(const std::string& text) {
  if (text == "global") return LrMode::global;
  if (text == "restart") return LrMode::restart;
  throw ConfigError("unknown learning-rate mode '" + text + "' (expected global or restart)");
}

}  // namespace lego
