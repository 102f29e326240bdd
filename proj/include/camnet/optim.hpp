#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "camnet/autodiff.hpp"
#include "camnet/errors.hpp"

namespace camnet::ad {

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  std::vector<std::vector<double>> m;  // first moments, one buffer per parameter
  std::vector<std::vector<double>> v;  // second moments
  int64_t step = 0;

  static AdamState init(const std::vector<Tensor>& params) {
    AdamState s;
    for (const Tensor& p : params) {
      s.m.emplace_back(p.numel(), 0.0);
      s.v.emplace_back(p.numel(), 0.0);
    }
    return s;
  }
};

// Bias-corrected Adam with decoupled weight decay. Parameters with no
// accumulated gradient are treated as zero-gradient.
inline void adam_step(const std::vector<Tensor>& params, AdamState& state, double lr,
                      double weight_decay = 0.0) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw_error(ErrorKind::ShapeMismatch, "adam_step: state does not match parameter list");
  for (size_t i = 0; i < params.size(); ++i)
    if (state.m[i].size() != params[i].numel())
      throw_error(ErrorKind::ShapeMismatch, "adam_step: moment shape mismatch");
  state.step += 1;
  double bc1 = 1.0 - std::pow(AdamState::kBeta1, (double)state.step);
  double bc2 = 1.0 - std::pow(AdamState::kBeta2, (double)state.step);
  for (size_t i = 0; i < params.size(); ++i) {
    auto& theta = const_cast<Tensor&>(params[i]).mutable_value();
    const auto& grad = params[i].grad();
    for (size_t j = 0; j < theta.size(); ++j) {
      double g = grad.empty() ? 0.0 : grad[j];
      state.m[i][j] = AdamState::kBeta1 * state.m[i][j] + (1.0 - AdamState::kBeta1) * g;
      state.v[i][j] = AdamState::kBeta2 * state.v[i][j] + (1.0 - AdamState::kBeta2) * g * g;
      double mhat = state.m[i][j] / bc1;
      double vhat = state.v[i][j] / bc2;
      theta[j] -= lr * (mhat / (std::sqrt(vhat) + AdamState::kEps) + weight_decay * theta[j]);
    }
  }
}

struct CosineSchedule {
  double lr_start = 1e-3;
  double lr_end = 1e-6;
  int total_epochs = 1;

  double lr(int epoch) const {
    if (epoch <= 0) return lr_start;
    if (epoch >= total_epochs) return lr_end;
    double c = (1.0 + std::cos(std::numbers::pi * (double)epoch / (double)total_epochs)) / 2.0;
    return lr_end + (lr_start - lr_end) * c;
  }
};

}  // namespace camnet::ad
