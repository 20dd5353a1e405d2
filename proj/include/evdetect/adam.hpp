#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "evdetect/tensor.hpp"

namespace evdetect::nn {

// Optimizer and loop settings. Defaults: lr 7e-5, weight decay 5e-5,
// beta1 0.9 ("momentum"), beta2 0.999, eps 1e-8, batch 64, 50 epochs.
struct Hyper {
  double learning_rate = 7e-5;
  double weight_decay = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 64;
  std::size_t epochs = 50;

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("beta1 must be in [0,1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("beta2 must be in [0,1)");
    if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  }
};

struct AdamState {
  std::vector<Tensor2> first_moment;
  std::vector<Tensor2> second_moment;
  std::uint64_t step = 0;

  static AdamState for_params(std::span<const Tensor2> params) {
    AdamState s;
    for (const auto& p : params) {
      s.first_moment.emplace_back(p.rows(), p.cols());
      s.second_moment.emplace_back(p.rows(), p.cols());
    }
    return s;
  }
};

// Adam with decoupled weight decay. Throws NumericError, leaving params and
// state untouched, if any gradient is non-finite.
inline void adam_step(std::span<Tensor2* const> params, std::span<const Tensor2> grads,
                      AdamState& state, const Hyper& hyper) {
  require_shape(params.size() == grads.size(), "adam_step: params/grads count mismatch");
  if (state.first_moment.size() != params.size()) {
    std::vector<Tensor2> shapes;
    for (auto* p : params) shapes.emplace_back(p->rows(), p->cols());
    state = AdamState::for_params(shapes);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_shape(params[i]->same_shape(grads[i]), "adam_step: gradient shape mismatch");
    require_shape(state.first_moment[i].same_shape(grads[i]), "adam_step: state shape mismatch");
    if (!grads[i].all_finite()) throw NumericError("adam_step: non-finite gradient");
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(hyper.beta1, t);
  const double bc2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i]->data();
    const auto& g = grads[i].data();
    auto& m = state.first_moment[i].data();
    auto& v = state.second_moment[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g[j];
      v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      const double denom = std::sqrt(vhat) + hyper.epsilon;
      const double update = denom > 0.0 ? mhat / denom : 0.0;
      p[j] -= hyper.learning_rate * (update + hyper.weight_decay * p[j]);
    }
  }
}

}  // namespace evdetect::nn
