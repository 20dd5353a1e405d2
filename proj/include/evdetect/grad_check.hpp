#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "evdetect/autodiff.hpp"

namespace evdetect::nn {

// Scalar-valued function of a list of parameter leaves, built on the given tape.
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares reverse-mode gradients of f against central finite differences.
// Relative error is |a - n| / max(|a|, |n|, abs_floor); the floor keeps
// components whose true gradient is ~0 from dominating through FD noise.
inline GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor2>& params,
                                  double delta, double abs_floor = 1e-6) {
  if (!(delta > 0.0)) throw std::invalid_argument("grad_check: delta must be > 0");

  std::vector<Tensor2> analytic;
  {
    Tape tape(true);
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(tape.parameter(p));
    Var out = f(tape, vars);
    tape.backward(out);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }

  auto eval = [&](const std::vector<Tensor2>& ps) {
    Tape tape(false);
    std::vector<Var> vars;
    for (const auto& p : ps) vars.push_back(tape.parameter(p));
    return f(tape, vars).value()(0, 0);
  };

  GradCheckResult res;
  std::vector<Tensor2> work = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double orig = params[p].data()[i];
      work[p].data()[i] = orig + delta;
      const double fp = eval(work);
      work[p].data()[i] = orig - delta;
      const double fm = eval(work);
      work[p].data()[i] = orig;
      const double numeric = (fp - fm) / (2.0 * delta);
      const double a = analytic[p].data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), abs_floor});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > res.max_relative_error) res = {rel, p, i, a, numeric};
    }
  }
  return res;
}

}  // namespace evdetect::nn
