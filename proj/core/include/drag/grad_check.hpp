#pragma once

#include <functional>
#include <vector>

#include "drag/tensor.hpp"

namespace drag {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_entry = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares reverse-mode gradients of the scalar function `f` against central finite
// differences (f(t+eps) - f(t-eps)) / (2 eps) for every entry of every parameter.
// Relative error uses denominator max(|analytic|, |numeric|, 1e-8). `f` must be
// deterministic: it is evaluated twice up front and a value mismatch throws
// DeterminismError.
GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                           double eps);

}  // namespace drag
