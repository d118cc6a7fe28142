#include "drag/grad_check.hpp"

#include <cmath>

namespace drag {

namespace {

double eval_forward(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  return f().item();
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                           double eps) {
  if (!(eps > 0.0)) throw ContractError("grad_check: eps must be positive");

  const double v1 = eval_forward(f);
  const double v2 = eval_forward(f);
  if (v1 != v2) {
    throw DeterminismError("grad_check: f returned " + std::to_string(v1) + " then " +
                           std::to_string(v2) + " on identical inputs");
  }

  for (const auto& p : params) const_cast<Tensor&>(p).zero_grad();
  Tensor loss = f();
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad());

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = const_cast<Tensor&>(params[pi]).values_mut();
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double saved = vals[j];
      vals[j] = saved + eps;
      const double fp = eval_forward(f);
      vals[j] = saved - eps;
      const double fm = eval_forward(f);
      vals[j] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[pi][j];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = pi;
        report.worst_entry = j;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace drag
