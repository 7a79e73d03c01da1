#pragma once

// Independent gradient oracle: central finite differences against
// Tape::backward. Lives in test code only so it cannot share a code path
// with the implementation it checks.

#include <cmath>
#include <functional>
#include <vector>

#include "aoisnn/tape.hpp"

namespace aoisnn::testing {

// build(tape, param_vars) constructs the scalar objective on the tape; it
// must be deterministic in the parameter values.
using BuildFn = std::function<Var(Tape&, const std::vector<Var>&)>;

inline double eval_only(const BuildFn& build, std::vector<Parameter*>& params) {
  Tape tape;
  std::vector<Var> vars;
  for (Parameter* p : params) vars.push_back(tape.param(*p));
  Var root = build(tape, vars);
  double v = tape.value(root).item();
  if (!std::isfinite(v)) throw numeric_error("finite_difference_check: non-finite objective");
  return v;
}

// Max relative error between backward() and central differences over every
// parameter entry, with a 1e-12 absolute floor.
inline double finite_difference_check(const BuildFn& build, std::vector<Parameter*> params,
                                      double h) {
  if (h <= 0.0) throw contract_error("finite_difference_check: h must be positive");
  // Analytic gradients.
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    std::vector<Var> vars;
    for (Parameter* p : params) vars.push_back(tape.param(*p));
    Var root = build(tape, vars);
    tape.backward(root);
    tape.accumulate_param_grads();
  }
  double max_err = 0.0;
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      double saved = p->value[i];
      p->value[i] = saved + h;
      double fp = eval_only(build, params);
      p->value[i] = saved - h;
      double fm = eval_only(build, params);
      p->value[i] = saved;
      double fd = (fp - fm) / (2.0 * h);
      double g = p->grad[i];
      double denom = std::max({std::fabs(fd), std::fabs(g), 1e-12});
      double err = std::fabs(fd - g) / denom;
      if (std::fabs(fd - g) <= 1e-12) err = 0.0;
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace aoisnn::testing
