#pragma once

#include <utility>

#include "aoisnn/common.hpp"
#include "aoisnn/tensor.hpp"

namespace aoisnn {

struct LIFParams {
  double tau = 0.5;              // decay factor, in (0, 1]
  double v_thr = 1.0;            // firing threshold
  double surrogate_width = 1.0;  // boxcar support width

  void validate() const {
    if (!(tau > 0.0 && tau <= 1.0)) throw config_error("LIFParams: tau must be in (0,1]");
    if (!(v_thr > 0.0)) throw config_error("LIFParams: v_thr must be positive");
    if (!(surrogate_width > 0.0))
      throw config_error("LIFParams: surrogate_width must be positive");
  }
};

// Per-layer neuron state at one timestep: membrane potential before firing,
// residual current after firing, and the emitted spikes.
struct LIFState {
  Tensor v;
  Tensor residual;
  Tensor spikes;

  static LIFState zeros(const Shape& shape) {
    return {Tensor::zeros(shape), Tensor::zeros(shape), Tensor::zeros(shape)};
  }
};

// Value-level membrane update: v' = tau * residual + z, fire on v' >= v_thr,
// residual' = (1 - spike) * v'. The differentiable path lives on the tape
// (see network.hpp); this is the plain evaluation used by tests and
// state-free callers.
inline LIFState lif_step(const LIFState& state, const Tensor& z, const LIFParams& params) {
  params.validate();
  require_same_shape(state.residual, z, "lif_step");
  LIFState next;
  next.v = Tensor(z.shape());
  next.spikes = Tensor(z.shape());
  next.residual = Tensor(z.shape());
  for (std::size_t i = 0; i < z.numel(); ++i) {
    double v = params.tau * state.residual[i] + z[i];
    double s = v >= params.v_thr ? 1.0 : 0.0;
    next.v[i] = v;
    next.spikes[i] = s;
    next.residual[i] = (1.0 - s) * v;
  }
  return next;
}

}  // namespace aoisnn
