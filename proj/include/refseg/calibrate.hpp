#pragma once

#include "refseg/model.hpp"
#include "refseg/training.hpp"

#include <span>

namespace refseg {

struct CalibrationOptions {
  /// Standard deviation aimed for at every gate pre-activation.
  double target_std = 1.0;
  int passes = 3;
};

/// Data-dependent rescaling of freshly initialized parameters, layer by layer
/// in forward order. Each weight block is multiplied by a scalar so that its
/// contribution over `examples` has a fixed standard deviation:
///   language LSTMs: input and recurrent terms at target_std each;
///   backbone projections: unit std;
///   encoder kernels: visual, word and hidden blocks at target_std / 2,
///   spatial block at target_std / 4;
///   spatial attention: unit std;
///   decoder kernel: input and hidden blocks at target_std / sqrt(2);
///   mask head: unit logit std, bias at the log odds of the foreground
///   fraction.
/// Only scales change, so signs and the relative pattern of the uniform
/// draw are kept. Deterministic given the parameters and examples.
template <typename T>
void calibrate(ModelParams<T>& params, const ModelDims& dims, std::span<const Example<T>> examples,
               const CalibrationOptions& options = {});

}  // namespace refseg
