#pragma once

#include <cstddef>
#include <vector>

#include "vitloss/losses.hpp"

namespace vitloss {

struct TraceRow {
  std::size_t step = 0;
  double deblur = 0.0;
  double percep = 0.0;
  double total = 0.0;
  double psnr = 0.0;  // +inf when identical to the target
};

template <Real T>
struct OptimizeResult {
  /// Last image whose loss evaluated to a finite value.
  Tensor<T> image;
  /// Row k describes the image after k updates; row 0 is the start.
  std::vector<TraceRow> trace;
  bool diverged = false;
};

/// Plain gradient descent on the pixels of `init`, minimizing the total loss
/// against `target`: x <- x - step_size * dL/dx.
template <Real T>
OptimizeResult<T> optimize_pixels(const Tensor<T>& init, const Tensor<T>& target,
                                  const WeightBundle<T>& weights, const LossConfig& config,
                                  std::size_t steps, double step_size);

}  // namespace vitloss
