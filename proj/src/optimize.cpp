#include "vitloss/optimize.hpp"

#include <string>

namespace vitloss {

template <Real T>
OptimizeResult<T> optimize_pixels(const Tensor<T>& init, const Tensor<T>& target,
                                  const WeightBundle<T>& weights, const LossConfig& config,
                                  std::size_t steps, double step_size) {
  if (steps < 1) throw ContractError("optimize: steps must be >= 1");
  if (!(step_size > 0.0)) throw ContractError("optimize: step size must be positive");
  config.validate(weights.config);

  OptimizeResult<T> result;
  result.image = init;
  Tensor<T> x = init;
  const T lr = static_cast<T>(step_size);
  for (std::size_t step = 0; step <= steps; ++step) {
    LossReport<T> report;
    try {
      report = total_loss(x, target, weights, config, step < steps);
    } catch (const NumericError&) {
      result.diverged = true;
      return result;
    }
    result.image = x;
    result.trace.push_back({step, report.deblur_term, report.percep_term, report.total,
                            psnr(x, target)});
    if (step == steps) break;

    Tensor<T> next = x;
    auto px = next.mutable_data();
    const auto g = report.gradient->data();
    for (std::size_t i = 0; i < px.size(); ++i) px[i] -= lr * g[i];
    try {
      next.check_finite("optimized image");
    } catch (const NumericError&) {
      result.diverged = true;
      return result;
    }
    x = std::move(next);
  }
  return result;
}

template OptimizeResult<float> optimize_pixels(const Tensor<float>&, const Tensor<float>&,
                                               const WeightBundle<float>&, const LossConfig&,
                                               std::size_t, double);
template OptimizeResult<double> optimize_pixels(const Tensor<double>&, const Tensor<double>&,
                                                const WeightBundle<double>&, const LossConfig&,
                                                std::size_t, double);

}  // namespace vitloss
