#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "vitloss/losses.hpp"
#include "vitloss/rng.hpp"
#include "vitloss/tensor.hpp"
#include "vitloss/vit.hpp"

// Finite-difference verification of d L_total / d I_recon on toy encoders.
namespace vitloss::gradcheck {

/// image 16, patch 4, RGB, d = 8, 2 heads, 3 layers.
ViTConfig toy_config();

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every entry.
Tensor<double> central_difference(const std::function<double(const Tensor<double>&)>& f,
                                  const Tensor<double>& x, double step);

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor), floor = kRelativeFloor *
/// max_i |n_i|. The floor keeps entries that are tiny compared with the
/// gradient's own scale from dominating through cancellation noise.
double max_relative_error(const Tensor<double>& analytic, const Tensor<double>& numeric);

inline constexpr double kRelativeFloor = 1e-3;

struct Instance {
  Tensor<double> recon;
  Tensor<double> ref;
};

/// Random image pair whose features are at least `margin` away from every
/// L1 kink (local) or sort tie (global) for the given loss configuration.
Instance tie_free_instance(const WeightBundle<double>& weights, const LossConfig& config,
                           Xoshiro256& rng, double margin = 1e-4);

/// Loss configuration used by the checks: defaults for the kind at the
/// encoder's last layer, lambda 1 so the perceptual term is not drowned out,
/// and the smooth l2 pixel metric.
LossConfig check_config(LossKind kind, const ViTConfig& encoder);

struct Options {
  std::size_t instances = 20;
  double step = 1e-5;
  double threshold = 1e-4;
  std::uint64_t seed = 0;
  /// Test hook: perturb the analytic gradient so the check must fail.
  bool corrupt_gradient = false;
};

struct LossCheck {
  LossKind kind = LossKind::kLocal;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
  double threshold = 0.0;
  bool passed = false;
};

std::vector<LossCheck> run(const Options& options);

}  // namespace vitloss::gradcheck
