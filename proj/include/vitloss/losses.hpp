#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string_view>

#include "vitloss/tape.hpp"
#include "vitloss/tensor.hpp"
#include "vitloss/vit.hpp"

namespace vitloss {

enum class LossKind { kLocal, kGlobal };
enum class DeblurMetric { kL1, kL2, kCharbonnier, kPsnr };

std::string_view to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view name);
std::string_view to_string(DeblurMetric metric);
DeblurMetric parse_deblur_metric(std::string_view name);

/// Stabilizer inside the PSNR loss: 10 log10(MSE + kPsnrLossEps).
inline constexpr double kPsnrLossEps = 1e-8;

struct LocalVariant {
  /// Euclidean norm of the difference instead of the entrywise L1 sum.
  bool euclidean = false;
  /// Divide by the number of entries.
  bool mean = false;
};

struct LossConfig {
  LossKind kind = LossKind::kLocal;
  std::size_t layer = 5;
  FeatureKind feature = FeatureKind::kToken;
  double mask_ratio = 0.5;
  double lambda = 1.0;
  double p = 2.0;
  DeblurMetric metric = DeblurMetric::kL1;
  double charbonnier_eps = 1e-3;
  std::uint64_t seed = 0;
  LocalVariant local;
  /// Report sum |u_s - v_s|^p without the outer 1/p root.
  bool wasserstein_no_root = false;
  ForwardOptions forward;

  /// Defaults for a loss kind: local uses lambda 1 and mask ratio 0.5,
  /// global uses lambda 1e-5 and no masking.
  static LossConfig defaults_for(LossKind kind);

  void validate(const ViTConfig& encoder) const;
};

template <Real T>
struct LossReport {
  double deblur_term = 0.0;
  double percep_term = 0.0;
  double total = 0.0;
  /// d total / d I_recon, image-shaped.
  std::optional<Tensor<T>> gradient;
};

// Plain evaluation.

template <Real T>
double deblur_loss(const Tensor<T>& recon, const Tensor<T>& ref, DeblurMetric metric,
                   double charbonnier_eps = 1e-3);

template <Real T>
double local_loss(const Tensor<T>& a, const Tensor<T>& b, const LocalVariant& variant = {});

/// Sorted 1-D p-Wasserstein distance between two equal-length sample sets:
/// (sum_s |u_(s) - v_(s)|^p)^(1/p), or the bare sum when `root` is false.
template <Real T>
double wasserstein_1d(const Tensor<T>& u, const Tensor<T>& v, double p, bool root = true);

/// Sum over token rows of wasserstein_1d(row_i(a), row_i(b), p).
template <Real T>
double global_loss(const Tensor<T>& a, const Tensor<T>& b, double p, bool root = true);

template <Real T>
LossReport<T> total_loss(const Tensor<T>& recon, const Tensor<T>& ref,
                         const WeightBundle<T>& weights, const LossConfig& config,
                         bool want_gradient);

template <Real T>
Tensor<T> loss_gradient(const Tensor<T>& recon, const Tensor<T>& ref,
                        const WeightBundle<T>& weights, const LossConfig& config);

/// 10 log10(peak^2 / MSE); +infinity when the images are identical.
template <Real T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0);

inline bool psnr_identical(double value) { return value == std::numeric_limits<double>::infinity(); }

namespace ad {

template <Real T>
Var<T> deblur_loss(Var<T> recon, Var<T> ref, DeblurMetric metric, double charbonnier_eps);

template <Real T>
Var<T> local_loss(Var<T> a, Var<T> b, const LocalVariant& variant = {});

/// Row-wise sorted Wasserstein distances summed over rows.
template <Real T>
Var<T> global_loss(Var<T> a, Var<T> b, double p, bool root = true);

}  // namespace ad

}  // namespace vitloss
