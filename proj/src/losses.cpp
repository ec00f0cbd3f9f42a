#include "vitloss/losses.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace vitloss {

std::string_view to_string(LossKind kind) {
  return kind == LossKind::kLocal ? "local" : "global";
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "local") return LossKind::kLocal;
  if (name == "global") return LossKind::kGlobal;
  throw ContractError("unknown loss kind '" + std::string(name) + "'");
}

std::string_view to_string(DeblurMetric metric) {
  switch (metric) {
    case DeblurMetric::kL1: return "l1";
    case DeblurMetric::kL2: return "l2";
    case DeblurMetric::kCharbonnier: return "charbonnier";
    case DeblurMetric::kPsnr: return "psnr";
  }
  return "unknown";
}

DeblurMetric parse_deblur_metric(std::string_view name) {
  if (name == "l1") return DeblurMetric::kL1;
  if (name == "l2") return DeblurMetric::kL2;
  if (name == "charbonnier") return DeblurMetric::kCharbonnier;
  if (name == "psnr") return DeblurMetric::kPsnr;
  throw ContractError("unknown deblur metric '" + std::string(name) + "'");
}

LossConfig LossConfig::defaults_for(LossKind kind) {
  LossConfig c;
  c.kind = kind;
  if (kind == LossKind::kGlobal) {
    c.lambda = 1e-5;
    c.mask_ratio = 0.0;
  }
  return c;
}

void LossConfig::validate(const ViTConfig& encoder) const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ContractError("lambda must be >= 0");
  if (!(p >= 1.0) || !std::isfinite(p)) throw ContractError("p must be >= 1");
  if (layer < 1 || layer > encoder.num_layers) {
    throw ContractError("layer " + std::to_string(layer) + " outside encoder depth [1, " +
                        std::to_string(encoder.num_layers) + "]");
  }
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) {
    throw ContractError("mask ratio must lie in [0, 1)");
  }
  if (!(charbonnier_eps > 0.0)) throw ContractError("charbonnier epsilon must be positive");
}

namespace ad {

template <Real T>
Var<T> deblur_loss(Var<T> recon, Var<T> ref, DeblurMetric metric, double charbonnier_eps) {
  if (recon.shape() != ref.shape()) {
    throw DimensionError("deblur_loss: shape mismatch " + shape_str(recon.shape()) + " vs " +
                         shape_str(ref.shape()));
  }
  Var<T> diff = sub(recon, ref);
  switch (metric) {
    case DeblurMetric::kL1: return mean(abs(diff));
    case DeblurMetric::kL2: return mean(square(diff));
    case DeblurMetric::kCharbonnier:
      return mean(charbonnier(diff, static_cast<T>(charbonnier_eps)));
    case DeblurMetric::kPsnr: {
      // 10 log10(MSE + eps) = -PSNR for peak 1 whenever MSE >> eps.
      Var<T> mse = add_scalar(mean(square(diff)), static_cast<T>(kPsnrLossEps));
      return scale(log(mse), static_cast<T>(10.0 / std::log(10.0)));
    }
  }
  throw ContractError("unknown deblur metric");
}

template <Real T>
Var<T> local_loss(Var<T> a, Var<T> b, const LocalVariant& variant) {
  if (a.shape() != b.shape()) {
    throw DimensionError("local_loss: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  Var<T> diff = sub(a, b);
  Var<T> out = variant.euclidean ? root_pow(sum(square(diff)), T{0.5}) : sum(abs(diff));
  if (variant.mean) out = scale(out, T{1} / static_cast<T>(shape_numel(a.shape())));
  return out;
}

template <Real T>
Var<T> global_loss(Var<T> a, Var<T> b, double p, bool root) {
  if (a.shape() != b.shape()) {
    throw DimensionError("global_loss: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  if (!(p >= 1.0)) throw ContractError("global_loss: p must be >= 1");
  Var<T> per_token = row_sums(abs_pow(sub(sort_rows(a), sort_rows(b)), static_cast<T>(p)));
  if (root) per_token = root_pow(per_token, static_cast<T>(1.0 / p));
  return sum(per_token);
}

}  // namespace ad

namespace {

template <Real T>
Tensor<T> as_matrix(const Tensor<T>& t) {
  if (t.rank() == 2) return t;
  return t.reshaped({1, t.numel()});
}

}  // namespace

template <Real T>
double deblur_loss(const Tensor<T>& recon, const Tensor<T>& ref, DeblurMetric metric,
                   double charbonnier_eps) {
  ad::Tape<T> tape;
  return ad::deblur_loss(tape.constant(recon), tape.constant(ref), metric, charbonnier_eps)
      .value()
      .item();
}

template <Real T>
double local_loss(const Tensor<T>& a, const Tensor<T>& b, const LocalVariant& variant) {
  ad::Tape<T> tape;
  return ad::local_loss(tape.constant(a), tape.constant(b), variant).value().item();
}

template <Real T>
double wasserstein_1d(const Tensor<T>& u, const Tensor<T>& v, double p, bool root) {
  require_rank(u, 1, "wasserstein_1d");
  require_rank(v, 1, "wasserstein_1d");
  if (u.numel() != v.numel()) {
    throw DimensionError("wasserstein_1d: length mismatch " + shape_str(u.shape()) + " vs " +
                         shape_str(v.shape()));
  }
  ad::Tape<T> tape;
  return ad::global_loss(tape.constant(as_matrix(u)), tape.constant(as_matrix(v)), p, root)
      .value()
      .item();
}

template <Real T>
double global_loss(const Tensor<T>& a, const Tensor<T>& b, double p, bool root) {
  require_rank(a, 2, "global_loss");
  require_rank(b, 2, "global_loss");
  ad::Tape<T> tape;
  return ad::global_loss(tape.constant(a), tape.constant(b), p, root).value().item();
}

template <Real T>
LossReport<T> total_loss(const Tensor<T>& recon, const Tensor<T>& ref,
                         const WeightBundle<T>& weights, const LossConfig& config,
                         bool want_gradient) {
  config.validate(weights.config);
  require_same_shape(recon, ref, "total_loss");

  ad::Tape<T> tape;
  ad::Var<T> x = want_gradient ? tape.input(recon) : tape.constant(recon);
  ad::Var<T> y = tape.constant(ref);

  ad::Var<T> deblur = ad::deblur_loss(x, y, config.metric, config.charbonnier_eps);

  // Both images share one mask so feature rows stay positionally aligned.
  const MaskSpec mask{config.mask_ratio, config.seed};
  const auto fx = ad::encode(x, weights, config.layer, mask, config.forward);
  const auto fy = ad::encode(y, weights, config.layer, mask, config.forward);
  ad::Var<T> a = fx.select(config.feature);
  ad::Var<T> b = fy.select(config.feature);
  ad::Var<T> percep = config.kind == LossKind::kLocal
                          ? ad::local_loss(a, b, config.local)
                          : ad::global_loss(a, b, config.p, !config.wasserstein_no_root);
  ad::Var<T> total = ad::add(deblur, ad::scale(percep, static_cast<T>(config.lambda)));

  LossReport<T> report;
  report.deblur_term = static_cast<double>(deblur.value().item());
  report.percep_term = static_cast<double>(percep.value().item());
  report.total = static_cast<double>(total.value().item());
  if (want_gradient) {
    auto grads = tape.backward(total);
    report.gradient = std::move(grads.front());
  }
  return report;
}

template <Real T>
Tensor<T> loss_gradient(const Tensor<T>& recon, const Tensor<T>& ref,
                        const WeightBundle<T>& weights, const LossConfig& config) {
  return *total_loss(recon, ref, weights, config, true).gradient;
}

template <Real T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak) {
  require_same_shape(a, b, "psnr");
  if (!(peak > 0.0)) throw ContractError("psnr: peak must be positive");
  const auto x = a.data();
  const auto y = b.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(x.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

#define VITLOSS_INSTANTIATE(T)                                                                 \
  template double deblur_loss(const Tensor<T>&, const Tensor<T>&, DeblurMetric, double);      \
  template double local_loss(const Tensor<T>&, const Tensor<T>&, const LocalVariant&);        \
  template double wasserstein_1d(const Tensor<T>&, const Tensor<T>&, double, bool);           \
  template double global_loss(const Tensor<T>&, const Tensor<T>&, double, bool);              \
  template LossReport<T> total_loss(const Tensor<T>&, const Tensor<T>&, const WeightBundle<T>&, \
                                    const LossConfig&, bool);                                 \
  template Tensor<T> loss_gradient(const Tensor<T>&, const Tensor<T>&, const WeightBundle<T>&, \
                                   const LossConfig&);                                        \
  template double psnr(const Tensor<T>&, const Tensor<T>&, double);                           \
  template ad::Var<T> ad::deblur_loss(ad::Var<T>, ad::Var<T>, DeblurMetric, double);          \
  template ad::Var<T> ad::local_loss(ad::Var<T>, ad::Var<T>, const LocalVariant&);            \
  template ad::Var<T> ad::global_loss(ad::Var<T>, ad::Var<T>, double, bool);

VITLOSS_INSTANTIATE(float)
VITLOSS_INSTANTIATE(double)

#undef VITLOSS_INSTANTIATE

}  // namespace vitloss
