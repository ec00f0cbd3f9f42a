#include "vitloss/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vitloss/weights_io.hpp"

namespace vitloss::gradcheck {

ViTConfig toy_config() {
  ViTConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.channels = 3;
  c.embed_dim = 8;
  c.num_heads = 2;
  c.num_layers = 3;
  return c;
}

Tensor<double> central_difference(const std::function<double(const Tensor<double>&)>& f,
                                  const Tensor<double>& x, double step) {
  std::vector<double> out(x.numel());
  Tensor<double> probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = x[i];
    probe.mutable_data()[i] = orig + step;
    const double up = f(probe);
    probe.mutable_data()[i] = orig - step;
    const double down = f(probe);
    probe.mutable_data()[i] = orig;
    out[i] = (up - down) / (2.0 * step);
  }
  return Tensor<double>(x.shape(), std::move(out));
}

double max_relative_error(const Tensor<double>& analytic, const Tensor<double>& numeric) {
  require_same_shape(analytic, numeric, "max_relative_error");
  double scale = 0.0;
  for (double v : numeric.data()) scale = std::max(scale, std::abs(v));
  const double floor = std::max(kRelativeFloor * scale, std::numeric_limits<double>::min());
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.numel(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

namespace {

Tensor<double> random_image(const ViTConfig& c, Xoshiro256& rng) {
  std::vector<double> px(c.image_size * c.image_size * c.channels);
  for (double& v : px) v = 0.05 + 0.9 * rng.uniform();
  return Tensor<double>({c.image_size, c.image_size, c.channels}, std::move(px));
}

double min_sorted_gap(const Tensor<double>& m) {
  double gap = std::numeric_limits<double>::infinity();
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> row(m.data().begin() + static_cast<std::ptrdiff_t>(r * cols),
                            m.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * cols));
    std::sort(row.begin(), row.end());
    for (std::size_t j = 1; j < cols; ++j) gap = std::min(gap, row[j] - row[j - 1]);
  }
  return gap;
}

}  // namespace

Instance tie_free_instance(const WeightBundle<double>& weights, const LossConfig& config,
                           Xoshiro256& rng, double margin) {
  const ViTConfig& c = weights.config;
  const MaskSpec mask{config.mask_ratio, config.seed};
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Instance inst{random_image(c, rng), random_image(c, rng)};
    const auto a = extract(inst.recon, weights, config.layer, config.feature, mask, config.forward);
    const auto b = extract(inst.ref, weights, config.layer, config.feature, mask, config.forward);
    bool ok = true;
    if (config.kind == LossKind::kLocal) {
      for (std::size_t i = 0; i < a.features.numel() && ok; ++i) {
        ok = std::abs(a.features[i] - b.features[i]) >= margin;
      }
    } else {
      ok = min_sorted_gap(a.features) >= margin && min_sorted_gap(b.features) >= margin;
    }
    if (ok) return inst;
  }
  throw ContractError("could not draw a tie-free gradcheck instance");
}

LossConfig check_config(LossKind kind, const ViTConfig& encoder) {
  LossConfig cfg = LossConfig::defaults_for(kind);
  cfg.layer = encoder.num_layers;
  cfg.lambda = 1.0;
  cfg.metric = DeblurMetric::kL2;
  return cfg;
}

std::vector<LossCheck> run(const Options& options) {
  const ViTConfig config = toy_config();
  const WeightBundle<double> weights =
      weights::generate_toy(config, options.seed).cast<double>();
  Xoshiro256 rng(options.seed ^ 0x6772616463686b00ULL);

  std::vector<LossCheck> out;
  for (LossKind kind : {LossKind::kLocal, LossKind::kGlobal}) {
    const LossConfig cfg = check_config(kind, config);
    LossCheck check;
    check.kind = kind;
    check.threshold = options.threshold;
    for (std::size_t k = 0; k < options.instances; ++k) {
      const Instance inst = tie_free_instance(weights, cfg, rng);
      Tensor<double> analytic = loss_gradient(inst.recon, inst.ref, weights, cfg);
      if (options.corrupt_gradient) {
        auto g = analytic.mutable_data();
        g[k % g.size()] = g[k % g.size()] * 1.5 + 1e-3;
      }
      const Tensor<double> numeric = central_difference(
          [&](const Tensor<double>& x) {
            return total_loss(x, inst.ref, weights, cfg, false).total;
          },
          inst.recon, options.step);
      check.max_rel_error = std::max(check.max_rel_error, max_relative_error(analytic, numeric));
      ++check.instances;
    }
    check.passed = check.max_rel_error < check.threshold;
    out.push_back(check);
  }
  return out;
}

}  // namespace vitloss::gradcheck
