#include "vitloss/vit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vitloss/rng.hpp"

namespace vitloss {

std::string_view to_string(Flavor flavor) {
  switch (flavor) {
    case Flavor::kSupervised: return "supervised-vit";
    case Flavor::kDino: return "dino";
    case Flavor::kMae: return "mae";
  }
  return "unknown";
}

Flavor parse_flavor(std::string_view name) {
  if (name == "supervised-vit") return Flavor::kSupervised;
  if (name == "dino") return Flavor::kDino;
  if (name == "mae") return Flavor::kMae;
  throw ContractError("unknown flavor '" + std::string(name) + "'");
}

std::string_view to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::kToken: return "token";
    case FeatureKind::kQuery: return "query";
    case FeatureKind::kKey: return "key";
    case FeatureKind::kValue: return "value";
  }
  return "unknown";
}

FeatureKind parse_feature_kind(std::string_view name) {
  if (name == "token") return FeatureKind::kToken;
  if (name == "query") return FeatureKind::kQuery;
  if (name == "key") return FeatureKind::kKey;
  if (name == "value") return FeatureKind::kValue;
  throw ContractError("unknown feature kind '" + std::string(name) + "'");
}

std::size_t ViTConfig::mlp_hidden() const {
  return static_cast<std::size_t>(std::llround(static_cast<double>(embed_dim) * mlp_ratio));
}

void ViTConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ContractError("invalid ViT config: " + msg); };
  if (patch_size == 0 || image_size == 0) fail("image_size and patch_size must be positive");
  if (image_size % patch_size != 0) {
    fail("image_size " + std::to_string(image_size) + " is not divisible by patch_size " +
         std::to_string(patch_size));
  }
  if (channels == 0) fail("channels must be positive");
  if (embed_dim == 0 || num_heads == 0) fail("embed_dim and num_heads must be positive");
  if (embed_dim % num_heads != 0) {
    fail("embed_dim " + std::to_string(embed_dim) + " is not divisible by num_heads " +
         std::to_string(num_heads));
  }
  if (num_layers == 0) fail("num_layers must be positive");
  const double hidden = static_cast<double>(embed_dim) * mlp_ratio;
  if (!(mlp_ratio > 0.0) || hidden != std::round(hidden)) {
    fail("embed_dim * mlp_ratio must be a positive integer");
  }
  if (norm_mean.size() != channels || norm_std.size() != channels) {
    fail("normalization constants need one entry per channel");
  }
  for (double s : norm_std) {
    if (!(s > 0.0) || !std::isfinite(s)) fail("norm_std entries must be positive");
  }
  for (double m : norm_mean) {
    if (!std::isfinite(m)) fail("norm_mean entries must be finite");
  }
  if (!(ln_eps > 0.0)) fail("ln_eps must be positive");
}

std::vector<TensorSpec> tensor_schema(const ViTConfig& c) {
  const std::size_t d = c.embed_dim, h = c.mlp_hidden();
  std::vector<TensorSpec> out{
      {"patch_embed.weight", {c.patch_dim(), d}},
      {"patch_embed.bias", {d}},
      {"cls_token", {d}},
      {"pos_embed", {c.num_tokens(), d}},
  };
  for (std::size_t i = 0; i < c.num_layers; ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    out.push_back({p + "norm1.weight", {d}});
    out.push_back({p + "norm1.bias", {d}});
    out.push_back({p + "attn.q.weight", {d, d}});
    out.push_back({p + "attn.q.bias", {d}});
    out.push_back({p + "attn.k.weight", {d, d}});
    out.push_back({p + "attn.k.bias", {d}});
    out.push_back({p + "attn.v.weight", {d, d}});
    out.push_back({p + "attn.v.bias", {d}});
    out.push_back({p + "attn.proj.weight", {d, d}});
    out.push_back({p + "attn.proj.bias", {d}});
    out.push_back({p + "norm2.weight", {d}});
    out.push_back({p + "norm2.bias", {d}});
    out.push_back({p + "mlp.fc1.weight", {d, h}});
    out.push_back({p + "mlp.fc1.bias", {h}});
    out.push_back({p + "mlp.fc2.weight", {h, d}});
    out.push_back({p + "mlp.fc2.bias", {d}});
  }
  if (c.final_norm) {
    out.push_back({"norm.weight", {d}});
    out.push_back({"norm.bias", {d}});
  }
  return out;
}

namespace {

// One list of (name, member) pairs keeps the const and non-const visitors and
// the schema in the same order.
template <typename Bundle, typename Fn>
void visit_bundle(Bundle& b, Fn&& fn) {
  fn("patch_embed.weight", b.patch_weight);
  fn("patch_embed.bias", b.patch_bias);
  fn("cls_token", b.cls_token);
  fn("pos_embed", b.pos_embed);
  for (std::size_t i = 0; i < b.layers.size(); ++i) {
    auto& l = b.layers[i];
    const std::string p = "blocks." + std::to_string(i) + ".";
    fn(p + "norm1.weight", l.norm1_weight);
    fn(p + "norm1.bias", l.norm1_bias);
    fn(p + "attn.q.weight", l.q_weight);
    fn(p + "attn.q.bias", l.q_bias);
    fn(p + "attn.k.weight", l.k_weight);
    fn(p + "attn.k.bias", l.k_bias);
    fn(p + "attn.v.weight", l.v_weight);
    fn(p + "attn.v.bias", l.v_bias);
    fn(p + "attn.proj.weight", l.proj_weight);
    fn(p + "attn.proj.bias", l.proj_bias);
    fn(p + "norm2.weight", l.norm2_weight);
    fn(p + "norm2.bias", l.norm2_bias);
    fn(p + "mlp.fc1.weight", l.fc1_weight);
    fn(p + "mlp.fc1.bias", l.fc1_bias);
    fn(p + "mlp.fc2.weight", l.fc2_weight);
    fn(p + "mlp.fc2.bias", l.fc2_bias);
  }
  if (b.config.final_norm) {
    fn("norm.weight", b.norm_weight);
    fn("norm.bias", b.norm_bias);
  }
}

}  // namespace

template <Real T>
void for_each_tensor(WeightBundle<T>& bundle,
                     const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  visit_bundle(bundle, fn);
}

template <Real T>
void for_each_tensor(const WeightBundle<T>& bundle,
                     const std::function<void(const std::string&, const Tensor<T>&)>& fn) {
  visit_bundle(bundle, fn);
}

template <Real T>
void validate_bundle(const WeightBundle<T>& bundle) {
  bundle.config.validate();
  if (bundle.layers.size() != bundle.config.num_layers) {
    throw SchemaError("bundle has " + std::to_string(bundle.layers.size()) +
                      " layers, config says " + std::to_string(bundle.config.num_layers));
  }
  const auto schema = tensor_schema(bundle.config);
  std::size_t i = 0;
  for_each_tensor<T>(bundle, [&](const std::string& name, const Tensor<T>& t) {
    const TensorSpec& spec = schema.at(i++);
    if (t.shape() != spec.shape) {
      throw SchemaError("tensor '" + name + "' has shape " + shape_str(t.shape()) +
                        ", expected " + shape_str(spec.shape));
    }
  });
}

template <Real T>
template <Real U>
WeightBundle<U> WeightBundle<T>::cast() const {
  WeightBundle<U> out;
  out.config = config;
  out.layers.resize(layers.size());
  std::vector<Tensor<U>> converted;
  for_each_tensor<T>(*this, [&](const std::string&, const Tensor<T>& t) {
    converted.push_back(t.empty() ? Tensor<U>() : t.template cast<U>());
  });
  std::size_t i = 0;
  for_each_tensor<U>(out, [&](const std::string&, Tensor<U>& t) { t = converted.at(i++); });
  return out;
}

TokenMask make_mask(std::size_t num_patches, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw ContractError("mask ratio must lie in [0, 1), got " + std::to_string(ratio));
  }
  TokenMask mask;
  mask.ratio = ratio;
  mask.seed = seed;
  const auto keep = static_cast<std::size_t>(
      std::llround((1.0 - ratio) * static_cast<double>(num_patches)));

  std::vector<std::size_t> pool(num_patches);
  std::iota(pool.begin(), pool.end(), std::size_t{1});
  if (keep < num_patches) {
    // Partial Fisher-Yates: the first `keep` slots become a uniform sample.
    Xoshiro256 rng(seed);
    for (std::size_t i = 0; i < keep; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(num_patches - i));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(keep);
    std::sort(pool.begin(), pool.end());
  }
  mask.kept_indices.reserve(keep + 1);
  mask.kept_indices.push_back(0);
  mask.kept_indices.insert(mask.kept_indices.end(), pool.begin(), pool.end());
  return mask;
}

template <Real T>
const Tensor<T>& FeatureBundle<T>::select(FeatureKind kind) const {
  switch (kind) {
    case FeatureKind::kQuery: return queries;
    case FeatureKind::kKey: return keys;
    case FeatureKind::kValue: return values;
    default: return tokens;
  }
}

template <Real T>
ad::Var<T> TapedFeatures<T>::select(FeatureKind kind) const {
  switch (kind) {
    case FeatureKind::kQuery: return queries;
    case FeatureKind::kKey: return keys;
    case FeatureKind::kValue: return values;
    default: return tokens;
  }
}

namespace ad {

namespace {

template <Real T>
class PatchifyOp final : public Op<T> {
 public:
  explicit PatchifyOp(const ViTConfig& config) : config_(config) {}
  const char* name() const override { return "patchify"; }

  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    const Tensor<T>& image = *in[0];
    const std::size_t s = config_.image_size, c = config_.channels;
    if (image.shape() != Shape{s, s, c}) {
      throw DimensionError("patchify: image " + shape_str(image.shape()) +
                           " does not match encoder input " + shape_str(Shape{s, s, c}));
    }
    std::vector<T> out(config_.num_patches() * config_.patch_dim());
    const auto px = image.data();
    for_each_pixel([&](std::size_t src, std::size_t dst, std::size_t ch) {
      out[dst] = (px[src] - static_cast<T>(config_.norm_mean[ch])) /
                 static_cast<T>(config_.norm_std[ch]);
    });
    return Tensor<T>({config_.num_patches(), config_.patch_dim()}, std::move(out));
  }

  void backward(std::span<const Tensor<T>* const>, const Tensor<T>&, const Tensor<T>& g,
                std::span<Tensor<T>* const> gin) const override {
    if (!gin[0]) return;
    auto d = gin[0]->mutable_data();
    for_each_pixel([&](std::size_t src, std::size_t dst, std::size_t ch) {
      d[src] += g[dst] / static_cast<T>(config_.norm_std[ch]);
    });
  }

 private:
  // fn(image offset, patch-matrix offset, channel)
  template <typename Fn>
  void for_each_pixel(Fn&& fn) const {
    const std::size_t p = config_.patch_size, c = config_.channels, s = config_.image_size;
    const std::size_t grid = config_.grid(), pd = config_.patch_dim();
    for (std::size_t gy = 0; gy < grid; ++gy) {
      for (std::size_t gx = 0; gx < grid; ++gx) {
        const std::size_t row = gy * grid + gx;
        for (std::size_t py = 0; py < p; ++py) {
          for (std::size_t px = 0; px < p; ++px) {
            for (std::size_t ch = 0; ch < c; ++ch) {
              const std::size_t src = ((gy * p + py) * s + gx * p + px) * c + ch;
              const std::size_t dst = row * pd + (py * p + px) * c + ch;
              fn(src, dst, ch);
            }
          }
        }
      }
    }
  }

  ViTConfig config_;
};

}  // namespace

template <Real T>
Var<T> patchify(Var<T> image, const ViTConfig& config) {
  return image.tape().record(std::make_unique<PatchifyOp<T>>(config), {image});
}

template <Real T>
Var<T> embed(Var<T> patches, const WeightBundle<T>& w) {
  const ViTConfig& c = w.config;
  if (patches.shape() != Shape{c.num_patches(), c.patch_dim()}) {
    throw DimensionError("embed: patches " + shape_str(patches.shape()) + " do not match " +
                         shape_str(Shape{c.num_patches(), c.patch_dim()}));
  }
  Tape<T>& tape = patches.tape();
  const std::size_t d = c.embed_dim;
  Var<T> projected = add_row(matmul(patches, tape.constant(w.patch_weight)),
                             tape.constant(w.patch_bias));
  Var<T> cls = tape.constant(w.cls_token.reshaped({1, d}));
  Var<T> tokens = concat_rows<T>({cls, projected});
  return add(tokens, tape.constant(w.pos_embed));
}

template <Real T>
Var<T> apply_mask(Var<T> tokens, const TokenMask& mask) {
  if (mask.kept_indices.size() == tokens.shape().at(0)) return tokens;
  return gather_rows(tokens, mask.kept_indices);
}

template <Real T>
TapedFeatures<T> forward_to_layer(Var<T> tokens, const WeightBundle<T>& w, std::size_t layer,
                                  const ForwardOptions& options) {
  const ViTConfig& c = w.config;
  if (layer < 1 || layer > c.num_layers) {
    throw ContractError("layer " + std::to_string(layer) + " outside [1, " +
                        std::to_string(c.num_layers) + "]");
  }
  if (tokens.shape().size() != 2 || tokens.shape()[1] != c.embed_dim) {
    throw DimensionError("forward_to_layer: tokens " + shape_str(tokens.shape()) +
                         " do not have width " + std::to_string(c.embed_dim));
  }
  Tape<T>& tape = tokens.tape();
  const T eps = static_cast<T>(c.ln_eps);
  const std::size_t dh = c.head_dim();
  const T attn_scale = T{1} / std::sqrt(static_cast<T>(dh));

  TapedFeatures<T> out;
  out.layer = layer;
  Var<T> x = tokens;
  for (std::size_t i = 0; i < layer; ++i) {
    const LayerWeights<T>& lw = w.layers[i];
    auto cst = [&](const Tensor<T>& t) { return tape.constant(t); };

    Var<T> h = layer_norm(x, cst(lw.norm1_weight), cst(lw.norm1_bias), eps);
    Var<T> q = add_row(matmul(h, cst(lw.q_weight)), cst(lw.q_bias));
    Var<T> k = add_row(matmul(h, cst(lw.k_weight)), cst(lw.k_bias));
    Var<T> v = add_row(matmul(h, cst(lw.v_weight)), cst(lw.v_bias));

    std::vector<Var<T>> heads;
    heads.reserve(c.num_heads);
    for (std::size_t head = 0; head < c.num_heads; ++head) {
      Var<T> qh = slice_cols(q, head * dh, dh);
      Var<T> kh = slice_cols(k, head * dh, dh);
      Var<T> vh = slice_cols(v, head * dh, dh);
      Var<T> attn = softmax_rows(scale(matmul_nt(qh, kh), attn_scale));
      heads.push_back(matmul(attn, vh));
    }
    Var<T> merged = c.num_heads == 1 ? heads.front() : concat_cols(heads);
    x = add(x, add_row(matmul(merged, cst(lw.proj_weight)), cst(lw.proj_bias)));

    Var<T> h2 = layer_norm(x, cst(lw.norm2_weight), cst(lw.norm2_bias), eps);
    Var<T> hidden = gelu(add_row(matmul(h2, cst(lw.fc1_weight)), cst(lw.fc1_bias)));
    x = add(x, add_row(matmul(hidden, cst(lw.fc2_weight)), cst(lw.fc2_bias)));

    if (i + 1 == layer) {
      out.queries = q;
      out.keys = k;
      out.values = v;
    }
  }
  if (options.tap_after_final_norm && layer == c.num_layers && c.final_norm) {
    x = layer_norm(x, tape.constant(w.norm_weight), tape.constant(w.norm_bias), eps);
  }
  out.tokens = x;
  return out;
}

template <Real T>
TapedFeatures<T> encode(Var<T> image, const WeightBundle<T>& weights, std::size_t layer,
                        const MaskSpec& mask_spec, const ForwardOptions& options) {
  const ViTConfig& c = weights.config;
  TokenMask mask = make_mask(c.num_patches(), mask_spec.ratio, mask_spec.seed);
  Var<T> tokens = apply_mask(embed(patchify(image, c), weights), mask);
  TapedFeatures<T> out = forward_to_layer(tokens, weights, layer, options);
  out.mask = std::move(mask);
  return out;
}

}  // namespace ad

template <Real T>
Tensor<T> patchify(const Tensor<T>& image, const ViTConfig& config) {
  ad::Tape<T> tape;
  return ad::patchify(tape.constant(image), config).value();
}

template <Real T>
Tensor<T> embed(const Tensor<T>& patches, const WeightBundle<T>& weights) {
  ad::Tape<T> tape;
  return ad::embed(tape.constant(patches), weights).value();
}

template <Real T>
std::pair<Tensor<T>, TokenMask> apply_mask(const Tensor<T>& tokens, double ratio,
                                           std::uint64_t seed) {
  require_rank(tokens, 2, "apply_mask");
  if (tokens.dim(0) < 1) throw DimensionError("apply_mask: no CLS row");
  TokenMask mask = make_mask(tokens.dim(0) - 1, ratio, seed);
  ad::Tape<T> tape;
  Tensor<T> kept = ad::apply_mask(tape.constant(tokens), mask).value();
  return {kept, std::move(mask)};
}

template <Real T>
FeatureBundle<T> forward_to_layer(const Tensor<T>& tokens, const WeightBundle<T>& weights,
                                  std::size_t layer, const ForwardOptions& options) {
  ad::Tape<T> tape;
  const TapedFeatures<T> f = ad::forward_to_layer(tape.constant(tokens), weights, layer, options);
  FeatureBundle<T> out{f.tokens.value(), f.queries.value(), f.keys.value(), f.values.value(),
                       layer, {}};
  out.mask.kept_indices.resize(tokens.dim(0));
  std::iota(out.mask.kept_indices.begin(), out.mask.kept_indices.end(), std::size_t{0});
  return out;
}

template <Real T>
Extracted<T> extract(const Tensor<T>& image, const WeightBundle<T>& weights, std::size_t layer,
                     FeatureKind kind, const MaskSpec& mask, const ForwardOptions& options) {
  ad::Tape<T> tape;
  const TapedFeatures<T> f = ad::encode(tape.constant(image), weights, layer, mask, options);
  return {f.select(kind).value(), f.mask};
}

#define VITLOSS_INSTANTIATE(T)                                                                 \
  template struct FeatureBundle<T>;                                                            \
  template struct TapedFeatures<T>;                                                            \
  template void for_each_tensor(WeightBundle<T>&,                                              \
                                const std::function<void(const std::string&, Tensor<T>&)>&);   \
  template void for_each_tensor(                                                               \
      const WeightBundle<T>&, const std::function<void(const std::string&, const Tensor<T>&)>&); \
  template void validate_bundle(const WeightBundle<T>&);                                       \
  template Tensor<T> patchify(const Tensor<T>&, const ViTConfig&);                             \
  template Tensor<T> embed(const Tensor<T>&, const WeightBundle<T>&);                          \
  template std::pair<Tensor<T>, TokenMask> apply_mask(const Tensor<T>&, double, std::uint64_t); \
  template FeatureBundle<T> forward_to_layer(const Tensor<T>&, const WeightBundle<T>&,         \
                                             std::size_t, const ForwardOptions&);              \
  template Extracted<T> extract(const Tensor<T>&, const WeightBundle<T>&, std::size_t,         \
                                FeatureKind, const MaskSpec&, const ForwardOptions&);          \
  template ad::Var<T> ad::patchify(ad::Var<T>, const ViTConfig&);                              \
  template ad::Var<T> ad::embed(ad::Var<T>, const WeightBundle<T>&);                           \
  template ad::Var<T> ad::apply_mask(ad::Var<T>, const TokenMask&);                            \
  template TapedFeatures<T> ad::forward_to_layer(ad::Var<T>, const WeightBundle<T>&,           \
                                                 std::size_t, const ForwardOptions&);          \
  template TapedFeatures<T> ad::encode(ad::Var<T>, const WeightBundle<T>&, std::size_t,        \
                                       const MaskSpec&, const ForwardOptions&);

VITLOSS_INSTANTIATE(float)
VITLOSS_INSTANTIATE(double)

#undef VITLOSS_INSTANTIATE

template WeightBundle<double> WeightBundle<float>::cast<double>() const;
template WeightBundle<float> WeightBundle<double>::cast<float>() const;
template WeightBundle<float> WeightBundle<float>::cast<float>() const;
template WeightBundle<double> WeightBundle<double>::cast<double>() const;

}  // namespace vitloss
