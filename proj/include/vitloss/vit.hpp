#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "vitloss/tape.hpp"
#include "vitloss/tensor.hpp"

namespace vitloss {

enum class Flavor { kSupervised, kDino, kMae };

std::string_view to_string(Flavor flavor);
Flavor parse_flavor(std::string_view name);

enum class FeatureKind { kToken, kQuery, kKey, kValue };

std::string_view to_string(FeatureKind kind);
FeatureKind parse_feature_kind(std::string_view name);

struct ViTConfig {
  std::size_t image_size = 224;
  std::size_t patch_size = 16;
  std::size_t channels = 3;
  std::size_t embed_dim = 768;
  std::size_t num_layers = 12;
  std::size_t num_heads = 12;
  double mlp_ratio = 4.0;
  Flavor flavor = Flavor::kMae;
  std::vector<double> norm_mean{0.485, 0.456, 0.406};
  std::vector<double> norm_std{0.229, 0.224, 0.225};
  double ln_eps = 1e-6;
  bool final_norm = true;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t num_tokens() const { return num_patches() + 1; }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t mlp_hidden() const;

  /// Throws ContractError naming the first violated constraint.
  void validate() const;

  bool operator==(const ViTConfig&) const = default;
};

template <Real T>
struct LayerWeights {
  Tensor<T> norm1_weight, norm1_bias;
  Tensor<T> q_weight, q_bias, k_weight, k_bias, v_weight, v_bias;
  Tensor<T> proj_weight, proj_bias;
  Tensor<T> norm2_weight, norm2_bias;
  Tensor<T> fc1_weight, fc1_bias, fc2_weight, fc2_bias;
};

/// All encoder parameters. Projection matrices are stored input-major
/// ([in, out]) so a layer computes x * W + b. The patch kernel's rows follow
/// the patchify layout: (row-in-patch, col-in-patch, channel).
template <Real T>
struct WeightBundle {
  ViTConfig config;
  Tensor<T> patch_weight, patch_bias;
  Tensor<T> cls_token;
  Tensor<T> pos_embed;
  std::vector<LayerWeights<T>> layers;
  Tensor<T> norm_weight, norm_bias;  // only when config.final_norm

  template <Real U>
  WeightBundle<U> cast() const;
};

struct TensorSpec {
  std::string name;
  Shape shape;
};

/// Every tensor name and shape implied by a config, in canonical order.
std::vector<TensorSpec> tensor_schema(const ViTConfig& config);

/// Visit every tensor of a bundle in schema order.
template <Real T>
void for_each_tensor(WeightBundle<T>& bundle,
                     const std::function<void(const std::string&, Tensor<T>&)>& fn);
template <Real T>
void for_each_tensor(const WeightBundle<T>& bundle,
                     const std::function<void(const std::string&, const Tensor<T>&)>& fn);

/// Shape-checks every tensor against the schema; SchemaError on mismatch.
template <Real T>
void validate_bundle(const WeightBundle<T>& bundle);

/// Which patch tokens survive MAE-style masking. Index 0 is CLS.
struct TokenMask {
  std::vector<std::size_t> kept_indices;
  double ratio = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const TokenMask&) const = default;
};

struct MaskSpec {
  double ratio = 0.0;
  std::uint64_t seed = 0;
};

/// Samples the kept set for n patch tokens. Depends only on (n, ratio, seed),
/// so two images encoded with the same spec share one mask.
TokenMask make_mask(std::size_t num_patches, double ratio, std::uint64_t seed);

struct ForwardOptions {
  /// At l = L, tap tokens after the final LayerNorm instead of before it.
  bool tap_after_final_norm = false;
};

template <Real T>
struct FeatureBundle {
  Tensor<T> tokens, queries, keys, values;
  std::size_t layer = 0;
  TokenMask mask;

  const Tensor<T>& select(FeatureKind kind) const;
};

template <Real T>
struct TapedFeatures {
  ad::Var<T> tokens, queries, keys, values;
  std::size_t layer = 0;
  TokenMask mask;

  ad::Var<T> select(FeatureKind kind) const;
};

template <Real T>
struct Extracted {
  Tensor<T> features;
  TokenMask mask;
};

// Plain API. Each call runs on a private tape holding only constants.

/// image [H, W, C] -> [n, P*P*C], normalized per channel.
template <Real T>
Tensor<T> patchify(const Tensor<T>& image, const ViTConfig& config);

/// patches [n, P*P*C] -> tokens [(n+1), d] with CLS first.
template <Real T>
Tensor<T> embed(const Tensor<T>& patches, const WeightBundle<T>& weights);

template <Real T>
std::pair<Tensor<T>, TokenMask> apply_mask(const Tensor<T>& tokens, double ratio,
                                           std::uint64_t seed);

template <Real T>
FeatureBundle<T> forward_to_layer(const Tensor<T>& tokens, const WeightBundle<T>& weights,
                                  std::size_t layer, const ForwardOptions& options = {});

template <Real T>
Extracted<T> extract(const Tensor<T>& image, const WeightBundle<T>& weights, std::size_t layer,
                     FeatureKind kind = FeatureKind::kToken, const MaskSpec& mask = {},
                     const ForwardOptions& options = {});

// Taped API, for gradients with respect to the image.
namespace ad {

template <Real T>
Var<T> patchify(Var<T> image, const ViTConfig& config);

template <Real T>
Var<T> embed(Var<T> patches, const WeightBundle<T>& weights);

template <Real T>
Var<T> apply_mask(Var<T> tokens, const TokenMask& mask);

/// Tokens may already be masked (any row count >= 1).
template <Real T>
TapedFeatures<T> forward_to_layer(Var<T> tokens, const WeightBundle<T>& weights, std::size_t layer,
                                  const ForwardOptions& options = {});

template <Real T>
TapedFeatures<T> encode(Var<T> image, const WeightBundle<T>& weights, std::size_t layer,
                        const MaskSpec& mask, const ForwardOptions& options = {});

}  // namespace ad

}  // namespace vitloss
