#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "oracles.hpp"
#include "vitloss/kernels.hpp"
#include "vitloss/tape.hpp"
#include "vitloss/vit.hpp"

using namespace vitloss;

namespace {

void expect_close(const Tensor<double>& got, const oracle::Matrix& want, double tol) {
  const auto ref = oracle::from_matrix(want);
  ASSERT_EQ(got.shape(), ref.shape());
  for (std::size_t i = 0; i < got.numel(); ++i) {
    EXPECT_NEAR(got[i], ref[i], tol) << "entry " << i;
  }
}

WeightBundle<double> zero_weights(const ViTConfig& config) {
  auto w = fixture::toy_weights(config, 0);
  for_each_tensor<double>(w, [](const std::string& name, Tensor<double>& t) {
    const bool gain = name.ends_with("norm1.weight") || name.ends_with("norm2.weight") ||
                      name == "norm.weight";
    t = gain ? Tensor<double>::full(t.shape(), 1.0) : Tensor<double>(t.shape());
  });
  return w;
}

}  // namespace

TEST(Config, Derived) {
  ViTConfig c;
  EXPECT_EQ(c.grid(), 14u);
  EXPECT_EQ(c.num_patches(), 196u);
  EXPECT_EQ(c.num_tokens(), 197u);
  EXPECT_EQ(c.head_dim(), 64u);
  EXPECT_EQ(c.mlp_hidden(), 3072u);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, ValidationFailures) {
  ViTConfig c = fixture::toy_config();
  c.embed_dim = 9;
  EXPECT_THROW(c.validate(), ContractError);
  c = fixture::toy_config();
  c.patch_size = 5;
  EXPECT_THROW(c.validate(), ContractError);
  c = fixture::toy_config();
  c.norm_std = {1.0, 0.0, 1.0};
  EXPECT_THROW(c.validate(), ContractError);
}

TEST(Schema, CoversEveryTensorAndValidates) {
  const auto cfg = fixture::toy_config();
  const auto schema = tensor_schema(cfg);
  EXPECT_EQ(schema.size(), 4u + 16u * cfg.num_layers + 2u);
  std::set<std::string> names;
  for (const auto& s : schema) names.insert(s.name);
  EXPECT_EQ(names.size(), schema.size());
  auto w = fixture::toy_weights(cfg, 1);
  EXPECT_NO_THROW(validate_bundle(w));
  w.layers[1].fc1_weight = Tensor<double>({3, 3});
  EXPECT_THROW(validate_bundle(w), SchemaError);
}

TEST(Patchify, LayoutIsRasterOrder) {
  ViTConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.channels = 1;
  c.norm_mean = {0.0};
  c.norm_std = {1.0};
  std::vector<double> px(64);
  for (std::size_t i = 0; i < 64; ++i) px[i] = static_cast<double>(i) / 64.0;
  const auto p = patchify(Tensor<double>({8, 8, 1}, px), c);
  ASSERT_EQ(p.shape(), (Shape{4, 16}));
  // patch 1 is the top-right block: rows 0..3, columns 4..7
  EXPECT_EQ(p.at(1, 0), 4.0 / 64.0);
  EXPECT_EQ(p.at(1, 5), 13.0 / 64.0);
  // patch 2 starts at row 4, column 0
  EXPECT_EQ(p.at(2, 0), 32.0 / 64.0);
}

TEST(Patchify, ConstantImageAtMeanIsZero) {
  ViTConfig c = fixture::toy_config();
  c.norm_mean = {0.3, 0.3, 0.3};
  c.norm_std = {1.0, 1.0, 1.0};
  const auto p = patchify(Tensor<double>::full({16, 16, 3}, 0.3), c);
  for (double v : p.data()) EXPECT_EQ(v, 0.0);
}

TEST(Patchify, InverseRoundTrip) {
  const auto c = fixture::toy_config();
  const auto img = fixture::random_image(16, 3, 2);
  const auto p = patchify(img, c);
  const std::size_t g = c.grid(), ps = c.patch_size;
  for (std::size_t y = 0; y < 16; ++y) {
    for (std::size_t x = 0; x < 16; ++x) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const std::size_t patch = (y / ps) * g + x / ps;
        const std::size_t col = ((y % ps) * ps + x % ps) * 3 + ch;
        const double restored = p.at(patch, col) * c.norm_std[ch] + c.norm_mean[ch];
        EXPECT_NEAR(restored, img.data()[(y * 16 + x) * 3 + ch], 1e-15);
      }
    }
  }
  expect_close(p, oracle::patchify(img, c), 0.0);
}

TEST(Patchify, SizeMismatch) {
  EXPECT_THROW(patchify(Tensor<double>({8, 8, 3}), fixture::toy_config()), DimensionError);
  EXPECT_THROW(patchify(Tensor<double>({16, 16, 1}), fixture::toy_config()), DimensionError);
}

TEST(Embed, ZeroPatchesAndTableGiveBias) {
  const auto c = fixture::toy_config();
  auto w = fixture::toy_weights(c, 3);
  w.pos_embed = Tensor<double>(w.pos_embed.shape());
  const auto t = embed(Tensor<double>({c.num_patches(), c.patch_dim()}), w);
  for (std::size_t j = 0; j < c.embed_dim; ++j) {
    EXPECT_EQ(t.at(0, j), w.cls_token[j]);
    for (std::size_t i = 1; i < c.num_tokens(); ++i) EXPECT_EQ(t.at(i, j), w.patch_bias[j]);
  }
}

TEST(Embed, ZeroKernelGivesTablePlusBias) {
  const auto c = fixture::toy_config();
  auto w = fixture::toy_weights(c, 4);
  w.patch_weight = Tensor<double>(w.patch_weight.shape());
  const auto t = embed(patchify(fixture::random_image(16, 3, 5), c), w);
  for (std::size_t i = 1; i < c.num_tokens(); ++i) {
    for (std::size_t j = 0; j < c.embed_dim; ++j) {
      EXPECT_EQ(t.at(i, j), w.pos_embed.at(i, j) + w.patch_bias[j]);
    }
  }
}

TEST(Embed, MatchesRowwiseOracle) {
  const auto c = fixture::toy_config();
  const auto w = fixture::toy_weights(c, 6);
  const auto p = patchify(fixture::random_image(16, 3, 7), c);
  expect_close(embed(p, w), oracle::embed(oracle::to_matrix(p), w), 1e-13);
}

TEST(Mask, RatioZeroIsIdentity) {
  const auto t = fixture::random_tensor({17, 8}, 8);
  const auto [kept, mask] = apply_mask(t, 0.0, 3);
  EXPECT_TRUE(kept.identical(t));
  EXPECT_EQ(mask.kept_indices.size(), 17u);
}

TEST(Mask, HalfOfViTBKeeps99Rows) {
  const auto mask = make_mask(196, 0.5, 0);
  EXPECT_EQ(mask.kept_indices.size(), 99u);
  EXPECT_EQ(mask.kept_indices.front(), 0u);
  EXPECT_TRUE(std::is_sorted(mask.kept_indices.begin(), mask.kept_indices.end()));
  EXPECT_EQ(std::set<std::size_t>(mask.kept_indices.begin(), mask.kept_indices.end()).size(), 99u);
  EXPECT_LE(mask.kept_indices.back(), 196u);
}

TEST(Mask, DeterministicAndSeedSensitive) {
  EXPECT_EQ(make_mask(196, 0.5, 11), make_mask(196, 0.5, 11));
  EXPECT_NE(make_mask(196, 0.5, 11).kept_indices, make_mask(196, 0.5, 12).kept_indices);
}

TEST(Mask, KeepsRowsInOriginalOrder) {
  const auto t = fixture::random_tensor({17, 4}, 9);
  const auto [kept, mask] = apply_mask(t, 0.75, 5);
  ASSERT_EQ(kept.dim(0), mask.kept_indices.size());
  EXPECT_EQ(mask.kept_indices.size(), 1u + 4u);
  for (std::size_t r = 0; r < kept.dim(0); ++r) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(kept.at(r, j), t.at(mask.kept_indices[r], j));
  }
}

TEST(Mask, RatioOutOfRange) {
  EXPECT_THROW(make_mask(16, 1.0, 0), ContractError);
  EXPECT_THROW(make_mask(16, -0.1, 0), ContractError);
}

TEST(Mask, SharedAcrossImages) {
  const auto c = fixture::toy_config();
  const auto w = fixture::toy_weights(c, 10);
  const MaskSpec spec{0.5, 77};
  const auto a = extract(fixture::random_image(16, 3, 1), w, 2, FeatureKind::kToken, spec);
  const auto b = extract(fixture::random_image(16, 3, 2), w, 2, FeatureKind::kToken, spec);
  EXPECT_EQ(a.mask, b.mask);
}

TEST(Forward, ResidualIdentityWithZeroWeights) {
  const auto c = fixture::toy_config();
  const auto w = zero_weights(c);
  const auto tokens = fixture::random_tensor({c.num_tokens(), c.embed_dim}, 11);
  for (std::size_t l = 1; l <= c.num_layers; ++l) {
    EXPECT_TRUE(forward_to_layer(tokens, w, l).tokens.identical(tokens)) << "l=" << l;
  }
}

TEST(Forward, SingleTokenAttentionIsValueProjection) {
  ViTConfig c = fixture::toy_config();
  c.num_heads = 1;
  auto w = fixture::toy_weights(c, 12);
  auto& lw = w.layers[0];
  lw.fc1_weight = Tensor<double>(lw.fc1_weight.shape());
  lw.fc1_bias = Tensor<double>(lw.fc1_bias.shape());
  lw.fc2_weight = Tensor<double>(lw.fc2_weight.shape());
  lw.fc2_bias = Tensor<double>(lw.fc2_bias.shape());
  const auto t0 = fixture::random_tensor({1, c.embed_dim}, 13);
  ad::Tape<double> tape;
  const auto out = ad::forward_to_layer(tape.constant(t0), w, 1).tokens.value();
  // softmax over a single key is 1, so attention returns the value row
  const auto x = kernels::layer_norm(t0, lw.norm1_weight, lw.norm1_bias, c.ln_eps);
  const auto v = kernels::matmul(x, lw.v_weight);
  std::vector<double> vb(c.embed_dim);
  for (std::size_t j = 0; j < c.embed_dim; ++j) vb[j] = v[j] + lw.v_bias[j];
  const auto pv = kernels::matmul(Tensor<double>({1, c.embed_dim}, vb), lw.proj_weight);
  for (std::size_t j = 0; j < c.embed_dim; ++j) {
    EXPECT_NEAR(out[j], t0[j] + pv[j] + lw.proj_bias[j], 1e-14);
  }
}

TEST(Forward, MatchesPerHeadAttentionOracle) {
  const auto c = fixture::toy_config();
  const auto w = fixture::toy_weights(c, 14);
  // Larger weights than the default 0.02 make attention non-uniform, so the
  // comparison exercises the softmax for real.
  WeightBundle<double> strong = w;
  for_each_tensor<double>(strong, [](const std::string& name, Tensor<double>& t) {
    if (name.find("attn.q") != std::string::npos || name.find("attn.k") != std::string::npos) {
      for (double& v : t.mutable_data()) v *= 50.0;
    }
  });
  const auto tokens = fixture::random_tensor({c.num_tokens(), c.embed_dim}, 15);
  for (const WeightBundle<double>* bundle : std::vector<const WeightBundle<double>*>{&w, &strong}) {
    for (std::size_t l = 1; l <= c.num_layers; ++l) {
      const auto got = forward_to_layer(tokens, *bundle, l);
      const auto want = oracle::forward(oracle::to_matrix(tokens), *bundle, l);
      expect_close(got.tokens, want.tokens, 1e-10);
      expect_close(got.queries, want.queries, 1e-10);
      expect_close(got.keys, want.keys, 1e-10);
      expect_close(got.values, want.values, 1e-10);
      EXPECT_EQ(got.layer, l);
    }
  }
}

TEST(Forward, FinalNormTapOnlyAtLastLayer) {
  const auto c = fixture::toy_config();
  const auto w = fixture::toy_weights(c, 16);
  const auto tokens = fixture::random_tensor({c.num_tokens(), c.embed_dim}, 17);
  const ForwardOptions after{true};
  expect_close(forward_to_layer(tokens, w, c.num_layers, after).tokens,
               oracle::forward(oracle::to_matrix(tokens), w, c.num_layers, true).tokens, 1e-10);
  EXPECT_FALSE(forward_to_layer(tokens, w, c.num_layers, after)
                   .tokens.identical(forward_to_layer(tokens, w, c.num_layers).tokens));
  EXPECT_TRUE(forward_to_layer(tokens, w, 2, after).tokens.identical(
      forward_to_layer(tokens, w, 2).tokens));
}

TEST(Forward, LayerOutOfRange) {
  const auto c = fixture::toy_config();
  const auto w = fixture::toy_weights(c, 18);
  const auto tokens = fixture::random_tensor({c.num_tokens(), c.embed_dim}, 19);
  EXPECT_THROW(forward_to_layer(tokens, w, 0), ContractError);
  EXPECT_THROW(forward_to_layer(tokens, w, c.num_layers + 1), ContractError);
}

TEST(Forward, RowCountsAgreeUnderMask) {
  const auto c = fixture::toy_config();
  const auto w = fixture::toy_weights(c, 20);
  const auto img = fixture::random_image(16, 3, 21);
  ad::Tape<double> tape;
  const auto f = ad::encode(tape.constant(img), w, 2, MaskSpec{0.5, 4});
  const std::size_t rows = f.mask.kept_indices.size();
  EXPECT_EQ(rows, 9u);
  for (auto kind : {FeatureKind::kToken, FeatureKind::kQuery, FeatureKind::kKey, FeatureKind::kValue}) {
    EXPECT_EQ(f.select(kind).shape(), (Shape{rows, c.embed_dim}));
  }
}

TEST(Extract, TokenAtLastLayerIsFullOutput) {
  const auto c = fixture::toy_config();
  const auto w = fixture::toy_weights(c, 22);
  const auto img = fixture::random_image(16, 3, 23);
  const auto e = extract(img, w, c.num_layers);
  const auto tokens = embed(patchify(img, c), w);
  EXPECT_TRUE(e.features.identical(forward_to_layer(tokens, w, c.num_layers).tokens));
  EXPECT_EQ(e.mask.kept_indices.size(), c.num_tokens());
}

TEST(Extract, ValueMatchesForwardMember) {
  const auto c = fixture::toy_config();
  const auto w = fixture::toy_weights(c, 24);
  const auto img = fixture::random_image(16, 3, 25);
  const auto tokens = embed(patchify(img, c), w);
  EXPECT_TRUE(extract(img, w, 2, FeatureKind::kValue)
                  .features.identical(forward_to_layer(tokens, w, 2).values));
}

TEST(Extract, EveryKindMatchesComposedOracle) {
  const auto c = fixture::toy_config();
  const auto w = fixture::toy_weights(c, 26);
  const auto img = fixture::random_image(16, 3, 27);
  const MaskSpec spec{0.5, 9};
  const auto mask = make_mask(c.num_patches(), spec.ratio, spec.seed);
  oracle::Matrix tokens = oracle::embed(oracle::patchify(img, c), w);
  oracle::Matrix kept;
  for (std::size_t i : mask.kept_indices) kept.push_back(tokens[i]);
  const auto want = oracle::forward(kept, w, 3);
  expect_close(extract(img, w, 3, FeatureKind::kToken, spec).features, want.tokens, 1e-10);
  expect_close(extract(img, w, 3, FeatureKind::kQuery, spec).features, want.queries, 1e-10);
  expect_close(extract(img, w, 3, FeatureKind::kKey, spec).features, want.keys, 1e-10);
  expect_close(extract(img, w, 3, FeatureKind::kValue, spec).features, want.values, 1e-10);
}

TEST(Extract, Float32TracksFloat64) {
  const auto c = fixture::toy_config();
  const auto w = fixture::toy_weights(c, 28);
  const auto img = fixture::random_image(16, 3, 29);
  const auto d = extract(img, w, 3).features;
  const auto f = extract(img.cast<float>(), w.cast<float>(), 3).features;
  for (std::size_t i = 0; i < d.numel(); ++i) EXPECT_NEAR(f[i], d[i], 1e-4);
}
