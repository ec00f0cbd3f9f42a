#pragma once

#include <cstddef>
#include <vector>

#include "vitloss/tensor.hpp"
#include "vitloss/vit.hpp"

namespace vitloss {

/// Cosine similarity of one patch token against every patch token, laid out
/// on the patch grid (row-major). CLS has no grid cell and is left out.
struct SimilarityMap {
  std::vector<double> values;
  std::size_t grid = 0;
  std::size_t query_index = 0;  // token index in [1, n]; cell query_index - 1
  std::size_t layer = 0;
  FeatureKind feature = FeatureKind::kToken;
};

struct HeatmapDelta {
  std::vector<double> values;  // |a - b| per cell
  double mean = 0.0;
  std::size_t grid = 0;
};

/// Cosine similarities from a full (n+1) x d feature matrix. Rows with zero
/// norm get similarity 0.
template <Real T>
std::vector<double> cosine_to_query(const Tensor<T>& features, std::size_t query_index);

template <Real T>
SimilarityMap similarity_map(const Tensor<T>& image, const WeightBundle<T>& weights,
                             std::size_t layer, FeatureKind feature, std::size_t query_index,
                             const ForwardOptions& options = {});

HeatmapDelta heatmap_delta(const SimilarityMap& a, const SimilarityMap& b);

}  // namespace vitloss
