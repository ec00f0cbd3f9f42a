#include "vitloss/similarity.hpp"

#include <cmath>
#include <string>

namespace vitloss {

template <Real T>
std::vector<double> cosine_to_query(const Tensor<T>& features, std::size_t query_index) {
  require_rank(features, 2, "cosine_to_query");
  const std::size_t rows = features.dim(0), d = features.dim(1);
  if (query_index < 1 || query_index >= rows) {
    throw ContractError("query index " + std::to_string(query_index) + " outside [1, " +
                        std::to_string(rows - 1) + "]");
  }
  const auto f = features.data();
  auto norm = [&](std::size_t r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double v = f[r * d + j];
      acc += v * v;
    }
    return std::sqrt(acc);
  };
  const double qn = norm(query_index);
  std::vector<double> out(rows - 1);
  for (std::size_t r = 1; r < rows; ++r) {
    const double rn = norm(r);
    if (qn == 0.0 || rn == 0.0) {
      out[r - 1] = 0.0;
      continue;
    }
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dot += static_cast<double>(f[query_index * d + j]) * static_cast<double>(f[r * d + j]);
    }
    out[r - 1] = dot / (qn * rn);
  }
  return out;
}

template <Real T>
SimilarityMap similarity_map(const Tensor<T>& image, const WeightBundle<T>& weights,
                             std::size_t layer, FeatureKind feature, std::size_t query_index,
                             const ForwardOptions& options) {
  const std::size_t n = weights.config.num_patches();
  if (query_index < 1 || query_index > n) {
    throw ContractError("query index " + std::to_string(query_index) + " outside patch range [1, " +
                        std::to_string(n) + "]");
  }
  // Heatmaps need every patch, so masking is off.
  const Extracted<T> ex = extract(image, weights, layer, feature, MaskSpec{0.0, 0}, options);
  SimilarityMap map;
  map.values = cosine_to_query(ex.features, query_index);
  map.grid = weights.config.grid();
  map.query_index = query_index;
  map.layer = layer;
  map.feature = feature;
  return map;
}

HeatmapDelta heatmap_delta(const SimilarityMap& a, const SimilarityMap& b) {
  if (a.grid != b.grid || a.query_index != b.query_index || a.layer != b.layer ||
      a.feature != b.feature || a.values.size() != b.values.size()) {
    throw ContractError("heatmap_delta: maps differ in grid, query, layer or feature kind");
  }
  HeatmapDelta out;
  out.grid = a.grid;
  out.values.resize(a.values.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    out.values[i] = std::abs(a.values[i] - b.values[i]);
    acc += out.values[i];
  }
  out.mean = out.values.empty() ? 0.0 : acc / static_cast<double>(out.values.size());
  return out;
}

template std::vector<double> cosine_to_query(const Tensor<float>&, std::size_t);
template std::vector<double> cosine_to_query(const Tensor<double>&, std::size_t);
template SimilarityMap similarity_map(const Tensor<float>&, const WeightBundle<float>&, std::size_t,
                                      FeatureKind, std::size_t, const ForwardOptions&);
template SimilarityMap similarity_map(const Tensor<double>&, const WeightBundle<double>&,
                                      std::size_t, FeatureKind, std::size_t, const ForwardOptions&);

}  // namespace vitloss
