#pragma once

#include <cstddef>
#include <vector>

#include "vitloss/tensor.hpp"

// Dense kernels shared by the tape and the plain (non-differentiated) API.
// All reductions accumulate left to right in index order, so results are
// bitwise reproducible.
namespace vitloss::kernels {

/// c = a * b for a[m x k], b[k x p].
template <Real T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// c = a * b^T for a[m x k], b[p x k].
template <Real T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

/// c = a^T * b for a[k x m], b[k x p].
template <Real T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b);

template <Real T>
Tensor<T> transpose(const Tensor<T>& a);

template <Real T>
struct LayerNormState {
  Tensor<T> out;
  Tensor<T> normalized;  // (x - mean) * rstd, before the affine rescale
  std::vector<T> rstd;   // one per row
};

template <Real T>
LayerNormState<T> layer_norm_state(const Tensor<T>& x, const Tensor<T>& gamma,
                                   const Tensor<T>& beta, T eps);

/// Row-wise normalization to mean 0 / variance 1 followed by gamma, beta.
template <Real T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

/// Row-wise softmax with max subtraction.
template <Real T>
Tensor<T> softmax_rows(const Tensor<T>& x);

/// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <Real T>
T gelu(T x);

/// Exact derivative of the tanh-approximated GELU.
template <Real T>
T gelu_derivative(T x);

template <Real T>
struct SortResult {
  Tensor<T> sorted;
  /// perm[s] is the original index of the element at sorted position s.
  std::vector<std::size_t> perm;
};

/// Stable ascending sort of a vector (any rank, treated as flat).
template <Real T>
SortResult<T> sort_with_permutation(const Tensor<T>& v);

/// Stable ascending sort of every row of a matrix. perm is row-major, one
/// permutation of [0, cols) per row.
template <Real T>
SortResult<T> sort_rows(const Tensor<T>& m);

}  // namespace vitloss::kernels
