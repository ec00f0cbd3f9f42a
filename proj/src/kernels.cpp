#include "vitloss/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace vitloss::kernels {

namespace {

template <Real T>
void require_matrix(const Tensor<T>& t, const char* what) {
  require_rank(t, 2, what);
}

[[noreturn]] void inner_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": inner dimensions disagree for " + shape_str(a) +
                       " and " + shape_str(b));
}

}  // namespace

template <Real T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul lhs");
  require_matrix(b, "matmul rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  if (b.dim(0) != k) inner_mismatch("matmul", a.shape(), b.shape());

  std::vector<T> c(m * p, T{0});
  const T* A = a.data().data();
  const T* B = b.data().data();
  // Each c[i, j] accumulates over s in ascending order; blocking over four
  // rows only changes which rows share a load of B's row s.
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    T* c0 = &c[(i + 0) * p];
    T* c1 = &c[(i + 1) * p];
    T* c2 = &c[(i + 2) * p];
    T* c3 = &c[(i + 3) * p];
    for (std::size_t s = 0; s < k; ++s) {
      const T a0 = A[(i + 0) * k + s];
      const T a1 = A[(i + 1) * k + s];
      const T a2 = A[(i + 2) * k + s];
      const T a3 = A[(i + 3) * k + s];
      const T* brow = B + s * p;
      for (std::size_t j = 0; j < p; ++j) {
        const T bv = brow[j];
        c0[j] += a0 * bv;
        c1[j] += a1 * bv;
        c2[j] += a2 * bv;
        c3[j] += a3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    T* crow = &c[i * p];
    for (std::size_t s = 0; s < k; ++s) {
      const T av = A[i * k + s];
      const T* brow = B + s * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
  return Tensor<T>({m, p}, std::move(c));
}

template <Real T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_nt lhs");
  require_matrix(b, "matmul_nt rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(0);
  if (b.dim(1) != k) inner_mismatch("matmul_nt", a.shape(), b.shape());

  std::vector<T> c(m * p);
  const T* A = a.data().data();
  const T* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = A + i * k;
    for (std::size_t j = 0; j < p; ++j) {
      const T* brow = B + j * k;
      T acc{0};
      for (std::size_t s = 0; s < k; ++s) acc += arow[s] * brow[s];
      c[i * p + j] = acc;
    }
  }
  return Tensor<T>({m, p}, std::move(c));
}

template <Real T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_tn lhs");
  require_matrix(b, "matmul_tn rhs");
  const std::size_t k = a.dim(0), m = a.dim(1), p = b.dim(1);
  if (b.dim(0) != k) inner_mismatch("matmul_tn", a.shape(), b.shape());

  std::vector<T> c(m * p, T{0});
  const T* A = a.data().data();
  const T* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = &c[i * p];
    for (std::size_t s = 0; s < k; ++s) {
      const T av = A[s * m + i];
      const T* brow = B + s * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
  return Tensor<T>({m, p}, std::move(c));
}

template <Real T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_matrix(a, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> out(r * c);
  const auto in = a.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  }
  return Tensor<T>({c, r}, std::move(out));
}

template <Real T>
LayerNormState<T> layer_norm_state(const Tensor<T>& x, const Tensor<T>& gamma,
                                   const Tensor<T>& beta, T eps) {
  require_matrix(x, "layer_norm input");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " +
                         shape_str(beta.shape()) + " do not match rows of " +
                         shape_str(x.shape()));
  }
  if (!(eps > T{0})) throw ContractError("layer_norm: eps must be positive");

  std::vector<T> out(n * d), normalized(n * d), rstd(n);
  const auto in = x.data();
  const auto g = gamma.data();
  const auto b = beta.data();
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = in.data() + r * d;
    T mean{0};
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) {
      const T c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T inv = T{1} / std::sqrt(var + eps);
    rstd[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const T xhat = (row[j] - mean) * inv;
      normalized[r * d + j] = xhat;
      out[r * d + j] = xhat * g[j] + b[j];
    }
  }
  return {Tensor<T>(x.shape(), std::move(out)), Tensor<T>(x.shape(), std::move(normalized)),
          std::move(rstd)};
}

template <Real T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  return layer_norm_state(x, gamma, beta, eps).out;
}

template <Real T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  require_matrix(x, "softmax_rows");
  x.check_finite("softmax_rows input");
  const std::size_t n = x.dim(0), m = x.dim(1);
  std::vector<T> out(n * m);
  const auto in = x.data();
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = in.data() + r * m;
    T* o = out.data() + r * m;
    const T mx = *std::max_element(row, row + m);
    T sum{0};
    for (std::size_t j = 0; j < m; ++j) {
      o[j] = std::exp(row[j] - mx);
      sum += o[j];
    }
    for (std::size_t j = 0; j < m; ++j) o[j] /= sum;
  }
  return Tensor<T>(x.shape(), std::move(out));
}

namespace {
template <Real T>
constexpr T kGeluScale = static_cast<T>(0.7978845608028654);  // sqrt(2 / pi)
template <Real T>
constexpr T kGeluCubic = static_cast<T>(0.044715);
}  // namespace

template <Real T>
T gelu(T x) {
  const T inner = kGeluScale<T> * (x + kGeluCubic<T> * x * x * x);
  return T{0.5} * x * (T{1} + std::tanh(inner));
}

template <Real T>
T gelu_derivative(T x) {
  const T inner = kGeluScale<T> * (x + kGeluCubic<T> * x * x * x);
  const T t = std::tanh(inner);
  const T dinner = kGeluScale<T> * (T{1} + T{3} * kGeluCubic<T> * x * x);
  return T{0.5} * (T{1} + t) + T{0.5} * x * (T{1} - t * t) * dinner;
}

template <Real T>
SortResult<T> sort_with_permutation(const Tensor<T>& v) {
  const auto in = v.data();
  std::vector<std::size_t> perm(in.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::stable_sort(perm.begin(), perm.end(),
                   [&](std::size_t a, std::size_t b) { return in[a] < in[b]; });
  std::vector<T> sorted(in.size());
  for (std::size_t s = 0; s < perm.size(); ++s) sorted[s] = in[perm[s]];
  return {Tensor<T>(v.shape(), std::move(sorted)), std::move(perm)};
}

template <Real T>
SortResult<T> sort_rows(const Tensor<T>& m) {
  require_matrix(m, "sort_rows");
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  const auto in = m.data();
  std::vector<std::size_t> perm(rows * cols);
  std::vector<T> sorted(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * cols;
    auto first = perm.begin() + static_cast<std::ptrdiff_t>(r * cols);
    auto last = first + static_cast<std::ptrdiff_t>(cols);
    std::iota(first, last, std::size_t{0});
    std::stable_sort(first, last, [&](std::size_t a, std::size_t b) { return row[a] < row[b]; });
    for (std::size_t s = 0; s < cols; ++s) sorted[r * cols + s] = row[perm[r * cols + s]];
  }
  return {Tensor<T>(m.shape(), std::move(sorted)), std::move(perm)};
}

#define VITLOSS_INSTANTIATE(T)                                                                \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> matmul_tn(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> transpose(const Tensor<T>&);                                             \
  template LayerNormState<T> layer_norm_state(const Tensor<T>&, const Tensor<T>&,             \
                                              const Tensor<T>&, T);                           \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);     \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                          \
  template T gelu(T);                                                                         \
  template T gelu_derivative(T);                                                              \
  template SortResult<T> sort_with_permutation(const Tensor<T>&);                             \
  template SortResult<T> sort_rows(const Tensor<T>&);

VITLOSS_INSTANTIATE(float)
VITLOSS_INSTANTIATE(double)

#undef VITLOSS_INSTANTIATE

}  // namespace vitloss::kernels
