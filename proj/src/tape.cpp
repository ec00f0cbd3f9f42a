#include "vitloss/tape.hpp"

#include <cmath>
#include <string>

#include "vitloss/kernels.hpp"

namespace vitloss::ad {

// ---- Tape -----------------------------------------------------------------

template <Real T>
Var<T> Tape<T>::add_leaf(Tensor<T> value, bool differentiable) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = differentiable;
  node.is_input = differentiable;
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <Real T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  return add_leaf(std::move(value), false);
}

template <Real T>
Var<T> Tape<T>::input(Tensor<T> value) {
  return add_leaf(std::move(value), true);
}

template <Real T>
Tensor<T> Tape<T>::run_forward(Node& node) {
  std::vector<const Tensor<T>*> in;
  in.reserve(node.inputs.size());
  for (std::size_t id : node.inputs) in.push_back(&nodes_[id].value);
  Tensor<T> out = node.op->forward(in);
  out.check_finite(std::string("output of ") + node.op->name());
  return out;
}

template <Real T>
Var<T> Tape<T>::record(std::unique_ptr<Op<T>> op, std::vector<Var<T>> inputs) {
  Node node;
  node.op = std::move(op);
  for (const Var<T>& v : inputs) {
    if (&v.tape() != this) throw ContractError("operand recorded on a different tape");
    node.inputs.push_back(v.id());
    node.requires_grad = node.requires_grad || nodes_[v.id()].requires_grad;
  }
  node.value = run_forward(node);
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <Real T>
void Tape<T>::set_leaf(Var<T> leaf, Tensor<T> value) {
  Node& node = nodes_.at(leaf.id());
  if (node.op) throw ContractError("set_leaf on a non-leaf node");
  require_same_shape(node.value, value, "set_leaf");
  node.value = std::move(value);
}

template <Real T>
void Tape<T>::replay() {
  for (Node& node : nodes_) {
    if (node.op) node.value = run_forward(node);
  }
}

template <Real T>
std::vector<Tensor<T>> Tape<T>::backward(Var<T> loss) {
  const Node& root = nodes_.at(loss.id());
  if (root.value.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " +
                        shape_str(root.value.shape()));
  }
  grads_.assign(nodes_.size(), Tensor<T>());
  sweep_.clear();
  if (root.requires_grad) grads_[loss.id()] = Tensor<T>::full(root.value.shape(), T{1});

  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || grads_[i].empty()) continue;
    sweep_.push_back(i);
    if (!node.op) continue;
    std::vector<const Tensor<T>*> in;
    std::vector<Tensor<T>*> gin;
    for (std::size_t id : node.inputs) {
      in.push_back(&nodes_[id].value);
      if (nodes_[id].requires_grad) {
        if (grads_[id].empty()) grads_[id] = Tensor<T>(nodes_[id].value.shape());
        gin.push_back(&grads_[id]);
      } else {
        gin.push_back(nullptr);
      }
    }
    node.op->backward(in, node.value, grads_[i], gin);
  }

  std::vector<Tensor<T>> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].is_input) out.push_back(grad(Var<T>(this, i)));
  }
  return out;
}

template <Real T>
Tensor<T> Tape<T>::grad(Var<T> v) const {
  if (v.id() < grads_.size() && !grads_[v.id()].empty()) return grads_[v.id()];
  return Tensor<T>(nodes_.at(v.id()).value.shape());
}

template <Real T>
std::string Tape<T>::op_name(std::size_t id) const {
  const Node& node = nodes_.at(id);
  return node.op ? node.op->name() : (node.is_input ? "input" : "constant");
}

// ---- operations -----------------------------------------------------------

namespace {

template <Real T>
using In = std::span<const Tensor<T>* const>;
template <Real T>
using GradIn = std::span<Tensor<T>* const>;

template <Real T>
void accumulate(Tensor<T>* dst, const Tensor<T>& src) {
  if (!dst) return;
  auto d = dst->mutable_data();
  const auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

template <Real T>
Var<T> emit(std::unique_ptr<Op<T>> op, std::vector<Var<T>> inputs) {
  Tape<T>& tape = inputs.front().tape();
  return tape.record(std::move(op), std::move(inputs));
}

template <Real T>
class MatMulOp final : public Op<T> {
 public:
  const char* name() const override { return "matmul"; }
  Tensor<T> forward(In<T> in) override { return kernels::matmul(*in[0], *in[1]); }
  void backward(In<T> in, const Tensor<T>&, const Tensor<T>& g, GradIn<T> gin) const override {
    if (gin[0]) accumulate(gin[0], kernels::matmul_nt(g, *in[1]));
    if (gin[1]) accumulate(gin[1], kernels::matmul_tn(*in[0], g));
  }
};

template <Real T>
class MatMulNTOp final : public Op<T> {
 public:
  const char* name() const override { return "matmul_nt"; }
  Tensor<T> forward(In<T> in) override { return kernels::matmul_nt(*in[0], *in[1]); }
  void backward(In<T> in, const Tensor<T>&, const Tensor<T>& g, GradIn<T> gin) const override {
    // c = a b^T: dA = g b, dB = g^T a
    if (gin[0]) accumulate(gin[0], kernels::matmul(g, *in[1]));
    if (gin[1]) accumulate(gin[1], kernels::matmul_tn(g, *in[0]));
  }
};

template <Real T>
class AddOp final : public Op<T> {
 public:
  explicit AddOp(T sign) : sign_(sign) {}
  const char* name() const override { return sign_ > 0 ? "add" : "sub"; }
  Tensor<T> forward(In<T> in) override {
    require_same_shape(*in[0], *in[1], name());
    Tensor<T> out = *in[0];
    auto o = out.mutable_data();
    const auto b = in[1]->data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = sign_ > 0 ? o[i] + b[i] : o[i] - b[i];
    return out;
  }
  void backward(In<T>, const Tensor<T>&, const Tensor<T>& g, GradIn<T> gin) const override {
    accumulate(gin[0], g);
    if (gin[1]) {
      auto d = gin[1]->mutable_data();
      const auto s = g.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += sign_ * s[i];
    }
  }

 private:
  T sign_;
};

template <Real T>
class AddRowOp final : public Op<T> {
 public:
  const char* name() const override { return "add_row"; }
  Tensor<T> forward(In<T> in) override {
    require_rank(*in[0], 2, "add_row matrix");
    const std::size_t rows = in[0]->dim(0), cols = in[0]->dim(1);
    if (in[1]->numel() != cols) {
      throw DimensionError("add_row: row vector " + shape_str(in[1]->shape()) +
                           " does not match matrix " + shape_str(in[0]->shape()));
    }
    Tensor<T> out = *in[0];
    auto o = out.mutable_data();
    const auto b = in[1]->data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) o[r * cols + c] += b[c];
    }
    return out;
  }
  void backward(In<T>, const Tensor<T>&, const Tensor<T>& g, GradIn<T> gin) const override {
    accumulate(gin[0], g);
    if (gin[1]) {
      const std::size_t rows = g.dim(0), cols = g.dim(1);
      auto d = gin[1]->mutable_data();
      const auto s = g.data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) d[c] += s[r * cols + c];
      }
    }
  }
};

/// Elementwise unary op described by a value function and its derivative.
template <Real T, typename F, typename DF>
class UnaryOp final : public Op<T> {
 public:
  UnaryOp(const char* name, F f, DF df) : name_(name), f_(f), df_(df) {}
  const char* name() const override { return name_; }
  Tensor<T> forward(In<T> in) override {
    Tensor<T> out = *in[0];
    for (T& v : out.mutable_data()) v = f_(v);
    return out;
  }
  void backward(In<T> in, const Tensor<T>& out, const Tensor<T>& g, GradIn<T> gin) const override {
    if (!gin[0]) return;
    auto d = gin[0]->mutable_data();
    const auto x = in[0]->data();
    const auto y = out.data();
    const auto s = g.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i] * df_(x[i], y[i]);
  }

 private:
  const char* name_;
  F f_;
  DF df_;
};

template <Real T, typename F, typename DF>
Var<T> unary(Var<T> x, const char* name, F f, DF df) {
  return emit<T>(std::make_unique<UnaryOp<T, F, DF>>(name, f, df), {x});
}

template <Real T>
class LayerNormOp final : public Op<T> {
 public:
  explicit LayerNormOp(T eps) : eps_(eps) {}
  const char* name() const override { return "layer_norm"; }
  Tensor<T> forward(In<T> in) override {
    auto state = kernels::layer_norm_state(*in[0], *in[1], *in[2], eps_);
    normalized_ = state.normalized;
    rstd_ = std::move(state.rstd);
    return state.out;
  }
  void backward(In<T> in, const Tensor<T>&, const Tensor<T>& g, GradIn<T> gin) const override {
    const std::size_t n = g.dim(0), d = g.dim(1);
    const auto gs = g.data();
    const auto xhat = normalized_.data();
    const auto gamma = in[1]->data();
    if (gin[0]) {
      auto dx = gin[0]->mutable_data();
      std::vector<T> gg(d);
      for (std::size_t r = 0; r < n; ++r) {
        T mean_gg{0}, mean_ggx{0};
        for (std::size_t j = 0; j < d; ++j) {
          gg[j] = gs[r * d + j] * gamma[j];
          mean_gg += gg[j];
          mean_ggx += gg[j] * xhat[r * d + j];
        }
        mean_gg /= static_cast<T>(d);
        mean_ggx /= static_cast<T>(d);
        for (std::size_t j = 0; j < d; ++j) {
          dx[r * d + j] += rstd_[r] * (gg[j] - mean_gg - xhat[r * d + j] * mean_ggx);
        }
      }
    }
    if (gin[1]) {
      auto dg = gin[1]->mutable_data();
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < d; ++j) dg[j] += gs[r * d + j] * xhat[r * d + j];
      }
    }
    if (gin[2]) {
      auto db = gin[2]->mutable_data();
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < d; ++j) db[j] += gs[r * d + j];
      }
    }
  }

 private:
  T eps_;
  Tensor<T> normalized_;
  std::vector<T> rstd_;
};

template <Real T>
class SoftmaxOp final : public Op<T> {
 public:
  const char* name() const override { return "softmax_rows"; }
  Tensor<T> forward(In<T> in) override { return kernels::softmax_rows(*in[0]); }
  void backward(In<T>, const Tensor<T>& y, const Tensor<T>& g, GradIn<T> gin) const override {
    if (!gin[0]) return;
    const std::size_t n = y.dim(0), m = y.dim(1);
    auto dx = gin[0]->mutable_data();
    const auto ys = y.data();
    const auto gs = g.data();
    for (std::size_t r = 0; r < n; ++r) {
      T dot{0};
      for (std::size_t j = 0; j < m; ++j) dot += gs[r * m + j] * ys[r * m + j];
      for (std::size_t j = 0; j < m; ++j) {
        dx[r * m + j] += ys[r * m + j] * (gs[r * m + j] - dot);
      }
    }
  }
};

template <Real T>
class ReduceOp final : public Op<T> {
 public:
  enum class Kind { kSum, kMean, kRowSums };
  explicit ReduceOp(Kind kind) : kind_(kind) {}
  const char* name() const override {
    switch (kind_) {
      case Kind::kSum: return "sum";
      case Kind::kMean: return "mean";
      default: return "row_sums";
    }
  }
  Tensor<T> forward(In<T> in) override {
    const auto x = in[0]->data();
    if (kind_ == Kind::kRowSums) {
      require_rank(*in[0], 2, "row_sums");
      const std::size_t rows = in[0]->dim(0), cols = in[0]->dim(1);
      std::vector<T> out(rows, T{0});
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out[r] += x[r * cols + c];
      }
      return Tensor<T>({rows}, std::move(out));
    }
    T acc{0};
    for (T v : x) acc += v;
    if (kind_ == Kind::kMean) acc /= static_cast<T>(x.size());
    return Tensor<T>::scalar(acc);
  }
  void backward(In<T> in, const Tensor<T>&, const Tensor<T>& g, GradIn<T> gin) const override {
    if (!gin[0]) return;
    auto d = gin[0]->mutable_data();
    if (kind_ == Kind::kRowSums) {
      const std::size_t cols = in[0]->dim(1);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i / cols];
      return;
    }
    T s = g.item();
    if (kind_ == Kind::kMean) s /= static_cast<T>(d.size());
    for (T& v : d) v += s;
  }

 private:
  Kind kind_;
};

template <Real T>
class SortRowsOp final : public Op<T> {
 public:
  const char* name() const override { return "sort_rows"; }
  Tensor<T> forward(In<T> in) override {
    auto result = kernels::sort_rows(*in[0]);
    perm_ = std::move(result.perm);
    return result.sorted;
  }
  void backward(In<T> in, const Tensor<T>&, const Tensor<T>& g, GradIn<T> gin) const override {
    if (!gin[0]) return;
    const std::size_t rows = in[0]->dim(0), cols = in[0]->dim(1);
    auto d = gin[0]->mutable_data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t s = 0; s < cols; ++s) d[r * cols + perm_[r * cols + s]] += g[r * cols + s];
    }
  }

 private:
  std::vector<std::size_t> perm_;
};

template <Real T>
class SliceColsOp final : public Op<T> {
 public:
  SliceColsOp(std::size_t start, std::size_t width) : start_(start), width_(width) {}
  const char* name() const override { return "slice_cols"; }
  Tensor<T> forward(In<T> in) override {
    require_rank(*in[0], 2, "slice_cols");
    const std::size_t rows = in[0]->dim(0), cols = in[0]->dim(1);
    if (width_ == 0 || start_ + width_ > cols) {
      throw DimensionError("slice_cols: columns [" + std::to_string(start_) + ", " +
                           std::to_string(start_ + width_) + ") out of " +
                           shape_str(in[0]->shape()));
    }
    std::vector<T> out(rows * width_);
    const auto x = in[0]->data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < width_; ++c) out[r * width_ + c] = x[r * cols + start_ + c];
    }
    return Tensor<T>({rows, width_}, std::move(out));
  }
  void backward(In<T> in, const Tensor<T>&, const Tensor<T>& g, GradIn<T> gin) const override {
    if (!gin[0]) return;
    const std::size_t rows = in[0]->dim(0), cols = in[0]->dim(1);
    auto d = gin[0]->mutable_data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < width_; ++c) d[r * cols + start_ + c] += g[r * width_ + c];
    }
  }

 private:
  std::size_t start_, width_;
};

template <Real T>
class ConcatOp final : public Op<T> {
 public:
  explicit ConcatOp(bool by_rows) : by_rows_(by_rows) {}
  const char* name() const override { return by_rows_ ? "concat_rows" : "concat_cols"; }
  Tensor<T> forward(In<T> in) override {
    std::size_t rows = 0, cols = 0;
    for (const Tensor<T>* t : in) require_rank(*t, 2, name());
    if (by_rows_) {
      cols = in[0]->dim(1);
      for (const Tensor<T>* t : in) {
        if (t->dim(1) != cols) {
          throw DimensionError("concat_rows: column mismatch " + shape_str(in[0]->shape()) +
                               " vs " + shape_str(t->shape()));
        }
        rows += t->dim(0);
      }
      std::vector<T> out;
      out.reserve(rows * cols);
      for (const Tensor<T>* t : in) out.insert(out.end(), t->data().begin(), t->data().end());
      return Tensor<T>({rows, cols}, std::move(out));
    }
    rows = in[0]->dim(0);
    for (const Tensor<T>* t : in) {
      if (t->dim(0) != rows) {
        throw DimensionError("concat_cols: row mismatch " + shape_str(in[0]->shape()) + " vs " +
                             shape_str(t->shape()));
      }
      cols += t->dim(1);
    }
    std::vector<T> out(rows * cols);
    std::size_t offset = 0;
    for (const Tensor<T>* t : in) {
      const std::size_t w = t->dim(1);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < w; ++c) out[r * cols + offset + c] = t->at(r, c);
      }
      offset += w;
    }
    return Tensor<T>({rows, cols}, std::move(out));
  }
  void backward(In<T> in, const Tensor<T>& out, const Tensor<T>& g, GradIn<T> gin) const override {
    const std::size_t cols = out.dim(1);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < in.size(); ++k) {
      const std::size_t r_k = in[k]->dim(0), c_k = in[k]->dim(1);
      if (gin[k]) {
        auto d = gin[k]->mutable_data();
        for (std::size_t r = 0; r < r_k; ++r) {
          for (std::size_t c = 0; c < c_k; ++c) {
            d[r * c_k + c] += by_rows_ ? g[(offset + r) * cols + c] : g[r * cols + offset + c];
          }
        }
      }
      offset += by_rows_ ? r_k : c_k;
    }
  }

 private:
  bool by_rows_;
};

template <Real T>
class GatherRowsOp final : public Op<T> {
 public:
  explicit GatherRowsOp(std::vector<std::size_t> rows) : rows_(std::move(rows)) {}
  const char* name() const override { return "gather_rows"; }
  Tensor<T> forward(In<T> in) override {
    require_rank(*in[0], 2, "gather_rows");
    const std::size_t n = in[0]->dim(0), cols = in[0]->dim(1);
    if (rows_.empty()) throw DimensionError("gather_rows: empty row selection");
    std::vector<T> out(rows_.size() * cols);
    const auto x = in[0]->data();
    for (std::size_t k = 0; k < rows_.size(); ++k) {
      if (rows_[k] >= n) {
        throw DimensionError("gather_rows: row " + std::to_string(rows_[k]) + " out of " +
                             shape_str(in[0]->shape()));
      }
      std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(rows_[k] * cols), cols,
                  out.begin() + static_cast<std::ptrdiff_t>(k * cols));
    }
    return Tensor<T>({rows_.size(), cols}, std::move(out));
  }
  void backward(In<T> in, const Tensor<T>&, const Tensor<T>& g, GradIn<T> gin) const override {
    if (!gin[0]) return;
    const std::size_t cols = in[0]->dim(1);
    auto d = gin[0]->mutable_data();
    for (std::size_t k = 0; k < rows_.size(); ++k) {
      for (std::size_t c = 0; c < cols; ++c) d[rows_[k] * cols + c] += g[k * cols + c];
    }
  }

 private:
  std::vector<std::size_t> rows_;
};

template <Real T>
class ReshapeOp final : public Op<T> {
 public:
  explicit ReshapeOp(Shape shape) : shape_(std::move(shape)) {}
  const char* name() const override { return "reshape"; }
  Tensor<T> forward(In<T> in) override { return in[0]->reshaped(shape_); }
  void backward(In<T>, const Tensor<T>&, const Tensor<T>& g, GradIn<T> gin) const override {
    accumulate(gin[0], g);
  }

 private:
  Shape shape_;
};

template <Real T>
T sign(T x) {
  return x > T{0} ? T{1} : (x < T{0} ? T{-1} : T{0});
}

}  // namespace

template <Real T>
Var<T> matmul(Var<T> a, Var<T> b) {
  return emit<T>(std::make_unique<MatMulOp<T>>(), {a, b});
}

template <Real T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  return emit<T>(std::make_unique<MatMulNTOp<T>>(), {a, b});
}

template <Real T>
Var<T> add(Var<T> a, Var<T> b) {
  return emit<T>(std::make_unique<AddOp<T>>(T{1}), {a, b});
}

template <Real T>
Var<T> sub(Var<T> a, Var<T> b) {
  return emit<T>(std::make_unique<AddOp<T>>(T{-1}), {a, b});
}

template <Real T>
Var<T> add_row(Var<T> m, Var<T> row) {
  return emit<T>(std::make_unique<AddRowOp<T>>(), {m, row});
}

template <Real T>
Var<T> scale(Var<T> x, T factor) {
  return unary(
      x, "scale", [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <Real T>
Var<T> add_scalar(Var<T> x, T c) {
  return unary(
      x, "add_scalar", [c](T v) { return v + c; }, [](T, T) { return T{1}; });
}

template <Real T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  return emit<T>(std::make_unique<LayerNormOp<T>>(eps), {x, gamma, beta});
}

template <Real T>
Var<T> softmax_rows(Var<T> x) {
  return emit<T>(std::make_unique<SoftmaxOp<T>>(), {x});
}

template <Real T>
Var<T> gelu(Var<T> x) {
  return unary(
      x, "gelu", [](T v) { return kernels::gelu(v); },
      [](T v, T) { return kernels::gelu_derivative(v); });
}

template <Real T>
Var<T> abs(Var<T> x) {
  return unary(
      x, "abs", [](T v) { return std::abs(v); }, [](T v, T) { return sign(v); });
}

template <Real T>
Var<T> square(Var<T> x) {
  return unary(
      x, "square", [](T v) { return v * v; }, [](T v, T) { return T{2} * v; });
}

template <Real T>
Var<T> abs_pow(Var<T> x, T p) {
  if (!(p >= T{1})) throw ContractError("abs_pow: exponent must be >= 1");
  return unary(
      x, "abs_pow", [p](T v) { return p == T{1} ? std::abs(v) : std::pow(std::abs(v), p); },
      [p](T v, T) {
        if (v == T{0}) return T{0};
        return p == T{1} ? sign(v) : p * std::pow(std::abs(v), p - T{1}) * sign(v);
      });
}

template <Real T>
Var<T> root_pow(Var<T> x, T e) {
  if (!(e > T{0} && e <= T{1})) throw ContractError("root_pow: exponent must lie in (0, 1]");
  return unary(
      x, "root_pow",
      [e](T v) {
        if (v < T{0}) throw ContractError("root_pow: negative base");
        return e == T{1} ? v : std::pow(v, e);
      },
      [e](T v, T y) {
        if (e == T{1}) return T{1};
        return v > T{0} ? e * y / v : T{0};
      });
}

template <Real T>
Var<T> charbonnier(Var<T> x, T eps) {
  const T eps2 = eps * eps;
  return unary(
      x, "charbonnier", [eps2](T v) { return std::sqrt(v * v + eps2); },
      [](T v, T y) { return v / y; });
}

template <Real T>
Var<T> log(Var<T> x) {
  return unary(
      x, "log",
      [](T v) {
        if (!(v > T{0})) throw NumericError("log of a non-positive value");
        return std::log(v);
      },
      [](T v, T) { return T{1} / v; });
}

template <Real T>
Var<T> sum(Var<T> x) {
  return emit<T>(std::make_unique<ReduceOp<T>>(ReduceOp<T>::Kind::kSum), {x});
}

template <Real T>
Var<T> mean(Var<T> x) {
  return emit<T>(std::make_unique<ReduceOp<T>>(ReduceOp<T>::Kind::kMean), {x});
}

template <Real T>
Var<T> row_sums(Var<T> m) {
  return emit<T>(std::make_unique<ReduceOp<T>>(ReduceOp<T>::Kind::kRowSums), {m});
}

template <Real T>
Var<T> sort_rows(Var<T> m) {
  return emit<T>(std::make_unique<SortRowsOp<T>>(), {m});
}

template <Real T>
Var<T> slice_cols(Var<T> m, std::size_t start, std::size_t width) {
  return emit<T>(std::make_unique<SliceColsOp<T>>(start, width), {m});
}

template <Real T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  return emit<T>(std::make_unique<ConcatOp<T>>(false), parts);
}

template <Real T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  return emit<T>(std::make_unique<ConcatOp<T>>(true), parts);
}

template <Real T>
Var<T> gather_rows(Var<T> m, std::vector<std::size_t> rows) {
  return emit<T>(std::make_unique<GatherRowsOp<T>>(std::move(rows)), {m});
}

template <Real T>
Var<T> reshape(Var<T> x, Shape shape) {
  return emit<T>(std::make_unique<ReshapeOp<T>>(std::move(shape)), {x});
}

#define VITLOSS_INSTANTIATE(T)                                              \
  template class Tape<T>;                                                   \
  template Var<T> matmul(Var<T>, Var<T>);                                   \
  template Var<T> matmul_nt(Var<T>, Var<T>);                                \
  template Var<T> add(Var<T>, Var<T>);                                      \
  template Var<T> sub(Var<T>, Var<T>);                                      \
  template Var<T> add_row(Var<T>, Var<T>);                                  \
  template Var<T> scale(Var<T>, T);                                         \
  template Var<T> add_scalar(Var<T>, T);                                    \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                    \
  template Var<T> softmax_rows(Var<T>);                                     \
  template Var<T> gelu(Var<T>);                                             \
  template Var<T> abs(Var<T>);                                              \
  template Var<T> square(Var<T>);                                           \
  template Var<T> abs_pow(Var<T>, T);                                       \
  template Var<T> root_pow(Var<T>, T);                                      \
  template Var<T> charbonnier(Var<T>, T);                                   \
  template Var<T> log(Var<T>);                                              \
  template Var<T> sum(Var<T>);                                              \
  template Var<T> mean(Var<T>);                                             \
  template Var<T> row_sums(Var<T>);                                         \
  template Var<T> sort_rows(Var<T>);                                        \
  template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);            \
  template Var<T> concat_cols(const std::vector<Var<T>>&);                  \
  template Var<T> concat_rows(const std::vector<Var<T>>&);                  \
  template Var<T> gather_rows(Var<T>, std::vector<std::size_t>);            \
  template Var<T> reshape(Var<T>, Shape);

VITLOSS_INSTANTIATE(float)
VITLOSS_INSTANTIATE(double)

#undef VITLOSS_INSTANTIATE

}  // namespace vitloss::ad
