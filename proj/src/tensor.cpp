#include "dmd2/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "dmd2/errors.hpp"

namespace dmd2 {

using detail::GradFn;
using detail::ImplPtr;
using detail::TensorImpl;

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

namespace {

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;

const TensorImpl& checked(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
  return *t.impl();
}

std::size_t rows_of(const Shape& s) { return s.size() == 2 ? s[0] : 1; }
std::size_t cols_of(const Shape& s) {
  if (s.size() == 2) return s[1];
  return s.empty() ? 1 : s[0];
}

ConstMap view(const TensorImpl& t) {
  return ConstMap(t.data.data(), static_cast<Eigen::Index>(rows_of(t.shape)),
                  static_cast<Eigen::Index>(cols_of(t.shape)));
}

MutMap view(std::vector<double>& buf, const Shape& s) {
  return MutMap(buf.data(), static_cast<Eigen::Index>(rows_of(s)),
                static_cast<Eigen::Index>(cols_of(s)));
}

void require_rank2(const TensorImpl& t, const char* op) {
  if (t.shape.size() != 2)
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " +
                         shape_str(t.shape));
}

void require_same_shape(const TensorImpl& a, const TensorImpl& b, const char* op) {
  if (a.shape != b.shape)
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape) + " vs " + shape_str(b.shape));
}

void ensure_finite(const std::vector<double>& data, const char* op) {
  for (double v : data) {
    if (!std::isfinite(v))
      throw NumericalError(std::string(op) + ": produced a non-finite value");
  }
}

// Builds the output node; records the closure only when some input needs grads.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<ImplPtr> inputs,
                   decltype(GradFn::apply) apply) {
  ensure_finite(data, op);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const ImplPtr& p) { return p->requires_grad; });
  if (needs) {
    impl->requires_grad = true;
    impl->grad_fn = std::make_unique<GradFn>();
    impl->grad_fn->op = op;
    impl->grad_fn->inputs = std::move(inputs);
    impl->grad_fn->apply = std::move(apply);
  }
  return Tensor(std::move(impl));
}

void accumulate(std::vector<double>* dst, std::span<const double> src) {
  if (!dst) return;
  for (std::size_t i = 0; i < src.size(); ++i) (*dst)[i] += src[i];
}

template <typename Fn>
Tensor unary_elementwise(const char* op, const Tensor& x, Fn value_and_slope) {
  const TensorImpl& xi = checked(x, op);
  std::vector<double> out(xi.data.size());
  std::vector<double> slope(xi.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto [v, d] = value_and_slope(xi.data[i]);
    out[i] = v;
    slope[i] = d;
  }
  return make_result(
      op, xi.shape, std::move(out), {x.impl()},
      [slope = std::move(slope)](std::span<const double> g,
                                 std::span<std::vector<double>* const> gin) {
        if (!gin[0]) return;
        auto& dst = *gin[0];
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * slope[i];
      });
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size())
    throw DimensionError("tensor: shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  ensure_finite(values, "tensor");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_matrix(const Matrix& m, bool requires_grad) {
  std::vector<double> values(m.data(), m.data() + m.size());
  return from_data({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                   std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value) { return from_data({}, {value}); }

const Shape& Tensor::shape() const { return checked(*this, "shape").shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size())
    throw IndexError("tensor: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(*this, "numel").data.size(); }

std::span<const double> Tensor::values() const { return checked(*this, "values").data; }

std::span<double> Tensor::mutable_values() {
  checked(*this, "mutable_values");
  return impl_->data;
}

double Tensor::item() const {
  const TensorImpl& t = checked(*this, "item");
  if (t.data.size() != 1)
    throw ContractError("item: tensor " + shape_str(t.shape) + " is not a scalar");
  return t.data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  const TensorImpl& t = checked(*this, "at");
  require_rank2(t, "at");
  if (row >= t.shape[0] || col >= t.shape[1])
    throw IndexError("at: (" + std::to_string(row) + "," + std::to_string(col) +
                     ") outside " + shape_str(t.shape));
  return t.data[row * t.shape[1] + col];
}

Eigen::Map<const Matrix> Tensor::matrix() const { return view(checked(*this, "matrix")); }

Matrix Tensor::to_matrix() const { return matrix(); }

bool Tensor::requires_grad() const { return checked(*this, "requires_grad").requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  checked(*this, "set_requires_grad");
  if (impl_->grad_fn && !flag)
    throw ContractError("set_requires_grad: cannot clear the flag on a non-leaf tensor");
  impl_->requires_grad = flag;
}

bool Tensor::is_leaf() const { return checked(*this, "is_leaf").grad_fn == nullptr; }

bool Tensor::has_grad() const { return !checked(*this, "has_grad").grad.empty(); }

std::span<const double> Tensor::grad() const { return checked(*this, "grad").grad; }

Matrix Tensor::grad_matrix() const {
  const TensorImpl& t = checked(*this, "grad_matrix");
  if (t.grad.empty()) return Matrix::Zero(rows_of(t.shape), cols_of(t.shape));
  return ConstMap(t.grad.data(), rows_of(t.shape), cols_of(t.shape));
}

void Tensor::zero_grad() {
  checked(*this, "zero_grad");
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return clone(false); }

Tensor Tensor::clone(bool requires_grad) const {
  const TensorImpl& t = checked(*this, "clone");
  return from_data(t.shape, t.data, requires_grad);
}

// ---------------------------------------------------------------- backward

void backward(const Tensor& loss) {
  const TensorImpl& root = checked(loss, "backward");
  if (root.data.size() != 1)
    throw ContractError("backward: loss must be a scalar, got shape " +
                        shape_str(root.shape));
  if (!root.requires_grad)
    throw ContractError("backward: loss does not depend on any tensor requiring grad");

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  seen.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (node->grad_fn && next < node->grad_fn->inputs.size()) {
      TensorImpl* child = node->grad_fn->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  std::unordered_map<TensorImpl*, std::vector<double>> grads;
  grads[loss.impl().get()] = {1.0};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    if (!node->grad_fn) {
      if (node->grad.empty()) node->grad.assign(node->data.size(), 0.0);
      accumulate(&node->grad, found->second);
      continue;
    }
    const std::vector<double> gout = std::move(found->second);
    grads.erase(found);
    std::vector<std::vector<double>*> gin;
    gin.reserve(node->grad_fn->inputs.size());
    for (const ImplPtr& in : node->grad_fn->inputs) {
      if (!in->requires_grad) {
        gin.push_back(nullptr);
        continue;
      }
      auto& buf = grads[in.get()];
      if (buf.empty()) buf.assign(in->data.size(), 0.0);
      gin.push_back(&buf);
    }
    node->grad_fn->apply(gout, gin);
  }
}

// ---------------------------------------------------------------- ops

Tensor matmul(const Tensor& a, const Tensor& b) {
  const TensorImpl& ai = checked(a, "matmul");
  const TensorImpl& bi = checked(b, "matmul");
  require_rank2(ai, "matmul");
  require_rank2(bi, "matmul");
  if (ai.shape[1] != bi.shape[0])
    throw DimensionError("matmul: inner extents differ " + shape_str(ai.shape) + " x " +
                         shape_str(bi.shape));
  Shape out_shape{ai.shape[0], bi.shape[1]};
  std::vector<double> out(out_shape[0] * out_shape[1]);
  view(out, out_shape).noalias() = view(ai) * view(bi);
  return make_result(
      "matmul", out_shape, std::move(out), {a.impl(), b.impl()},
      [pa = a.impl(), pb = b.impl(), out_shape](std::span<const double> g,
                                                std::span<std::vector<double>* const> gin) {
        ConstMap gm(g.data(), out_shape[0], out_shape[1]);
        if (gin[0]) view(*gin[0], pa->shape).noalias() += gm * view(*pb).transpose();
        if (gin[1]) view(*gin[1], pb->shape).noalias() += view(*pa).transpose() * gm;
      });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const TensorImpl& xi = checked(x, "add_bias");
  const TensorImpl& bi = checked(bias, "add_bias");
  require_rank2(xi, "add_bias");
  if (bi.data.size() != xi.shape[1])
    throw DimensionError("add_bias: bias " + shape_str(bi.shape) + " does not match " +
                         shape_str(xi.shape));
  std::vector<double> out = xi.data;
  const std::size_t n = xi.shape[0], m = xi.shape[1];
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) out[r * m + c] += bi.data[c];
  return make_result("add_bias", xi.shape, std::move(out), {x.impl(), bias.impl()},
                     [n, m](std::span<const double> g,
                            std::span<std::vector<double>* const> gin) {
                       accumulate(gin[0], g);
                       if (gin[1]) {
                         auto& db = *gin[1];
                         for (std::size_t r = 0; r < n; ++r)
                           for (std::size_t c = 0; c < m; ++c) db[c] += g[r * m + c];
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const TensorImpl& ai = checked(a, "add");
  const TensorImpl& bi = checked(b, "add");
  require_same_shape(ai, bi, "add");
  std::vector<double> out(ai.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ai.data[i] + bi.data[i];
  return make_result("add", ai.shape, std::move(out), {a.impl(), b.impl()},
                     [](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                       accumulate(gin[0], g);
                       accumulate(gin[1], g);
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const TensorImpl& ai = checked(a, "sub");
  const TensorImpl& bi = checked(b, "sub");
  require_same_shape(ai, bi, "sub");
  std::vector<double> out(ai.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ai.data[i] - bi.data[i];
  return make_result("sub", ai.shape, std::move(out), {a.impl(), b.impl()},
                     [](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                       accumulate(gin[0], g);
                       if (gin[1])
                         for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const TensorImpl& ai = checked(a, "mul");
  const TensorImpl& bi = checked(b, "mul");
  require_same_shape(ai, bi, "mul");
  std::vector<double> out(ai.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ai.data[i] * bi.data[i];
  return make_result("mul", ai.shape, std::move(out), {a.impl(), b.impl()},
                     [pa = a.impl(), pb = b.impl()](std::span<const double> g,
                                                    std::span<std::vector<double>* const> gin) {
                       if (gin[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * pb->data[i];
                       if (gin[1])
                         for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * pa->data[i];
                     });
}

Tensor scale(const Tensor& a, double factor) {
  return unary_elementwise("scale", a,
                           [factor](double v) { return std::pair{v * factor, factor}; });
}

Tensor scale_rows(const Tensor& x, std::span<const double> factors) {
  const TensorImpl& xi = checked(x, "scale_rows");
  require_rank2(xi, "scale_rows");
  if (factors.size() != xi.shape[0])
    throw DimensionError("scale_rows: " + std::to_string(factors.size()) +
                         " factors for " + shape_str(xi.shape));
  const std::size_t m = xi.shape[1];
  std::vector<double> f(factors.begin(), factors.end());
  std::vector<double> out = xi.data;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= f[i / m];
  return make_result("scale_rows", xi.shape, std::move(out), {x.impl()},
                     [f = std::move(f), m](std::span<const double> g,
                                           std::span<std::vector<double>* const> gin) {
                       if (!gin[0]) return;
                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * f[i / m];
                     });
}

Tensor silu(const Tensor& x) {
  return unary_elementwise("silu", x, [](double v) {
    const double s = 1.0 / (1.0 + std::exp(-v));
    return std::pair{v * s, s * (1.0 + v * (1.0 - s))};
  });
}

Tensor softplus(const Tensor& x) {
  return unary_elementwise("softplus", x, [](double v) {
    const double value = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
    return std::pair{value, 1.0 / (1.0 + std::exp(-v))};
  });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw ContractError("clamp: lo > hi");
  return unary_elementwise("clamp", x, [lo, hi](double v) {
    if (v < lo) return std::pair{lo, 0.0};
    if (v > hi) return std::pair{hi, 0.0};
    return std::pair{v, 1.0};
  });
}

Tensor square(const Tensor& x) {
  return unary_elementwise("square", x, [](double v) { return std::pair{v * v, 2.0 * v}; });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  const TensorImpl& ai = checked(a, "concat_cols");
  const TensorImpl& bi = checked(b, "concat_cols");
  require_rank2(ai, "concat_cols");
  require_rank2(bi, "concat_cols");
  if (ai.shape[0] != bi.shape[0])
    throw DimensionError("concat_cols: row counts differ " + shape_str(ai.shape) + " vs " +
                         shape_str(bi.shape));
  const std::size_t n = ai.shape[0], p = ai.shape[1], q = bi.shape[1];
  std::vector<double> out(n * (p + q));
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(ai.data.begin() + r * p, p, out.begin() + r * (p + q));
    std::copy_n(bi.data.begin() + r * q, q, out.begin() + r * (p + q) + p);
  }
  return make_result("concat_cols", {n, p + q}, std::move(out), {a.impl(), b.impl()},
                     [n, p, q](std::span<const double> g,
                               std::span<std::vector<double>* const> gin) {
                       for (std::size_t r = 0; r < n; ++r) {
                         if (gin[0])
                           for (std::size_t c = 0; c < p; ++c)
                             (*gin[0])[r * p + c] += g[r * (p + q) + c];
                         if (gin[1])
                           for (std::size_t c = 0; c < q; ++c)
                             (*gin[1])[r * q + c] += g[r * (p + q) + p + c];
                       }
                     });
}

Tensor sum(const Tensor& x) {
  const TensorImpl& xi = checked(x, "sum");
  double total = 0.0;
  for (double v : xi.data) total += v;
  return make_result("sum", {}, {total}, {x.impl()},
                     [](std::span<const double> g, std::span<std::vector<double>* const> gin) {
                       if (!gin[0]) return;
                       for (double& d : *gin[0]) d += g[0];
                     });
}

Tensor mean(const Tensor& x) {
  const std::size_t n = checked(x, "mean").data.size();
  if (n == 0) throw ContractError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

}  // namespace dmd2
