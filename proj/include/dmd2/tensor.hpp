#pragma once

// Dense float64 tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a shared handle: copying a Tensor aliases the same storage and
// graph node. Every op records a backward closure when any input requires a
// gradient; backward() walks the recorded graph in reverse topological order
// and accumulates into the .grad buffers of leaf tensors only. Ops never emit
// non-finite values: they throw NumericalError instead.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dmd2/types.hpp"

namespace dmd2 {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

struct GradFn {
  const char* op = "";
  std::vector<ImplPtr> inputs;
  // grad_in[k] is null when inputs[k] does not take part in differentiation.
  std::function<void(std::span<const double> grad_out,
                     std::span<std::vector<double>* const> grad_in)>
      apply;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::unique_ptr<GradFn> grad_fn;
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor from_matrix(const Matrix& m, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  // Writable storage; intended for initialization and optimizer updates.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t row, std::size_t col) const;

  // 2-D views. Rank-1 tensors are viewed as a single row.
  Eigen::Map<const Matrix> matrix() const;
  Matrix to_matrix() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  Matrix grad_matrix() const;
  void zero_grad();

  // Fresh leaf holding a copy of the values; no graph, no grad.
  Tensor detach() const;
  Tensor clone(bool requires_grad) const;

  const detail::ImplPtr& impl() const { return impl_; }
  explicit Tensor(detail::ImplPtr impl) : impl_(std::move(impl)) {}

 private:
  detail::ImplPtr impl_;
};

// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad.
// Repeated calls accumulate. Throws ContractError for a non-scalar loss.
void backward(const Tensor& loss);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// Row i of x multiplied by factors[i]; factors are constants.
Tensor scale_rows(const Tensor& x, std::span<const double> factors);
Tensor silu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor square(const Tensor& x);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

}  // namespace dmd2
