#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace transapprox {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = MatrixX<double>;
using RowVector = RowVectorX<double>;
using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  Matrix value;  // rank 1: 1 x n, rank 2: r x c, rank 3: (a*b) x c
  Matrix grad;
  bool has_grad = false;
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Matrix& grad_buffer() {
    if (!has_grad) {
      grad = Matrix::Zero(value.rows(), value.cols());
      has_grad = true;
    }
    return grad;
  }
};

}  // namespace detail

/// Dense float64 array of rank 1-3 with optional reverse-mode gradient.
///
/// Copies share the underlying node, so a Tensor behaves like a handle into
/// the define-by-run graph. Use clone() for an independent leaf.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from_matrix(Matrix m, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t numel() const { return static_cast<std::size_t>(node().value.size()); }
  Eigen::Index rows() const { return node().value.rows(); }
  Eigen::Index cols() const { return node().value.cols(); }

  const Matrix& value() const { return node().value; }
  /// Mutable access for parameter initialisation and optimizer updates.
  Matrix& mutable_value() { return node().value; }
  std::span<const double> data() const { return {node().value.data(), numel()}; }
  double item() const;

  bool requires_grad() const { return node().requires_grad; }
  bool has_grad() const { return node().has_grad; }
  const Matrix& grad() const;
  void zero_grad();
  /// Allocates a zero gradient if none has been accumulated.
  void ensure_grad();

  Tensor detach() const;
  Tensor clone() const;
  Tensor reshape(Shape shape) const;

  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<detail::Node>& handle() const { return node_; }

  static Tensor make_result(Shape shape, Matrix value, std::vector<Tensor> inputs,
                            std::function<void(detail::Node&)> backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  detail::Node& node() const {
    if (!node_) throw std::logic_error("use of undefined tensor");
    return *node_;
  }

  std::shared_ptr<detail::Node> node_;
};

/// Disables graph construction on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Populates grad on every requires_grad tensor reachable from `loss`.
void backward(const Tensor& loss);

// Differentiable ops.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_transposed(const Tensor& a, const Tensor& b);  // a * b^T
Tensor add(const Tensor& a, const Tensor& b);
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& x, double s);
Tensor gelu(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor softmax_rows(const Tensor& x);
/// Softmax with an additive mask; rows whose every entry is masked produce zeros.
Tensor softmax_rows(const Tensor& x, const Matrix& additive_mask);
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
Tensor sum(const Tensor& x);
Tensor mean_pool_rows(const Tensor& x, std::size_t group);

Tensor slice_rows(const Tensor& x, Eigen::Index begin, Eigen::Index count);
Tensor slice_cols(const Tensor& x, Eigen::Index begin, Eigen::Index count);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor gather_rows(const Tensor& x, std::span<const Eigen::Index> indices);

/// Replaces entries of `w` for the forward pass: entries with keep == 0 become 0,
/// entries with replace != 0 take `values`. Gradient is zero on dropped entries;
/// on replaced entries it passes straight through when `straight_through`, else 0.
struct WeightOverlay {
  Matrix keep;     // 0/1, same shape as w
  Matrix replace;  // 0/1, same shape as w
  Matrix values;
  bool straight_through = false;
};
Tensor overlay(const Tensor& w, const WeightOverlay& spec);

}  // namespace transapprox
