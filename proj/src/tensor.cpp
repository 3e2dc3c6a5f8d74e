#include "transapprox/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace transapprox {

namespace {

using detail::Node;

std::pair<Eigen::Index, Eigen::Index> matrix_dims(const Shape& shape) {
  switch (shape.size()) {
    case 1:
      return {1, static_cast<Eigen::Index>(shape[0])};
    case 2:
      return {static_cast<Eigen::Index>(shape[0]), static_cast<Eigen::Index>(shape[1])};
    case 3:
      return {static_cast<Eigen::Index>(shape[0] * shape[1]), static_cast<Eigen::Index>(shape[2])};
    default:
      throw ShapeError("tensor rank must be 1-3, got " + std::to_string(shape.size()));
  }
}

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Shape shape2(Eigen::Index r, Eigen::Index c) {
  return {static_cast<std::size_t>(r), static_cast<std::size_t>(c)};
}

void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_string(t.shape()));
  }
}

void accumulate(const std::shared_ptr<Node>& n, const auto& g) {
  if (n->requires_grad) n->grad_buffer() += g;
}

constexpr double kMaskedThreshold = -0.5e9;

thread_local bool g_grad_enabled = true;

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (product(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_string(shape));
  }
  auto [r, c] = matrix_dims(shape);
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->value = Eigen::Map<const Matrix>(data.data(), r, c);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto [r, c] = matrix_dims(shape);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = Matrix::Zero(r, c);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from_matrix(Matrix m, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->shape = shape2(m.rows(), m.cols());
  node->value = std::move(m);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor({1}, {v}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return node().value(0, 0);
}

const Matrix& Tensor::grad() const {
  if (!node().has_grad) throw std::logic_error("tensor has no gradient");
  return node().grad;
}

void Tensor::zero_grad() {
  node().has_grad = false;
  node().grad.resize(0, 0);
}

void Tensor::ensure_grad() { node().grad_buffer(); }

Tensor Tensor::detach() const {
  auto n = std::make_shared<Node>();
  n->shape = node().shape;
  n->value = node().value;
  return Tensor(std::move(n));
}

Tensor Tensor::clone() const {
  auto n = std::make_shared<Node>();
  n->shape = node().shape;
  n->value = node().value;
  n->requires_grad = node().requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::reshape(Shape shape) const {
  if (product(shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_string(this->shape()) + " to " + shape_string(shape));
  }
  auto [r, c] = matrix_dims(shape);
  Matrix v = Eigen::Map<const Matrix>(node().value.data(), r, c);
  const Eigen::Index src_r = rows(), src_c = cols();
  return make_result(std::move(shape), std::move(v), {*this}, [src_r, src_c](Node& self) {
    accumulate(self.inputs[0], Eigen::Map<const Matrix>(self.grad.data(), src_r, src_c));
  });
}

Tensor Tensor::make_result(Shape shape, Matrix value, std::vector<Tensor> inputs,
                           std::function<void(detail::Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (g_grad_enabled) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) n->requires_grad = true;
    }
  }
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (auto& in : inputs) n->inputs.push_back(in.node_);
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " + shape_string(loss.shape()));
  }
  const auto& root = loss.handle();
  if (root->consumed) throw std::logic_error("backward() called twice on the same graph");
  root->consumed = true;
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root->grad_buffer().setOnes();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& n = **it;
    if (n.backward && n.has_grad) n.backward(n);
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  Matrix out = a.value() * b.value();
  Shape shape = shape2(out.rows(), out.cols());
  return Tensor::make_result(std::move(shape), std::move(out), {a, b}, [](Node& self) {
    const auto& ia = self.inputs[0];
    const auto& ib = self.inputs[1];
    if (ia->requires_grad) ia->grad_buffer().noalias() += self.grad * ib->value.transpose();
    if (ib->requires_grad) ib->grad_buffer().noalias() += ia->value.transpose() * self.grad;
  });
}

Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_transposed");
  require_2d(b, "matmul_transposed");
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_transposed: inner dimensions differ, " + shape_string(a.shape()) +
                     " x " + shape_string(b.shape()) + "^T");
  }
  Matrix out = a.value() * b.value().transpose();
  Shape shape = shape2(out.rows(), out.cols());
  return Tensor::make_result(std::move(shape), std::move(out), {a, b}, [](Node& self) {
    const auto& ia = self.inputs[0];
    const auto& ib = self.inputs[1];
    if (ia->requires_grad) ia->grad_buffer().noalias() += self.grad * ib->value;
    if (ib->requires_grad) ib->grad_buffer().noalias() += self.grad.transpose() * ia->value;
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shapes differ, " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  Matrix out = a.value() + b.value();
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    accumulate(self.inputs[0], self.grad);
    accumulate(self.inputs[1], self.grad);
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_2d(x, "add_bias");
  if (bias.numel() != static_cast<std::size_t>(x.cols())) {
    throw ShapeError("add_bias: bias " + shape_string(bias.shape()) + " does not fit " +
                     shape_string(x.shape()));
  }
  Matrix out = x.value().rowwise() + Eigen::Map<const RowVector>(bias.value().data(), x.cols());
  return Tensor::make_result(x.shape(), std::move(out), {x, bias}, [](Node& self) {
    accumulate(self.inputs[0], self.grad);
    const auto& ib = self.inputs[1];
    if (ib->requires_grad) {
      RowVector g = self.grad.colwise().sum();
      ib->grad_buffer() += Eigen::Map<const Matrix>(g.data(), ib->value.rows(), ib->value.cols());
    }
  });
}

Tensor scale(const Tensor& x, double s) {
  Matrix out = x.value() * s;
  return Tensor::make_result(x.shape(), std::move(out), {x},
                             [s](Node& self) { accumulate(self.inputs[0], self.grad * s); });
}

Tensor gelu(const Tensor& x) {
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  Matrix out = x.value().unaryExpr(
      [inv_sqrt2](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); });
  return Tensor::make_result(x.shape(), std::move(out), {x}, [inv_sqrt2](Node& self) {
    const auto& in = self.inputs[0];
    if (!in->requires_grad) return;
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    Matrix d = in->value.unaryExpr([&](double v) {
      return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
    });
    in->grad_buffer() += self.grad.cwiseProduct(d);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_2d(x, "layer_norm");
  const Eigen::Index d = x.cols();
  if (gamma.numel() != static_cast<std::size_t>(d) || beta.numel() != static_cast<std::size_t>(d)) {
    throw ShapeError("layer_norm: affine parameters do not match " + shape_string(x.shape()));
  }
  if (!(eps > 0)) throw std::invalid_argument("layer_norm: eps must be positive");
  const Matrix& xv = x.value();
  Matrix xhat(xv.rows(), d);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Eigen::Map<const RowVector> g(gamma.value().data(), d);
  Eigen::Map<const RowVector> b(beta.value().data(), d);
  Matrix out = (xhat.array().rowwise() * g.array()).rowwise() + b.array();
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), d](Node& self) {
        const auto& ix = self.inputs[0];
        const auto& ig = self.inputs[1];
        const auto& ibeta = self.inputs[2];
        if (ig->requires_grad) {
          RowVector dg = self.grad.cwiseProduct(xhat).colwise().sum();
          ig->grad_buffer() += Eigen::Map<const Matrix>(dg.data(), ig->value.rows(), ig->value.cols());
        }
        if (ibeta->requires_grad) {
          RowVector db = self.grad.colwise().sum();
          ibeta->grad_buffer() +=
              Eigen::Map<const Matrix>(db.data(), ibeta->value.rows(), ibeta->value.cols());
        }
        if (ix->requires_grad) {
          Eigen::Map<const RowVector> gm(ig->value.data(), d);
          Matrix dxhat = self.grad.array().rowwise() * gm.array();
          Matrix& gx = ix->grad_buffer();
          for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
            const double m1 = dxhat.row(r).mean();
            const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
            gx.row(r).array() +=
                inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
          }
        }
      });
}

namespace {

Tensor softmax_impl(const Tensor& x, const Matrix* mask) {
  require_2d(x, "softmax_rows");
  if (mask && (mask->rows() != x.rows() || mask->cols() != x.cols())) {
    throw ShapeError("softmax_rows: mask shape does not match " + shape_string(x.shape()));
  }
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    RowVector row = x.value().row(r);
    if (mask) row += mask->row(r);
    const double m = row.maxCoeff();
    if (mask && m <= kMaskedThreshold) {
      out.row(r).setZero();
      continue;
    }
    RowVector e = (row.array() - m).exp();
    out.row(r) = e / e.sum();
  }
  return Tensor::make_result(x.shape(), out, {x}, [y = out](Node& self) {
    const auto& in = self.inputs[0];
    if (!in->requires_grad) return;
    Eigen::VectorXd dots = self.grad.cwiseProduct(y).rowwise().sum();
    in->grad_buffer() += y.cwiseProduct(self.grad.colwise() - dots);
  });
}

}  // namespace

Tensor softmax_rows(const Tensor& x) { return softmax_impl(x, nullptr); }

Tensor softmax_rows(const Tensor& x, const Matrix& additive_mask) {
  return softmax_impl(x, &additive_mask);
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_2d(logits, "cross_entropy");
  const Eigen::Index n = logits.rows(), c = logits.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     shape_string(logits.shape()));
  }
  if (n == 0) throw ShapeError("cross_entropy: empty batch");
  Matrix probs(n, c);
  double total = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const int label = labels[static_cast<std::size_t>(r)];
    if (label < 0 || label >= c) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                              std::to_string(c) + ")");
    }
    const double m = logits.value().row(r).maxCoeff();
    RowVector e = (logits.value().row(r).array() - m).exp();
    const double z = e.sum();
    probs.row(r) = e / z;
    total += -(logits.value()(r, label) - m - std::log(z));
  }
  std::vector<int> owned(labels.begin(), labels.end());
  return Tensor::make_result({1}, Matrix::Constant(1, 1, total / static_cast<double>(n)), {logits},
                             [probs = std::move(probs), owned = std::move(owned)](Node& self) {
                               const auto& in = self.inputs[0];
                               if (!in->requires_grad) return;
                               Matrix g = probs;
                               for (std::size_t r = 0; r < owned.size(); ++r) {
                                 g(static_cast<Eigen::Index>(r), owned[r]) -= 1.0;
                               }
                               g *= self.grad(0, 0) / static_cast<double>(owned.size());
                               in->grad_buffer() += g;
                             });
}

Tensor sum(const Tensor& x) {
  return Tensor::make_result({1}, Matrix::Constant(1, 1, x.value().sum()), {x}, [](Node& self) {
    const auto& in = self.inputs[0];
    if (in->requires_grad) in->grad_buffer().array() += self.grad(0, 0);
  });
}

Tensor mean_pool_rows(const Tensor& x, std::size_t group) {
  require_2d(x, "mean_pool_rows");
  const auto g = static_cast<Eigen::Index>(group);
  if (g == 0 || x.rows() % g != 0) {
    throw ShapeError("mean_pool_rows: group " + std::to_string(group) + " does not divide " +
                     shape_string(x.shape()));
  }
  const Eigen::Index blocks = x.rows() / g;
  Matrix out(blocks, x.cols());
  for (Eigen::Index b = 0; b < blocks; ++b) out.row(b) = x.value().middleRows(b * g, g).colwise().mean();
  return Tensor::make_result(shape2(blocks, x.cols()), std::move(out), {x}, [g, blocks](Node& self) {
    const auto& in = self.inputs[0];
    if (!in->requires_grad) return;
    Matrix& gi = in->grad_buffer();
    for (Eigen::Index b = 0; b < blocks; ++b) {
      gi.middleRows(b * g, g).rowwise() += self.grad.row(b) / static_cast<double>(g);
    }
  });
}

Tensor slice_rows(const Tensor& x, Eigen::Index begin, Eigen::Index count) {
  require_2d(x, "slice_rows");
  if (begin < 0 || count < 0 || begin + count > x.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                     ") outside " + shape_string(x.shape()));
  }
  Matrix out = x.value().middleRows(begin, count);
  return Tensor::make_result(shape2(count, x.cols()), std::move(out), {x}, [begin, count](Node& self) {
    const auto& in = self.inputs[0];
    if (in->requires_grad) in->grad_buffer().middleRows(begin, count) += self.grad;
  });
}

Tensor slice_cols(const Tensor& x, Eigen::Index begin, Eigen::Index count) {
  require_2d(x, "slice_cols");
  if (begin < 0 || count < 0 || begin + count > x.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                     ") outside " + shape_string(x.shape()));
  }
  Matrix out = x.value().middleCols(begin, count);
  return Tensor::make_result(shape2(x.rows(), count), std::move(out), {x}, [begin, count](Node& self) {
    const auto& in = self.inputs[0];
    if (in->requires_grad) in->grad_buffer().middleCols(begin, count) += self.grad;
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_rows");
    if (p.cols() != parts[0].cols()) throw ShapeError("concat_rows: column counts differ");
    total += p.rows();
  }
  Matrix out(total, parts[0].cols());
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return Tensor::make_result(shape2(total, parts[0].cols()), std::move(out),
                             std::vector<Tensor>(parts.begin(), parts.end()),
                             [offsets = std::move(offsets)](Node& self) {
                               for (std::size_t i = 0; i < self.inputs.size(); ++i) {
                                 const auto& in = self.inputs[i];
                                 if (in->requires_grad) {
                                   in->grad_buffer() += self.grad.middleRows(offsets[i], in->value.rows());
                                 }
                               }
                             });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p.rows() != parts[0].rows()) throw ShapeError("concat_cols: row counts differ");
    total += p.cols();
  }
  Matrix out(parts[0].rows(), total);
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return Tensor::make_result(shape2(parts[0].rows(), total), std::move(out),
                             std::vector<Tensor>(parts.begin(), parts.end()),
                             [offsets = std::move(offsets)](Node& self) {
                               for (std::size_t i = 0; i < self.inputs.size(); ++i) {
                                 const auto& in = self.inputs[i];
                                 if (in->requires_grad) {
                                   in->grad_buffer() += self.grad.middleCols(offsets[i], in->value.cols());
                                 }
                               }
                             });
}

Tensor gather_rows(const Tensor& x, std::span<const Eigen::Index> indices) {
  require_2d(x, "gather_rows");
  Matrix out(static_cast<Eigen::Index>(indices.size()), x.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= x.rows()) {
      throw std::out_of_range("gather_rows: index " + std::to_string(indices[i]) + " outside " +
                              shape_string(x.shape()));
    }
    out.row(static_cast<Eigen::Index>(i)) = x.value().row(indices[i]);
  }
  std::vector<Eigen::Index> idx(indices.begin(), indices.end());
  Shape shape = shape2(out.rows(), out.cols());
  return Tensor::make_result(std::move(shape), std::move(out), {x},
                             [idx = std::move(idx)](Node& self) {
                               const auto& in = self.inputs[0];
                               if (!in->requires_grad) return;
                               Matrix& g = in->grad_buffer();
                               for (std::size_t i = 0; i < idx.size(); ++i) {
                                 g.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
                               }
                             });
}

Tensor overlay(const Tensor& w, const WeightOverlay& spec) {
  const Matrix& v = w.value();
  auto fits = [&](const Matrix& m) { return m.rows() == v.rows() && m.cols() == v.cols(); };
  if (!fits(spec.keep) || !fits(spec.replace) || !fits(spec.values)) {
    throw ShapeError("overlay: masks do not match " + shape_string(w.shape()));
  }
  Matrix out = (spec.replace.array() != 0.0).select(spec.values, v);
  out = out.cwiseProduct(spec.keep);
  Matrix pass = spec.keep;
  if (!spec.straight_through) pass = pass.cwiseProduct((spec.replace.array() == 0.0).cast<double>().matrix());
  return Tensor::make_result(w.shape(), std::move(out), {w}, [pass = std::move(pass)](Node& self) {
    accumulate(self.inputs[0], self.grad.cwiseProduct(pass));
  });
}

}  // namespace transapprox
