#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "gph2/dense.hpp"
#include "gph2/error.hpp"
#include "gph2/sparse.hpp"

namespace gph2 {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;

  // Operation record. Leaves have no parents and no backward.
  const char* op = nullptr;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node& self)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace detail

// Dense float64 tensor handle. Copies alias the same storage (parameters are
// shared between the model and the optimizer); use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = detail::numel(shape);
    return make(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (values.size() != detail::numel(shape)) {
      throw DimensionError("tensor " + shape_str(shape) + " given " + std::to_string(values.size()) + " values");
    }
    return make(std::move(shape), std::move(values), requires_grad);
  }

  static Tensor from(const Matrix& m, bool requires_grad = false) {
    return make({m.rows, m.cols}, m.data, requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) { return make({}, {v}, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t rows() const { return rank() == 2 ? node_->shape[0] : 1; }
  std::size_t cols() const { return rank() == 2 ? node_->shape[1] : (rank() == 1 ? node_->shape[0] : 1); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

  double item() const {
    if (numel() != 1) throw DimensionError("item() on tensor " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

  // Deep copy without history.
  Tensor clone() const { return make(node_->shape, node_->data, node_->requires_grad); }
  // Same values, no history, never requires grad.
  Tensor detach() const { return make(node_->shape, node_->data, false); }

  Matrix to_matrix() const { return Matrix(rows(), cols(), node_->data); }

  const char* op_name() const { return node_->op; }

  detail::Node& node() const { return *node_; }
  const std::shared_ptr<detail::Node>& handle() const { return node_; }

  // Builds an op output; records history when any input needs gradients.
  static Tensor make_result(Shape shape, std::vector<double> values, const char* op,
                            std::initializer_list<Tensor> inputs, std::function<void(detail::Node&)> backward) {
    return make_result(std::move(shape), std::move(values), op, std::vector<Tensor>(inputs), std::move(backward));
  }

  static Tensor make_result(Shape shape, std::vector<double> values, const char* op, const std::vector<Tensor>& inputs,
                            std::function<void(detail::Node&)> backward) {
    Tensor out = make(std::move(shape), std::move(values), false);
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      out.node_->requires_grad = true;
      out.node_->op = op;
      for (const auto& t : inputs) out.node_->parents.push_back(t.node_);
      out.node_->backward = std::move(backward);
    }
    return out;
  }

 private:
  static Tensor make(Shape shape, std::vector<double> values, bool requires_grad) {
    Tensor t;
    t.node_ = std::make_shared<detail::Node>();
    t.node_->shape = std::move(shape);
    t.node_->data = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  std::shared_ptr<detail::Node> node_;
};

// Reverse pass. The reachable operation records are linearised into a tape in
// topological order and replayed backwards. Leaf gradients accumulate across
// calls; intermediate gradients are reset each call.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw DimensionError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  std::vector<detail::Node*> tape;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{&loss.node(), 0}};
  seen.insert(&loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      tape.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* n : tape) {
    if (n->backward) std::fill(n->grad_buffer().begin(), n->grad_buffer().end(), 0.0);
  }
  loss.node().grad_buffer()[0] += 1.0;
  for (auto it = tape.rbegin(); it != tape.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

namespace detail {

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
}

inline void require_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

inline void accumulate(Node& target, std::span<const double> g) {
  if (!target.requires_grad) return;
  auto& buf = target.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

// Elementwise unary op with derivative expressed through (input, output).
template <typename F, typename D>
Tensor unary(const Tensor& x, const char* op, F f, D df) {
  require_finite(x, op);
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  Node* xn = &x.node();
  return Tensor::make_result(x.shape(), std::move(out), op, {x}, [xn, df](Node& self) {
    if (!xn->requires_grad) return;
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(xn->data[i], self.data[i]);
  });
}

inline double log_sigmoid_value(double x) {
  // log(sigmoid(x)) = -softplus(-x), evaluated without overflow.
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

inline double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * bd[p * n + j];
    }
  }
  detail::Node* an = &a.node();
  detail::Node* bn = &b.node();
  return Tensor::make_result({m, n}, std::move(out), "matmul", {a, b}, [an, bn, m, k, n](detail::Node& self) {
    const auto& g = self.grad;
    if (an->requires_grad) {
      auto& ga = an->grad_buffer();  // dA = dC * B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bn->data[p * n + j];
          ga[i * k + p] += s;
        }
    }
    if (bn->requires_grad) {
      auto& gb = bn->grad_buffer();  // dB = A^T * dC
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = an->data[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
        }
    }
  });
}

// Sparse-dense product. The adjacency is a constant and must outlive any
// backward pass through the result.
inline Tensor spmm(const SparseMatrix& adj, const Tensor& x) {
  detail::require_matrix(x, "spmm");
  if (adj.cols != x.rows()) {
    throw DimensionError("spmm: adjacency " + std::to_string(adj.rows) + "x" + std::to_string(adj.cols) +
                         " against " + shape_str(x.shape()));
  }
  const std::size_t d = x.cols();
  std::vector<double> out(adj.rows * d, 0.0);
  const auto xd = x.data();
  for (std::size_t i = 0; i < adj.rows; ++i)
    for (std::size_t q = adj.row_offsets[i]; q < adj.row_offsets[i + 1]; ++q) {
      const double v = adj.values[q];
      const std::size_t src = adj.col_indices[q] * d;
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] += v * xd[src + j];
    }
  detail::Node* xn = &x.node();
  const SparseMatrix* a = &adj;
  return Tensor::make_result({adj.rows, d}, std::move(out), "spmm", {x}, [xn, a, d](detail::Node& self) {
    auto& gx = xn->grad_buffer();  // dX = A^T * dY, scattered row by row
    for (std::size_t i = 0; i < a->rows; ++i)
      for (std::size_t q = a->row_offsets[i]; q < a->row_offsets[i + 1]; ++q) {
        const double v = a->values[q];
        const std::size_t dst = a->col_indices[q] * d;
        for (std::size_t j = 0; j < d; ++j) gx[dst + j] += v * self.grad[i * d + j];
      }
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  detail::Node* an = &a.node();
  detail::Node* bn = &b.node();
  return Tensor::make_result(a.shape(), std::move(out), "add", {a, b}, [an, bn](detail::Node& self) {
    detail::accumulate(*an, self.grad);
    detail::accumulate(*bn, self.grad);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  detail::Node* an = &a.node();
  detail::Node* bn = &b.node();
  return Tensor::make_result(a.shape(), std::move(out), "sub", {a, b}, [an, bn](detail::Node& self) {
    detail::accumulate(*an, self.grad);
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

// Elementwise (Hadamard) product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  detail::Node* an = &a.node();
  detail::Node* bn = &b.node();
  return Tensor::make_result(a.shape(), std::move(out), "mul", {a, b}, [an, bn](detail::Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->data[i];
    }
  });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "div");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (b.data()[i] == 0.0) throw NumericError("div: division by zero");
    out[i] = a.data()[i] / b.data()[i];
  }
  detail::Node* an = &a.node();
  detail::Node* bn = &b.node();
  return Tensor::make_result(a.shape(), std::move(out), "div", {a, b}, [an, bn](detail::Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / bn->data[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.data[i] / bn->data[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a.data()[i];
  detail::Node* an = &a.node();
  return Tensor::make_result(a.shape(), std::move(out), "scale", {a}, [an, c](detail::Node& self) {
    if (!an->requires_grad) return;
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * self.grad[i];
  });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

// a (n x d) plus a broadcast row b (1 x d).
inline Tensor add_row(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "add_row");
  if (b.numel() != a.cols()) {
    throw DimensionError("add_row: row " + shape_str(b.shape()) + " against " + shape_str(a.shape()));
  }
  const std::size_t n = a.rows(), d = a.cols();
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = a.data()[i * d + j] + b.data()[j];
  detail::Node* an = &a.node();
  detail::Node* bn = &b.node();
  return Tensor::make_result(a.shape(), std::move(out), "add_row", {a, b}, [an, bn, n, d](detail::Node& self) {
    detail::accumulate(*an, self.grad);
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j];
    }
  });
}

// Scales row i of a (n x d) by s[i], s of shape n x 1.
inline Tensor mul_rows(const Tensor& a, const Tensor& s) {
  detail::require_matrix(a, "mul_rows");
  if (s.numel() != a.rows()) {
    throw DimensionError("mul_rows: scale " + shape_str(s.shape()) + " against " + shape_str(a.shape()));
  }
  const std::size_t n = a.rows(), d = a.cols();
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = a.data()[i * d + j] * s.data()[i];
  detail::Node* an = &a.node();
  detail::Node* sn = &s.node();
  return Tensor::make_result(a.shape(), std::move(out), "mul_rows", {a, s}, [an, sn, n, d](detail::Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) g[i * d + j] += self.grad[i * d + j] * sn->data[i];
    }
    if (sn->requires_grad) {
      auto& g = sn->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += self.grad[i * d + j] * an->data[i * d + j];
        g[i] += acc;
      }
    }
  });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (v <= 0.0) throw NumericError("log: non-positive input");
  }
  return detail::unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(x, "sigmoid", detail::sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

// log(sigmoid(x)) without ever forming sigmoid(x) first.
inline Tensor log_sigmoid(const Tensor& x) {
  return detail::unary(x, "log_sigmoid", detail::log_sigmoid_value,
                       [](double v, double) { return 1.0 - detail::sigmoid_value(v); });
}

// PReLU with a single learnable slope (scalar tensor).
inline Tensor prelu(const Tensor& x, const Tensor& slope) {
  if (slope.numel() != 1) throw DimensionError("prelu: slope must hold one value, got " + shape_str(slope.shape()));
  detail::require_finite(x, "prelu");
  const double a = slope.data()[0];
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    out[i] = v > 0 ? v : a * v;
  }
  detail::Node* xn = &x.node();
  detail::Node* sn = &slope.node();
  return Tensor::make_result(x.shape(), std::move(out), "prelu", {x, slope}, [xn, sn](detail::Node& self) {
    const double a = sn->data[0];
    if (xn->requires_grad) {
      auto& g = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (xn->data[i] > 0 ? 1.0 : a);
    }
    if (sn->requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < xn->data.size(); ++i) {
        if (xn->data[i] <= 0) acc += self.grad[i] * xn->data[i];
      }
      sn->grad_buffer()[0] += acc;
    }
  });
}

// Row-wise softmax; each row's maximum is subtracted before exponentiation.
inline Tensor softmax_rows(const Tensor& x) {
  detail::require_matrix(x, "softmax_rows");
  detail::require_finite(x, "softmax_rows");
  const std::size_t n = x.rows(), c = x.cols();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = x.data().data() + i * c;
    const double mx = *std::max_element(r, r + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (out[i * c + j] = std::exp(r[j] - mx));
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  detail::Node* xn = &x.node();
  return Tensor::make_result(x.shape(), std::move(out), "softmax_rows", {x}, [xn, n, c](detail::Node& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * self.data[i * c + j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.data[i * c + j] * (self.grad[i * c + j] - dot);
    }
  });
}

inline Tensor log_softmax_rows(const Tensor& x) {
  detail::require_matrix(x, "log_softmax_rows");
  detail::require_finite(x, "log_softmax_rows");
  const std::size_t n = x.rows(), c = x.cols();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = x.data().data() + i * c;
    const double mx = *std::max_element(r, r + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(r[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = r[j] - lse;
  }
  detail::Node* xn = &x.node();
  return Tensor::make_result(x.shape(), std::move(out), "log_softmax_rows", {x}, [xn, n, c](detail::Node& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < c; ++j) total += self.grad[i * c + j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] - std::exp(self.data[i * c + j]) * total;
    }
  });
}

inline Tensor transpose(const Tensor& x) {
  detail::require_matrix(x, "transpose");
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j * n + i] = x.data()[i * d + j];
  detail::Node* xn = &x.node();
  return Tensor::make_result({d, n}, std::move(out), "transpose", {x}, [xn, n, d](detail::Node& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) g[i * d + j] += self.grad[j * n + i];
  });
}

// Column-wise mean over rows: (n x d) -> (1 x d).
inline Tensor mean_rows(const Tensor& x) {
  detail::require_matrix(x, "mean_rows");
  const std::size_t n = x.rows(), d = x.cols();
  if (n == 0) throw DimensionError("mean_rows: no rows");
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += x.data()[i * d + j];
  for (double& v : out) v /= static_cast<double>(n);
  detail::Node* xn = &x.node();
  return Tensor::make_result({1, d}, std::move(out), "mean_rows", {x}, [xn, n, d](detail::Node& self) {
    auto& g = xn->grad_buffer();
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) g[i * d + j] += self.grad[j] * inv;
  });
}

inline Tensor sum(const Tensor& x) {
  const double s = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  detail::Node* xn = &x.node();
  return Tensor::make_result({}, {s}, "sum", {x}, [xn](detail::Node& self) {
    auto& g = xn->grad_buffer();
    for (double& v : g) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// Squared Frobenius norm.
inline Tensor frobenius_sq(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v * v;
  detail::Node* xn = &x.node();
  return Tensor::make_result({}, {s}, "frobenius_sq", {x}, [xn](detail::Node& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * xn->data[i] * self.grad[0];
  });
}

// Horizontal concatenation of matrices with equal row counts.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const std::size_t n = parts.front().rows();
  std::vector<std::size_t> offsets{0};
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.rows() != n) throw DimensionError("concat_cols: row counts differ");
    offsets.push_back(offsets.back() + p.cols());
  }
  const std::size_t total = offsets.back();
  std::vector<double> out(n * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t w = parts[k].cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * total + offsets[k] + j] = parts[k].data()[i * w + j];
  }
  std::vector<detail::Node*> nodes;
  for (const auto& p : parts) nodes.push_back(&p.node());
  return Tensor::make_result({n, total}, std::move(out), "concat_cols", parts,
                             [nodes, offsets, n, total](detail::Node& self) {
                               for (std::size_t k = 0; k < nodes.size(); ++k) {
                                 if (!nodes[k]->requires_grad) continue;
                                 auto& g = nodes[k]->grad_buffer();
                                 const std::size_t w = offsets[k + 1] - offsets[k];
                                 for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t j = 0; j < w; ++j)
                                     g[i * w + j] += self.grad[i * total + offsets[k] + j];
                               }
                             });
}

// Column j of x as an n x 1 matrix.
inline Tensor column(const Tensor& x, std::size_t j) {
  detail::require_matrix(x, "column");
  if (j >= x.cols()) throw DimensionError("column: index out of range");
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x.data()[i * d + j];
  detail::Node* xn = &x.node();
  return Tensor::make_result({n, 1}, std::move(out), "column", {x}, [xn, n, d, j](detail::Node& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) g[i * d + j] += self.grad[i];
  });
}

inline Tensor select_rows(const Tensor& x, std::span<const std::size_t> ids) {
  detail::require_matrix(x, "select_rows");
  const std::size_t d = x.cols();
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= x.rows()) throw DimensionError("select_rows: row index out of range");
    std::copy_n(x.data().data() + ids[i] * d, d, out.data() + i * d);
  }
  detail::Node* xn = &x.node();
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return Tensor::make_result({idx.size(), d}, std::move(out), "select_rows", {x}, [xn, idx, d](detail::Node& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) g[idx[i] * d + j] += self.grad[i * d + j];
  });
}

// Picks x[rows[t], cols[t]] into a k x 1 matrix.
inline Tensor gather(const Tensor& x, std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
  detail::require_matrix(x, "gather");
  if (rows.size() != cols.size()) throw DimensionError("gather: index lists differ in length");
  const std::size_t d = x.cols();
  std::vector<std::size_t> flat(rows.size());
  std::vector<double> out(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (rows[t] >= x.rows() || cols[t] >= d) throw DimensionError("gather: index out of range");
    flat[t] = rows[t] * d + cols[t];
    out[t] = x.data()[flat[t]];
  }
  detail::Node* xn = &x.node();
  return Tensor::make_result({flat.size(), 1}, std::move(out), "gather", {x}, [xn, flat](detail::Node& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t t = 0; t < flat.size(); ++t) g[flat[t]] += self.grad[t];
  });
}

// Multiplies by a constant mask (dropout and similar).
inline Tensor mask(const Tensor& x, std::span<const double> m) {
  if (m.size() != x.numel()) throw DimensionError("mask: size mismatch");
  return mul(x, Tensor::from(x.shape(), std::vector<double>(m.begin(), m.end())));
}

}  // namespace gph2
