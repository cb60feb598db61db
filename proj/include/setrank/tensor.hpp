#pragma once

// Dense tensors with graph-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node. Every op returns a fresh
// node; when gradient recording is on and any input requires a gradient the
// node remembers its parents and a closure that pushes its gradient back.
// Values are 64-bit throughout.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace setrank {

using Shape = std::vector<std::size_t>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Sum that does not depend on the order of its inputs: values are sorted
// before accumulation so any permutation yields the same bits.
inline double order_free_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double acc = 0.0;
  for (double v : values) acc += v;
  return acc;
}

namespace detail {

inline thread_local bool grad_enabled = true;

struct Node {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data->size(), 0.0);
  }
};

}  // namespace detail

// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false) {
    if (numel(shape) != values.size()) {
      throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                           std::to_string(numel(shape)) + " values, got " +
                           std::to_string(values.size()));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::make_shared<std::vector<double>>(std::move(values));
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> values(numel(shape), 0.0);
    return from(std::move(shape), std::move(values), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data->size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> data() const { return *node_->data; }
  // Only for parameters owned by an optimizer or an initializer.
  std::span<double> mutable_data() { return *node_->data; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  double item() const {
    if (size() != 1) {
      throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    }
    return (*node_->data)[0];
  }

  double at(std::size_t flat) const { return (*node_->data)[flat]; }

  // New leaf sharing this tensor's storage but with its own gradient buffer.
  // Lets independent graphs on separate threads use the same parameters.
  Tensor alias() const {
    auto node = std::make_shared<detail::Node>();
    node->shape = node_->shape;
    node->data = node_->data;
    node->requires_grad = node_->requires_grad;
    return Tensor(std::move(node));
  }

  // Copy of the values with no graph history.
  Tensor detach() const {
    return from(shape(), std::vector<double>(data().begin(), data().end()));
  }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Reverse pass from a scalar. Each reachable node is visited exactly once,
  // in reverse topological order.
  void backward() const {
    if (size() != 1) {
      throw DimensionError("backward() needs a scalar, got shape " +
                           shape_str(shape()));
    }
    if (!requires_grad()) return;
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        detail::Node* parent = node->parents[next++].get();
        if (parent->requires_grad && seen.insert(parent).second) {
          stack.emplace_back(parent, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node* node = *it;
      if (node->backward && !node->grad.empty()) node->backward(*node);
    }
  }

  // Internal: used by op implementations.
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Tensor make_result(Shape shape, std::vector<double> values,
                          std::vector<Tensor> parents,
                          std::function<void(Node&)> backward) {
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  if (!grad_enabled) return out;
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (!needs) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  for (auto& p : parents) node.parents.push_back(p.node());
  node.backward = std::move(backward);
  return out;
}

// Gradient buffer of a parent if it wants one, else nullptr.
inline double* grad_of(const std::shared_ptr<Node>& parent) {
  if (!parent->requires_grad) return nullptr;
  parent->ensure_grad();
  return parent->grad.data();
}

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

inline void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
  }
}

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x k] += A[m x n] * B[k x n]^T. Each output is summed over j in order
// from zero before being added to C; the loop runs over a transposed copy of
// B so the inner loop is contiguous.
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t n, std::size_t k) {
  std::vector<double> bt(n * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  std::vector<double> acc(k);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const double av = arow[j];
      const double* btrow = bt.data() + j * k;
      for (std::size_t p = 0; p < k; ++p) acc[p] += av * btrow[p];
    }
    double* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) crow[p] += acc[p];
  }
}

// C[k x n] += A[m x k]^T * B[m x n]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree, " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return detail::make_result(
      {m, n}, std::move(out), {a, b}, [a, b, m, k, n](detail::Node& self) {
        const double* dc = self.grad.data();
        if (double* da = detail::grad_of(a.node())) {
          detail::gemm_nt(dc, b.data().data(), da, m, n, k);
        }
        if (double* db = detail::grad_of(b.node())) {
          detail::gemm_tn(a.data().data(), dc, db, m, k, n);
        }
      });
}

// Batched product over a shared leading dimension: [B,m,k] x [B,k,n].
inline Tensor bmm(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 3, "bmm");
  detail::require_rank(b, 3, "bmm");
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2),
                    n = b.dim(2);
  if (b.dim(0) != batch || b.dim(1) != k) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t t = 0; t < batch; ++t) {
    detail::gemm_nn(a.data().data() + t * m * k, b.data().data() + t * k * n,
                    out.data() + t * m * n, m, k, n);
  }
  return detail::make_result(
      {batch, m, n}, std::move(out), {a, b},
      [a, b, batch, m, k, n](detail::Node& self) {
        const double* dc = self.grad.data();
        double* da = detail::grad_of(a.node());
        double* db = detail::grad_of(b.node());
        for (std::size_t t = 0; t < batch; ++t) {
          if (da) {
            detail::gemm_nt(dc + t * m * n, b.data().data() + t * k * n,
                            da + t * m * k, m, n, k);
          }
          if (db) {
            detail::gemm_tn(a.data().data() + t * m * k, dc + t * m * n,
                            db + t * k * n, m, k, n);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return detail::make_result(a.shape(), std::move(out), {a, b},
                             [a, b](detail::Node& self) {
                               const auto& g = self.grad;
                               if (double* da = detail::grad_of(a.node())) {
                                 for (std::size_t i = 0; i < g.size(); ++i)
                                   da[i] += g[i];
                               }
                               if (double* db = detail::grad_of(b.node())) {
                                 for (std::size_t i = 0; i < g.size(); ++i)
                                   db[i] += g[i];
                               }
                             });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return detail::make_result(a.shape(), std::move(out), {a, b},
                             [a, b](detail::Node& self) {
                               const auto& g = self.grad;
                               if (double* da = detail::grad_of(a.node())) {
                                 for (std::size_t i = 0; i < g.size(); ++i)
                                   da[i] += g[i];
                               }
                               if (double* db = detail::grad_of(b.node())) {
                                 for (std::size_t i = 0; i < g.size(); ++i)
                                   db[i] -= g[i];
                               }
                             });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return detail::make_result(a.shape(), std::move(out), {a, b},
                             [a, b](detail::Node& self) {
                               const auto& g = self.grad;
                               if (double* da = detail::grad_of(a.node())) {
                                 for (std::size_t i = 0; i < g.size(); ++i)
                                   da[i] += g[i] * b.at(i);
                               }
                               if (double* db = detail::grad_of(b.node())) {
                                 for (std::size_t i = 0; i < g.size(); ++i)
                                   db[i] += g[i] * a.at(i);
                               }
                             });
}

inline Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * factor;
  return detail::make_result(a.shape(), std::move(out), {a},
                             [a, factor](detail::Node& self) {
                               double* da = detail::grad_of(a.node());
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 da[i] += self.grad[i] * factor;
                             });
}

// x[..., c] + bias[c], the bias broadcast over every leading index.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  detail::require_rank(bias, 1, "add_bias");
  const std::size_t c = bias.dim(0);
  if (x.rank() == 0 || x.shape().back() != c) {
    throw DimensionError("add_bias: " + shape_str(x.shape()) + " vs bias " +
                         shape_str(bias.shape()));
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) + bias.at(i % c);
  return detail::make_result(x.shape(), std::move(out), {x, bias},
                             [x, bias, c](detail::Node& self) {
                               const auto& g = self.grad;
                               if (double* dx = detail::grad_of(x.node())) {
                                 for (std::size_t i = 0; i < g.size(); ++i)
                                   dx[i] += g[i];
                               }
                               if (double* db = detail::grad_of(bias.node())) {
                                 for (std::size_t i = 0; i < g.size(); ++i)
                                   db[i % c] += g[i];
                               }
                             });
}

inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) > 0 ? x.at(i) : 0.0;
  return detail::make_result(x.shape(), std::move(out), {x},
                             [x](detail::Node& self) {
                               double* dx = detail::grad_of(x.node());
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 if (x.at(i) > 0) dx[i] += self.grad[i];
                             });
}

// tanh approximation of GELU.
inline Tensor gelu(const Tensor& x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double a = 0.044715;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.at(i);
    out[i] = 0.5 * v * (1.0 + std::tanh(k * (v + a * v * v * v)));
  }
  return detail::make_result(
      x.shape(), std::move(out), {x}, [x](detail::Node& self) {
        double* dx = detail::grad_of(x.node());
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const double v = x.at(i);
          const double t = std::tanh(k * (v + a * v * v * v));
          const double dt = (1.0 - t * t) * k * (1.0 + 3.0 * a * v * v);
          dx[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
        }
      });
}

// ---------------------------------------------------------------------------
// Normalization

inline Tensor softmax(const Tensor& x, int axis = -1) {
  const int r = static_cast<int>(x.rank());
  if (r == 0) throw DimensionError("softmax on a scalar");
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw DimensionError("softmax: axis " + std::to_string(axis) +
                         " invalid for " + shape_str(x.shape()));
  }
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < r; ++i) inner *= s[i];
  const std::size_t len = s[axis];
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < len; ++t) mx = std::max(mx, x.at(base + t * inner));
      double total = 0.0;
      for (std::size_t t = 0; t < len; ++t) {
        const double e = std::exp(x.at(base + t * inner) - mx);
        out[base + t * inner] = e;
        total += e;
      }
      for (std::size_t t = 0; t < len; ++t) out[base + t * inner] /= total;
    }
  }
  return detail::make_result(
      s, std::move(out), {x}, [x, outer, inner, len](detail::Node& self) {
      double* dx = detail::grad_of(x.node());
      const auto& y = *self.data;
      const auto& g = self.grad;
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double dot = 0.0;
          for (std::size_t t = 0; t < len; ++t)
            dot += g[base + t * inner] * y[base + t * inner];
          for (std::size_t t = 0; t < len; ++t) {
            const std::size_t idx = base + t * inner;
            dx[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    });
}

// Normalizes over the last axis, then applies gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-6) {
  detail::require_rank(gain, 1, "layer_norm");
  detail::require_same_shape(gain, bias, "layer_norm");
  const std::size_t c = gain.dim(0);
  if (x.rank() == 0 || x.shape().back() != c) {
    throw DimensionError("layer_norm: " + shape_str(x.shape()) + " vs gain " +
                         shape_str(gain.shape()));
  }
  const std::size_t rows = x.size() / c;
  std::vector<double> normed(x.size()), inv_std(rows), out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.data().data() + r * c;
    double mean = 0.0;
    for (std::size_t i = 0; i < c; ++i) mean += row[i];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t i = 0; i < c; ++i) var += (row[i] - mean) * (row[i] - mean);
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < c; ++i) {
      normed[r * c + i] = (row[i] - mean) * inv_std[r];
      out[r * c + i] = normed[r * c + i] * gain.at(i) + bias.at(i);
    }
  }
  return detail::make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [x, gain, bias, c, rows, normed = std::move(normed),
       inv_std = std::move(inv_std)](detail::Node& self) {
        const auto& g = self.grad;
        double* dx = detail::grad_of(x.node());
        double* dgain = detail::grad_of(gain.node());
        double* dbias = detail::grad_of(bias.node());
        for (std::size_t r = 0; r < rows; ++r) {
          const double* grow = g.data() + r * c;
          const double* nrow = normed.data() + r * c;
          if (dgain || dbias) {
            for (std::size_t i = 0; i < c; ++i) {
              if (dgain) dgain[i] += grow[i] * nrow[i];
              if (dbias) dbias[i] += grow[i];
            }
          }
          if (dx) {
            double mean_g = 0.0, mean_gn = 0.0;
            for (std::size_t i = 0; i < c; ++i) {
              const double gn = grow[i] * gain.at(i);
              mean_g += gn;
              mean_gn += gn * nrow[i];
            }
            mean_g /= static_cast<double>(c);
            mean_gn /= static_cast<double>(c);
            for (std::size_t i = 0; i < c; ++i) {
              const double gn = grow[i] * gain.at(i);
              dx[r * c + i] += inv_std[r] * (gn - mean_g - nrow[i] * mean_gn);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Indexing and layout

// Rows of table[V x c] selected by ids, giving [len x c].
inline Tensor embedding(const Tensor& table, std::span<const int> ids) {
  detail::require_rank(table, 2, "embedding");
  const std::size_t vocab = table.dim(0), c = table.dim(1);
  std::vector<int> index(ids.begin(), ids.end());
  std::vector<double> out(index.size() * c);
  for (std::size_t t = 0; t < index.size(); ++t) {
    if (index[t] < 0 || static_cast<std::size_t>(index[t]) >= vocab) {
      throw DimensionError("embedding: id " + std::to_string(index[t]) +
                           " outside table " + shape_str(table.shape()));
    }
    std::copy_n(table.data().data() + index[t] * c, c, out.data() + t * c);
  }
  Shape shape{index.size(), c};
  return detail::make_result(std::move(shape), std::move(out), {table},
                             [table, c, index = std::move(index)](detail::Node& self) {
                               double* dt = detail::grad_of(table.node());
                               for (std::size_t t = 0; t < index.size(); ++t) {
                                 for (std::size_t i = 0; i < c; ++i)
                                   dt[index[t] * c + i] += self.grad[t * c + i];
                               }
                             });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " +
                         shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return detail::make_result(std::move(shape), std::move(out), {x},
                             [x](detail::Node& self) {
                               double* dx = detail::grad_of(x.node());
                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                 dx[i] += self.grad[i];
                             });
}

// Axis permutation: output axis i is input axis axes[i].
inline Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) {
    throw DimensionError("permute: " + std::to_string(axes.size()) +
                         " axes for " + shape_str(x.shape()));
  }
  std::vector<bool> used(r, false);
  for (auto a : axes) {
    if (a >= r || used[a]) throw DimensionError("permute: bad axis list");
    used[a] = true;
  }
  const Shape& in_shape = x.shape();
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in_shape[axes[i]];
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
  // source flat index for every destination flat index
  std::vector<std::size_t> source(x.size());
  std::vector<std::size_t> counter(r, 0);
  for (std::size_t flat = 0; flat < source.size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += counter[i] * in_stride[axes[i]];
    source[flat] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++counter[i] < out_shape[i]) break;
      counter[i] = 0;
    }
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(source[i]);
  return detail::make_result(std::move(out_shape), std::move(out), {x},
                             [x, source = std::move(source)](detail::Node& self) {
                               double* dx = detail::grad_of(x.node());
                               for (std::size_t i = 0; i < source.size(); ++i)
                                 dx[source[i]] += self.grad[i];
                             });
}

// Swaps the last two axes.
inline Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose: rank < 2");
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
  return permute(x, axes);
}

// Concatenation along axis 0.
inline Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  Shape shape = parts.front().shape();
  if (shape.empty()) throw DimensionError("concat: scalar input");
  std::size_t rows = 0;
  for (const auto& p : parts) {
    Shape tail_a(shape.begin() + 1, shape.end());
    Shape tail_b(p.shape().begin() + 1, p.shape().end());
    if (p.rank() != shape.size() || tail_a != tail_b) {
      throw DimensionError("concat: " + shape_str(shape) + " vs " +
                           shape_str(p.shape()));
    }
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(rows * (numel(shape) / std::max<std::size_t>(shape[0], 1)));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  shape[0] = rows;
  return detail::make_result(std::move(shape), std::move(out), parts,
                             [parts](detail::Node& self) {
                               std::size_t offset = 0;
                               for (const auto& p : parts) {
                                 if (double* dp = detail::grad_of(p.node())) {
                                   for (std::size_t i = 0; i < p.size(); ++i)
                                     dp[i] += self.grad[offset + i];
                                 }
                                 offset += p.size();
                               }
                             });
}

// Rows of x (along axis 0) at the given indices, repeats allowed.
inline Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  if (x.rank() == 0) throw DimensionError("gather_rows on a scalar");
  const std::size_t width = x.size() / std::max<std::size_t>(x.dim(0), 1);
  std::vector<std::size_t> index(rows.begin(), rows.end());
  std::vector<double> out(index.size() * width);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= x.dim(0)) {
      throw DimensionError("gather_rows: row " + std::to_string(index[r]) +
                           " outside " + shape_str(x.shape()));
    }
    std::copy_n(x.data().data() + index[r] * width, width, out.data() + r * width);
  }
  Shape shape = x.shape();
  shape[0] = index.size();
  return detail::make_result(std::move(shape), std::move(out), {x},
                             [x, width, index = std::move(index)](detail::Node& self) {
                               double* dx = detail::grad_of(x.node());
                               for (std::size_t r = 0; r < index.size(); ++r)
                                 for (std::size_t i = 0; i < width; ++i)
                                   dx[index[r] * width + i] += self.grad[r * width + i];
                             });
}

inline Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  if (begin > end || end > x.dim(0)) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") outside " + shape_str(x.shape()));
  }
  std::vector<std::size_t> rows(end - begin);
  std::iota(rows.begin(), rows.end(), begin);
  return gather_rows(x, rows);
}

// Copy of base with delta[r] added onto row rows[r]; other rows pass through
// bit for bit.
inline Tensor scatter_add_rows(const Tensor& base, std::span<const std::size_t> rows,
                               const Tensor& delta) {
  if (base.rank() == 0 || delta.rank() == 0 || delta.dim(0) != rows.size()) {
    throw DimensionError("scatter_add_rows: " + shape_str(base.shape()) +
                         " with delta " + shape_str(delta.shape()));
  }
  const std::size_t width = base.size() / std::max<std::size_t>(base.dim(0), 1);
  if (delta.size() != rows.size() * width) {
    throw DimensionError("scatter_add_rows: row width mismatch " +
                         shape_str(base.shape()) + " vs " + shape_str(delta.shape()));
  }
  std::vector<std::size_t> index(rows.begin(), rows.end());
  std::vector<double> out(base.data().begin(), base.data().end());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= base.dim(0)) throw DimensionError("scatter_add_rows: bad row");
    for (std::size_t i = 0; i < width; ++i)
      out[index[r] * width + i] += delta.at(r * width + i);
  }
  return detail::make_result(
      base.shape(), std::move(out), {base, delta},
      [base, delta, width, index = std::move(index)](detail::Node& self) {
        if (double* db = detail::grad_of(base.node())) {
          for (std::size_t i = 0; i < self.grad.size(); ++i) db[i] += self.grad[i];
        }
        if (double* dd = detail::grad_of(delta.node())) {
          for (std::size_t r = 0; r < index.size(); ++r)
            for (std::size_t i = 0; i < width; ++i)
              dd[r * width + i] += self.grad[index[r] * width + i];
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions and losses

inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return detail::make_result({}, {acc}, {x}, [x](detail::Node& self) {
    double* dx = detail::grad_of(x.node());
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

// Mean of a set of scalars, summed in sorted order so the result is
// independent of the order they are listed in.
inline Tensor mean_of(const std::vector<Tensor>& scalars) {
  if (scalars.empty()) throw DimensionError("mean_of: no inputs");
  std::vector<double> values;
  values.reserve(scalars.size());
  for (const auto& s : scalars) values.push_back(s.item());
  const double n = static_cast<double>(scalars.size());
  return detail::make_result({}, {order_free_sum(values) / n}, scalars,
                             [scalars, n](detail::Node& self) {
                               for (const auto& s : scalars)
                                 if (double* ds = detail::grad_of(s.node()))
                                   ds[0] += self.grad[0] / n;
                             });
}

// Mean over rows of -log softmax(logits[row])[target[row]].
// Row losses are combined with an order-free sum.
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  detail::require_rank(logits, 2, "cross_entropy");
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_str(logits.shape()));
  }
  if (rows == 0) throw DimensionError("cross_entropy: no rows");
  std::vector<int> target(targets.begin(), targets.end());
  std::vector<double> probs(logits.size()), losses(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (target[r] < 0 || static_cast<std::size_t>(target[r]) >= classes) {
      throw DimensionError("cross_entropy: target out of range");
    }
    const double* row = logits.data().data() + r * classes;
    const double mx = *std::max_element(row, row + classes);
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) total += std::exp(row[c] - mx);
    const double log_z = mx + std::log(total);
    for (std::size_t c = 0; c < classes; ++c)
      probs[r * classes + c] = std::exp(row[c] - log_z);
    losses[r] = log_z - row[target[r]];
  }
  const double n = static_cast<double>(rows);
  return detail::make_result(
      {}, {order_free_sum(losses) / n}, {logits},
      [logits, classes, rows, n, target = std::move(target),
       probs = std::move(probs)](detail::Node& self) {
        double* dl = detail::grad_of(logits.node());
        const double g = self.grad[0] / n;
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < classes; ++c) {
            const double indicator = static_cast<int>(c) == target[r] ? 1.0 : 0.0;
            dl[r * classes + c] += g * (probs[r * classes + c] - indicator);
          }
      });
}

}  // namespace setrank
