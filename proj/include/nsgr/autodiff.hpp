#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "nsgr/errors.hpp"
#include "nsgr/tensor.hpp"

namespace nsgr {

// Reverse-mode autodiff over Tensor-valued nodes. Each operation builds a node
// holding its value, its parents and a backward closure; backward() runs the
// closures in reverse topological order. Graphs are kept alive by shared_ptr
// ownership from any live Var, so there is no separate tape object.
//
// Reductions accumulate left-to-right in a fixed order, so single-threaded
// runs are bit-reproducible.

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on demand during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this->grad into parents' grads.
  std::function<void(Node&)> backprop;
  // Leaf hook: called once with the final gradient (parameter accumulation).
  std::function<void(const Tensor&)> leaf_hook;

  void ensure_grad() {
    if (grad.rows != value.rows || grad.cols != value.cols) grad = Tensor(value.rows, value.cols);
  }
};

}  // namespace detail

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  std::size_t rows() const { return node_->value.rows; }
  std::size_t cols() const { return node_->value.cols; }
  double scalar() const {
    if (rows() != 1 || cols() != 1) throw DomainError("scalar(): tensor is " + shape_str(value()));
    return node_->value.data[0];
  }
  std::shared_ptr<detail::Node> node() const { return node_; }

  void set_leaf_hook(std::function<void(const Tensor&)> hook) { node_->leaf_hook = std::move(hook); }

 private:
  std::shared_ptr<detail::Node> node_;
};

inline Var make_leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Var(n);
}

inline Var constant(Tensor value) { return make_leaf(std::move(value), false); }
inline Var scalar_constant(double v) { return constant(Tensor(1, 1, v)); }

inline Var make_op(Tensor value, std::vector<Var> parents, std::function<void(detail::Node&)> backprop) {
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(value);
  n->parents.reserve(parents.size());
  for (const Var& p : parents) {
    n->parents.push_back(p.node());
    if (p.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) n->backprop = std::move(backprop);
  return Var(n);
}

// ---- elementwise & broadcast ops ----

inline Var add(const Var& a, const Var& b) {
  check_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  add_inplace(out, b.value());
  return make_op(std::move(out), {a, b}, [](detail::Node& n) {
    for (int p = 0; p < 2; ++p)
      if (n.parents[p]->requires_grad) add_inplace(n.parents[p]->grad, n.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  check_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.value().data[i];
  return make_op(std::move(out), {a, b}, [](detail::Node& n) {
    if (n.parents[0]->requires_grad) add_inplace(n.parents[0]->grad, n.grad);
    if (n.parents[1]->requires_grad)
      for (std::size_t i = 0; i < n.grad.data.size(); ++i) n.parents[1]->grad.data[i] -= n.grad.data[i];
  });
}

inline Var mul(const Var& a, const Var& b) {
  check_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.value().data[i];
  return make_op(std::move(out), {a, b}, [](detail::Node& n) {
    if (n.parents[0]->requires_grad)
      for (std::size_t i = 0; i < n.grad.data.size(); ++i)
        n.parents[0]->grad.data[i] += n.grad.data[i] * n.parents[1]->value.data[i];
    if (n.parents[1]->requires_grad)
      for (std::size_t i = 0; i < n.grad.data.size(); ++i)
        n.parents[1]->grad.data[i] += n.grad.data[i] * n.parents[0]->value.data[i];
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.data) v *= s;
  return make_op(std::move(out), {a}, [s](detail::Node& n) {
    for (std::size_t i = 0; i < n.grad.data.size(); ++i) n.parents[0]->grad.data[i] += s * n.grad.data[i];
  });
}

inline Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.data) v += s;
  return make_op(std::move(out), {a}, [](detail::Node& n) { add_inplace(n.parents[0]->grad, n.grad); });
}

// Multiplies every entry of `a` by the 1x1 var `s`.
inline Var mul_scalar(const Var& a, const Var& s) {
  if (s.rows() != 1 || s.cols() != 1) throw DomainError("mul_scalar: scalar operand is " + shape_str(s.value()));
  const double sv = s.value().data[0];
  Tensor out = a.value();
  for (double& v : out.data) v *= sv;
  return make_op(std::move(out), {a, s}, [](detail::Node& n) {
    const double sv = n.parents[1]->value.data[0];
    if (n.parents[0]->requires_grad)
      for (std::size_t i = 0; i < n.grad.data.size(); ++i) n.parents[0]->grad.data[i] += sv * n.grad.data[i];
    if (n.parents[1]->requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n.grad.data.size(); ++i) acc += n.grad.data[i] * n.parents[0]->value.data[i];
      n.parents[1]->grad.data[0] += acc;
    }
  });
}

// Adds row vector b (1xC) to every row of a (RxC).
inline Var add_rowvec(const Var& a, const Var& b) {
  if (b.rows() != 1 || b.cols() != a.cols())
    throw ConfigError("add_rowvec: bias " + shape_str(b.value()) + " does not broadcast over " + shape_str(a.value()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.rows; ++i) {
    double* r = out.row_ptr(i);
    const double* bv = b.value().row_ptr(0);
    for (std::size_t j = 0; j < out.cols; ++j) r[j] += bv[j];
  }
  return make_op(std::move(out), {a, b}, [](detail::Node& n) {
    if (n.parents[0]->requires_grad) add_inplace(n.parents[0]->grad, n.grad);
    if (n.parents[1]->requires_grad) {
      double* bg = n.parents[1]->grad.row_ptr(0);
      for (std::size_t i = 0; i < n.grad.rows; ++i) {
        const double* g = n.grad.row_ptr(i);
        for (std::size_t j = 0; j < n.grad.cols; ++j) bg[j] += g[j];
      }
    }
  });
}

// Replicates a 1xC row n times.
inline Var broadcast_rows(const Var& a, std::size_t n) {
  if (a.rows() != 1) throw DomainError("broadcast_rows: input must have one row");
  Tensor out(n, a.cols());
  for (std::size_t i = 0; i < n; ++i)
    std::copy(a.value().row_ptr(0), a.value().row_ptr(0) + a.cols(), out.row_ptr(i));
  return make_op(std::move(out), {a}, [](detail::Node& n_) {
    double* g0 = n_.parents[0]->grad.row_ptr(0);
    for (std::size_t i = 0; i < n_.grad.rows; ++i) {
      const double* g = n_.grad.row_ptr(i);
      for (std::size_t j = 0; j < n_.grad.cols; ++j) g0[j] += g[j];
    }
  });
}

// ---- nonlinearities ----

inline Var relu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return make_op(std::move(out), {a}, [](detail::Node& n) {
    for (std::size_t i = 0; i < n.grad.data.size(); ++i)
      if (n.parents[0]->value.data[i] > 0.0) n.parents[0]->grad.data[i] += n.grad.data[i];
  });
}

inline Var sigmoid(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data) v = sigmoid(v);
  Tensor saved = out;
  return make_op(std::move(out), {a}, [saved](detail::Node& n) {
    for (std::size_t i = 0; i < n.grad.data.size(); ++i) {
      const double y = saved.data[i];
      n.parents[0]->grad.data[i] += n.grad.data[i] * y * (1.0 - y);
    }
  });
}

// Gradient passes through strictly inside (lo, hi) and is cut at the rails.
inline Var clamp(const Var& a, double lo, double hi) {
  Tensor out = a.value();
  for (double& v : out.data) v = std::min(hi, std::max(lo, v));
  return make_op(std::move(out), {a}, [lo, hi](detail::Node& n) {
    for (std::size_t i = 0; i < n.grad.data.size(); ++i) {
      const double x = n.parents[0]->value.data[i];
      if (x > lo && x < hi) n.parents[0]->grad.data[i] += n.grad.data[i];
    }
  });
}

inline Var log(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data) v = std::log(v);
  return make_op(std::move(out), {a}, [](detail::Node& n) {
    for (std::size_t i = 0; i < n.grad.data.size(); ++i)
      n.parents[0]->grad.data[i] += n.grad.data[i] / n.parents[0]->value.data[i];
  });
}

inline Var exp(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data) v = std::exp(v);
  Tensor saved = out;
  return make_op(std::move(out), {a}, [saved](detail::Node& n) {
    for (std::size_t i = 0; i < n.grad.data.size(); ++i)
      n.parents[0]->grad.data[i] += n.grad.data[i] * saved.data[i];
  });
}

inline Var softmax_rows(const Var& a) {
  Tensor out = softmax_rows_value(a.value());
  Tensor saved = out;
  return make_op(std::move(out), {a}, [saved](detail::Node& n) {
    for (std::size_t i = 0; i < n.grad.rows; ++i) {
      const double* y = saved.row_ptr(i);
      const double* dy = n.grad.row_ptr(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < n.grad.cols; ++j) dot += dy[j] * y[j];
      double* dx = n.parents[0]->grad.row_ptr(i);
      for (std::size_t j = 0; j < n.grad.cols; ++j) dx[j] += y[j] * (dy[j] - dot);
    }
  });
}

// ---- linear algebra ----

inline Var matmul(const Var& a, const Var& b) {
  Tensor out = matmul(a.value(), b.value());
  return make_op(std::move(out), {a, b}, [](detail::Node& n) {
    if (n.parents[0]->requires_grad) add_inplace(n.parents[0]->grad, matmul_nt(n.grad, n.parents[1]->value));
    if (n.parents[1]->requires_grad) add_inplace(n.parents[1]->grad, matmul_tn(n.parents[0]->value, n.grad));
  });
}

inline Var transpose(const Var& a) {
  return make_op(transpose(a.value()), {a},
                 [](detail::Node& n) { add_inplace(n.parents[0]->grad, transpose(n.grad)); });
}

// ---- structural ops ----

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DomainError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ConfigError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    for (std::size_t i = 0; i < rows; ++i)
      std::copy(p.value().row_ptr(i), p.value().row_ptr(i) + p.cols(), out.row_ptr(i) + off);
    off += p.cols();
  }
  return make_op(std::move(out), parts, [](detail::Node& n) {
    std::size_t off = 0;
    for (auto& p : n.parents) {
      if (p->requires_grad)
        for (std::size_t i = 0; i < n.grad.rows; ++i) {
          const double* g = n.grad.row_ptr(i) + off;
          double* pg = p->grad.row_ptr(i);
          for (std::size_t j = 0; j < p->value.cols; ++j) pg[j] += g[j];
        }
      off += p->value.cols;
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DomainError("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ConfigError("concat_rows: col mismatch");
    rows += p.rows();
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data.begin(), p.value().data.end(), out.data.begin() + off * cols);
    off += p.rows();
  }
  return make_op(std::move(out), parts, [](detail::Node& n) {
    std::size_t off = 0;
    for (auto& p : n.parents) {
      if (p->requires_grad)
        for (std::size_t i = 0; i < p->value.data.size(); ++i)
          p->grad.data[i] += n.grad.data[off * n.grad.cols + i];
      off += p->value.rows;
    }
  });
}

inline Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  if (begin >= end || end > a.cols()) throw DomainError("slice_cols: bad range");
  Tensor out(a.rows(), end - begin);
  for (std::size_t i = 0; i < a.rows(); ++i)
    std::copy(a.value().row_ptr(i) + begin, a.value().row_ptr(i) + end, out.row_ptr(i));
  return make_op(std::move(out), {a}, [begin](detail::Node& n) {
    for (std::size_t i = 0; i < n.grad.rows; ++i) {
      const double* g = n.grad.row_ptr(i);
      double* pg = n.parents[0]->grad.row_ptr(i) + begin;
      for (std::size_t j = 0; j < n.grad.cols; ++j) pg[j] += g[j];
    }
  });
}

// Scales row i of a (RxC) by w[i] (Rx1).
inline Var scale_rows(const Var& a, const Var& w) {
  if (w.rows() != a.rows() || w.cols() != 1)
    throw DomainError("scale_rows: weights must be " + std::to_string(a.rows()) + "x1");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.rows; ++i) {
    const double wi = w.value().data[i];
    double* r = out.row_ptr(i);
    for (std::size_t j = 0; j < out.cols; ++j) r[j] *= wi;
  }
  return make_op(std::move(out), {a, w}, [](detail::Node& n) {
    const Tensor& av = n.parents[0]->value;
    const Tensor& wv = n.parents[1]->value;
    if (n.parents[0]->requires_grad)
      for (std::size_t i = 0; i < n.grad.rows; ++i) {
        const double wi = wv.data[i];
        const double* g = n.grad.row_ptr(i);
        double* pg = n.parents[0]->grad.row_ptr(i);
        for (std::size_t j = 0; j < n.grad.cols; ++j) pg[j] += wi * g[j];
      }
    if (n.parents[1]->requires_grad)
      for (std::size_t i = 0; i < n.grad.rows; ++i) {
        const double* g = n.grad.row_ptr(i);
        const double* a_ = av.row_ptr(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < n.grad.cols; ++j) acc += g[j] * a_[j];
        n.parents[1]->grad.data[i] += acc;
      }
  });
}

inline Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
  if (begin >= end || end > a.rows()) throw DomainError("slice_rows: bad range");
  Tensor out(end - begin, a.cols());
  std::copy(a.value().row_ptr(begin), a.value().row_ptr(begin) + out.data.size(), out.data.begin());
  return make_op(std::move(out), {a}, [begin](detail::Node& n) {
    double* pg = n.parents[0]->grad.row_ptr(begin);
    for (std::size_t i = 0; i < n.grad.data.size(); ++i) pg[i] += n.grad.data[i];
  });
}

// Row gather (embedding lookup); backward scatter-adds.
inline Var gather_rows(const Var& a, std::vector<std::size_t> ids) {
  Tensor out(ids.size(), a.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= a.rows()) throw DomainError("gather_rows: index out of range");
    std::copy(a.value().row_ptr(ids[i]), a.value().row_ptr(ids[i]) + a.cols(), out.row_ptr(i));
  }
  return make_op(std::move(out), {a}, [ids = std::move(ids)](detail::Node& n) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const double* g = n.grad.row_ptr(i);
      double* pg = n.parents[0]->grad.row_ptr(ids[i]);
      for (std::size_t j = 0; j < n.grad.cols; ++j) pg[j] += g[j];
    }
  });
}

// ---- reductions ----

inline Var mean_rows(const Var& a) {
  Tensor out(1, a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.data[j] += a.value().at(i, j);
  const double inv = 1.0 / static_cast<double>(a.rows());
  for (double& v : out.data) v *= inv;
  return make_op(std::move(out), {a}, [inv](detail::Node& n) {
    for (std::size_t i = 0; i < n.parents[0]->grad.rows; ++i) {
      double* pg = n.parents[0]->grad.row_ptr(i);
      for (std::size_t j = 0; j < n.grad.cols; ++j) pg[j] += inv * n.grad.data[j];
    }
  });
}

inline Var sum_all(const Var& a) {
  double acc = 0.0;
  for (double v : a.value().data) acc += v;
  return make_op(Tensor(1, 1, acc), {a}, [](detail::Node& n) {
    const double g = n.grad.data[0];
    for (double& pg : n.parents[0]->grad.data) pg += g;
  });
}

inline Var dot(const Var& a, const Var& b) { return sum_all(mul(a, b)); }

// Rowwise softmax cross-entropy against integer targets; returns the mean.
inline Var softmax_cross_entropy(const Var& logits, const std::vector<std::size_t>& targets) {
  if (targets.size() != logits.rows()) throw DomainError("softmax_cross_entropy: target count mismatch");
  Tensor probs = softmax_rows_value(logits.value());
  double loss = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] >= logits.cols()) throw DomainError("softmax_cross_entropy: target out of range");
    loss -= std::log(std::max(probs.at(i, targets[i]), 1e-300));
  }
  loss /= static_cast<double>(targets.size());
  return make_op(Tensor(1, 1, loss), {logits}, [probs, targets](detail::Node& n) {
    const double g = n.grad.data[0] / static_cast<double>(targets.size());
    for (std::size_t i = 0; i < probs.rows; ++i) {
      const double* p = probs.row_ptr(i);
      double* pg = n.parents[0]->grad.row_ptr(i);
      for (std::size_t j = 0; j < probs.cols; ++j) pg[j] += g * (p[j] - (j == targets[i] ? 1.0 : 0.0));
    }
  });
}

// ---- backward ----

// Runs reverse-mode accumulation from a 1x1 loss node. Leaf hooks fire after
// each leaf's gradient is complete.
inline void backward(const Var& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) throw DomainError("backward: loss must be 1x1");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS for topological order.
  std::vector<detail::Node*> topo;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::Node* n : topo) {
    n->ensure_grad();
    std::fill(n->grad.data.begin(), n->grad.data.end(), 0.0);
  }
  loss.node()->grad.data[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backprop) n->backprop(*n);
    if (n->leaf_hook) n->leaf_hook(n->grad);
  }
}

}  // namespace nsgr
