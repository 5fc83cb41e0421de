#include "cyctr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "cyctr/kernels.hpp"
#include "cyctr/rng.hpp"

namespace cyctr {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

thread_local bool t_grad_enabled = true;

using autograd::Node;
using NodePtr = std::shared_ptr<Node>;

NodePtr new_node(std::vector<int64_t> shape, std::vector<double> data) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  return n;
}

// Records parents + backprop only when grad mode is on and some input
// requires grad; otherwise the result is a plain buffer.
Tensor make_op(std::vector<int64_t> shape, std::vector<double> data,
               std::vector<Tensor> inputs, std::function<void(Node&)> backprop) {
  auto n = new_node(std::move(shape), std::move(data));
  if (t_grad_enabled) {
    bool any = false;
    for (const auto& t : inputs) {
      if (t.defined() && t.requires_grad()) any = true;
    }
    if (any) {
      n->requires_grad = true;
      for (const auto& t : inputs) {
        if (t.defined()) n->parents.push_back(t.node());
      }
      n->backprop = std::move(backprop);
    }
  }
  return Tensor(std::move(n));
}

void check_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_to_string(t.shape()));
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
}

}  // namespace

std::string shape_to_string(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace autograd {

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

}  // namespace autograd

// ---- construction ------------------------------------------------------

Tensor Tensor::zeros(std::vector<int64_t> shape, bool requires_grad) {
  int64_t n = 1;
  for (int64_t e : shape) {
    if (e <= 0) throw ShapeError("zeros: non-positive extent in " + shape_to_string(shape));
    n *= e;
  }
  auto node = new_node(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::full(std::vector<int64_t> shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor Tensor::from_data(std::vector<int64_t> shape, std::vector<double> data,
                         bool requires_grad) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  if (n != static_cast<int64_t>(data.size())) {
    throw ShapeError("from_data: shape " + shape_to_string(shape) + " wants " +
                     std::to_string(n) + " values, got " + std::to_string(data.size()));
  }
  auto node = new_node(std::move(shape), std::move(data));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

double Tensor::value() const {
  if (numel() != 1) {
    throw ShapeError("value: tensor is not scalar, shape " + shape_to_string(shape()));
  }
  return node_->data[0];
}

double Tensor::at(std::vector<int64_t> idx) const {
  if (idx.size() != node_->shape.size()) {
    throw ShapeError("at: rank mismatch for shape " + shape_to_string(shape()));
  }
  int64_t off = 0;
  for (size_t i = 0; i < idx.size(); ++i) {
    off = off * node_->shape[i] + idx[i];
  }
  return node_->data[static_cast<size_t>(off)];
}

Tensor Tensor::detach() const {
  auto n = new_node(node_->shape, node_->data);
  return Tensor(std::move(n));
}

Tensor Tensor::clone() const {
  auto n = new_node(node_->shape, node_->data);
  n->requires_grad = node_->requires_grad;
  return Tensor(std::move(n));
}

// ---- matmul family -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank(a, 2, "matmul");
  check_rank(b, 2, "matmul");
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  std::vector<double> out(static_cast<size_t>(m * n));
  kernels::matmul_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  auto an = a.node();
  auto bn = b.node();
  return make_op({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      kernels::matmul_nt(self.grad.data(), bn->data.data(), an->grad.data(), m, n, k, true);
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      kernels::matmul_tn(an->data.data(), self.grad.data(), bn->grad.data(), k, m, n, true);
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_rank(a, 2, "matmul_nt");
  check_rank(b, 2, "matmul_nt");
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError("matmul_nt: inner extents differ, " + shape_to_string(a.shape()) +
                     " x " + shape_to_string(b.shape()) + "^T");
  }
  std::vector<double> out(static_cast<size_t>(m * n));
  kernels::matmul_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
  auto an = a.node();
  auto bn = b.node();
  return make_op({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](Node& self) {
    // C = A B^T: dA = dC B, dB = dC^T A
    if (an->requires_grad) {
      an->ensure_grad();
      kernels::matmul_nn(self.grad.data(), bn->data.data(), an->grad.data(), m, n, k, true);
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      kernels::matmul_tn(self.grad.data(), an->data.data(), bn->grad.data(), n, m, k, true);
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_rank(x, 2, "linear");
  check_rank(w, 2, "linear");
  check_rank(b, 1, "linear");
  const int64_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  if (w.dim(0) != k || b.dim(0) != n) {
    throw ShapeError("linear: shapes do not conform, x " + shape_to_string(x.shape()) +
                     ", w " + shape_to_string(w.shape()) + ", b " + shape_to_string(b.shape()));
  }
  std::vector<double> out(static_cast<size_t>(m * n));
  kernels::matmul_nn(x.data().data(), w.data().data(), out.data(), m, k, n);
  const double* bv = b.data().data();
  for (int64_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (int64_t j = 0; j < n; ++j) row[j] += bv[j];
  }
  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.node();
  return make_op({m, n}, std::move(out), {x, w, b}, [xn, wn, bn, m, k, n](Node& self) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      kernels::matmul_nt(self.grad.data(), wn->data.data(), xn->grad.data(), m, n, k, true);
    }
    if (wn->requires_grad) {
      wn->ensure_grad();
      kernels::matmul_tn(xn->data.data(), self.grad.data(), wn->grad.data(), k, m, n, true);
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int64_t i = 0; i < m; ++i) {
        const double* g = self.grad.data() + i * n;
        for (int64_t j = 0; j < n; ++j) bn->grad[static_cast<size_t>(j)] += g[j];
      }
    }
  });
}

// ---- softmax / layer norm -------------------------------------------------

Tensor softmax_rows(const Tensor& x) {
  check_rank(x, 2, "softmax_rows");
  const int64_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(static_cast<size_t>(m * n));
  const double* in = x.data().data();
  for (int64_t i = 0; i < m; ++i) {
    const double* row = in + i * n;
    // stabilizing max over finite entries only; -inf marks masked slots
    double mx = kNegInf;
    for (int64_t j = 0; j < n; ++j) {
      if (std::isfinite(row[j]) && row[j] > mx) mx = row[j];
    }
    if (mx == kNegInf) {
      throw DegenerateRowError("softmax_rows: row " + std::to_string(i) +
                               " has no finite entry");
    }
    double* orow = out.data() + i * n;
    double sum = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      const double e = (row[j] == kNegInf) ? 0.0 : std::exp(row[j] - mx);
      orow[j] = e;
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int64_t j = 0; j < n; ++j) orow[j] *= inv;
  }
  auto xn = x.node();
  std::vector<double> saved = out;
  return make_op({m, n}, std::move(out), {x},
                 [xn, m, n, y = std::move(saved)](Node& self) {
                   if (!xn->requires_grad) return;
                   xn->ensure_grad();
                   for (int64_t i = 0; i < m; ++i) {
                     const double* yi = y.data() + i * n;
                     const double* gi = self.grad.data() + i * n;
                     double dot = 0.0;
                     for (int64_t j = 0; j < n; ++j) dot += gi[j] * yi[j];
                     double* dx = xn->grad.data() + i * n;
                     for (int64_t j = 0; j < n; ++j) dx[j] += yi[j] * (gi[j] - dot);
                   }
                 });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_rank(x, 2, "layer_norm");
  check_rank(gamma, 1, "layer_norm");
  check_rank(beta, 1, "layer_norm");
  if (eps <= 0) throw TensorError("layer_norm: eps must be positive");
  const int64_t m = x.dim(0), d = x.dim(1);
  if (gamma.dim(0) != d || beta.dim(0) != d) {
    throw ShapeError("layer_norm: affine params " + shape_to_string(gamma.shape()) + "/" +
                     shape_to_string(beta.shape()) + " do not match width of " +
                     shape_to_string(x.shape()));
  }
  std::vector<double> out(static_cast<size_t>(m * d));
  std::vector<double> xhat(static_cast<size_t>(m * d));
  std::vector<double> inv_std(static_cast<size_t>(m));
  const double* in = x.data().data();
  const double* g = gamma.data().data();
  const double* b = beta.data().data();
  for (int64_t i = 0; i < m; ++i) {
    const double* row = in + i * d;
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double c = row[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = is;
    double* xh = xhat.data() + i * d;
    double* o = out.data() + i * d;
    for (int64_t j = 0; j < d; ++j) {
      xh[j] = (row[j] - mu) * is;
      o[j] = g[j] * xh[j] + b[j];
    }
  }
  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  return make_op(
      {m, d}, std::move(out), {x, gamma, beta},
      [xn, gn, bn, m, d, xh = std::move(xhat), is = std::move(inv_std)](Node& self) {
        for (int64_t i = 0; i < m; ++i) {
          const double* gi = self.grad.data() + i * d;
          const double* xhi = xh.data() + i * d;
          if (gn->requires_grad) {
            gn->ensure_grad();
            for (int64_t j = 0; j < d; ++j) gn->grad[static_cast<size_t>(j)] += gi[j] * xhi[j];
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            for (int64_t j = 0; j < d; ++j) bn->grad[static_cast<size_t>(j)] += gi[j];
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            double mean_dy = 0.0, mean_dyxh = 0.0;
            for (int64_t j = 0; j < d; ++j) {
              const double dy = gi[j] * gn->data[static_cast<size_t>(j)];
              mean_dy += dy;
              mean_dyxh += dy * xhi[j];
            }
            mean_dy /= static_cast<double>(d);
            mean_dyxh /= static_cast<double>(d);
            double* dx = xn->grad.data() + i * d;
            const double s = is[static_cast<size_t>(i)];
            for (int64_t j = 0; j < d; ++j) {
              const double dy = gi[j] * gn->data[static_cast<size_t>(j)];
              dx[j] += s * (dy - mean_dy - xhi[j] * mean_dyxh);
            }
          }
        }
      });
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto an = a.node();
  auto bn = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto an = a.node();
  auto bn = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto an = a.node();
  auto bn = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->data[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  auto an = a.node();
  return make_op(a.shape(), std::move(out), {a}, [an, s](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * s;
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + s;
  auto an = a.node();
  return make_op(a.shape(), std::move(out), {a}, [an](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
  });
}

Tensor add_row_broadcast(const Tensor& a, const Tensor& v) {
  check_rank(a, 2, "add_row_broadcast");
  check_rank(v, 1, "add_row_broadcast");
  const int64_t m = a.dim(0), n = a.dim(1);
  if (v.dim(0) != n) {
    throw ShapeError("add_row_broadcast: " + shape_to_string(a.shape()) + " + " +
                     shape_to_string(v.shape()));
  }
  std::vector<double> out(a.data().size());
  const double* av = a.data().data();
  const double* vv = v.data().data();
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(i * n + j)] = av[i * n + j] + vv[j];
  }
  auto an = a.node();
  auto vn = v.node();
  return make_op({m, n}, std::move(out), {a, v}, [an, vn, m, n](Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    }
    if (vn->requires_grad) {
      vn->ensure_grad();
      for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
          vn->grad[static_cast<size_t>(j)] += self.grad[static_cast<size_t>(i * n + j)];
        }
      }
    }
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  auto an = a.node();
  return make_op(a.shape(), std::move(out), {a}, [an](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      if (an->data[i] > 0.0) an->grad[i] += self.grad[i];
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  auto an = a.node();
  return make_op({1}, {s}, {a}, [an](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    const double g = self.grad[0];
    for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
  });
}

Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  double s = 0.0;
  for (double v : a.data()) s += v;
  s *= inv;
  auto an = a.node();
  return make_op({1}, {s}, {a}, [an, inv](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    const double g = self.grad[0] * inv;
    for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
  });
}

// ---- reshaping / indexing ---------------------------------------------

Tensor reshape(const Tensor& a, std::vector<int64_t> shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  if (n != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(a.shape()) + " as " +
                     shape_to_string(shape));
  }
  auto an = a.node();
  return make_op(std::move(shape), a.data(), {a}, [an](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& a, int64_t c0, int64_t c1) {
  check_rank(a, 2, "slice_cols");
  const int64_t m = a.dim(0), n = a.dim(1);
  if (c0 < 0 || c1 > n || c0 >= c1) {
    throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") invalid for " + shape_to_string(a.shape()));
  }
  const int64_t w = c1 - c0;
  std::vector<double> out(static_cast<size_t>(m * w));
  for (int64_t i = 0; i < m; ++i) {
    std::copy_n(a.data().data() + i * n + c0, w, out.data() + i * w);
  }
  auto an = a.node();
  return make_op({m, w}, std::move(out), {a}, [an, m, n, c0, w](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (int64_t i = 0; i < m; ++i) {
      const double* g = self.grad.data() + i * w;
      double* dst = an->grad.data() + i * n + c0;
      for (int64_t j = 0; j < w; ++j) dst[j] += g[j];
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw TensorError("concat_cols: no inputs");
  const int64_t m = parts[0].dim(0);
  int64_t n = 0;
  for (const auto& p : parts) {
    check_rank(p, 2, "concat_cols");
    if (p.dim(0) != m) {
      throw ShapeError("concat_cols: row mismatch " + shape_to_string(parts[0].shape()) +
                       " vs " + shape_to_string(p.shape()));
    }
    n += p.dim(1);
  }
  std::vector<double> out(static_cast<size_t>(m * n));
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t w = p.dim(1);
    for (int64_t i = 0; i < m; ++i) {
      std::copy_n(p.data().data() + i * w, w, out.data() + i * n + off);
    }
    off += w;
  }
  std::vector<NodePtr> nodes;
  std::vector<int64_t> widths;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    widths.push_back(p.dim(1));
  }
  return make_op({m, n}, std::move(out), parts,
                 [nodes, widths, m, n](Node& self) {
                   int64_t off = 0;
                   for (size_t pi = 0; pi < nodes.size(); ++pi) {
                     const int64_t w = widths[pi];
                     if (nodes[pi]->requires_grad) {
                       nodes[pi]->ensure_grad();
                       for (int64_t i = 0; i < m; ++i) {
                         const double* g = self.grad.data() + i * n + off;
                         double* dst = nodes[pi]->grad.data() + i * w;
                         for (int64_t j = 0; j < w; ++j) dst[j] += g[j];
                       }
                     }
                     off += w;
                   }
                 });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw TensorError("concat_rows: no inputs");
  const int64_t n = parts[0].dim(1);
  int64_t m = 0;
  for (const auto& p : parts) {
    check_rank(p, 2, "concat_rows");
    if (p.dim(1) != n) {
      throw ShapeError("concat_rows: column mismatch " + shape_to_string(parts[0].shape()) +
                       " vs " + shape_to_string(p.shape()));
    }
    m += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(m * n));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<NodePtr> nodes;
  std::vector<int64_t> rows;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    rows.push_back(p.dim(0));
  }
  return make_op({m, n}, std::move(out), parts, [nodes, rows, n](Node& self) {
    int64_t roff = 0;
    for (size_t pi = 0; pi < nodes.size(); ++pi) {
      if (nodes[pi]->requires_grad) {
        nodes[pi]->ensure_grad();
        const double* g = self.grad.data() + roff * n;
        for (size_t i = 0; i < nodes[pi]->grad.size(); ++i) nodes[pi]->grad[i] += g[i];
      }
      roff += rows[pi];
    }
  });
}

Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& rows) {
  check_rank(a, 2, "gather_rows");
  const int64_t m = a.dim(0), n = a.dim(1);
  const int64_t r = static_cast<int64_t>(rows.size());
  if (r == 0) throw TensorError("gather_rows: empty index list");
  std::vector<double> out(static_cast<size_t>(r * n));
  for (int64_t i = 0; i < r; ++i) {
    const int64_t src = rows[static_cast<size_t>(i)];
    if (src < 0 || src >= m) {
      throw ShapeError("gather_rows: index " + std::to_string(src) + " out of range for " +
                       shape_to_string(a.shape()));
    }
    std::copy_n(a.data().data() + src * n, n, out.data() + i * n);
  }
  auto an = a.node();
  return make_op({r, n}, std::move(out), {a}, [an, rows, n](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < rows.size(); ++i) {
      const double* g = self.grad.data() + static_cast<int64_t>(i) * n;
      double* dst = an->grad.data() + rows[i] * n;
      for (int64_t j = 0; j < n; ++j) dst[j] += g[j];
    }
  });
}

// ---- convolution / interpolation ---------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int64_t stride, int64_t pad) {
  check_rank(x, 3, "conv2d");
  check_rank(w, 4, "conv2d");
  check_rank(b, 1, "conv2d");
  const int64_t H = x.dim(0), W = x.dim(1), Cin = x.dim(2);
  const int64_t kh = w.dim(0), kw = w.dim(1), Cout = w.dim(3);
  if (w.dim(2) != Cin || b.dim(0) != Cout) {
    throw ShapeError("conv2d: x " + shape_to_string(x.shape()) + " incompatible with w " +
                     shape_to_string(w.shape()) + ", b " + shape_to_string(b.shape()));
  }
  int64_t Ho, Wo;
  kernels::conv2d_out_shape(H, W, kh, kw, stride, pad, &Ho, &Wo);
  if (Ho <= 0 || Wo <= 0) {
    throw ShapeError("conv2d: empty output for input " + shape_to_string(x.shape()));
  }
  std::vector<double> out(static_cast<size_t>(Ho * Wo * Cout));
  kernels::conv2d_forward(x.data().data(), w.data().data(), b.data().data(), out.data(), H, W,
                          Cin, kh, kw, Cout, stride, pad);
  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.node();
  return make_op(
      {Ho, Wo, Cout}, std::move(out), {x, w, b},
      [xn, wn, bn, H, W, Cin, kh, kw, Cout, Ho, Wo, stride, pad](Node& self) {
        const double* g = self.grad.data();
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (int64_t i = 0; i < Ho * Wo; ++i) {
            for (int64_t co = 0; co < Cout; ++co) {
              bn->grad[static_cast<size_t>(co)] += g[i * Cout + co];
            }
          }
        }
        const bool need_x = xn->requires_grad;
        const bool need_w = wn->requires_grad;
        if (!need_x && !need_w) return;
        if (need_x) xn->ensure_grad();
        if (need_w) wn->ensure_grad();
        for (int64_t oy = 0; oy < Ho; ++oy) {
          for (int64_t ox = 0; ox < Wo; ++ox) {
            const double* go = g + (oy * Wo + ox) * Cout;
            for (int64_t ky = 0; ky < kh; ++ky) {
              const int64_t iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= H) continue;
              for (int64_t kx = 0; kx < kw; ++kx) {
                const int64_t ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= W) continue;
                const int64_t xoff = (iy * W + ix) * Cin;
                const int64_t woff = ((ky * kw + kx) * Cin) * Cout;
                for (int64_t ci = 0; ci < Cin; ++ci) {
                  const double xv = xn->data[static_cast<size_t>(xoff + ci)];
                  double acc = 0.0;
                  for (int64_t co = 0; co < Cout; ++co) {
                    const double gv = go[co];
                    if (need_w) {
                      wn->grad[static_cast<size_t>(woff + ci * Cout + co)] += xv * gv;
                    }
                    acc += wn->data[static_cast<size_t>(woff + ci * Cout + co)] * gv;
                  }
                  if (need_x) xn->grad[static_cast<size_t>(xoff + ci)] += acc;
                }
              }
            }
          }
        }
      });
}

Tensor bilinear_upsample(const Tensor& x, int64_t H, int64_t W) {
  check_rank(x, 3, "bilinear_upsample");
  const int64_t h = x.dim(0), w = x.dim(1), C = x.dim(2);
  if (H <= 0 || W <= 0) throw ShapeError("bilinear_upsample: bad target size");
  const double sy = static_cast<double>(h) / static_cast<double>(H);
  const double sx = static_cast<double>(w) / static_cast<double>(W);
  // per output pixel: 4 source indices and weights
  struct Tap {
    int64_t i00, i01, i10, i11;
    double w00, w01, w10, w11;
  };
  std::vector<Tap> taps(static_cast<size_t>(H * W));
  for (int64_t oy = 0; oy < H; ++oy) {
    double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
    int64_t y0 = static_cast<int64_t>(std::floor(fy));
    double dy = fy - static_cast<double>(y0);
    int64_t y1 = y0 + 1;
    y0 = std::clamp<int64_t>(y0, 0, h - 1);
    y1 = std::clamp<int64_t>(y1, 0, h - 1);
    for (int64_t ox = 0; ox < W; ++ox) {
      double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
      int64_t x0 = static_cast<int64_t>(std::floor(fx));
      double dx = fx - static_cast<double>(x0);
      int64_t x1 = x0 + 1;
      x0 = std::clamp<int64_t>(x0, 0, w - 1);
      x1 = std::clamp<int64_t>(x1, 0, w - 1);
      Tap& t = taps[static_cast<size_t>(oy * W + ox)];
      t.i00 = (y0 * w + x0) * C;
      t.i01 = (y0 * w + x1) * C;
      t.i10 = (y1 * w + x0) * C;
      t.i11 = (y1 * w + x1) * C;
      t.w00 = (1 - dy) * (1 - dx);
      t.w01 = (1 - dy) * dx;
      t.w10 = dy * (1 - dx);
      t.w11 = dy * dx;
    }
  }
  std::vector<double> out(static_cast<size_t>(H * W * C));
  const double* in = x.data().data();
  for (int64_t p = 0; p < H * W; ++p) {
    const Tap& t = taps[static_cast<size_t>(p)];
    double* o = out.data() + p * C;
    for (int64_t c = 0; c < C; ++c) {
      o[c] = t.w00 * in[t.i00 + c] + t.w01 * in[t.i01 + c] + t.w10 * in[t.i10 + c] +
             t.w11 * in[t.i11 + c];
    }
  }
  auto xn = x.node();
  return make_op({H, W, C}, std::move(out), {x},
                 [xn, H, W, C, taps = std::move(taps)](Node& self) {
                   if (!xn->requires_grad) return;
                   xn->ensure_grad();
                   for (int64_t p = 0; p < H * W; ++p) {
                     const Tap& t = taps[static_cast<size_t>(p)];
                     const double* g = self.grad.data() + p * C;
                     for (int64_t c = 0; c < C; ++c) {
                       xn->grad[static_cast<size_t>(t.i00 + c)] += t.w00 * g[c];
                       xn->grad[static_cast<size_t>(t.i01 + c)] += t.w01 * g[c];
                       xn->grad[static_cast<size_t>(t.i10 + c)] += t.w10 * g[c];
                       xn->grad[static_cast<size_t>(t.i11 + c)] += t.w11 * g[c];
                     }
                   }
                 });
}

Tensor bilinear_gather(const Tensor& values, int64_t H, int64_t W, const Tensor& offsets) {
  check_rank(values, 2, "bilinear_gather");
  check_rank(offsets, 2, "bilinear_gather");
  const int64_t N = values.dim(0), d = values.dim(1);
  if (N != H * W) {
    throw ShapeError("bilinear_gather: " + shape_to_string(values.shape()) +
                     " is not a " + std::to_string(H) + "x" + std::to_string(W) + " grid");
  }
  if (offsets.dim(0) != N || offsets.dim(1) % 2 != 0) {
    throw ShapeError("bilinear_gather: offsets " + shape_to_string(offsets.shape()) +
                     " must be [N,2P] with N=" + std::to_string(N));
  }
  const int64_t P = offsets.dim(1) / 2;
  std::vector<double> out(static_cast<size_t>(N * P * d), 0.0);
  const double* V = values.data().data();
  const double* off = offsets.data().data();
  for (int64_t r = 0; r < N; ++r) {
    const int64_t ry = r / W, rx = r % W;
    for (int64_t p = 0; p < P; ++p) {
      const double yy = static_cast<double>(ry) + off[r * 2 * P + 2 * p];
      const double xx = static_cast<double>(rx) + off[r * 2 * P + 2 * p + 1];
      const int64_t y0 = static_cast<int64_t>(std::floor(yy));
      const int64_t x0 = static_cast<int64_t>(std::floor(xx));
      const double fy = yy - static_cast<double>(y0);
      const double fx = xx - static_cast<double>(x0);
      double* o = out.data() + (r * P + p) * d;
      const auto tap = [&](int64_t y, int64_t x, double wgt) {
        if (wgt == 0.0 || y < 0 || y >= H || x < 0 || x >= W) return;
        const double* src = V + (y * W + x) * d;
        for (int64_t c = 0; c < d; ++c) o[c] += wgt * src[c];
      };
      tap(y0, x0, (1 - fy) * (1 - fx));
      tap(y0, x0 + 1, (1 - fy) * fx);
      tap(y0 + 1, x0, fy * (1 - fx));
      tap(y0 + 1, x0 + 1, fy * fx);
    }
  }
  auto vn = values.node();
  auto on = offsets.node();
  return make_op(
      {N, P * d}, std::move(out), {values, offsets}, [vn, on, N, H, W, d, P](Node& self) {
        const bool need_v = vn->requires_grad;
        const bool need_o = on->requires_grad;
        if (need_v) vn->ensure_grad();
        if (need_o) on->ensure_grad();
        const double* V = vn->data.data();
        const double* off = on->data.data();
        for (int64_t r = 0; r < N; ++r) {
          const int64_t ry = r / W, rx = r % W;
          for (int64_t p = 0; p < P; ++p) {
            const double yy = static_cast<double>(ry) + off[r * 2 * P + 2 * p];
            const double xx = static_cast<double>(rx) + off[r * 2 * P + 2 * p + 1];
            const int64_t y0 = static_cast<int64_t>(std::floor(yy));
            const int64_t x0 = static_cast<int64_t>(std::floor(xx));
            const double fy = yy - static_cast<double>(y0);
            const double fx = xx - static_cast<double>(x0);
            const double* g = self.grad.data() + (r * P + p) * d;
            const auto inside = [&](int64_t y, int64_t x) {
              return y >= 0 && y < H && x >= 0 && x < W;
            };
            const auto vrow = [&](int64_t y, int64_t x) { return V + (y * W + x) * d; };
            double dyy = 0.0, dxx = 0.0;
            // corner (y,x) with weight wy*wx; d(wy)/dyy = sy, d(wx)/dxx = sx
            const auto corner = [&](int64_t y, int64_t x, double wy, double wx, double sy,
                                    double sx) {
              if (!inside(y, x)) return;
              const double* src = vrow(y, x);
              double dot = 0.0;
              for (int64_t c = 0; c < d; ++c) dot += g[c] * src[c];
              if (need_o) {
                dyy += sy * wx * dot;
                dxx += wy * sx * dot;
              }
              if (need_v) {
                double* dst = vn->grad.data() + (y * W + x) * d;
                const double wgt = wy * wx;
                for (int64_t c = 0; c < d; ++c) dst[c] += wgt * g[c];
              }
            };
            corner(y0, x0, 1 - fy, 1 - fx, -1.0, -1.0);
            corner(y0, x0 + 1, 1 - fy, fx, -1.0, 1.0);
            corner(y0 + 1, x0, fy, 1 - fx, 1.0, -1.0);
            corner(y0 + 1, x0 + 1, fy, fx, 1.0, 1.0);
            if (need_o) {
              on->grad[static_cast<size_t>(r * 2 * P + 2 * p)] += dyy;
              on->grad[static_cast<size_t>(r * 2 * P + 2 * p + 1)] += dxx;
            }
          }
        }
      });
}

Tensor weighted_point_sum(const Tensor& weights, const Tensor& points) {
  check_rank(weights, 2, "weighted_point_sum");
  check_rank(points, 2, "weighted_point_sum");
  const int64_t N = weights.dim(0), P = weights.dim(1);
  if (points.dim(0) != N || points.dim(1) % P != 0) {
    throw ShapeError("weighted_point_sum: weights " + shape_to_string(weights.shape()) +
                     " vs points " + shape_to_string(points.shape()));
  }
  const int64_t d = points.dim(1) / P;
  std::vector<double> out(static_cast<size_t>(N * d), 0.0);
  const double* wv = weights.data().data();
  const double* pv = points.data().data();
  for (int64_t r = 0; r < N; ++r) {
    double* o = out.data() + r * d;
    for (int64_t p = 0; p < P; ++p) {
      const double wgt = wv[r * P + p];
      const double* src = pv + (r * P + p) * d;
      for (int64_t c = 0; c < d; ++c) o[c] += wgt * src[c];
    }
  }
  auto wn = weights.node();
  auto pn = points.node();
  return make_op({N, d}, std::move(out), {weights, points}, [wn, pn, N, P, d](Node& self) {
    const double* g = self.grad.data();
    if (wn->requires_grad) {
      wn->ensure_grad();
      for (int64_t r = 0; r < N; ++r) {
        for (int64_t p = 0; p < P; ++p) {
          double dot = 0.0;
          const double* src = pn->data.data() + (r * P + p) * d;
          for (int64_t c = 0; c < d; ++c) dot += g[r * d + c] * src[c];
          wn->grad[static_cast<size_t>(r * P + p)] += dot;
        }
      }
    }
    if (pn->requires_grad) {
      pn->ensure_grad();
      for (int64_t r = 0; r < N; ++r) {
        for (int64_t p = 0; p < P; ++p) {
          const double wgt = wn->data[static_cast<size_t>(r * P + p)];
          double* dst = pn->grad.data() + (r * P + p) * d;
          for (int64_t c = 0; c < d; ++c) dst[c] += wgt * g[r * d + c];
        }
      }
    }
  });
}

// ---- reverse pass -------------------------------------------------------

void backward(const Tensor& loss) {
  auto root = loss.node();
  if (!root) throw GraphError("backward: undefined tensor");
  if (root->numel() != 1) {
    throw GraphError("backward: loss must be scalar, got shape " +
                     shape_to_string(root->shape));
  }
  if (!root->backprop && root->parents.empty()) {
    throw GraphError("backward: tensor is detached from the recorded computation");
  }
  if (root->backward_done) {
    throw GraphError("backward: second backward on the same loss without reset");
  }
  root->backward_done = true;

  // reverse post-order over parent edges = valid backward schedule
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node* p = f.node->parents[f.next_parent++].get();
      if (visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

void zero_grad(Tensor& t) { t.grad().clear(); }

void zero_grads(std::vector<Parameter>& params) {
  for (auto& p : params) zero_grad(p.tensor);
}

// ---- gradient checking ----------------------------------------------------

GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<Parameter>& params, double step, int probes,
                           uint64_t seed) {
  if (step <= 0) throw TensorError("grad_check: step must be positive");
  {
    autograd::NoGradGuard ng;
    const double v1 = f().value();
    const double v2 = f().value();
    if (!(v1 == v2)) {
      throw DeterminismError("grad_check: two identical evaluations differ (" +
                             std::to_string(v1) + " vs " + std::to_string(v2) + ")");
    }
  }

  // analytic gradients at the current point
  for (auto& p : params) {
    auto t = p.tensor;
    zero_grad(t);
  }
  Tensor loss = f();
  backward(loss);

  GradCheckReport report;
  CounterRng rng(seed);
  for (const auto& p : params) {
    auto node = p.tensor.node();
    const int64_t n = node->numel();
    GradCheckEntry entry;
    entry.name = p.name;
    const int64_t nprobe = std::min<int64_t>(probes, n);
    CounterRng prng = rng.split(CounterRng::fnv1a(p.name));
    // distinct probe coordinates: full scan when small, else sampled
    std::vector<int64_t> coords;
    if (nprobe == n) {
      coords.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    } else {
      std::unordered_set<int64_t> seen;
      while (static_cast<int64_t>(coords.size()) < nprobe) {
        const int64_t c = static_cast<int64_t>(prng.bounded(static_cast<uint64_t>(n)));
        if (seen.insert(c).second) coords.push_back(c);
      }
    }
    for (int64_t c : coords) {
      const double saved = node->data[static_cast<size_t>(c)];
      double fp, fm;
      {
        autograd::NoGradGuard ng;
        node->data[static_cast<size_t>(c)] = saved + step;
        fp = f().value();
        node->data[static_cast<size_t>(c)] = saved - step;
        fm = f().value();
        node->data[static_cast<size_t>(c)] = saved;
      }
      const double numeric = (fp - fm) / (2.0 * step);
      const double analytic =
          node->grad.empty() ? 0.0 : node->grad[static_cast<size_t>(c)];
      const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
      const double err = std::fabs(analytic - numeric) / denom;
      ++entry.probes;
      if (err > entry.max_rel_err) {
        entry.max_rel_err = err;
        entry.worst_index = c;
        entry.analytic = analytic;
        entry.numeric = numeric;
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace cyctr
