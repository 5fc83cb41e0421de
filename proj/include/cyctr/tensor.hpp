#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

// Dense 64-bit float tensors with reverse-mode autodiff. Every op records a
// node on a dynamic tape (parent links + a backprop closure); backward() on a
// scalar walks the tape in reverse topological order and accumulates grads.

namespace cyctr {

struct TensorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Shape mismatch; message names both shapes.
struct ShapeError : TensorError {
  using TensorError::TensorError;
};
// softmax_rows row with no finite entry.
struct DegenerateRowError : TensorError {
  using TensorError::TensorError;
};
// Misuse of the tape: non-scalar loss, detached tensor, double backward.
struct GraphError : TensorError {
  using TensorError::TensorError;
};
// grad_check noticed two identical evaluations disagreeing.
struct DeterminismError : TensorError {
  using TensorError::TensorError;
};

std::string shape_to_string(const std::vector<int64_t>& shape);

namespace autograd {

struct Node {
  std::vector<int64_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty == absent
  bool requires_grad = false;
  bool backward_done = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t e : shape) n *= e;
    return n;
  }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

bool grad_enabled();

// Scoped switch that stops ops from recording tape nodes.
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

}  // namespace autograd

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<autograd::Node> n) : node_(std::move(n)) {}

  static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<int64_t> shape, double value, bool requires_grad = false);
  static Tensor from_data(std::vector<int64_t> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int64_t>& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return node_->numel(); }

  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::vector<double>& grad() { return node_->grad; }
  const std::vector<double>& grad() const { return node_->grad; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  double value() const;                       // scalar tensors only
  double at(std::vector<int64_t> idx) const;  // row-major index helper

  // Same data, no tape history.
  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<autograd::Node>& node() const { return node_; }

 private:
  std::shared_ptr<autograd::Node> node_;
};

// A named, trainable tensor.
struct Parameter {
  Tensor tensor;
  std::string name;
};

// ---- ops -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]x[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k]x[n,k]^T
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
// a: [m,n], v: [n], broadcast over rows. v may hold the -inf mask sentinel.
Tensor add_row_broadcast(const Tensor& a, const Tensor& v);
Tensor relu(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor reshape(const Tensor& a, std::vector<int64_t> shape);
Tensor slice_cols(const Tensor& a, int64_t c0, int64_t c1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& rows);

// x: [H,W,Cin], w: [kh,kw,Cin,Cout], b: [Cout].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int64_t stride, int64_t pad);
// x: [h,w,C] -> [H,W,C]; align_corners=false convention.
Tensor bilinear_upsample(const Tensor& x, int64_t H, int64_t W);
// values: [H*W,d] grid tokens; offsets: [N,2P] as (dy,dx) pairs relative to
// each token's own grid position; N == H*W. Returns [N, P*d]. Samples with
// bilinear interpolation, zero outside the grid; differentiable in both
// values and offsets.
Tensor bilinear_gather(const Tensor& values, int64_t H, int64_t W, const Tensor& offsets);
// weights: [N,P], points: [N,P*d] -> [N,d]: per-row weighted sum of P points.
Tensor weighted_point_sum(const Tensor& weights, const Tensor& points);

// ---- reverse pass ----------------------------------------------------

void backward(const Tensor& loss);
void zero_grad(Tensor& t);
void zero_grads(std::vector<Parameter>& params);

// ---- gradient checking -----------------------------------------------

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  int64_t worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  int64_t probes = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool passed(double tol) const { return max_rel_err <= tol; }
};

// Central differences (f(t+s)-f(t-s))/2s at `probes` random coordinates per
// parameter; relative error denominator max(|analytic|, |numeric|, 1e-8).
// f must be a deterministic scalar function of the parameters; it is
// evaluated twice up front and a mismatch raises DeterminismError.
GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<Parameter>& params,
                           double step, int probes, uint64_t seed);

}  // namespace cyctr
