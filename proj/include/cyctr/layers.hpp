#pragma once

#include <string>
#include <vector>

#include "cyctr/rng.hpp"
#include "cyctr/tensor.hpp"

// Small trainable building blocks. Weights use fan-in-scaled uniform init,
// biases start at zero, layer norms at gamma=1/beta=0; all draws come from a
// CounterRng stream split by parameter name so initialization is stable under
// reordering.

namespace cyctr {

Tensor uniform_init(std::vector<int64_t> shape, int64_t fan_in, CounterRng rng);

struct LinearLayer {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  LinearLayer() = default;
  LinearLayer(int64_t in, int64_t out, CounterRng rng);

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  void collect(const std::string& prefix, std::vector<Parameter>& out) const;
};

struct LayerNormLayer {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;

  LayerNormLayer() = default;
  explicit LayerNormLayer(int64_t d);

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }
  void collect(const std::string& prefix, std::vector<Parameter>& out) const;
};

struct MlpBlock {
  LinearLayer fc1;
  LinearLayer fc2;

  MlpBlock() = default;
  MlpBlock(int64_t d, int64_t hidden, CounterRng rng);

  Tensor operator()(const Tensor& x) const { return fc2(relu(fc1(x))); }
  void collect(const std::string& prefix, std::vector<Parameter>& out) const;
};

struct Conv2dLayer {
  Tensor weight;  // [kh, kw, Cin, Cout]
  Tensor bias;    // [Cout]
  int64_t stride = 1;
  int64_t pad = 0;

  Conv2dLayer() = default;
  Conv2dLayer(int64_t kh, int64_t kw, int64_t cin, int64_t cout, int64_t stride, int64_t pad,
              CounterRng rng);

  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, pad); }
  void collect(const std::string& prefix, std::vector<Parameter>& out) const;
};

}  // namespace cyctr
