#include "cyctr/layers.hpp"

#include <cmath>

namespace cyctr {

Tensor uniform_init(std::vector<int64_t> shape, int64_t fan_in, CounterRng rng) {
  Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

LinearLayer::LinearLayer(int64_t in, int64_t out, CounterRng rng)
    : weight(uniform_init({in, out}, in, rng.split("weight"))),
      bias(Tensor::zeros({out}, true)) {}

void LinearLayer::collect(const std::string& prefix, std::vector<Parameter>& out) const {
  out.push_back({weight, prefix + ".weight"});
  out.push_back({bias, prefix + ".bias"});
}

LayerNormLayer::LayerNormLayer(int64_t d)
    : gamma(Tensor::full({d}, 1.0, true)), beta(Tensor::zeros({d}, true)) {}

void LayerNormLayer::collect(const std::string& prefix, std::vector<Parameter>& out) const {
  out.push_back({gamma, prefix + ".gamma"});
  out.push_back({beta, prefix + ".beta"});
}

MlpBlock::MlpBlock(int64_t d, int64_t hidden, CounterRng rng)
    : fc1(d, hidden, rng.split("fc1")), fc2(hidden, d, rng.split("fc2")) {}

void MlpBlock::collect(const std::string& prefix, std::vector<Parameter>& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

Conv2dLayer::Conv2dLayer(int64_t kh, int64_t kw, int64_t cin, int64_t cout, int64_t stride,
                         int64_t pad, CounterRng rng)
    : weight(uniform_init({kh, kw, cin, cout}, kh * kw * cin, rng.split("weight"))),
      bias(Tensor::zeros({cout}, true)),
      stride(stride),
      pad(pad) {}

void Conv2dLayer::collect(const std::string& prefix, std::vector<Parameter>& out) const {
  out.push_back({weight, prefix + ".weight"});
  out.push_back({bias, prefix + ".bias"});
}

}  // namespace cyctr
