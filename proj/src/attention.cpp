#include "cyctr/attention.hpp"

#include <cmath>
#include <limits>

#include "cyctr/sampling.hpp"

namespace cyctr {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool all_neg_inf(const Tensor& bias) {
  for (double v : bias.data()) {
    if (v != kNegInf) return false;
  }
  return true;
}
}  // namespace

MhaParams::MhaParams(int64_t d, CounterRng rng)
    : wq(d, d, rng.split("wq")),
      wk(d, d, rng.split("wk")),
      wv(d, d, rng.split("wv")),
      wo(d, d, rng.split("wo")) {}

void MhaParams::collect(const std::string& prefix, std::vector<Parameter>& out) const {
  wq.collect(prefix + ".wq", out);
  wk.collect(prefix + ".wk", out);
  wv.collect(prefix + ".wv", out);
  wo.collect(prefix + ".wo", out);
}

PredOffsetParams::PredOffsetParams(int64_t d, int64_t P, CounterRng rng)
    : wq(d, d, rng.split("wq")),
      wv(d, d, rng.split("wv")),
      offsets(d, 2 * P, rng.split("offsets")),
      logits(d, P, rng.split("logits")) {}

void PredOffsetParams::collect(const std::string& prefix, std::vector<Parameter>& out) const {
  wq.collect(prefix + ".wq", out);
  wv.collect(prefix + ".wv", out);
  offsets.collect(prefix + ".offsets", out);
  logits.collect(prefix + ".logits", out);
}

Tensor attention_weights(const Tensor& q, const Tensor& k, const Tensor* bias,
                         AttentionDiag* diag) {
  if (q.dim(1) != k.dim(1)) {
    throw ShapeError("attention: query width " + shape_to_string(q.shape()) +
                     " vs key width " + shape_to_string(k.shape()));
  }
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  Tensor affinity = scale(matmul_nt(q, k), inv_scale);
  if (bias != nullptr) {
    if (bias->dim(0) != k.dim(0)) {
      throw ShapeError("attention: bias " + shape_to_string(bias->shape()) +
                       " does not match key count " + shape_to_string(k.shape()));
    }
    if (all_neg_inf(*bias)) {
      // every key masked: run the row unbiased rather than emit NaNs
      if (diag) ++diag->bias_fallbacks;
    } else {
      affinity = add_row_broadcast(affinity, *bias);
    }
  }
  return softmax_rows(affinity);
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const Tensor* bias, AttentionDiag* diag) {
  if (k.dim(0) != v.dim(0)) {
    throw ShapeError("attention: key rows " + shape_to_string(k.shape()) +
                     " vs value rows " + shape_to_string(v.shape()));
  }
  return matmul(attention_weights(q, k, bias, diag), v);
}

namespace {

// Shared by multi_head_attention and cross_attention: per-head loop with an
// optional externally supplied bias or a per-head cycle bias.
TokenSequence heads_attention(const TokenSequence& zq, const Tensor& kv_tokens,
                              const MhaParams& params, int64_t h, const Tensor* ext_bias,
                              const std::vector<uint8_t>* cycle_labels, AttentionDiag* diag) {
  const int64_t d = zq.tokens.dim(1);
  if (d % h != 0) {
    throw ShapeError("attention: head count " + std::to_string(h) +
                     " does not divide width " + std::to_string(d));
  }
  Tensor q = params.wq(zq.tokens);
  Tensor k = params.wk(kv_tokens);
  Tensor v = params.wv(kv_tokens);
  const int64_t hw = d / h;
  std::vector<Tensor> heads;
  heads.reserve(static_cast<size_t>(h));
  int64_t consistent_total = 0;
  for (int64_t m = 0; m < h; ++m) {
    Tensor qm = slice_cols(q, m * hw, (m + 1) * hw);
    Tensor km = slice_cols(k, m * hw, (m + 1) * hw);
    Tensor vm = slice_cols(v, m * hw, (m + 1) * hw);
    if (cycle_labels != nullptr) {
      const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hw));
      Tensor affinity = scale(matmul_nt(qm, km), inv_scale);
      CycleBias cb = cycle_consistency_bias(affinity, *cycle_labels);
      consistent_total += cb.consistent_count;
      Tensor weights;
      if (cb.consistent_count == 0) {
        if (diag) ++diag->bias_fallbacks;
        weights = softmax_rows(affinity);
      } else {
        weights = softmax_rows(add_row_broadcast(affinity, cb.bias));
      }
      heads.push_back(matmul(weights, vm));
    } else {
      heads.push_back(scaled_dot_attention(qm, km, vm, ext_bias, diag));
    }
  }
  if (cycle_labels != nullptr && diag) diag->consistent_counts.push_back(consistent_total);
  Tensor merged = h == 1 ? heads[0] : concat_cols(heads);
  return {params.wo(merged), zq.height, zq.width};
}

}  // namespace

TokenSequence multi_head_attention(const TokenSequence& zq, const TokenSequence& zkv,
                                   const MhaParams& params, int64_t h, const Tensor* bias,
                                   AttentionDiag* diag) {
  if (zq.tokens.dim(1) != zkv.tokens.dim(1)) {
    throw ShapeError("multi_head_attention: widths differ, " +
                     shape_to_string(zq.tokens.shape()) + " vs " +
                     shape_to_string(zkv.tokens.shape()));
  }
  return heads_attention(zq, zkv.tokens, params, h, bias, nullptr, diag);
}

CycleBias cycle_consistency_bias(const Tensor& affinity, const std::vector<uint8_t>& labels) {
  if (affinity.rank() != 2) {
    throw ShapeError("cycle_consistency_bias: affinity must be a matrix, got " +
                     shape_to_string(affinity.shape()));
  }
  const int64_t m = affinity.dim(0), n = affinity.dim(1);
  if (static_cast<int64_t>(labels.size()) != n) {
    throw ShapeError("cycle_consistency_bias: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " support tokens");
  }
  const double* a = affinity.data().data();
  // i*(j): per-column argmax, lowest index on ties
  std::vector<int64_t> col_argmax(static_cast<size_t>(n), 0);
  for (int64_t i = 1; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      if (a[i * n + j] > a[col_argmax[static_cast<size_t>(j)] * n + j]) {
        col_argmax[static_cast<size_t>(j)] = i;
      }
    }
  }
  // j*(i): per-row argmax of the rows actually referenced
  std::vector<int64_t> row_argmax(static_cast<size_t>(m), -1);
  CycleBias out;
  out.bias = Tensor::zeros({n});
  for (int64_t j = 0; j < n; ++j) {
    const int64_t istar = col_argmax[static_cast<size_t>(j)];
    int64_t& jstar = row_argmax[static_cast<size_t>(istar)];
    if (jstar < 0) {
      const double* row = a + istar * n;
      int64_t best = 0;
      for (int64_t jj = 1; jj < n; ++jj) {
        if (row[jj] > row[best]) best = jj;
      }
      jstar = best;
    }
    if (labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(jstar)]) {
      ++out.consistent_count;
    } else {
      out.bias.data()[static_cast<size_t>(j)] = kNegInf;
    }
  }
  return out;
}

TokenSequence cross_attention(const TokenSequence& zq, const SampledSupport& support,
                              const MhaParams& params, int64_t h, bool use_cycle_bias,
                              AttentionDiag* diag) {
  if (!support.tokens.defined() || support.tokens.dim(0) == 0) {
    throw TensorError("cross_attention: empty support");
  }
  return heads_attention(zq, support.tokens, params, h, nullptr,
                         use_cycle_bias ? &support.labels : nullptr, diag);
}

Tensor positional_encoding(int64_t height, int64_t width, int64_t d) {
  if (d % 4 != 0) {
    throw ShapeError("positional_encoding: d=" + std::to_string(d) +
                     " is not divisible by 4");
  }
  const int64_t half = d / 2;
  const int64_t pairs = half / 2;
  Tensor out = Tensor::zeros({height * width, d});
  double* o = out.data().data();
  for (int64_t y = 0; y < height; ++y) {
    for (int64_t x = 0; x < width; ++x) {
      double* row = o + (y * width + x) * d;
      for (int64_t i = 0; i < pairs; ++i) {
        const double omega =
            std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(half));
        row[2 * i] = std::sin(static_cast<double>(x) * omega);
        row[2 * i + 1] = std::cos(static_cast<double>(x) * omega);
        row[half + 2 * i] = std::sin(static_cast<double>(y) * omega);
        row[half + 2 * i + 1] = std::cos(static_cast<double>(y) * omega);
      }
    }
  }
  return out;
}

TokenSequence predicted_offset_attention(const TokenSequence& zq, const TokenSequence& values,
                                         const PredOffsetParams& params, int64_t P,
                                         AttentionDiag* diag) {
  (void)diag;
  if (!zq.is_grid()) {
    throw ShapeError("predicted_offset_attention: query sequence is not a grid");
  }
  if (values.height != zq.height || values.width != zq.width) {
    throw ShapeError("predicted_offset_attention: value grid " +
                     std::to_string(values.height) + "x" + std::to_string(values.width) +
                     " does not match query grid " + std::to_string(zq.height) + "x" +
                     std::to_string(zq.width));
  }
  const int64_t d = zq.tokens.dim(1);
  Tensor q = params.wq(zq.tokens);
  Tensor v = params.wv(values.tokens);
  Tensor coord = positional_encoding(zq.height, zq.width, d);
  Tensor qc = add(q, coord);
  Tensor offs = params.offsets(qc);   // [N, 2P]
  Tensor logits = params.logits(qc);  // [N, P]
  Tensor weights = softmax_rows(logits);
  Tensor gathered = bilinear_gather(v, zq.height, zq.width, offs);
  Tensor out = weighted_point_sum(weights, gathered);
  return {out, zq.height, zq.width};
}

}  // namespace cyctr
