#pragma once

#include <cstdint>
#include <vector>

#include "cyctr/layers.hpp"
#include "cyctr/tensor.hpp"

namespace cyctr {

struct SampledSupport;  // sampling.hpp

// Flattened feature map: N tokens of width d. height/width record the
// originating grid (height*width == N); both zero for non-grid sequences
// such as sampled support tokens.
struct TokenSequence {
  Tensor tokens;  // [N, d]
  int64_t height = 0;
  int64_t width = 0;

  bool is_grid() const { return height > 0 && width > 0; }
};

// Additive attention bias built from the argmax round trip. Entries are
// exactly 0 (cycle-consistent) or -inf; constant in backward.
struct CycleBias {
  Tensor bias;  // [N_s]
  int64_t consistent_count = 0;
};

// Per-forward-call counters surfaced in model diagnostics.
struct AttentionDiag {
  int64_t bias_fallbacks = 0;                 // all-inconsistent calls that ran unbiased
  std::vector<int64_t> consistent_counts;     // one entry per cycle-attention call
};

struct MhaParams {
  LinearLayer wq, wk, wv, wo;

  MhaParams() = default;
  MhaParams(int64_t d, CounterRng rng);
  void collect(const std::string& prefix, std::vector<Parameter>& out) const;
};

struct PredOffsetParams {
  LinearLayer wq, wv;
  LinearLayer offsets;  // d -> 2P, the paper's f
  LinearLayer logits;   // d -> P, the paper's g

  PredOffsetParams() = default;
  PredOffsetParams(int64_t d, int64_t P, CounterRng rng);
  void collect(const std::string& prefix, std::vector<Parameter>& out) const;
};

// softmax(Q K^T / sqrt(d_head) + bias) V. bias, when given, is a [n] vector
// of {0, -inf} broadcast over query rows. If every bias entry is -inf the
// call falls back to unbiased attention and bumps diag->bias_fallbacks.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const Tensor* bias = nullptr, AttentionDiag* diag = nullptr);

// The row-stochastic weight matrix of scaled_dot_attention; exposed so tests
// can probe individual attention weights.
Tensor attention_weights(const Tensor& q, const Tensor& k, const Tensor* bias = nullptr,
                         AttentionDiag* diag = nullptr);

// Projects Q from zq and K,V from zkv, splits the width into h groups, runs
// scaled_dot_attention per head, concatenates and applies the output
// projection. An external bias applies to every head.
TokenSequence multi_head_attention(const TokenSequence& zq, const TokenSequence& zkv,
                                   const MhaParams& params, int64_t h,
                                   const Tensor* bias = nullptr, AttentionDiag* diag = nullptr);

// For each support token j: i* = argmax_i A(i,j), j* = argmax_j A(i*,j);
// bias_j = 0 iff labels[j] == labels[j*] else -inf. Ties break to the lowest
// index. The result never carries gradient.
CycleBias cycle_consistency_bias(const Tensor& affinity, const std::vector<uint8_t>& labels);

// Cross attention from query tokens onto sampled support tokens; when
// use_cycle_bias is set, each head rebuilds its CycleBias from the current
// affinity before the softmax. All-inconsistent heads fall back to unbiased
// attention (counted in diag).
TokenSequence cross_attention(const TokenSequence& zq, const SampledSupport& support,
                              const MhaParams& params, int64_t h, bool use_cycle_bias,
                              AttentionDiag* diag = nullptr);

inline TokenSequence cycle_consistent_attention(const TokenSequence& zq,
                                                const SampledSupport& support,
                                                const MhaParams& params, int64_t h,
                                                AttentionDiag* diag = nullptr) {
  return cross_attention(zq, support, params, h, true, diag);
}

// Fixed 2-D sinusoidal encoding: first d/2 channels encode the column, last
// d/2 the row, interleaved sin/cos over base-10000 geometric frequencies.
Tensor positional_encoding(int64_t height, int64_t width, int64_t d);

// Deformable-style attention: per token predicts P fractional (dy,dx)
// offsets and P logits from Q + Coord, gathers values bilinearly (zero
// outside the grid) and returns the softmax-weighted sum. Differentiable
// through the offsets. `values` may come from a different grid sequence of
// the same spatial size (cross-variant); defaults to zq itself.
TokenSequence predicted_offset_attention(const TokenSequence& zq,
                                         const TokenSequence& values,
                                         const PredOffsetParams& params, int64_t P,
                                         AttentionDiag* diag = nullptr);

inline TokenSequence predicted_offset_attention(const TokenSequence& zq,
                                                const PredOffsetParams& params, int64_t P,
                                                AttentionDiag* diag = nullptr) {
  return predicted_offset_attention(zq, zq, params, P, diag);
}

}  // namespace cyctr
