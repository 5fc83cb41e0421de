#pragma once

#include <cstdint>
#include <vector>

#include "cyctr/attention.hpp"
#include "cyctr/mask.hpp"
#include "cyctr/rng.hpp"
#include "cyctr/tensor.hpp"

namespace cyctr {

struct SamplingError : TensorError {
  using TensorError::TensorError;
};

// Where a sampled token came from.
struct SupportSource {
  int32_t shot = 0;
  int32_t row = 0;
  int32_t col = 0;

  bool operator==(const SupportSource& o) const {
    return shot == o.shot && row == o.row && col == o.col;
  }
};

struct SampledSupport {
  Tensor tokens;  // [N, d], gradient flows back into the source sequences
  std::vector<uint8_t> labels;
  std::vector<SupportSource> sources;
  bool short_sample = false;  // a stratum ran out of pixels
};

// Row-major flattening of an [H, W, d] feature map; token t sits at
// (t / W, t mod W).
TokenSequence flatten_grid(const Tensor& features);
Tensor unflatten_grid(const TokenSequence& seq);

// Stratified uniform sampling without replacement over the pooled pixels of
// all K shots: min(floor(n_tokens/2), |fg|) foreground tokens, the rest
// background. Exhausted strata are not backfilled; the sample comes back
// short with the flag set. With foreground_only the whole budget draws from
// the foreground pool (the fg-only ablation).
SampledSupport mask_guided_sample(const std::vector<TokenSequence>& shots,
                                  const std::vector<BinaryMask>& masks, int64_t n_tokens,
                                  CounterRng rng, bool foreground_only = false);

}  // namespace cyctr
