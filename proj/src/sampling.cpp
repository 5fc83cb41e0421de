#include "cyctr/sampling.hpp"

#include <algorithm>

namespace cyctr {

BinaryMask downsample_mask(const BinaryMask& m, int64_t factor) {
  BinaryMask out(m.height / factor, m.width / factor);
  for (int64_t y = 0; y < out.height; ++y) {
    for (int64_t x = 0; x < out.width; ++x) {
      int64_t count = 0;
      for (int64_t dy = 0; dy < factor; ++dy) {
        for (int64_t dx = 0; dx < factor; ++dx) {
          count += m.at(y * factor + dy, x * factor + dx);
        }
      }
      out.set(y, x, count * 2 >= factor * factor ? 1 : 0);
    }
  }
  return out;
}

TokenSequence flatten_grid(const Tensor& features) {
  if (features.rank() != 3) {
    throw ShapeError("flatten_grid: expected [H,W,d], got " +
                     shape_to_string(features.shape()));
  }
  const int64_t h = features.dim(0), w = features.dim(1), d = features.dim(2);
  return {reshape(features, {h * w, d}), h, w};
}

Tensor unflatten_grid(const TokenSequence& seq) {
  if (!seq.is_grid()) throw ShapeError("unflatten_grid: sequence has no grid dims");
  return reshape(seq.tokens, {seq.height, seq.width, seq.tokens.dim(1)});
}

namespace {

struct Candidate {
  int64_t global_row;
  SupportSource source;
};

// Partial Fisher-Yates over the canonically ordered pool.
std::vector<Candidate> draw(std::vector<Candidate>& pool, int64_t count, CounterRng rng) {
  std::vector<Candidate> out;
  out.reserve(static_cast<size_t>(count));
  const int64_t n = static_cast<int64_t>(pool.size());
  for (int64_t i = 0; i < count; ++i) {
    const int64_t j = i + static_cast<int64_t>(rng.bounded(static_cast<uint64_t>(n - i)));
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
    out.push_back(pool[static_cast<size_t>(i)]);
  }
  return out;
}

}  // namespace

SampledSupport mask_guided_sample(const std::vector<TokenSequence>& shots,
                                  const std::vector<BinaryMask>& masks, int64_t n_tokens,
                                  CounterRng rng, bool foreground_only) {
  if (shots.empty()) throw SamplingError("mask_guided_sample: empty support set");
  if (shots.size() != masks.size()) {
    throw SamplingError("mask_guided_sample: " + std::to_string(shots.size()) +
                        " shots but " + std::to_string(masks.size()) + " masks");
  }
  if (n_tokens < 2) throw SamplingError("mask_guided_sample: n_tokens must be >= 2");

  // pool all shots, canonical (shot, row, col) order
  std::vector<Candidate> fg, bg;
  int64_t offset = 0;
  for (size_t s = 0; s < shots.size(); ++s) {
    const auto& seq = shots[s];
    const auto& mask = masks[s];
    if (!seq.is_grid() || seq.height != mask.height || seq.width != mask.width) {
      throw SamplingError("mask_guided_sample: shot " + std::to_string(s) +
                          " mask/feature grids disagree");
    }
    for (int64_t y = 0; y < mask.height; ++y) {
      for (int64_t x = 0; x < mask.width; ++x) {
        Candidate c{offset + y * mask.width + x,
                    {static_cast<int32_t>(s), static_cast<int32_t>(y), static_cast<int32_t>(x)}};
        (mask.at(y, x) ? fg : bg).push_back(c);
      }
    }
    offset += seq.tokens.dim(0);
  }

  const int64_t n_fg = std::min<int64_t>(foreground_only ? n_tokens : n_tokens / 2,
                                         static_cast<int64_t>(fg.size()));
  const int64_t n_bg = foreground_only
                           ? 0
                           : std::min<int64_t>(n_tokens - n_fg, static_cast<int64_t>(bg.size()));
  if (n_fg + n_bg == 0) {
    throw SamplingError("mask_guided_sample: no pixels available in the requested strata");
  }

  std::vector<Candidate> picked = draw(fg, n_fg, rng.split("foreground"));
  std::vector<Candidate> bg_picked = draw(bg, n_bg, rng.split("background"));
  picked.insert(picked.end(), bg_picked.begin(), bg_picked.end());

  SampledSupport out;
  out.short_sample = (n_fg + n_bg) < n_tokens;
  out.labels.reserve(picked.size());
  out.sources.reserve(picked.size());
  std::vector<int64_t> rows;
  rows.reserve(picked.size());
  for (size_t i = 0; i < picked.size(); ++i) {
    rows.push_back(picked[i].global_row);
    out.labels.push_back(i < static_cast<size_t>(n_fg) ? 1 : 0);
    out.sources.push_back(picked[i].source);
  }

  Tensor all_tokens;
  if (shots.size() == 1) {
    all_tokens = shots[0].tokens;
  } else {
    std::vector<Tensor> parts;
    parts.reserve(shots.size());
    for (const auto& s : shots) parts.push_back(s.tokens);
    all_tokens = concat_rows(parts);
  }
  out.tokens = gather_rows(all_tokens, rows);
  return out;
}

}  // namespace cyctr
