#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cyctr/mask.hpp"
#include "cyctr/rng.hpp"
#include "cyctr/tensor.hpp"

namespace cyctr {

struct EpisodeError : TensorError {
  using TensorError::TensorError;
};

struct SupportPair {
  Tensor image;  // [H, W, C]
  BinaryMask mask;
};

// One few-shot task: K annotated supports plus a query. The query mask is
// carried for training/scoring only; prediction never reads it.
struct Episode {
  std::vector<SupportPair> supports;
  Tensor query_image;
  BinaryMask query_mask;
  int32_t class_id = -1;

  int64_t k() const { return static_cast<int64_t>(supports.size()); }
};

// Fold the class list into 4 contiguous blocks; block `split_index` tests,
// the rest trains.
struct SplitSpec {
  std::vector<int32_t> all_classes;
  int32_t split_index = 0;
  std::vector<int32_t> train_classes;
  std::vector<int32_t> test_classes;
};

SplitSpec make_splits(const std::vector<int32_t>& all_classes, int32_t split_index);
SplitSpec make_splits(int32_t num_classes, int32_t split_index);

enum class EpisodeRole { train, test };

constexpr int32_t kNumShapeFamilies = 12;

// Generative parameters of one synthetic class: shape family, palette,
// texture and scale ranges. Distinct ids map to distinct families/palettes.
struct ShapeClassParams {
  int32_t class_id = 0;
  int32_t family = 0;
  double scale_lo = 0.28, scale_hi = 0.42;  // of min(H, W)
  double color[3] = {0.5, 0.5, 0.5};
  int32_t texture_kind = 0;  // 0 solid, 1 stripes, 2 checker
  double texture_freq = 0.5;
  int32_t max_distractors = 2;
};

ShapeClassParams shape_class_params(int32_t class_id);

// Renders K+1 images of one class drawn from the role's list: randomized
// pose/scale/texture, 0-2 distractor instances of other classes, textured
// background. Masks cover the target class only. Deterministic in seed.
Episode generate_synthetic_episode(const SplitSpec& split, EpisodeRole role, int64_t k_shot,
                                   int64_t height, int64_t width, uint64_t seed);

// ---- metrics ---------------------------------------------------------

struct ClassIoU {
  int32_t class_id;
  double iou;
};

struct MeanIoUResult {
  std::vector<ClassIoU> per_class;    // classes with a nonzero union
  std::vector<int32_t> skipped;       // classes whose union was empty
  double miou = 0.0;
};

// Dataset-level IoU by default: intersections and unions accumulate across
// episodes before dividing. per_episode_average switches to the mean of
// per-episode IoUs instead.
MeanIoUResult mean_iou(const std::vector<BinaryMask>& predictions,
                       const std::vector<BinaryMask>& truths,
                       const std::vector<int32_t>& class_ids,
                       bool per_episode_average = false);

// Mean of class-agnostic foreground and background IoU, accumulated over all
// episodes.
double fb_iou(const std::vector<BinaryMask>& predictions,
              const std::vector<BinaryMask>& truths);

// ---- on-disk format ----------------------------------------------------

// JSON manifest + sibling raw blob (little-endian, row-major; f64 images,
// u8 masks, CRC32 of the blob in the manifest). Unknown manifest keys are
// ignored for forward compatibility.
void write_episode(const Episode& episode, const std::string& manifest_path);
Episode read_episode(const std::string& manifest_path);

uint32_t crc32(const uint8_t* data, size_t len);

}  // namespace cyctr
