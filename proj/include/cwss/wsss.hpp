#pragma once

#include <map>
#include <vector>

#include "cwss/capsule.hpp"
#include "cwss/saliency.hpp"
#include "cwss/taxonomy.hpp"
#include "cwss/tensor.hpp"

namespace cwss {

// Per-pixel class indices (taxonomy ids; 27 Background, 28 Other).
struct SegMask {
  int height = 0;
  int width = 0;
  std::vector<int> cls;

  int& at(int y, int x) { return cls[static_cast<size_t>(y) * width + x]; }
  int at(int y, int x) const { return cls[static_cast<size_t>(y) * width + x]; }
};

// Background activation from pixel brightness (scaled-shifted sigmoid of
// the RGB mean on the 0..255 scale): 0.75 / (1 + exp(-4 (mean - 240))).
Tensor background_base(const Tensor& image01);

// blur(max(M^B - adipose, 0)): suppress white adipose, then soften.
Tensor background_morph(const Tensor& bg, const Tensor& adipose_pre, float blur_sigma = 2.0f);
// Same construction against the transparent-staining functional classes.
Tensor background_func(const Tensor& bg, const Tensor& transparent_pre, float blur_sigma = 2.0f);

// M^O = 0.05 (1 - max(functional maps, M^{B_func}, adipose map)).
Tensor other_activation(const std::vector<Tensor>& functional_pre, const Tensor& bg_func,
                        const Tensor& adipose_pre);

// M^F_j = rec ⊙ smooth ⊙ (1 - background mask).
Tensor fuse(const Tensor& rec_gray, const Tensor& smooth, const Tensor& bg_mask);

// Per-pixel argmax over candidate maps; ties go to the lowest class index.
SegMask segment(const std::map<int, Tensor>& candidates);

struct SegmentOptions {
  Mode mode = Mode::Morphological;
  float threshold = 0.5f;
  SmoothGradConfig smoothgrad;
  float blur_sigma = 2.0f;
};

struct SegmentResult {
  Tensor scores;                   // [27]
  std::vector<int> detected;       // thresholded labels (all modes)
  std::map<int, Tensor> pre_fused; // M^pre_j = rec ⊙ smooth
  std::map<int, Tensor> fused;     // M^F_j for the active mode
  Tensor bg_base;                  // M^B
  Tensor bg_mask;                  // M^{B_morph} or M^{B_func}
  Tensor other;                    // functional mode only
  SegMask mask;
};

// The full per-patch pipeline: classify, decode + smoothgrad per detected
// class, synthesize background/other, fuse, argmax. Undetected classes
// referenced by the background rules contribute zero maps.
SegmentResult segment_patch(const Tensor& image, const CapsNetParams& params,
                            const SegmentOptions& opts);

// Grayscale reduction (channel mean) of a [3,H,W] map.
Tensor to_gray(const Tensor& rgb);

}  // namespace cwss
