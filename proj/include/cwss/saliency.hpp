#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "cwss/capsule.hpp"
#include "cwss/tape.hpp"
#include "cwss/tensor.hpp"

namespace cwss {

struct SmoothGradConfig {
  int samples = 40;
  float sigma = 0.15f;  // on the [0,1] pixel scale
  std::uint64_t seed = 0;

  void validate() const;
};

// Builds a scalar class score from an image leaf on the given tape.
using ScoreGraphFn = std::function<Var(Tape&, Var image)>;

// |dS/dI| per pixel, channels reduced by max absolute value. Raw magnitudes
// (no normalization).
Tensor saliency_map(const Tensor& image, const ScoreGraphFn& score);
Tensor class_saliency(const Tensor& image, const CapsNetParams& params, int label);

// Mean saliency over `samples` Gaussian perturbations of the image, then
// min-max normalized to [0,1] (a constant mean map normalizes to zeros).
// sigma = 0 short-circuits to a single unperturbed pass so the result
// equals normalized class_saliency exactly.
Tensor smoothgrad(const Tensor& image, const ScoreGraphFn& score, const SmoothGradConfig& cfg);
Tensor smoothgrad_class(const Tensor& image, const CapsNetParams& params, int label,
                        const SmoothGradConfig& cfg);

// Maps for several labels with one shared noise stream: each perturbed
// forward pass is reused for every label's backward pass.
std::map<int, Tensor> smoothgrad_multi(const Tensor& image, const CapsNetParams& params,
                                       const std::vector<int>& labels,
                                       const SmoothGradConfig& cfg);

}  // namespace cwss
