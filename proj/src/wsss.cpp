#include "cwss/wsss.hpp"

#include <algorithm>
#include <cmath>

#include "cwss/decoder.hpp"
#include "cwss/ops.hpp"

namespace cwss {

Tensor to_gray(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3)
    throw ShapeError("to_gray expects [3,H,W], got " + shape_str(rgb.shape));
  int h = rgb.dim(1), w = rgb.dim(2);
  Tensor out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out.at(y, x) = (rgb.at(0, y, x) + rgb.at(1, y, x) + rgb.at(2, y, x)) / 3.0f;
  return out;
}

Tensor background_base(const Tensor& image01) {
  Tensor gray = to_gray(image01);
  for (float& v : gray.data) {
    double mean255 = static_cast<double>(v) * 255.0;
    v = static_cast<float>(0.75 / (1.0 + std::exp(-4.0 * (mean255 - 240.0))));
  }
  return gray;
}

namespace {

Tensor suppressed_background(const Tensor& bg, const Tensor& suppressor, float blur_sigma) {
  require_same_shape(bg, suppressor, "background mask");
  Tensor diff = ops::clamp_min(ops::sub(bg, suppressor), 0.0f);
  return ops::gaussian_blur2d(diff, blur_sigma);
}

}  // namespace

Tensor background_morph(const Tensor& bg, const Tensor& adipose_pre, float blur_sigma) {
  return suppressed_background(bg, adipose_pre, blur_sigma);
}

Tensor background_func(const Tensor& bg, const Tensor& transparent_pre, float blur_sigma) {
  return suppressed_background(bg, transparent_pre, blur_sigma);
}

Tensor other_activation(const std::vector<Tensor>& functional_pre, const Tensor& bg_func,
                        const Tensor& adipose_pre) {
  Tensor evidence = ops::elementwise_max(bg_func, adipose_pre);
  for (const Tensor& m : functional_pre) evidence = ops::elementwise_max(evidence, m);
  for (float& v : evidence.data) v = 0.05f * (1.0f - v);
  return evidence;
}

Tensor fuse(const Tensor& rec_gray, const Tensor& smooth, const Tensor& bg_mask) {
  require_same_shape(rec_gray, smooth, "fuse");
  require_same_shape(rec_gray, bg_mask, "fuse");
  Tensor out(rec_gray.shape);
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = rec_gray.data[i] * smooth.data[i] * (1.0f - bg_mask.data[i]);
  return out;
}

SegMask segment(const std::map<int, Tensor>& candidates) {
  if (candidates.empty()) throw ValueError("segment requires at least one candidate map");
  const Tensor& first = candidates.begin()->second;
  if (first.rank() != 2) throw ShapeError("candidate maps must be [H,W]");
  int h = first.dim(0), w = first.dim(1);

  SegMask mask;
  mask.height = h;
  mask.width = w;
  mask.cls.assign(static_cast<size_t>(h) * w, candidates.begin()->first);
  std::vector<float> best(first.data.begin(), first.data.end());

  auto it = candidates.begin();
  for (++it; it != candidates.end(); ++it) {
    require_same_shape(first, it->second, "segment");
    // std::map iterates ids ascending, so strict > keeps ties at the
    // lowest class index.
    for (size_t i = 0; i < best.size(); ++i)
      if (it->second.data[i] > best[i]) {
        best[i] = it->second.data[i];
        mask.cls[i] = it->first;
      }
  }
  return mask;
}

SegmentResult segment_patch(const Tensor& image, const CapsNetParams& params,
                            const SegmentOptions& opts) {
  const auto& tax = LabelTaxonomy::instance();
  SegmentResult res;

  auto [scores, caps, state] = forward_classify(image, params);
  res.scores = scores;
  res.detected = select_active_labels(scores, opts.threshold);

  std::map<int, Tensor> rec_gray;
  std::map<int, Tensor> smooth;
  if (!res.detected.empty()) {
    smooth = smoothgrad_multi(image, params, res.detected, opts.smoothgrad);
    for (int j : res.detected) {
      rec_gray.emplace(j, to_gray(decode_label(caps, j, params)));
      res.pre_fused.emplace(j, ops::hadamard(rec_gray.at(j), smooth.at(j)));
    }
  }

  int h = image.dim(1), w = image.dim(2);
  Tensor zero({h, w});
  auto pre_or_zero = [&](int j) -> const Tensor& {
    auto it = res.pre_fused.find(j);
    return it == res.pre_fused.end() ? zero : it->second;
  };
  auto max_over = [&](const std::vector<int>& ids) {
    Tensor m = zero;
    for (int j : ids) m = ops::elementwise_max(m, pre_or_zero(j));
    return m;
  };

  res.bg_base = background_base(image);
  Tensor adipose_max = max_over(tax.adipose());

  if (opts.mode == Mode::Morphological) {
    res.bg_mask = background_morph(res.bg_base, pre_or_zero(tax.white_adipose()),
                                   opts.blur_sigma);
  } else {
    res.bg_mask = background_func(res.bg_base, max_over(tax.transparent_functional()),
                                  opts.blur_sigma);
    std::vector<Tensor> func_pre;
    for (int j : tax.mode_classes(Mode::Functional)) func_pre.push_back(pre_or_zero(j));
    res.other = other_activation(func_pre, res.bg_mask, adipose_max);
  }

  std::map<int, Tensor> candidates;
  for (int j : tax.mode_classes(opts.mode)) {
    if (!rec_gray.count(j)) continue;  // undetected: no candidate map
    Tensor f = fuse(rec_gray.at(j), smooth.at(j), res.bg_mask);
    res.fused.emplace(j, f);
    candidates.emplace(j, std::move(f));
  }
  candidates.emplace(LabelTaxonomy::kBackground, res.bg_mask);
  if (opts.mode == Mode::Functional) candidates.emplace(LabelTaxonomy::kOther, res.other);

  res.mask = segment(candidates);
  return res;
}

}  // namespace cwss
