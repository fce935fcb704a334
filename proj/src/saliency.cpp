#include "cwss/saliency.hpp"

#include <cmath>

#include "cwss/ops.hpp"
#include "cwss/rng.hpp"

namespace cwss {

void SmoothGradConfig::validate() const {
  if (samples < 1) throw ValueError("smoothgrad samples must be >= 1");
  if (sigma < 0.0f) throw ValueError("smoothgrad sigma must be >= 0");
}

namespace {

Tensor channel_max_abs(const Tensor& grad) {
  if (grad.rank() != 3) throw ShapeError("image gradient must be [C,H,W]");
  int c = grad.dim(0), h = grad.dim(1), w = grad.dim(2);
  Tensor map({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float best = 0.0f;
      for (int ch = 0; ch < c; ++ch) best = std::max(best, std::fabs(grad.at(ch, y, x)));
      map.at(y, x) = best;
    }
  return map;
}

void check_label(const CapsNetParams& params, int label) {
  if (label < 0 || label >= params.arch.digit.classes)
    throw ValueError("unknown label " + std::to_string(label) + " for " +
                     std::to_string(params.arch.digit.classes) + " classes");
}

Tensor perturb(const Tensor& image, float sigma, Rng& rng) {
  Tensor noisy = image;
  for (float& v : noisy.data) v += sigma * static_cast<float>(rng.normal());
  return noisy;
}

}  // namespace

Tensor saliency_map(const Tensor& image, const ScoreGraphFn& score) {
  Tape tape;
  Var img = tape.leaf(image);
  Var s = score(tape, img);
  tape.backward(s);
  return channel_max_abs(tape.grad(img));
}

Tensor class_saliency(const Tensor& image, const CapsNetParams& params, int label) {
  check_label(params, label);
  return saliency_map(image, [&params, label](Tape& tape, Var img) {
    ClassifyGraph g = build_classify_graph(tape, img, params);
    return tape.row_l2_norm(g.v, label);
  });
}

Tensor smoothgrad(const Tensor& image, const ScoreGraphFn& score,
                  const SmoothGradConfig& cfg) {
  cfg.validate();
  if (cfg.sigma == 0.0f) return ops::minmax_normalize(saliency_map(image, score));

  Tensor acc(Shape{image.dim(1), image.dim(2)});
  for (int n = 0; n < cfg.samples; ++n) {
    Rng rng = Rng::fork(cfg.seed, static_cast<std::uint64_t>(n));
    Tensor sal = saliency_map(perturb(image, cfg.sigma, rng), score);
    for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += sal.data[i];
  }
  for (float& v : acc.data) v /= static_cast<float>(cfg.samples);
  return ops::minmax_normalize(acc);
}

Tensor smoothgrad_class(const Tensor& image, const CapsNetParams& params, int label,
                        const SmoothGradConfig& cfg) {
  check_label(params, label);
  return smoothgrad(
      image,
      [&params, label](Tape& tape, Var img) {
        ClassifyGraph g = build_classify_graph(tape, img, params);
        return tape.row_l2_norm(g.v, label);
      },
      cfg);
}

std::map<int, Tensor> smoothgrad_multi(const Tensor& image, const CapsNetParams& params,
                                       const std::vector<int>& labels,
                                       const SmoothGradConfig& cfg) {
  cfg.validate();
  for (int label : labels) check_label(params, label);
  std::map<int, Tensor> out;
  if (labels.empty()) return out;

  std::map<int, Tensor> acc;
  for (int label : labels) acc.emplace(label, Tensor(Shape{image.dim(1), image.dim(2)}));

  int samples = cfg.sigma == 0.0f ? 1 : cfg.samples;
  for (int n = 0; n < samples; ++n) {
    Tensor input = image;
    if (cfg.sigma > 0.0f) {
      Rng rng = Rng::fork(cfg.seed, static_cast<std::uint64_t>(n));
      input = perturb(image, cfg.sigma, rng);
    }
    Tape tape;
    Var img = tape.leaf(input);
    ClassifyGraph g = build_classify_graph(tape, img, params);
    for (int label : labels) {
      tape.backward(tape.row_l2_norm(g.v, label));
      Tensor sal = channel_max_abs(tape.grad(img));
      Tensor& dst = acc.at(label);
      for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += sal.data[i];
    }
  }
  for (int label : labels) {
    Tensor& m = acc.at(label);
    for (float& v : m.data) v /= static_cast<float>(samples);
    out.emplace(label, ops::minmax_normalize(m));
  }
  return out;
}

}  // namespace cwss
