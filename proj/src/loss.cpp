#include "cwss/loss.hpp"

#include <cmath>

namespace cwss {

void LossConfig::validate() const {
  if (!(0.0f <= m_minus && m_minus < m_plus && m_plus <= 1.0f))
    throw ValueError("margins must satisfy 0 <= m_minus < m_plus <= 1");
  if (!(lambda_down > 0.0f && lambda_down <= 1.0f))
    throw ValueError("lambda_down must lie in (0,1]");
  if (!(alpha_decay > 0.0f && alpha_decay < 1.0f))
    throw ValueError("alpha_decay must lie in (0,1)");
  if (!(alpha0 > 0.0f)) throw ValueError("alpha0 must be positive");
}

float margin_loss(const Tensor& scores, const Tensor& targets, const LossConfig& cfg) {
  require_same_shape(scores, targets, "margin_loss");
  double loss = 0.0;
  for (size_t j = 0; j < scores.data.size(); ++j) {
    float t = targets.data[j];
    if (t != 0.0f && t != 1.0f)
      throw ValueError("margin_loss targets must be binary, got " + std::to_string(t) +
                       " at class " + std::to_string(j));
    double s = scores.data[j];
    double pos = std::max(0.0, static_cast<double>(cfg.m_plus) - s);
    double neg = std::max(0.0, s - static_cast<double>(cfg.m_minus));
    loss += t * pos * pos + static_cast<double>(cfg.lambda_down) * (1.0 - t) * neg * neg;
  }
  return static_cast<float>(loss);
}

float alpha_at_epoch(const LossConfig& cfg, int epoch) {
  if (epoch < 0) throw ValueError("epoch must be >= 0");
  return cfg.alpha0 * std::pow(cfg.alpha_decay, static_cast<float>(epoch));
}

float total_loss(float margin, float rec, float alpha_epoch) {
  if (!(alpha_epoch > 0.0f)) throw ValueError("alpha_epoch must be positive");
  return margin + alpha_epoch * rec;
}

}  // namespace cwss
