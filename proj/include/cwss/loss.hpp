#pragma once

#include "cwss/tensor.hpp"

namespace cwss {

struct LossConfig {
  float m_plus = 0.9f;
  float m_minus = 0.1f;
  float lambda_down = 0.5f;
  float alpha0 = 5e-4f;
  float alpha_decay = 0.9f;

  void validate() const;
};

// Sum over classes of T_j max(0, m+ - s_j)^2 + lambda (1-T_j) max(0, s_j - m-)^2.
float margin_loss(const Tensor& scores, const Tensor& targets, const LossConfig& cfg);

float alpha_at_epoch(const LossConfig& cfg, int epoch);

float total_loss(float margin, float rec, float alpha_epoch);

}  // namespace cwss
