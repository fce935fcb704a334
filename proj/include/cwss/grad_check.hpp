#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cwss/tape.hpp"

namespace cwss {

struct GradCheckReport {
  std::string op_name;
  float max_rel_error = 0.0f;
  float tolerance = 0.0f;
  int checked = 0;
  int skipped = 0;  // elements rejected by the kink filter
  bool passed = false;
};

// Builds a scalar loss from leaves created for `inputs` (same order).
using LossGraphFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckOptions {
  float tolerance = 1e-2f;
  float step = 1e-3f;
  // Two-scale consistency filter for graphs with relu kinks: an element is
  // skipped when central differences at step and step/2 disagree by more
  // than `consistency` relative, meaning a non-differentiable point lies
  // inside the stencil and the finite difference itself is meaningless
  // there. Smooth-region estimates stay self-consistent, so a wrong
  // analytic gradient is still caught. The skipped fraction is capped.
  bool kink_filter = false;
  float consistency = 0.25f;
  float max_skipped_fraction = 0.05f;
};

// Central finite differences against tape gradients. The relative-error
// denominator is floored at max(0.1 * max|grad|, 1e-4) so near-zero
// entries do not dominate in 32-bit precision.
GradCheckReport check_gradients(const std::string& op_name,
                                const std::vector<Tensor>& inputs,
                                const LossGraphFn& fn, float tolerance = 1e-2f,
                                float step = 1e-3f);
GradCheckReport check_gradients(const std::string& op_name,
                                const std::vector<Tensor>& inputs,
                                const LossGraphFn& fn, const GradCheckOptions& opts);

std::string format_report_line(const GradCheckReport& r);

}  // namespace cwss
