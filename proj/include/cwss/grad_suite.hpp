#pragma once

#include <cstdint>
#include <vector>

#include "cwss/grad_check.hpp"

namespace cwss {

// Finite-difference checks for every differentiable operation plus the
// composite decoder and classification paths. The full-path instance runs
// one routing iteration so the coupling coefficients are genuinely
// constant (uniform softmax of zero logits); with more iterations the
// intentional stop-gradient through the routing loop would make the
// numeric derivative measure a different function.
std::vector<GradCheckReport> run_gradcheck_suite(std::uint64_t seed);

}  // namespace cwss
