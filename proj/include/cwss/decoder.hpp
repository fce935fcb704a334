#pragma once

#include <vector>

#include "cwss/capsule.hpp"
#include "cwss/tape.hpp"
#include "cwss/tensor.hpp"

namespace cwss {

// Per-label reconstructions. `shape` is the image shape so an empty set
// still reconstructs to a well-defined zero image.
struct ReconstructionSet {
  Shape shape;
  std::vector<std::pair<int, Tensor>> maps;  // (label, M_j^rec)
};

// j is active iff scores_j >= threshold. Thresholds must lie in [0,1].
std::vector<int> select_active_labels(const Tensor& scores, float threshold);
std::vector<int> select_active_labels(const Tensor& scores, const Tensor& thresholds);

// Decoder forward from one masked digit capsule: every capsule vector
// except v_j is zeroed, so the dense stage sees exactly v_j.
Var build_decoder_graph(Tape& tape, Var v_j, const CapsNetParams& params,
                        std::map<std::string, Var>* param_vars = nullptr);

Tensor decode_label(const CapsuleTensors& caps, int label, const CapsNetParams& params);

Tensor reconstruct(const ReconstructionSet& set);

// Sum of squared elementwise differences |I - I_hat|^2.
float reconstruction_loss(const Tensor& image, const Tensor& reconstruction);

}  // namespace cwss
