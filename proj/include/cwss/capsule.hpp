#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "cwss/rng.hpp"
#include "cwss/tape.hpp"
#include "cwss/tensor.hpp"

namespace cwss {

struct ConvLayerSpec {
  int channels = 0;
  int stride = 1;
  int padding = 0;
};

struct PrimaryCapsSpec {
  int kernel = 9;
  int stride = 1;
  int padding = 1;
  int types = 32;
  int dim = 8;
};

struct DigitCapsSpec {
  int classes = 27;
  int dim = 16;
};

// Four transposed-conv layers (kernel 4, stride 2, pad 1: exact doubling),
// fed by a dense layer reshaped to channels[0] x grid x grid. Output is
// 3 x (16*grid) x (16*grid), which must match the input image.
struct DecoderSpec {
  int grid = 17;
  std::array<int, 4> channels = {256, 128, 64, 32};
  static constexpr int kKernel = 4;
  static constexpr int kStride = 2;
  static constexpr int kPadding = 1;
};

struct ArchitectureConfig {
  int input_channels = 3;
  int input_size = 272;
  std::array<ConvLayerSpec, 3> conv = {{{64, 2, 0}, {128, 2, 0}, {256, 2, 0}}};
  PrimaryCapsSpec primary;
  DigitCapsSpec digit;
  int routing_iterations = 3;
  DecoderSpec decoder;

  // 272-input network with the 27x27 x 32-type x 8-dim primary grid.
  static ArchitectureConfig full();
  // Smaller channel/type counts for CPU-budget end-to-end runs; geometry
  // (272 input, 27x27 grid) is unchanged.
  static ArchitectureConfig desk();

  int conv_out(int layer) const;  // spatial extent after conv layer 0..2
  int primary_grid() const;
  int num_primary() const { return primary_grid() * primary_grid() * primary.types; }
  bool has_decoder() const { return input_size % 16 == 0; }

  void validate() const;         // classification path geometry
  void validate_decoder() const; // decoder closure against input_size
};

struct RoutingState {
  Tensor b;  // [N,J] routing logits
  Tensor c;  // [N,J] coupling coefficients (rows sum to 1)
  Tensor a;  // [N,J] agreements of the last iteration
};

struct CapsuleTensors {
  Tensor u;       // [N,P] primary capsule outputs
  Tensor u_hat;   // [N,J,D] prediction vectors
  Tensor s;       // [J,D] weighted totals
  Tensor v;       // [J,D] squashed digit capsules
  Tensor scores;  // [J] capsule norms
};

struct CapsNetParams {
  ArchitectureConfig arch;
  std::map<std::string, Tensor> tensors;

  static CapsNetParams init(const ArchitectureConfig& arch, std::uint64_t seed);
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  // Parameter names in their creation (and serialization) order.
  std::vector<std::string> ordered_names() const;
};

// Rowwise squash on [N,D] (Eq-1 form): v = (q/(1+q)) * s/sqrt(q+eps), q = |s|^2.
Tensor squash(const Tensor& s);
// u [N,P], W [N,J,P,D] -> uhat [N,J,D]
Tensor predict_uhat(const Tensor& u, const Tensor& w);
// Dynamic routing by agreement; b starts at zero, agreements are added
// after every iteration except the last.
std::pair<Tensor, RoutingState> route(const Tensor& u_hat, int iterations);

std::tuple<Tensor, CapsuleTensors, RoutingState> forward_classify(
    const Tensor& image, const CapsNetParams& params);

// Tape variants used by training and saliency. Parameter leaves are created
// on demand and reported through `param_vars` when non-null.
struct ClassifyGraph {
  Var u;        // [N,P]
  Var u_hat;    // [N,J,D]
  Var v;        // [J,D]
  Var scores;   // [J]
  RoutingState state;
};
ClassifyGraph build_classify_graph(Tape& tape, Var image, const CapsNetParams& params,
                                   std::map<std::string, Var>* param_vars = nullptr);

}  // namespace cwss
