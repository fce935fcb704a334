#include "cwss/decoder.hpp"

#include "cwss/ops.hpp"

namespace cwss {

namespace {

void check_threshold(float t) {
  if (!(t >= 0.0f && t <= 1.0f))
    throw ValueError("presence threshold must lie in [0,1], got " + std::to_string(t));
}

Var decoder_param(Tape& tape, const CapsNetParams& params, const std::string& name,
                  std::map<std::string, Var>* param_vars) {
  if (param_vars) {
    auto it = param_vars->find(name);
    if (it != param_vars->end()) return it->second;
    Var v = tape.leaf(params.get(name));
    param_vars->emplace(name, v);
    return v;
  }
  return tape.constant(params.get(name));
}

}  // namespace

std::vector<int> select_active_labels(const Tensor& scores, float threshold) {
  check_threshold(threshold);
  std::vector<int> active;
  for (int j = 0; j < static_cast<int>(scores.size()); ++j)
    if (scores.data[static_cast<size_t>(j)] >= threshold) active.push_back(j);
  return active;
}

std::vector<int> select_active_labels(const Tensor& scores, const Tensor& thresholds) {
  require_same_shape(scores, thresholds, "select_active_labels");
  for (float t : thresholds.data) check_threshold(t);
  std::vector<int> active;
  for (int j = 0; j < static_cast<int>(scores.size()); ++j)
    if (scores.data[static_cast<size_t>(j)] >= thresholds.data[static_cast<size_t>(j)])
      active.push_back(j);
  return active;
}

Var build_decoder_graph(Tape& tape, Var v_j, const CapsNetParams& params,
                        std::map<std::string, Var>* param_vars) {
  const ArchitectureConfig& arch = params.arch;
  arch.validate_decoder();
  const Tensor& in = tape.value(v_j);
  if (in.rank() != 1 || in.dim(0) != arch.digit.dim)
    throw ShapeError("decoder input must be one digit capsule [" +
                     std::to_string(arch.digit.dim) + "], got " + shape_str(in.shape));
  const DecoderSpec& dec = arch.decoder;

  Var x = tape.matvec(decoder_param(tape, params, "dec.fc.w", param_vars), v_j);
  x = tape.add(x, decoder_param(tape, params, "dec.fc.b", param_vars));
  x = tape.relu(x);
  x = tape.reshape(x, {dec.channels[0], dec.grid, dec.grid});
  for (int l = 1; l <= 4; ++l) {
    std::string base = "dec.t" + std::to_string(l);
    x = tape.transposed_conv2d(x, decoder_param(tape, params, base + ".w", param_vars),
                               DecoderSpec::kStride, DecoderSpec::kPadding);
    x = tape.bias_add_channel(x, decoder_param(tape, params, base + ".b", param_vars));
    x = l < 4 ? tape.relu(x) : tape.sigmoid(x);
  }
  return x;
}

Tensor decode_label(const CapsuleTensors& caps, int label, const CapsNetParams& params) {
  if (label < 0 || label >= caps.v.dim(0))
    throw ValueError("unknown label " + std::to_string(label) + " for " +
                     std::to_string(caps.v.dim(0)) + " classes");
  Tape tape;
  // Masking every other capsule vector and summing rows collapses to v_j.
  Tensor masked({caps.v.dim(1)});
  for (int d = 0; d < caps.v.dim(1); ++d) masked.data[static_cast<size_t>(d)] = caps.v.at(label, d);
  Var out = build_decoder_graph(tape, tape.constant(std::move(masked)), params);
  return tape.value(out);
}

Tensor reconstruct(const ReconstructionSet& set) {
  Tensor total(set.shape);
  for (const auto& [label, map] : set.maps) {
    if (map.shape != set.shape)
      throw ShapeError("reconstruction map for label " + std::to_string(label) +
                       " has shape " + shape_str(map.shape) + ", expected " +
                       shape_str(set.shape));
    for (size_t i = 0; i < total.data.size(); ++i) total.data[i] += map.data[i];
  }
  return total;
}

float reconstruction_loss(const Tensor& image, const Tensor& reconstruction) {
  require_same_shape(image, reconstruction, "reconstruction_loss");
  double acc = 0.0;
  for (size_t i = 0; i < image.data.size(); ++i) {
    double d = static_cast<double>(image.data[i]) - reconstruction.data[i];
    acc += d * d;
  }
  return static_cast<float>(acc);
}

}  // namespace cwss
