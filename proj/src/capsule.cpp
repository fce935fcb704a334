#include "cwss/capsule.hpp"

#include <cmath>
#include <tuple>

#include "cwss/ops.hpp"

namespace cwss {

ArchitectureConfig ArchitectureConfig::full() { return ArchitectureConfig{}; }

ArchitectureConfig ArchitectureConfig::desk() {
  ArchitectureConfig a;
  a.conv = {{{16, 2, 0}, {32, 2, 0}, {64, 2, 0}}};
  a.primary.types = 8;
  a.primary.dim = 8;
  a.digit.dim = 16;
  a.decoder.channels = {64, 32, 16, 8};
  return a;
}

int ArchitectureConfig::conv_out(int layer) const {
  int s = input_size;
  for (int l = 0; l <= layer; ++l)
    s = ops::conv_out_extent(s, 3, conv[static_cast<size_t>(l)].stride,
                             conv[static_cast<size_t>(l)].padding);
  return s;
}

int ArchitectureConfig::primary_grid() const {
  return ops::conv_out_extent(conv_out(2), primary.kernel, primary.stride, primary.padding);
}

void ArchitectureConfig::validate() const {
  if (input_channels < 1 || input_size < 1) throw ValueError("invalid input geometry");
  for (const auto& l : conv)
    if (l.channels < 1 || l.stride < 1 || l.padding < 0)
      throw ValueError("invalid conv layer spec");
  if (primary.kernel < 1 || primary.stride < 1 || primary.padding < 0 || primary.types < 1 ||
      primary.dim < 1)
    throw ValueError("invalid primary capsule spec");
  if (digit.classes < 1 || digit.dim < 1) throw ValueError("invalid digit capsule spec");
  if (routing_iterations < 1) throw ValueError("routing_iterations must be >= 1");
  int g = primary_grid();  // throws if a layer does not fit
  if (g < 1) throw ValueError("primary capsule grid is empty");
}

void ArchitectureConfig::validate_decoder() const {
  if (!has_decoder())
    throw ValueError("decoder requires input_size divisible by 16, got " +
                     std::to_string(input_size));
  if (decoder.grid * 16 != input_size)
    throw ValueError("decoder grid " + std::to_string(decoder.grid) +
                     " does not close to input size " + std::to_string(input_size));
  for (int c : decoder.channels)
    if (c < 1) throw ValueError("invalid decoder channel count");
}

CapsNetParams CapsNetParams::init(const ArchitectureConfig& arch, std::uint64_t seed) {
  arch.validate();
  CapsNetParams p;
  p.arch = arch;
  Rng rng(seed);

  auto he_fill = [&rng](Tensor& t, int fan_in) {
    float std = std::sqrt(2.0f / static_cast<float>(fan_in));
    for (float& v : t.data) v = rng.normal_f(0.0f, std);
  };
  auto add = [&p](const std::string& name, Tensor t) { p.tensors.emplace(name, std::move(t)); };

  int in_c = arch.input_channels;
  for (int l = 0; l < 3; ++l) {
    const auto& spec = arch.conv[static_cast<size_t>(l)];
    Tensor w({spec.channels, in_c, 3, 3});
    he_fill(w, in_c * 9);
    std::string base = "conv" + std::to_string(l + 1);
    add(base + ".w", std::move(w));
    add(base + ".b", Tensor({spec.channels}));
    in_c = spec.channels;
  }

  int pc = arch.primary.types * arch.primary.dim;
  Tensor pw({pc, in_c, arch.primary.kernel, arch.primary.kernel});
  he_fill(pw, in_c * arch.primary.kernel * arch.primary.kernel);
  add("primary.w", std::move(pw));
  add("primary.b", Tensor({pc}));

  Tensor w({arch.num_primary(), arch.digit.classes, arch.primary.dim, arch.digit.dim});
  for (float& v : w.data) v = rng.normal_f(0.0f, 0.05f);
  add("routing.W", std::move(w));

  if (arch.has_decoder()) {
    arch.validate_decoder();
    const auto& dec = arch.decoder;
    int fc_out = dec.channels[0] * dec.grid * dec.grid;
    Tensor fw({fc_out, arch.digit.dim});
    he_fill(fw, arch.digit.dim);
    add("dec.fc.w", std::move(fw));
    add("dec.fc.b", Tensor({fc_out}));
    int dc = dec.channels[0];
    for (int l = 0; l < 4; ++l) {
      int out_c = l < 3 ? dec.channels[static_cast<size_t>(l + 1)] : 3;
      Tensor tw({dc, out_c, DecoderSpec::kKernel, DecoderSpec::kKernel});
      he_fill(tw, dc * DecoderSpec::kKernel * DecoderSpec::kKernel);
      std::string base = "dec.t" + std::to_string(l + 1);
      add(base + ".w", std::move(tw));
      add(base + ".b", Tensor({out_c}));
      dc = out_c;
    }
  }
  return p;
}

const Tensor& CapsNetParams::get(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw DataError("missing parameter tensor: " + name);
  return it->second;
}

Tensor& CapsNetParams::get(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw DataError("missing parameter tensor: " + name);
  return it->second;
}

std::vector<std::string> CapsNetParams::ordered_names() const {
  std::vector<std::string> names = {"conv1.w", "conv1.b", "conv2.w", "conv2.b",
                                    "conv3.w", "conv3.b", "primary.w", "primary.b",
                                    "routing.W"};
  if (tensors.count("dec.fc.w")) {
    names.insert(names.end(), {"dec.fc.w", "dec.fc.b"});
    for (int l = 1; l <= 4; ++l) {
      names.push_back("dec.t" + std::to_string(l) + ".w");
      names.push_back("dec.t" + std::to_string(l) + ".b");
    }
  }
  return names;
}

Tensor squash(const Tensor& s) {
  if (s.rank() != 2) throw ShapeError("squash expects [N,D], got " + shape_str(s.shape));
  int n = s.dim(0), d = s.dim(1);
  Tensor out({n, d});
  for (int r = 0; r < n; ++r) {
    double q = 0.0;
    for (int i = 0; i < d; ++i) {
      double v = s.at(r, i);
      q += v * v;
    }
    double f = q / ((1.0 + q) * std::sqrt(q + 1e-12));
    for (int i = 0; i < d; ++i) out.at(r, i) = static_cast<float>(f * s.at(r, i));
  }
  return out;
}

Tensor predict_uhat(const Tensor& u, const Tensor& w) {
  if (u.rank() != 2 || w.rank() != 4 || w.dim(0) != u.dim(0) || w.dim(2) != u.dim(1))
    throw ShapeError("predict_uhat: u " + shape_str(u.shape) + " vs W " + shape_str(w.shape));
  int n = u.dim(0), p = u.dim(1), j = w.dim(1), d = w.dim(3);
  Tensor out({n, j, d});
  for (int i = 0; i < n; ++i)
    for (int jj = 0; jj < j; ++jj) {
      float* dst = out.data.data() + (static_cast<size_t>(i) * j + jj) * d;
      const float* wblock = w.data.data() + ((static_cast<size_t>(i) * j + jj) * p) * d;
      for (int pp = 0; pp < p; ++pp) {
        float uv = u.at(i, pp);
        const float* wrow = wblock + static_cast<size_t>(pp) * d;
        for (int dd = 0; dd < d; ++dd) dst[dd] += uv * wrow[dd];
      }
    }
  return out;
}

std::pair<Tensor, RoutingState> route(const Tensor& u_hat, int iterations) {
  if (iterations < 1) throw ValueError("routing iterations must be >= 1");
  if (u_hat.rank() != 3) throw ShapeError("route expects uhat [N,J,D]");
  int n = u_hat.dim(0), j = u_hat.dim(1), d = u_hat.dim(2);

  RoutingState state;
  state.b = Tensor({n, j});
  Tensor v;
  for (int it = 0; it < iterations; ++it) {
    state.c = ops::softmax(state.b, 1);
    Tensor s({j, d});
    for (int i = 0; i < n; ++i)
      for (int jj = 0; jj < j; ++jj) {
        float cij = state.c.at(i, jj);
        const float* src = u_hat.data.data() + (static_cast<size_t>(i) * j + jj) * d;
        float* dst = s.data.data() + static_cast<size_t>(jj) * d;
        for (int dd = 0; dd < d; ++dd) dst[dd] += cij * src[dd];
      }
    v = squash(s);
    state.a = Tensor({n, j});
    for (int i = 0; i < n; ++i)
      for (int jj = 0; jj < j; ++jj) {
        const float* uh = u_hat.data.data() + (static_cast<size_t>(i) * j + jj) * d;
        const float* vj = v.data.data() + static_cast<size_t>(jj) * d;
        double acc = 0.0;
        for (int dd = 0; dd < d; ++dd) acc += static_cast<double>(uh[dd]) * vj[dd];
        state.a.at(i, jj) = static_cast<float>(acc);
      }
    if (it + 1 < iterations)
      for (size_t k = 0; k < state.b.data.size(); ++k) state.b.data[k] += state.a.data[k];
  }
  return {std::move(v), std::move(state)};
}

namespace {

Var param_var(Tape& tape, const CapsNetParams& params, const std::string& name,
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

ClassifyGraph build_classify_graph(Tape& tape, Var image, const CapsNetParams& params,
                                   std::map<std::string, Var>* param_vars) {
  const ArchitectureConfig& arch = params.arch;
  const Tensor& img = tape.value(image);
  if (img.rank() != 3 || img.dim(0) != arch.input_channels || img.dim(1) != arch.input_size ||
      img.dim(2) != arch.input_size)
    throw ShapeError("classify expects image [" + std::to_string(arch.input_channels) + "," +
                     std::to_string(arch.input_size) + "," + std::to_string(arch.input_size) +
                     "], got " + shape_str(img.shape));

  Var x = image;
  for (int l = 0; l < 3; ++l) {
    std::string base = "conv" + std::to_string(l + 1);
    const auto& spec = arch.conv[static_cast<size_t>(l)];
    x = tape.conv2d(x, param_var(tape, params, base + ".w", param_vars), spec.stride,
                    spec.padding);
    x = tape.bias_add_channel(x, param_var(tape, params, base + ".b", param_vars));
    x = tape.relu(x);
  }
  x = tape.conv2d(x, param_var(tape, params, "primary.w", param_vars), arch.primary.stride,
                  arch.primary.padding);
  x = tape.bias_add_channel(x, param_var(tape, params, "primary.b", param_vars));

  ClassifyGraph g;
  Var raw = tape.caps_arrange(x, arch.primary.types, arch.primary.dim);
  g.u = tape.squash_rows(raw);
  g.u_hat = tape.caps_predict(g.u, param_var(tape, params, "routing.W", param_vars));

  auto routed = route(tape.value(g.u_hat), arch.routing_iterations);
  g.state = std::move(routed.second);
  Var s = tape.caps_weighted_sum(g.u_hat, g.state.c);
  g.v = tape.squash_rows(s);
  g.scores = tape.l2_norm_rows(g.v);
  return g;
}

std::tuple<Tensor, CapsuleTensors, RoutingState> forward_classify(
    const Tensor& image, const CapsNetParams& params) {
  Tape tape;
  Var img = tape.constant(image);
  ClassifyGraph g = build_classify_graph(tape, img, params);
  CapsuleTensors caps;
  caps.u = tape.value(g.u);
  caps.u_hat = tape.value(g.u_hat);
  caps.v = tape.value(g.v);
  caps.scores = tape.value(g.scores);
  // s of the final iteration, reconstructed from c and uhat
  int n = caps.u_hat.dim(0), j = caps.u_hat.dim(1), d = caps.u_hat.dim(2);
  caps.s = Tensor({j, d});
  for (int i = 0; i < n; ++i)
    for (int jj = 0; jj < j; ++jj)
      for (int dd = 0; dd < d; ++dd)
        caps.s.at(jj, dd) += g.state.c.at(i, jj) * caps.u_hat.at(i, jj, dd);
  require_finite(caps.scores, "forward_classify");
  Tensor scores = caps.scores;
  return {std::move(scores), std::move(caps), std::move(g.state)};
}

}  // namespace cwss
