#include "cwss/grad_suite.hpp"

#include <cmath>
#include <limits>

#include "cwss/capsule.hpp"
#include "cwss/decoder.hpp"
#include "cwss/ops.hpp"
#include "cwss/rng.hpp"

namespace cwss {

namespace {

Tensor uniform_tensor(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (float& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Values with |v| >= margin, for kink-free relu checks.
Tensor signed_tensor(Shape shape, Rng& rng, double margin, double span) {
  Tensor t(std::move(shape));
  for (float& v : t.data) {
    double mag = rng.uniform(margin, margin + span);
    v = static_cast<float>(rng.uniform() < 0.5 ? -mag : mag);
  }
  return t;
}

ArchitectureConfig tiny_decoder_arch() {
  ArchitectureConfig a;
  a.input_size = 16;
  a.conv = {{{4, 2, 0}, {4, 2, 0}, {4, 1, 0}}};
  a.primary = {3, 1, 1, 2, 4};
  a.digit = {3, 4};
  a.decoder.grid = 1;
  a.decoder.channels = {4, 4, 3, 3};
  return a;
}

ArchitectureConfig reduced_score_arch() {
  ArchitectureConfig a;
  a.input_size = 34;
  a.conv = {{{4, 2, 0}, {6, 2, 0}, {8, 2, 0}}};  // 34 -> 16 -> 7 -> 3
  a.primary = {3, 1, 1, 2, 4};                   // 3x3 grid, 18 primaries
  a.digit = {3, 4};
  a.routing_iterations = 1;
  return a;
}

// Finite differences are meaningless across a relu kink, so the composite
// checks pick bias values that keep every pre-activation at least `target`
// away from zero: per channel, the shift whose smallest |site + shift| is
// largest. The perturbation stencils move pre-activations by well under
// 1e-2, so every probed point stays on one smooth branch.
float clearing_shift(const std::vector<float>& sites) {
  float best_b = 0.0f, best_m = -1.0f;
  for (int k = -300; k <= 300; ++k) {
    float b = static_cast<float>(k) * 1e-3f;
    float m = std::numeric_limits<float>::infinity();
    for (float s : sites) m = std::min(m, std::abs(s + b));
    if (m > best_m) {
      best_m = m;
      best_b = b;
    }
  }
  return best_b;
}

// raw: [C,H,W] pre-activation without bias; sets bias per channel.
void nudge_channel_bias(Tensor& bias, const Tensor& raw) {
  int c = raw.dim(0), hw = raw.dim(1) * raw.dim(2);
  for (int ch = 0; ch < c; ++ch) {
    std::vector<float> sites(raw.data.begin() + static_cast<long>(ch) * hw,
                             raw.data.begin() + static_cast<long>(ch + 1) * hw);
    bias.at(ch) = clearing_shift(sites);
  }
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite(std::uint64_t seed) {
  std::vector<GradCheckReport> reports;
  Rng rng(seed);

  {
    Tensor a = uniform_tensor({3, 4}, rng, -1.0, 1.0);
    Tensor b = uniform_tensor({3, 4}, rng, -1.0, 1.0);
    Tensor t = uniform_tensor({3, 4}, rng, -1.0, 1.0);
    reports.push_back(check_gradients(
        "add_sub_scale", {a, b}, [t](Tape& tape, const std::vector<Var>& in) {
          Var mix = tape.sub(tape.add(in[0], tape.scale(in[1], 0.7f)), in[0]);
          return tape.sse(tape.add(mix, in[0]), tape.constant(t));
        }));
  }
  {
    Tensor a = uniform_tensor({3, 5}, rng, -1.0, 1.0);
    Tensor b = uniform_tensor({3, 5}, rng, -1.0, 1.0);
    Tensor t = uniform_tensor({3, 5}, rng, -1.0, 1.0);
    reports.push_back(check_gradients(
        "hadamard", {a, b}, [t](Tape& tape, const std::vector<Var>& in) {
          return tape.sse(tape.hadamard(in[0], in[1]), tape.constant(t));
        }));
  }
  {
    Tensor x = signed_tensor({4, 6}, rng, 0.15, 0.9);
    Tensor t = uniform_tensor({4, 6}, rng, -1.0, 1.0);
    reports.push_back(check_gradients(
        "relu", {x}, [t](Tape& tape, const std::vector<Var>& in) {
          return tape.sse(tape.relu(in[0]), tape.constant(t));
        }));
  }
  {
    Tensor x = uniform_tensor({4, 6}, rng, -2.0, 2.0);
    Tensor t = uniform_tensor({4, 6}, rng, 0.0, 1.0);
    reports.push_back(check_gradients(
        "sigmoid", {x}, [t](Tape& tape, const std::vector<Var>& in) {
          return tape.sse(tape.sigmoid(in[0]), tape.constant(t));
        }));
  }
  {
    Tensor w = uniform_tensor({5, 7}, rng, -0.8, 0.8);
    Tensor x = uniform_tensor({7}, rng, -0.8, 0.8);
    Tensor t = uniform_tensor({5}, rng, -1.0, 1.0);
    reports.push_back(check_gradients(
        "matvec", {w, x}, [t](Tape& tape, const std::vector<Var>& in) {
          return tape.sse(tape.matvec(in[0], in[1]), tape.constant(t));
        }));
  }
  {
    Tensor x = uniform_tensor({3, 4, 4}, rng, -1.0, 1.0);
    Tensor b = uniform_tensor({3}, rng, -0.5, 0.5);
    Tensor t = uniform_tensor({3, 4, 4}, rng, -1.0, 1.0);
    reports.push_back(check_gradients(
        "bias_add_channel", {x, b}, [t](Tape& tape, const std::vector<Var>& in) {
          return tape.sse(tape.bias_add_channel(in[0], in[1]), tape.constant(t));
        }));
  }
  {
    Tensor x = uniform_tensor({4, 6}, rng, -1.0, 1.0);
    Tensor t = uniform_tensor({6}, rng, -1.0, 1.0);
    reports.push_back(check_gradients(
        "reshape_select", {x}, [t](Tape& tape, const std::vector<Var>& in) {
          Var r = tape.reshape(in[0], {2, 12});
          Var m = tape.reshape(r, {4, 6});
          return tape.sse(tape.select_row(m, 2), tape.constant(t));
        }));
  }
  {
    Tensor x = uniform_tensor({3, 5}, rng, -1.0, 1.0);
    reports.push_back(check_gradients(
        "reduce_sum", {x}, [](Tape& tape, const std::vector<Var>& in) {
          return tape.reduce_sum(tape.hadamard(in[0], in[0]));
        }));
  }
  {
    Tensor a = uniform_tensor({4, 4}, rng, -1.0, 1.0);
    Tensor b = uniform_tensor({4, 4}, rng, -1.0, 1.0);
    reports.push_back(check_gradients(
        "sse", {a, b},
        [](Tape& tape, const std::vector<Var>& in) { return tape.sse(in[0], in[1]); }));
  }
  {
    Tensor x = uniform_tensor({2, 8, 8}, rng, -1.0, 1.0);
    Tensor k = uniform_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
    Tensor t = uniform_tensor({3, 4, 4}, rng, -1.0, 1.0);
    reports.push_back(check_gradients(
        "conv2d", {x, k}, [t](Tape& tape, const std::vector<Var>& in) {
          return tape.sse(tape.conv2d(in[0], in[1], 2, 1), tape.constant(t));
        }));
  }
  {
    Tensor x = uniform_tensor({3, 4, 4}, rng, -1.0, 1.0);
    Tensor k = uniform_tensor({3, 2, 4, 4}, rng, -0.5, 0.5);
    Tensor t = uniform_tensor({2, 8, 8}, rng, -1.0, 1.0);
    reports.push_back(check_gradients(
        "transposed_conv2d", {x, k}, [t](Tape& tape, const std::vector<Var>& in) {
          return tape.sse(tape.transposed_conv2d(in[0], in[1], 2, 1), tape.constant(t));
        }));
  }
  {
    Tensor x = uniform_tensor({7, 9}, rng, -1.0, 1.0);
    Tensor t = uniform_tensor({7, 9}, rng, -1.0, 1.0);
    reports.push_back(check_gradients(
        "gaussian_blur2d", {x}, [t](Tape& tape, const std::vector<Var>& in) {
          return tape.sse(tape.gaussian_blur2d(in[0], 1.2f), tape.constant(t));
        }));
  }
  {
    Tensor s = uniform_tensor({5, 4}, rng, -1.2, 1.2);
    Tensor t = uniform_tensor({5, 4}, rng, -0.5, 0.5);
    reports.push_back(check_gradients(
        "squash", {s}, [t](Tape& tape, const std::vector<Var>& in) {
          return tape.sse(tape.squash_rows(in[0]), tape.constant(t));
        }));
  }
  {
    Tensor m = signed_tensor({4, 5}, rng, 0.2, 0.8);
    Tensor t = uniform_tensor({4}, rng, 0.0, 1.0);
    reports.push_back(check_gradients(
        "l2_norm_rows", {m}, [t](Tape& tape, const std::vector<Var>& in) {
          return tape.sse(tape.l2_norm_rows(in[0]), tape.constant(t));
        }));
  }
  {
    Tensor u = uniform_tensor({6, 4}, rng, -0.8, 0.8);
    Tensor w = uniform_tensor({6, 3, 4, 5}, rng, -0.3, 0.3);
    Tensor t = uniform_tensor({6, 3, 5}, rng, -0.5, 0.5);
    reports.push_back(check_gradients(
        "caps_predict", {u, w}, [t](Tape& tape, const std::vector<Var>& in) {
          return tape.sse(tape.caps_predict(in[0], in[1]), tape.constant(t));
        }));
  }
  {
    // Final routing layer: weighted sum under fixed coupling, then squash.
    Tensor uhat = uniform_tensor({6, 3, 5}, rng, -0.8, 0.8);
    Tensor logits = uniform_tensor({6, 3}, rng, -1.0, 1.0);
    Tensor c = ops::softmax(logits, 1);
    Tensor t = uniform_tensor({3, 5}, rng, -0.4, 0.4);
    reports.push_back(check_gradients(
        "routing_final_layer", {uhat}, [c, t](Tape& tape, const std::vector<Var>& in) {
          Var s = tape.caps_weighted_sum(in[0], c);
          return tape.sse(tape.squash_rows(s), tape.constant(t));
        }));
  }
  {
    // Rows with norms held away from both hinges.
    Rng local = Rng::fork(seed, 101);
    Tensor v({4, 3});
    std::vector<double> norms = {0.5, 0.35, 0.6, 0.45};
    for (int r = 0; r < 4; ++r) {
      double raw[3], q = 0.0;
      for (double& x : raw) {
        x = local.uniform(-1.0, 1.0);
        q += x * x;
      }
      for (int i = 0; i < 3; ++i)
        v.at(r, i) = static_cast<float>(raw[i] / std::sqrt(q) * norms[static_cast<size_t>(r)]);
    }
    Tensor targets({4}, {1.0f, 0.0f, 1.0f, 0.0f});
    reports.push_back(check_gradients(
        "margin_loss", {v}, [targets](Tape& tape, const std::vector<Var>& in) {
          return tape.margin_loss(in[0], targets, 0.9f, 0.1f, 0.5f);
        }));
  }
  {
    // Composite decoder path: v_j plus every decoder parameter.
    ArchitectureConfig arch = tiny_decoder_arch();
    CapsNetParams params = CapsNetParams::init(arch, seed ^ 0xDECu);
    Rng local = Rng::fork(seed, 202);
    Tensor v = uniform_tensor({arch.digit.dim}, local, -0.6, 0.6);

    // Dry forward (ops composition) to place biases clear of relu kinks.
    {
      Tensor pre = ops::matvec(params.get("dec.fc.w"), v);
      Tensor& fcb = params.get("dec.fc.b");
      for (size_t i = 0; i < pre.data.size(); ++i)
        fcb.data[i] = std::copysign(0.05f, pre.data[i]) - pre.data[i];
      Tensor x = ops::relu(ops::add(pre, fcb));
      x.shape = {arch.decoder.channels[0], arch.decoder.grid, arch.decoder.grid};
      for (int l = 1; l <= 4; ++l) {
        std::string base = "dec.t" + std::to_string(l);
        Tensor raw = ops::transposed_conv2d(x, params.get(base + ".w"),
                                            DecoderSpec::kStride, DecoderSpec::kPadding);
        if (l < 4) {
          nudge_channel_bias(params.get(base + ".b"), raw);
          x = ops::relu(ops::bias_add_channel(raw, params.get(base + ".b")));
        } else {
          x = ops::sigmoid(ops::bias_add_channel(raw, params.get(base + ".b")));
        }
      }
    }

    std::vector<std::string> names = {"dec.fc.w", "dec.fc.b", "dec.t1.w", "dec.t1.b",
                                      "dec.t2.w", "dec.t2.b", "dec.t3.w", "dec.t3.b",
                                      "dec.t4.w", "dec.t4.b"};
    std::vector<Tensor> inputs;
    inputs.push_back(v);
    for (const auto& n : names) inputs.push_back(params.get(n));
    Tensor t = uniform_tensor({3, 16, 16}, local, 0.0, 1.0);
    GradCheckOptions opts;
    opts.step = 2e-3f;
    opts.kink_filter = true;  // tripwire; the nudge should leave nothing to skip
    reports.push_back(check_gradients(
        "decoder", inputs,
        [names, &params, t](Tape& tape, const std::vector<Var>& in) {
          std::map<std::string, Var> vars;
          for (size_t i = 0; i < names.size(); ++i) vars.emplace(names[i], in[i + 1]);
          Var map = build_decoder_graph(tape, in[0], params, &vars);
          return tape.sse(map, tape.constant(t));
        },
        opts));
  }
  {
    // Full 34x34 score path; one routing iteration keeps coupling constant.
    ArchitectureConfig arch = reduced_score_arch();
    CapsNetParams params = CapsNetParams::init(arch, seed ^ 0x34u);
    Rng local = Rng::fork(seed, 303);
    Tensor image = uniform_tensor({3, 34, 34}, local, 0.0, 1.0);

    {
      Tensor x = image;
      for (int l = 0; l < 3; ++l) {
        const auto& spec = arch.conv[static_cast<size_t>(l)];
        std::string base = "conv" + std::to_string(l + 1);
        Tensor raw = ops::conv2d(x, params.get(base + ".w"), spec.stride, spec.padding);
        nudge_channel_bias(params.get(base + ".b"), raw);
        x = ops::relu(ops::bias_add_channel(raw, params.get(base + ".b")));
      }
      // primary caps feed squash, which is smooth; no nudge needed there.
    }

    std::vector<std::string> names = {"conv1.w", "conv1.b", "conv2.w", "conv2.b", "conv3.w",
                                      "conv3.b", "primary.w", "primary.b", "routing.W"};
    std::vector<Tensor> inputs;
    inputs.push_back(image);
    for (const auto& n : names) inputs.push_back(params.get(n));
    Tensor t = uniform_tensor({arch.digit.classes}, local, 0.2, 0.8);
    GradCheckOptions opts;
    opts.step = 4e-3f;  // the deep path needs the wider stencil to beat f32 noise
    opts.kink_filter = true;
    reports.push_back(check_gradients(
        "score_path_34", inputs,
        [names, &params, t](Tape& tape, const std::vector<Var>& in) {
          std::map<std::string, Var> vars;
          for (size_t i = 0; i < names.size(); ++i) vars.emplace(names[i], in[i + 1]);
          ClassifyGraph g = build_classify_graph(tape, in[0], params, &vars);
          return tape.sse(g.scores, tape.constant(t));
        },
        opts));
  }
  return reports;
}

}  // namespace cwss
