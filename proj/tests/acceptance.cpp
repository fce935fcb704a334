// End-to-end acceptance gate. Each criterion prints exactly one line:
//   [PASS] criterion N: ...
//   [FAIL] criterion N: ...
// The process exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "cwss/capsule.hpp"
#include "cwss/checkpoint.hpp"
#include "cwss/dataset.hpp"
#include "cwss/decoder.hpp"
#include "cwss/grad_suite.hpp"
#include "cwss/loss.hpp"
#include "cwss/ops.hpp"
#include "cwss/rng.hpp"
#include "cwss/saliency.hpp"
#include "cwss/seg_metrics.hpp"
#include "cwss/training.hpp"
#include "cwss/wsss.hpp"

using namespace cwss;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int n, bool ok, const std::string& detail) {
  std::printf("[%s] criterion %d: %s\n", ok ? "PASS" : "FAIL", n, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// criterion 1: finite-difference gradient checks

void criterion_1() {
  auto t0 = std::chrono::steady_clock::now();
  auto reports = run_gradcheck_suite(42);
  double elapsed = seconds_since(t0);

  int passed = 0;
  float worst = 0.0f;
  for (const auto& r : reports) {
    passed += r.passed ? 1 : 0;
    worst = std::max(worst, r.max_rel_error);
  }
  bool ok = passed == static_cast<int>(reports.size()) && elapsed < 120.0;
  report(1, ok,
         fmt("gradient checks %d/%zu passed, worst rel err %.2e, %.1fs (budget 120s)",
             passed, reports.size(), static_cast<double>(worst), elapsed));
}

// ---------------------------------------------------------------------------
// criterion 2: routing invariants and the 2x2 reference

// Double-precision transliteration of the routing equations, kept separate
// from the production float path.
void reference_route_2x2(const Tensor& uhat, int iterations, double v_out[2][2],
                         double c_out[2][2]) {
  double b[2][2] = {{0, 0}, {0, 0}};
  double v[2][2] = {{0, 0}, {0, 0}};
  double c[2][2];
  for (int it = 0; it < iterations; ++it) {
    for (int i = 0; i < 2; ++i) {
      double m = std::max(b[i][0], b[i][1]);
      double z = std::exp(b[i][0] - m) + std::exp(b[i][1] - m);
      c[i][0] = std::exp(b[i][0] - m) / z;
      c[i][1] = std::exp(b[i][1] - m) / z;
    }
    for (int j = 0; j < 2; ++j) {
      double s0 = 0, s1 = 0;
      for (int i = 0; i < 2; ++i) {
        s0 += c[i][j] * uhat.at(i, j, 0);
        s1 += c[i][j] * uhat.at(i, j, 1);
      }
      double q = s0 * s0 + s1 * s1;
      double f = (q / (1.0 + q)) / std::sqrt(q + 1e-12);
      v[j][0] = f * s0;
      v[j][1] = f * s1;
    }
    if (it + 1 < iterations)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
          b[i][j] += uhat.at(i, j, 0) * v[j][0] + uhat.at(i, j, 1) * v[j][1];
  }
  for (int j = 0; j < 2; ++j)
    for (int d = 0; d < 2; ++d) v_out[j][d] = v[j][d];
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) c_out[i][j] = c[i][j];
}

void criterion_2() {
  double worst_row = 0.0;
  double worst_norm = -1.0;
  bool norms_ok = true;

  Rng rng(2024);
  Tensor uhat({6, 4, 3});
  for (float& x : uhat.data) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  for (int iters : {1, 2, 3}) {
    auto [v, st] = route(uhat, iters);
    for (int i = 0; i < 6; ++i) {
      double sum = 0.0;
      for (int j = 0; j < 4; ++j) sum += st.c.at(i, j);
      worst_row = std::max(worst_row, std::abs(sum - 1.0));
    }
    Tensor norms = ops::l2_norm(v, 1);
    for (float n : norms.data) {
      if (!(n >= 0.0f && n < 1.0f)) norms_ok = false;
      worst_norm = std::max(worst_norm, static_cast<double>(n));
    }
  }

  Tensor small({2, 2, 2}, {0.8f, -0.3f, 0.1f, 0.6f, 0.7f, 0.2f, -0.4f, 0.5f});
  double vref[2][2], cref[2][2];
  reference_route_2x2(small, 3, vref, cref);
  auto [v2, st2] = route(small, 3);
  double worst_ref = 0.0;
  for (int j = 0; j < 2; ++j)
    for (int d = 0; d < 2; ++d)
      worst_ref = std::max(worst_ref, std::abs(v2.at(j, d) - vref[j][d]));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      worst_ref = std::max(worst_ref, std::abs(st2.c.at(i, j) - cref[i][j]));

  bool ok = worst_row <= 1e-6 && norms_ok && worst_ref <= 1e-6;
  report(2, ok,
         fmt("coupling row drift %.2e (<=1e-6), norms in [0,1) max %.4f, 2x2 reference "
             "drift %.2e (<=1e-6)",
             worst_row, worst_norm, worst_ref));
}

// ---------------------------------------------------------------------------
// criterion 3: analytic loss fixtures

void criterion_3() {
  LossConfig cfg;
  double e1 = std::abs(margin_loss(Tensor({1}, {0.9f}), Tensor({1}, {1.0f}), cfg));
  double e2 = std::abs(margin_loss(Tensor({1}, {0.1f}), Tensor({1}, {0.0f}), cfg));
  double e3 =
      std::abs(margin_loss(Tensor({1}, {0.0f}), Tensor({1}, {1.0f}), cfg) - 0.81f);
  float rec = reconstruction_loss(Tensor::ones({3, 2, 2}), Tensor::zeros({3, 2, 2}));

  bool ok = e1 <= 1e-6 && e2 <= 1e-6 && e3 <= 1e-6 && rec == 12.0f;
  report(3, ok,
         fmt("margin cases err %.1e/%.1e/%.1e (<=1e-6), reconstruction 3x2x2 = %.1f "
             "(exact 12)",
             e1, e2, e3, static_cast<double>(rec)));
}

// ---------------------------------------------------------------------------
// criterion 4: background and other-activation fixtures

void criterion_4() {
  Tensor mid = Tensor::full({3, 4, 4}, 240.0f / 255.0f);
  Tensor white = Tensor::ones({3, 4, 4});
  double worst_mid = 0.0, worst_white = 0.0;
  for (float v : background_base(mid).data)
    worst_mid = std::max(worst_mid, std::abs(static_cast<double>(v) - 0.375));
  for (float v : background_base(white).data)
    worst_white = std::max(worst_white, std::abs(static_cast<double>(v) - 0.75));

  Tensor zeros = Tensor::zeros({4, 4});
  bool other_ok = true;
  for (float v : other_activation({zeros, zeros}, zeros, zeros).data)
    if (v != 0.05f) other_ok = false;

  bool ok = worst_mid <= 1e-6 && worst_white <= 1e-6 && other_ok;
  report(4, ok,
         fmt("background(240)->0.375 err %.1e, background(255)->0.75 err %.1e "
             "(<=1e-6), zero-map other == 0.05 %s",
             worst_mid, worst_white, other_ok ? "exactly" : "VIOLATED"));
}

// ---------------------------------------------------------------------------
// criterion 5: saliency degeneracies

void criterion_5() {
  Rng rng(55);
  Tensor image({1, 6, 7});
  Tensor w({1, 6, 7});
  for (float& v : image.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
  for (float& v : w.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));

  auto score = [&w](Tape& tape, Var img) {
    return tape.reduce_sum(tape.hadamard(img, tape.constant(w)));
  };

  // Single-channel linear surrogate: the saliency map is exactly |w|.
  Tensor sal = saliency_map(image, score);
  double worst_lin = 0.0;
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 7; ++x)
      worst_lin = std::max(
          worst_lin, std::abs(static_cast<double>(sal.at(y, x)) -
                              std::abs(static_cast<double>(w.at(0, y, x)))));

  SmoothGradConfig cfg;
  cfg.sigma = 0.0f;
  cfg.samples = 25;
  Tensor sg = smoothgrad(image, score, cfg);
  Tensor plain = ops::minmax_normalize(saliency_map(image, score));
  double worst_sg = 0.0;
  for (size_t i = 0; i < sg.data.size(); ++i)
    worst_sg = std::max(worst_sg,
                        std::abs(static_cast<double>(sg.data[i]) - plain.data[i]));

  bool ok = worst_lin <= 1e-5 && worst_sg == 0.0;
  report(5, ok,
         fmt("linear surrogate |w| err %.1e (<=1e-5), sigma=0 smoothgrad drift %.1e "
             "(exact)",
             worst_lin, worst_sg));
}

// ---------------------------------------------------------------------------
// criterion 6: IoU / mIoU against a brute-force oracle

void criterion_6() {
  Rng rng(66);
  std::vector<int> class_set = {0, 1, 2, 3, 4};
  std::vector<SegPair> pairs;
  for (int n = 0; n < 50; ++n) {
    SegPair p;
    p.pred.height = p.truth.height = 16;
    p.pred.width = p.truth.width = 16;
    p.pred.cls.resize(256);
    p.truth.cls.resize(256);
    for (int i = 0; i < 256; ++i) {
      p.pred.cls[static_cast<size_t>(i)] = rng.uniform_int(0, 4);
      p.truth.cls[static_cast<size_t>(i)] = rng.uniform_int(0, 4);
    }
    pairs.push_back(std::move(p));
  }

  MiouResult got = miou(pairs, class_set);
  bool counts_ok = true;
  double total = 0.0;
  int defined = 0;
  for (int cls : class_set) {
    long long inter = 0, uni = 0;
    for (const auto& p : pairs)
      for (size_t i = 0; i < p.pred.cls.size(); ++i) {
        bool a = p.pred.cls[i] == cls, b = p.truth.cls[i] == cls;
        inter += a && b;
        uni += a || b;
      }
    const auto& c = got.per_class.at(cls);
    if (c.intersection != inter || c.union_ != uni) counts_ok = false;
    if (uni > 0) {
      total += static_cast<double>(inter) / static_cast<double>(uni);
      ++defined;
    }
  }
  bool mean_ok =
      defined == got.defined_classes && got.miou == total / static_cast<double>(defined);

  // Half-overlap fixture: pred top row vs truth left column -> 1/3.
  SegPair fix;
  fix.pred.height = fix.truth.height = 2;
  fix.pred.width = fix.truth.width = 2;
  fix.pred.cls = {1, 1, 0, 0};
  fix.truth.cls = {1, 0, 1, 0};
  bool third_ok = iou(fix, 1).value() == 1.0 / 3.0;

  report(6, counts_ok && mean_ok && third_ok,
         fmt("pooled counts %s, mean %s over %d classes, half-overlap fixture %s",
             counts_ok ? "exact" : "MISMATCH", mean_ok ? "exact" : "MISMATCH",
             defined, third_ok ? "= 1/3" : "WRONG"));
}

// ---------------------------------------------------------------------------
// criterion 7: synthetic end-to-end benchmark

ArchitectureConfig bench_arch() {
  ArchitectureConfig arch;
  arch.input_size = 128;
  arch.conv = {{{12, 2, 0}, {24, 2, 0}, {48, 2, 0}}};
  // Small primary kernel: each capsule sees one texture, not the mixture.
  arch.primary = {3, 1, 1, 4, 8};
  arch.digit = {27, 8};
  arch.routing_iterations = 3;
  arch.decoder.grid = 8;
  arch.decoder.channels = {32, 16, 8, 8};
  return arch;
}

void criterion_7() {
  const double kTrainBudgetSec = 30.0 * 60.0;
  const double kAccuracyFloor = 90.0;
  const double kMiouFloor = 0.45;

  SynthConfig train_cfg;
  train_cfg.num_classes = 4;
  train_cfg.patches = 600;
  train_cfg.size = 128;
  train_cfg.seed = 42;
  train_cfg.salt = 0;
  SynthConfig eval_cfg = train_cfg;
  eval_cfg.patches = 100;
  eval_cfg.salt = 1;

  auto train_data = generate_synthetic(train_cfg);
  auto eval_data = generate_synthetic(eval_cfg);

  ArchitectureConfig arch = bench_arch();
  CapsNetParams params = CapsNetParams::init(arch, 42);

  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 16;
  cfg.learning_rate = 1e-3f;
  cfg.seed = 42;
  cfg.deterministic = true;

  auto t0 = std::chrono::steady_clock::now();
  train(train_data, params, cfg);
  double train_sec = seconds_since(t0);

  // Classes the corpus actually uses; the rest are vacuous negatives.
  std::set<int> used;
  for (const auto& rec : train_data)
    for (int j = 0; j < 27; ++j)
      if (rec.labels.data[static_cast<size_t>(j)] > 0.5f) used.insert(j);
  std::vector<int> subset(used.begin(), used.end());

  SegmentOptions opts;
  opts.mode = Mode::Morphological;
  opts.threshold = 0.5f;
  opts.smoothgrad.samples = 8;
  opts.smoothgrad.sigma = 0.15f;
  opts.smoothgrad.seed = 0;

  std::vector<Tensor> scores, targets;
  std::vector<SegPair> pairs;
  for (const auto& rec : eval_data) {
    SegmentResult res = segment_patch(rec.image, params, opts);
    scores.push_back(res.scores);
    targets.push_back(rec.labels);
    SegPair pair;
    pair.pred = res.mask;
    pair.truth.height = rec.mask->dim(0);
    pair.truth.width = rec.mask->dim(1);
    pair.truth.cls.reserve(rec.mask->data.size());
    for (float v : rec.mask->data) pair.truth.cls.push_back(static_cast<int>(v));
    pairs.push_back(std::move(pair));
  }
  double accuracy = classification_metrics(scores, targets, opts.threshold, &subset).accuracy();

  std::vector<int> class_set = subset;
  class_set.push_back(LabelTaxonomy::kBackground);
  double miou_val = miou(pairs, class_set).miou;

  SegmentResult blank = segment_patch(Tensor::ones({3, 128, 128}), params, opts);
  bool blank_ok = true;
  for (int c : blank.mask.cls)
    if (c != LabelTaxonomy::kBackground) blank_ok = false;

  bool ok = train_sec <= kTrainBudgetSec && accuracy >= kAccuracyFloor &&
            miou_val >= kMiouFloor && blank_ok;
  report(7, ok,
         fmt("600/100 patches: train %.0fs (<=%.0fs), accuracy %.2f%% (>=90%%), mIoU "
             "%.4f (>=0.45), white patch -> Background %s",
             train_sec, kTrainBudgetSec, accuracy, miou_val,
             blank_ok ? "yes" : "NO"));
}

// ---------------------------------------------------------------------------
// criterion 8: determinism and persistence through the CLI

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("cwss_accept_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string sub(const std::string& name) const { return (path / name).string(); }
};

int run_cli(const std::string& args) {
  std::string cmd = std::string(CWSS_BIN) + " " + args + " > /dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return rc < 0 ? rc : WEXITSTATUS(rc);
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::vector<char>(std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>());
}

void criterion_8() {
  TempDir dir("c8");

  std::string arch_flags =
      " --input-size 32 --conv-channels 4 6 8 --primary-kernel 3 --primary-types 2 "
      "--primary-dim 4 --digit-dim 4 --routing-iters 2 --decoder-channels 4 4 3 3";

  int rc_synth = run_cli("synth --out-dir " + dir.sub("ds") +
                         " --patches 8 --classes 3 --size 32 --seed 5");
  std::string train_flags = "train --data " + dir.sub("ds") +
                            " --epochs 2 --batch 4 --seed 9 --deterministic" + arch_flags;
  int rc_t1 = run_cli(train_flags + " --out-dir " + dir.sub("r1"));
  int rc_t2 = run_cli(train_flags + " --out-dir " + dir.sub("r2"));

  auto log1 = slurp(dir.sub("r1") + "/train.log");
  auto ckpt1 = slurp(dir.sub("r1") + "/model.ckpt");
  bool repro = rc_synth == 0 && rc_t1 == 0 && rc_t2 == 0 && !log1.empty() &&
               !ckpt1.empty() && log1 == slurp(dir.sub("r2") + "/train.log") &&
               ckpt1 == slurp(dir.sub("r2") + "/model.ckpt");

  // Round-trip: loading and re-saving reproduces the file bit for bit.
  bool roundtrip = false;
  try {
    Checkpoint ckpt = load_checkpoint(dir.sub("r1") + "/model.ckpt");
    save_checkpoint(ckpt, dir.sub("resaved.ckpt"));
    roundtrip = slurp(dir.sub("resaved.ckpt")) == ckpt1;
  } catch (const std::exception&) {
    roundtrip = false;
  }

  // A flipped payload byte must be refused, in-process and at the CLI.
  bool corrupt_ok = false;
  {
    std::vector<char> bad = ckpt1;
    if (!bad.empty()) {
      bad[bad.size() / 2] = static_cast<char>(bad[bad.size() / 2] ^ 0x01);
      std::ofstream out(dir.sub("bad.ckpt"), std::ios::binary);
      out.write(bad.data(), static_cast<std::streamsize>(bad.size()));
    }
    bool threw = false;
    try {
      load_checkpoint(dir.sub("bad.ckpt"));
    } catch (const ChecksumError&) {
      threw = true;
    } catch (const std::exception&) {
      threw = false;
    }
    int rc_bad = run_cli("classify --checkpoint " + dir.sub("bad.ckpt") + " --images " +
                         dir.sub("ds") + "/images/patch_00000.png --out-dir " +
                         dir.sub("cls"));
    corrupt_ok = threw && rc_bad == 5;
  }

  bool ok = repro && roundtrip && corrupt_ok;
  report(8, ok,
         fmt("seeded reruns byte-identical %s, checkpoint round-trip bitwise %s, "
             "corrupted checkpoint refused (ChecksumError, exit 5) %s",
             repro ? "yes" : "NO", roundtrip ? "yes" : "NO", corrupt_ok ? "yes" : "NO"));
}

}  // namespace

int main() {
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all acceptance criteria passed\n");
  return 0;
}
