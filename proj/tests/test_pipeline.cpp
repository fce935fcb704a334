#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "cwss/ops.hpp"
#include "cwss/rng.hpp"
#include "cwss/saliency.hpp"
#include "cwss/seg_metrics.hpp"
#include "cwss/taxonomy.hpp"
#include "cwss/wsss.hpp"

using namespace cwss;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (float& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape == b.shape);
  float m = 0.0f;
  for (size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

ArchitectureConfig seg_arch() {
  ArchitectureConfig arch;
  arch.input_size = 32;
  arch.conv = {{{4, 2, 0}, {6, 2, 0}, {8, 2, 0}}};
  arch.primary = {3, 1, 1, 2, 4};
  arch.digit = {27, 4};
  arch.routing_iterations = 2;
  arch.decoder.grid = 2;
  arch.decoder.channels = {4, 4, 3, 3};
  return arch;
}

SegMask mask_from(int h, int w, std::vector<int> cls) {
  SegMask m;
  m.height = h;
  m.width = w;
  m.cls = std::move(cls);
  return m;
}

}  // namespace

TEST_CASE("saliency of a linear score recovers the weights") {
  Rng rng(101);
  Tensor image = random_tensor({2, 5, 6}, rng, 0.0, 1.0);
  Tensor w = random_tensor({2, 5, 6}, rng);

  Tensor sal = saliency_map(image, [&w](Tape& tape, Var img) {
    return tape.reduce_sum(tape.hadamard(img, tape.constant(w)));
  });
  CHECK(sal.shape == Shape{5, 6});
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 6; ++x) {
      float want = std::max(std::abs(w.at(0, y, x)), std::abs(w.at(1, y, x)));
      CHECK(sal.at(y, x) == doctest::Approx(want).epsilon(1e-6));
    }
}

TEST_CASE("smoothgrad with zero sigma is the normalized plain map") {
  Rng rng(102);
  Tensor image = random_tensor({2, 4, 4}, rng, 0.0, 1.0);
  Tensor w = random_tensor({2, 4, 4}, rng);
  auto score = [&w](Tape& tape, Var img) {
    return tape.reduce_sum(tape.hadamard(img, tape.constant(w)));
  };

  SmoothGradConfig cfg;
  cfg.sigma = 0.0f;
  cfg.samples = 17;  // ignored by the short-circuit
  Tensor sg = smoothgrad(image, score, cfg);
  Tensor plain = ops::minmax_normalize(saliency_map(image, score));
  CHECK(max_abs_diff(sg, plain) == 0.0f);
  for (float v : sg.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("smoothgrad is deterministic in its seed") {
  Rng rng(103);
  Tensor image = random_tensor({2, 4, 4}, rng, 0.0, 1.0);
  Tensor w = random_tensor({2, 4, 4}, rng);
  // Quadratic score: the gradient depends on the (perturbed) input.
  auto score = [&w](Tape& tape, Var img) {
    Var wx = tape.hadamard(img, tape.constant(w));
    return tape.reduce_sum(tape.hadamard(wx, wx));
  };

  SmoothGradConfig cfg;
  cfg.sigma = 0.1f;
  cfg.samples = 4;
  cfg.seed = 77;
  Tensor a = smoothgrad(image, score, cfg);
  Tensor b = smoothgrad(image, score, cfg);
  CHECK(max_abs_diff(a, b) == 0.0f);

  cfg.seed = 78;
  Tensor c = smoothgrad(image, score, cfg);
  CHECK(max_abs_diff(a, c) > 0.0f);
}

TEST_CASE("smoothgrad config validation") {
  SmoothGradConfig cfg;
  cfg.samples = 0;
  CHECK_THROWS_AS(cfg.validate(), ValueError);
  cfg = SmoothGradConfig{};
  cfg.sigma = -0.5f;
  CHECK_THROWS_AS(cfg.validate(), ValueError);
}

TEST_CASE("smoothgrad_multi shares the noise stream with the single-class path") {
  CapsNetParams params = CapsNetParams::init(seg_arch(), 19);
  Rng rng(104);
  Tensor image = random_tensor({3, 32, 32}, rng, 0.0, 1.0);

  SmoothGradConfig cfg;
  cfg.sigma = 0.1f;
  cfg.samples = 2;
  cfg.seed = 5;
  auto multi = smoothgrad_multi(image, params, {3, 11}, cfg);
  REQUIRE(multi.size() == 2);
  CHECK(max_abs_diff(multi.at(3), smoothgrad_class(image, params, 3, cfg)) == 0.0f);
  CHECK(max_abs_diff(multi.at(11), smoothgrad_class(image, params, 11, cfg)) == 0.0f);

  CHECK(smoothgrad_multi(image, params, {}, cfg).empty());
  CHECK_THROWS_AS(smoothgrad_multi(image, params, {27}, cfg), ValueError);
  CHECK_THROWS_AS(class_saliency(image, params, -1), ValueError);
}

TEST_CASE("taxonomy structure") {
  const auto& tax = LabelTaxonomy::instance();
  CHECK(tax.classes().size() == 27);
  CHECK(tax.mode_classes(Mode::Morphological).size() == 23);
  CHECK(tax.mode_classes(Mode::Functional) == std::vector<int>{23, 24, 25, 26});

  CHECK(tax.index_of("E.M.S") == 0);
  CHECK(tax.index_of("A.W") == 17);
  CHECK(tax.index_of("T") == 26);
  CHECK_THROWS_AS(tax.index_of("Z.Z"), DataError);

  CHECK(tax.white_adipose() == 17);
  CHECK(tax.adipose() == std::vector<int>{17, 18, 19});
  CHECK(tax.transparent_functional() == std::vector<int>{24, 25, 26});

  for (int id = 0; id < 27; ++id) {
    CHECK(tax.cls(id).id == id);
    CHECK(!tax.cls(id).code.empty());
  }
  // Ids above the label universe are the synthetic segmentation classes.
  CHECK(tax.color_of(LabelTaxonomy::kBackground) == std::array<std::uint8_t, 3>{255, 255, 255});
  CHECK(tax.color_of(LabelTaxonomy::kOther) == std::array<std::uint8_t, 3>{128, 128, 128});
  CHECK_THROWS_AS(tax.cls(27), ValueError);
  CHECK_THROWS_AS(tax.color_of(29), ValueError);

  CHECK(parse_mode("morph") == Mode::Morphological);
  CHECK(parse_mode("func") == Mode::Functional);
  CHECK_THROWS_AS(parse_mode("both"), ValueError);
  CHECK(mode_name(Mode::Morphological) == "morph");
  CHECK(mode_name(Mode::Functional) == "func");
}

TEST_CASE("background activation from brightness") {
  // Pixels at gray level 240 sit exactly at the sigmoid midpoint.
  Tensor mid = Tensor::full({3, 4, 4}, 240.0f / 255.0f);
  Tensor bg_mid = background_base(mid);
  CHECK(bg_mid.shape == Shape{4, 4});
  for (float v : bg_mid.data) CHECK(v == doctest::Approx(0.375f).epsilon(1e-6));

  Tensor white = Tensor::ones({3, 2, 2});
  for (float v : background_base(white).data)
    CHECK(v == doctest::Approx(0.75f).epsilon(1e-6));

  Tensor dark = Tensor::full({3, 2, 2}, 0.2f);
  for (float v : background_base(dark).data) CHECK(v < 1e-6f);

  CHECK_THROWS_AS(background_base(Tensor({1, 4, 4})), ShapeError);
}

TEST_CASE("background suppression and blur") {
  Tensor bg = Tensor::full({8, 8}, 0.6f);

  // Nothing to suppress: a constant map passes through the blur unchanged.
  Tensor plain = background_morph(bg, Tensor::zeros({8, 8}), 2.0f);
  CHECK(max_abs_diff(plain, bg) < 1e-6f);

  // Full suppression by the white-adipose map.
  Tensor gone = background_morph(bg, bg, 2.0f);
  for (float v : gone.data) CHECK(v == 0.0f);

  // Suppression is clamped: an oversized suppressor cannot go negative.
  Tensor over = background_func(bg, Tensor::full({8, 8}, 0.9f), 1.0f);
  for (float v : over.data) CHECK(v == 0.0f);

  CHECK_THROWS_AS(background_morph(bg, Tensor({4, 4}), 2.0f), ShapeError);
}

TEST_CASE("other activation fixtures") {
  Tensor zeros = Tensor::zeros({3, 3});
  Tensor other = other_activation({}, zeros, zeros);
  for (float v : other.data) CHECK(v == doctest::Approx(0.05f));

  Tensor ones = Tensor::ones({3, 3});
  for (float v : other_activation({ones}, zeros, zeros).data)
    CHECK(v == doctest::Approx(0.0f));

  Tensor half = Tensor::full({3, 3}, 0.5f);
  for (float v : other_activation({half}, zeros, half).data)
    CHECK(v == doctest::Approx(0.025f));

  // Evidence is the pointwise max over all sources.
  Tensor a = Tensor::zeros({1, 2});
  a.at(0, 0) = 0.8f;
  Tensor b = Tensor::zeros({1, 2});
  b.at(0, 1) = 0.4f;
  Tensor o = other_activation({a}, b, Tensor::zeros({1, 2}));
  CHECK(o.at(0, 0) == doctest::Approx(0.05f * 0.2f));
  CHECK(o.at(0, 1) == doctest::Approx(0.05f * 0.6f));
}

TEST_CASE("fuse combines reconstruction, saliency and background") {
  Rng rng(105);
  Tensor rec = random_tensor({4, 4}, rng, 0.0, 1.0);
  Tensor ones = Tensor::ones({4, 4});
  Tensor zeros = Tensor::zeros({4, 4});

  CHECK(max_abs_diff(fuse(rec, ones, zeros), rec) == 0.0f);
  for (float v : fuse(rec, ones, ones).data) CHECK(v == 0.0f);
  for (float v : fuse(rec, zeros, zeros).data) CHECK(v == 0.0f);

  Tensor sm = random_tensor({4, 4}, rng, 0.0, 1.0);
  Tensor bg = random_tensor({4, 4}, rng, 0.0, 1.0);
  Tensor f = fuse(rec, sm, bg);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      CHECK(f.at(y, x) ==
            doctest::Approx(rec.at(y, x) * sm.at(y, x) * (1.0f - bg.at(y, x))));

  CHECK_THROWS_AS(fuse(rec, Tensor({2, 2}), bg), ShapeError);
}

TEST_CASE("segment argmax semantics") {
  std::map<int, Tensor> cands;
  cands.emplace(4, Tensor::full({2, 2}, 0.3f));
  SegMask single = segment(cands);
  CHECK(single.height == 2);
  CHECK(single.width == 2);
  for (int c : single.cls) CHECK(c == 4);

  Tensor a({2, 2}, {0.9f, 0.1f, 0.5f, 0.5f});
  Tensor b({2, 2}, {0.2f, 0.8f, 0.5f, 0.4f});
  std::map<int, Tensor> two = {{1, a}, {6, b}};
  SegMask m = segment(two);
  CHECK(m.at(0, 0) == 1);
  CHECK(m.at(0, 1) == 6);
  CHECK(m.at(1, 0) == 1);  // exact tie goes to the lowest id
  CHECK(m.at(1, 1) == 1);

  CHECK_THROWS_AS(segment({}), ValueError);
  std::map<int, Tensor> bad = {{0, Tensor({2, 2})}, {1, Tensor({3, 3})}};
  CHECK_THROWS_AS(segment(bad), ShapeError);

  // Against a brute-force argmax on random stacks.
  Rng rng(106);
  std::map<int, Tensor> stack;
  for (int id : {0, 3, 7, 27}) stack.emplace(id, random_tensor({6, 5}, rng, 0.0, 1.0));
  SegMask sm = segment(stack);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 5; ++x) {
      int best_id = -1;
      float best = -1.0f;
      for (const auto& [id, map] : stack)
        if (map.at(y, x) > best) {
          best = map.at(y, x);
          best_id = id;
        }
      CHECK(sm.at(y, x) == best_id);
    }
}

TEST_CASE("segment_patch maps a blank white patch to Background") {
  CapsNetParams params = CapsNetParams::init(seg_arch(), 23);
  Tensor white = Tensor::ones({3, 32, 32});

  SegmentOptions opts;
  opts.threshold = 1.0f;  // capsule norms are < 1, so nothing is detected
  opts.smoothgrad.samples = 1;
  opts.smoothgrad.sigma = 0.0f;

  for (Mode mode : {Mode::Morphological, Mode::Functional}) {
    opts.mode = mode;
    SegmentResult res = segment_patch(white, params, opts);
    CHECK(res.detected.empty());
    CHECK(res.fused.empty());
    CHECK(res.mask.height == 32);
    CHECK(res.mask.width == 32);
    for (int c : res.mask.cls) CHECK(c == LabelTaxonomy::kBackground);
    for (float v : res.bg_base.data) CHECK(v == doctest::Approx(0.75f).epsilon(1e-6));
  }
}

TEST_CASE("segment_patch emits only mode-legal classes") {
  CapsNetParams params = CapsNetParams::init(seg_arch(), 29);
  Rng rng(107);
  Tensor image = random_tensor({3, 32, 32}, rng, 0.0, 1.0);
  const auto& tax = LabelTaxonomy::instance();

  SegmentOptions opts;
  opts.threshold = 0.0f;  // every class detected
  opts.smoothgrad.sigma = 0.0f;

  opts.mode = Mode::Morphological;
  SegmentResult morph = segment_patch(image, params, opts);
  CHECK(morph.detected.size() == 27);
  CHECK(morph.pre_fused.size() == 27);
  CHECK(morph.fused.size() == 23);
  CHECK(morph.scores.shape == Shape{27});
  std::set<int> legal(tax.mode_classes(Mode::Morphological).begin(),
                      tax.mode_classes(Mode::Morphological).end());
  legal.insert(LabelTaxonomy::kBackground);
  for (int c : morph.mask.cls) CHECK(legal.count(c) == 1);

  opts.mode = Mode::Functional;
  SegmentResult func = segment_patch(image, params, opts);
  CHECK(func.fused.size() == 4);
  CHECK(func.other.size() == 32 * 32);
  std::set<int> legal_f = {23, 24, 25, 26, LabelTaxonomy::kBackground, LabelTaxonomy::kOther};
  for (int c : func.mask.cls) CHECK(legal_f.count(c) == 1);
}

TEST_CASE("iou fixtures") {
  SegPair same{mask_from(2, 2, {1, 1, 2, 2}), mask_from(2, 2, {1, 1, 2, 2})};
  CHECK(*iou(same, 1) == doctest::Approx(1.0));
  CHECK(*iou(same, 2) == doctest::Approx(1.0));
  CHECK(!iou(same, 5).has_value());

  SegPair disjoint{mask_from(2, 2, {1, 1, 0, 0}), mask_from(2, 2, {0, 0, 1, 1})};
  CHECK(*iou(disjoint, 1) == doctest::Approx(0.0));

  // Pred takes the top row, truth the left column: 1 common pixel of 3.
  SegPair third{mask_from(2, 2, {1, 1, 0, 0}), mask_from(2, 2, {1, 0, 1, 0})};
  CHECK(*iou(third, 1) == doctest::Approx(1.0 / 3.0));

  SegPair bad{mask_from(2, 2, {0, 0, 0, 0}), mask_from(2, 3, {0, 0, 0, 0, 0, 0})};
  CHECK_THROWS_AS(iou(bad, 0), ShapeError);
}

TEST_CASE("miou pools pixel counts before the ratio") {
  // Two pairs where per-pair and pooled IoU differ: pooled is
  // (1+0)/(1+2) for class 1, not the mean of 1.0 and 0.0.
  SegPair p1{mask_from(1, 1, {1}), mask_from(1, 1, {1})};
  SegPair p2{mask_from(1, 2, {1, 0}), mask_from(1, 2, {0, 1})};
  MiouResult r = miou({p1, p2}, {1});
  CHECK(r.defined_classes == 1);
  CHECK(r.miou == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("miou matches a brute-force oracle on random masks") {
  Rng rng(108);
  std::vector<int> class_set = {0, 1, 2, 3, 4};
  std::vector<SegPair> pairs;
  for (int n = 0; n < 50; ++n) {
    SegMask pred = mask_from(16, 16, std::vector<int>(256));
    SegMask truth = mask_from(16, 16, std::vector<int>(256));
    for (int i = 0; i < 256; ++i) {
      pred.cls[static_cast<size_t>(i)] = rng.uniform_int(0, 4);
      truth.cls[static_cast<size_t>(i)] = rng.uniform_int(0, 4);
    }
    pairs.push_back({std::move(pred), std::move(truth)});
  }

  MiouResult got = miou(pairs, class_set);

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
    CHECK(got.per_class.at(cls).intersection == inter);
    CHECK(got.per_class.at(cls).union_ == uni);
    if (uni > 0) {
      total += static_cast<double>(inter) / static_cast<double>(uni);
      ++defined;
    }
  }
  CHECK(got.defined_classes == defined);
  CHECK(got.miou == doctest::Approx(total / defined).epsilon(1e-12));

  // A class absent from every mask does not dilute the mean.
  MiouResult extra = miou(pairs, {0, 1, 2, 3, 4, 9});
  CHECK(extra.defined_classes == defined);
  CHECK(extra.miou == doctest::Approx(got.miou));
  CHECK(!extra.per_class.at(9).value().has_value());

  CHECK_THROWS_AS(miou({}, class_set), ValueError);
  CHECK_THROWS_AS(miou(pairs, {9}), ValueError);  // undefined for every class
}

TEST_CASE("metrics report formats") {
  SegPair p{mask_from(2, 2, {0, 0, 27, 27}), mask_from(2, 2, {0, 27, 27, 27})};
  MiouResult r = miou({p}, {0, 3, 27});

  std::string csv = report_csv(r, Mode::Morphological);
  CHECK(csv.find("class_code,mode,intersection,union,iou\n") == 0);
  CHECK(csv.find("E.M.S,morph,1,2,0.5000") != std::string::npos);
  CHECK(csv.find("E.T.S,morph,0,0,\n") != std::string::npos);  // undefined: empty cell
  CHECK(csv.find("Background,morph,2,3,0.6667") != std::string::npos);

  auto parsed = parse_report_csv(csv);
  CHECK(parsed.size() == 3);
  CHECK(parsed.at("E.M.S").intersection == 1);
  CHECK(parsed.at("E.M.S").union_ == 2);
  CHECK(parsed.at("Background").union_ == 3);
  CHECK(!parsed.at("E.T.S").value().has_value());
  CHECK_THROWS_AS(parse_report_csv("nope\n"), DataError);
  CHECK_THROWS_AS(parse_report_csv("class_code,mode,intersection,union,iou\nX,morph,a,b,\n"),
                  DataError);

  std::string text = report_text(r, Mode::Morphological);
  CHECK(text.find("undefined (absent)") != std::string::npos);
  CHECK(text.find("mIoU 0.5833 over 2 classes") != std::string::npos);

  EvalSummary s;
  s.miou_morph = 0.5;
  s.accuracy = 91.25;
  std::string json = summary_json(s);
  CHECK(json.find("\"miou_morph\": 0.5") != std::string::npos);
  CHECK(json.find("\"miou_func\": null") != std::string::npos);
  CHECK(json.find("\"accuracy\": 91.25") != std::string::npos);
}
