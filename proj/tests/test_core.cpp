#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cmath>
#include <vector>

#include "cwss/grad_check.hpp"
#include "cwss/ops.hpp"
#include "cwss/parallel.hpp"
#include "cwss/rng.hpp"
#include "cwss/tape.hpp"
#include "cwss/tensor.hpp"

using namespace cwss;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (float& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Direct six-loop convolution, the reference the fast path is held to.
Tensor conv2d_reference(const Tensor& in, const Tensor& k, int stride, int pad) {
  int c = in.dim(0), h = in.dim(1), w = in.dim(2);
  int f = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  int oh = (h + 2 * pad - kh) / stride + 1;
  int ow = (w + 2 * pad - kw) / stride + 1;
  Tensor out({f, oh, ow});
  for (int fo = 0; fo < f; ++fo)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (int ci = 0; ci < c; ++ci)
          for (int dy = 0; dy < kh; ++dy)
            for (int dx = 0; dx < kw; ++dx) {
              int iy = y * stride + dy - pad;
              int ix = x * stride + dx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += static_cast<double>(in.at(ci, iy, ix)) * k.at(fo, ci, dy, dx);
            }
        out.at(fo, y, x) = static_cast<float>(acc);
      }
  return out;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape == b.shape);
  float m = 0.0f;
  for (size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
  Tensor t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.rank() == 3);
  t.at(1, 2, 3) = 7.0f;
  CHECK(t.data[23] == 7.0f);
  CHECK(Tensor::scalar(2.5f).scalar_value() == 2.5f);
  CHECK(Tensor::full({2, 2}, 3.0f).at(1, 1) == 3.0f);
  CHECK_THROWS_AS(require_same_shape(Tensor({2}), Tensor({3}), "t"), ShapeError);
  Tensor bad({1}, {std::numeric_limits<float>::quiet_NaN()});
  CHECK_THROWS_AS(require_finite(bad, "t"), NumericError);
}

TEST_CASE("rng streams are deterministic and forkable") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());

  Rng f1 = Rng::fork(99, 4);
  Rng f2 = Rng::fork(99, 4);
  Rng f3 = Rng::fork(99, 5);
  double x1 = f1.uniform(), x2 = f2.uniform(), x3 = f3.uniform();
  CHECK(x1 == x2);
  CHECK(x1 != x3);

  Rng u(7);
  for (int i = 0; i < 1000; ++i) {
    double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
  int lo = 100, hi = 0;
  for (int i = 0; i < 1000; ++i) {
    int v = u.uniform_int(3, 9);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo == 3);
  CHECK(hi == 9);
}

TEST_CASE("rng normal has sane first moments") {
  Rng rng(2024);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double v = rng.normal();
    sum += v;
    sq += v * v;
  }
  double mean = sum / n;
  double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("conv2d identity kernel") {
  Rng rng(1);
  Tensor x = random_tensor({1, 5, 5}, rng);
  Tensor k({1, 1, 1, 1}, {1.0f});
  Tensor y = ops::conv2d(x, k, 1, 0);
  CHECK(max_abs_diff(x, y) == 0.0f);
}

TEST_CASE("conv2d ones fixture") {
  Tensor x = Tensor::ones({1, 4, 4});
  Tensor k = Tensor::ones({1, 1, 3, 3});
  Tensor y = ops::conv2d(x, k, 1, 0);
  CHECK(y.shape == Shape{1, 2, 2});
  for (float v : y.data) CHECK(v == doctest::Approx(9.0f));
}

TEST_CASE("conv2d matches the reference loop") {
  Rng rng(5);
  for (auto [stride, pad] : {std::pair{1, 0}, {1, 1}, {2, 0}, {2, 1}, {3, 2}}) {
    Tensor x = random_tensor({3, 9, 8}, rng);
    Tensor k = random_tensor({4, 3, 3, 3}, rng);
    Tensor fast = ops::conv2d(x, k, stride, pad);
    Tensor ref = conv2d_reference(x, k, stride, pad);
    CHECK(max_abs_diff(fast, ref) < 1e-5f);
  }
}

TEST_CASE("conv2d geometry validation") {
  Tensor x({1, 4, 4});
  CHECK_THROWS_AS(ops::conv2d(x, Tensor({1, 1, 5, 5}), 1, 0), ShapeError);
  CHECK_THROWS_AS(ops::conv2d(x, Tensor({1, 2, 3, 3}), 1, 0), ShapeError);
  CHECK_THROWS_AS(ops::conv2d(x, Tensor({1, 1, 3, 3}), 0, 0), ValueError);
}

TEST_CASE("conv adjoint identities") {
  // <conv(x,k), y> = <x, input_grad(y,k)> = sum(k * kernel_grad(x,y))
  Rng rng(17);
  Tensor x = random_tensor({2, 7, 7}, rng);
  Tensor k = random_tensor({3, 2, 3, 3}, rng);
  int stride = 2, pad = 1;
  Tensor out = ops::conv2d(x, k, stride, pad);
  Tensor y = random_tensor(out.shape, rng);

  double lhs = ops::dot(out, y);
  Tensor xg = ops::conv2d_input_grad(y, k, stride, pad, 7, 7);
  Tensor kg = ops::conv2d_kernel_grad(x, y, stride, pad, 3, 3);
  CHECK(std::abs(lhs - ops::dot(x, xg)) < 1e-3);
  CHECK(std::abs(lhs - ops::dot(k, kg)) < 1e-3);
}

TEST_CASE("transposed conv broadcast fixture") {
  Tensor x({1, 1, 1}, {2.0f});
  Rng rng(3);
  Tensor k = random_tensor({1, 1, 3, 3}, rng);
  Tensor y = ops::transposed_conv2d(x, k, 1, 0);
  CHECK(y.shape == Shape{1, 3, 3});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(y.at(0, i, j) == doctest::Approx(2.0f * k.at(0, 0, i, j)));
}

TEST_CASE("transposed conv geometry and adjoint") {
  Rng rng(23);
  Tensor x = random_tensor({3, 5, 5}, rng);
  Tensor k = random_tensor({3, 2, 4, 4}, rng);
  Tensor y = ops::transposed_conv2d(x, k, 2, 1);
  CHECK(y.shape == Shape{2, 10, 10});  // (5-1)*2 - 2 + 4

  // tconv is the adjoint of conv with the same kernel layout.
  Tensor g = random_tensor(y.shape, rng);
  double lhs = ops::dot(y, g);
  Tensor back = ops::transposed_conv2d_input_grad(g, k, 2, 1);
  CHECK(std::abs(lhs - ops::dot(x, back)) < 1e-3);
}

TEST_CASE("softmax rows") {
  Tensor z({2, 3});
  Tensor s = ops::softmax(z, 1);
  for (float v : s.data) CHECK(v == doctest::Approx(1.0f / 3.0f));

  Rng rng(9);
  Tensor r = random_tensor({10, 5}, rng, -50.0, 50.0);
  Tensor q = ops::softmax(r, 1);
  for (int i = 0; i < 10; ++i) {
    double sum = 0.0;
    for (int j = 0; j < 5; ++j) {
      CHECK(q.at(i, j) >= 0.0f);
      sum += q.at(i, j);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }

  Tensor big({1, 2}, {1000.0f, 1000.0f});  // max-shift keeps exp in range
  Tensor sb = ops::softmax(big, 1);
  CHECK(sb.at(0, 0) == doctest::Approx(0.5f));

  Tensor cols({2, 2}, {0.0f, 1.0f, 0.0f, 3.0f});
  Tensor sc = ops::softmax(cols, 0);
  CHECK(sc.at(0, 0) == doctest::Approx(0.5f));
  CHECK(sc.at(0, 1) + sc.at(1, 1) == doctest::Approx(1.0f));
}

TEST_CASE("reduce and sum_all") {
  Tensor x({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor s = ops::reduce(x, ops::Reduce::Sum, {1});
  CHECK(s.shape == Shape{2, 2});
  CHECK(s.at(0, 0) == 4.0f);   // 1 + 3
  CHECK(s.at(1, 1) == 14.0f);  // 6 + 8
  Tensor m = ops::reduce(x, ops::Reduce::Mean, {0, 1, 2});
  CHECK(m.rank() == 0);
  CHECK(m.scalar_value() == doctest::Approx(4.5f));
  Tensor mx = ops::reduce(x, ops::Reduce::Max, {0});
  CHECK(mx.at(1, 1) == 8.0f);
  CHECK(ops::sum_all(x) == doctest::Approx(36.0f));
}

TEST_CASE("elementwise helpers") {
  Tensor x({4}, {-2.0f, -0.5f, 0.5f, 2.0f});
  Tensor r = ops::relu(x);
  CHECK(r.data == std::vector<float>{0.0f, 0.0f, 0.5f, 2.0f});
  Tensor a = ops::abs(x);
  CHECK(a.data == std::vector<float>{2.0f, 0.5f, 0.5f, 2.0f});
  Tensor c = ops::clamp_min(x, 0.0f);
  CHECK(c.data == r.data);
  Tensor ones = Tensor::ones({4});
  CHECK(max_abs_diff(ops::hadamard(x, ones), x) == 0.0f);
  Tensor mx = ops::elementwise_max(x, Tensor::zeros({4}));
  CHECK(mx.data == r.data);
  CHECK(ops::sigmoid(Tensor({1}, {0.0f})).at(0) == doctest::Approx(0.5f));
  Tensor ss = ops::scale_shift(x, 2.0f, 1.0f);
  CHECK(ss.at(0) == doctest::Approx(-3.0f));
}

TEST_CASE("l2_norm of a 3-4 pair is 5") {
  Tensor x({1, 2}, {3.0f, 4.0f});
  Tensor n = ops::l2_norm(x, 1);
  CHECK(n.shape == Shape{1});
  CHECK(n.at(0) == doctest::Approx(5.0f));
}

TEST_CASE("minmax_normalize") {
  Tensor x({3}, {2.0f, 3.0f, 4.0f});
  Tensor n = ops::minmax_normalize(x);
  CHECK(n.at(0) == doctest::Approx(0.0f));
  CHECK(n.at(1) == doctest::Approx(0.5f));
  CHECK(n.at(2) == doctest::Approx(1.0f));
  Tensor c = ops::minmax_normalize(Tensor::full({4}, 7.0f));
  for (float v : c.data) CHECK(v == 0.0f);
}

TEST_CASE("gaussian kernel and blur") {
  auto k = ops::gaussian_kernel1d(1.5f);
  CHECK(k.size() % 2 == 1);
  double sum = 0.0;
  for (float v : k) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  for (size_t i = 0; i < k.size() / 2; ++i)
    CHECK(k[i] == doctest::Approx(k[k.size() - 1 - i]));

  Rng rng(31);
  Tensor x = random_tensor({6, 7}, rng);
  CHECK(max_abs_diff(ops::gaussian_blur2d(x, 0.0f), x) == 0.0f);
  CHECK_THROWS_AS(ops::gaussian_blur2d(x, -1.0f), ValueError);

  Tensor flat = Tensor::full({9, 9}, 0.37f);
  Tensor bf = ops::gaussian_blur2d(flat, 2.0f);
  CHECK(max_abs_diff(bf, flat) < 1e-6f);  // reflect padding keeps constants
}

TEST_CASE("gaussian blur impulse response is the separable kernel") {
  float sigma = 1.0f;
  auto k = ops::gaussian_kernel1d(sigma);
  int r = static_cast<int>(k.size() / 2);
  int n = 4 * r + 5;
  Tensor x({n, n});
  int c = n / 2;
  x.at(c, c) = 1.0f;
  Tensor y = ops::gaussian_blur2d(x, sigma);
  double total = 0.0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      float want = k[static_cast<size_t>(dy + r)] * k[static_cast<size_t>(dx + r)];
      CHECK(y.at(c + dy, c + dx) == doctest::Approx(want).epsilon(1e-6));
    }
  for (float v : y.data) total += v;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-4));  // interior impulse: mass kept
}

TEST_CASE("gaussian blur adjoint inner product") {
  Rng rng(41);
  Tensor x = random_tensor({8, 11}, rng);
  Tensor y = random_tensor({8, 11}, rng);
  float sigma = 1.7f;
  double lhs = ops::dot(ops::gaussian_blur2d(x, sigma), y);
  double rhs = ops::dot(x, ops::gaussian_blur2d_adjoint(y, sigma));
  CHECK(std::abs(lhs - rhs) < 1e-3);
}

TEST_CASE("matvec and dot") {
  Tensor w({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor x({3}, {1, 0, -1});
  Tensor y = ops::matvec(w, x);
  CHECK(y.at(0) == doctest::Approx(-2.0f));
  CHECK(y.at(1) == doctest::Approx(-2.0f));
  CHECK(ops::dot(x, x) == doctest::Approx(2.0f));
}

TEST_CASE("tape backward on simple graphs") {
  Tape tape;
  Rng rng(51);
  Tensor xv = random_tensor({3, 4}, rng);
  Var x = tape.leaf(xv);

  SUBCASE("sum gradient is ones") {
    tape.backward(tape.reduce_sum(x));
    for (float g : tape.grad(x).data) CHECK(g == 1.0f);
  }
  SUBCASE("sum of squares gradient is 2x") {
    tape.backward(tape.reduce_sum(tape.hadamard(x, x)));
    const Tensor& g = tape.grad(x);
    for (size_t i = 0; i < xv.data.size(); ++i)
      CHECK(g.data[i] == doctest::Approx(2.0f * xv.data[i]));
  }
  SUBCASE("sse gradients are symmetric") {
    Tensor bv = random_tensor({3, 4}, rng);
    Var b = tape.leaf(bv);
    tape.backward(tape.sse(x, b));
    const Tensor& gx = tape.grad(x);
    const Tensor& gb = tape.grad(b);
    for (size_t i = 0; i < xv.data.size(); ++i) {
      float d = 2.0f * (xv.data[i] - bv.data[i]);
      CHECK(gx.data[i] == doctest::Approx(d));
      CHECK(gb.data[i] == doctest::Approx(-d));
    }
  }
}

TEST_CASE("tape rejects bad backward targets") {
  Tape tape;
  Var x = tape.leaf(Tensor::ones({2, 2}));
  CHECK_THROWS_AS(tape.backward(x), ValueError);              // not scalar
  CHECK_THROWS_AS(tape.backward(Var{}), ValueError);          // never recorded
  CHECK_THROWS_AS(tape.value(Var{123}), ValueError);
  Var c = tape.constant(Tensor::scalar(1.0f));
  CHECK_THROWS_AS(tape.backward(c), ValueError);              // no tracked leaf
}

TEST_CASE("tape supports repeated backward passes") {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, {1.0f, 2.0f}));
  Var loss = tape.reduce_sum(tape.hadamard(x, x));
  tape.backward(loss);
  Tensor g1 = tape.grad(x);
  tape.backward(loss);
  Tensor g2 = tape.grad(x);
  CHECK(max_abs_diff(g1, g2) == 0.0f);  // grads reset, not accumulated
}

TEST_CASE("finite differences on elementary tape ops") {
  Rng rng(61);
  Tensor a = random_tensor({3, 3}, rng);
  Tensor b = random_tensor({3, 3}, rng);
  auto r1 = check_gradients("mix", {a, b}, [](Tape& t, const std::vector<Var>& in) {
    return t.sse(t.relu(t.scale(t.add(in[0], in[1]), 1.3f)), t.constant(Tensor::ones({3, 3})));
  });
  CHECK(r1.passed);

  Tensor x = random_tensor({2, 6, 6}, rng);
  Tensor k = random_tensor({2, 2, 3, 3}, rng, -0.5, 0.5);
  auto r2 = check_gradients("conv", {x, k}, [](Tape& t, const std::vector<Var>& in) {
    return t.reduce_sum(t.hadamard(t.conv2d(in[0], in[1], 1, 1), t.conv2d(in[0], in[1], 1, 1)));
  });
  CHECK(r2.passed);
}

TEST_CASE("parallel_for covers the range in any thread count") {
  for (int threads : {1, 2, 3, 8}) {
    std::vector<std::atomic<int>> hits(100);
    parallel_for(0, 100, threads, [&](int i) { hits[static_cast<size_t>(i)]++; });
    for (auto& h : hits) CHECK(h.load() == 1);
  }
  CHECK_THROWS_AS(
      parallel_for(0, 4, 2, [](int i) { if (i == 3) throw ValueError("boom"); }),
      ValueError);
  CHECK(default_threads() >= 1);
}
