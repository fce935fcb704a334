#include "cwss/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <mutex>
#include <numeric>

#include <cblas.h>

extern "C" void openblas_set_num_threads(int);

namespace cwss::ops {

namespace {

std::once_flag g_blas_once;

void require_rank(const Tensor& t, int rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_str(t.shape));
}

void require_pos(int v, const char* what) {
  if (v < 1) throw ValueError(std::string(what) + " must be >= 1, got " + std::to_string(v));
}

// Padded gather: columns of shape [C*kh*kw, out_h*out_w].
void im2col(const float* in, int c, int h, int w, int kh, int kw, int stride, int pad,
            int out_h, int out_w, float* col) {
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        float* row = col + ((static_cast<size_t>(ch) * kh + ky) * kw + kx) *
                               static_cast<size_t>(out_h) * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
          int iy = oy * stride - pad + ky;
          float* dst = row + static_cast<size_t>(oy) * out_w;
          if (iy < 0 || iy >= h) {
            std::memset(dst, 0, sizeof(float) * static_cast<size_t>(out_w));
            continue;
          }
          const float* src = in + (static_cast<size_t>(ch) * h + iy) * w;
          for (int ox = 0; ox < out_w; ++ox) {
            int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

// Scatter-add of columns back into the (unpadded) image.
void col2im(const float* col, int c, int h, int w, int kh, int kw, int stride, int pad,
            int out_h, int out_w, float* im) {
  std::memset(im, 0, sizeof(float) * static_cast<size_t>(c) * h * w);
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const float* row = col + ((static_cast<size_t>(ch) * kh + ky) * kw + kx) *
                                     static_cast<size_t>(out_h) * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          float* dst = im + (static_cast<size_t>(ch) * h + iy) * w;
          const float* src = row + static_cast<size_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

int reflect_index(int i, int n) {
  // n >= 1; reflect without repeating the border sample when possible.
  if (n == 1) return 0;
  int period = 2 * (n - 1);
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

Tensor map_unary(const Tensor& x, float (*fn)(float)) {
  Tensor out(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = fn(x.data[i]);
  return out;
}

}  // namespace

int conv_out_extent(int in, int k, int stride, int pad) {
  int span = in + 2 * pad - k;
  if (span < 0)
    throw ShapeError("kernel extent " + std::to_string(k) + " exceeds padded input " +
                     std::to_string(in + 2 * pad));
  return span / stride + 1;
}

int tconv_out_extent(int in, int k, int stride, int pad) {
  int out = (in - 1) * stride - 2 * pad + k;
  if (out < 1)
    throw ShapeError("transposed conv collapses to empty output (in=" + std::to_string(in) +
                     ", k=" + std::to_string(k) + ", stride=" + std::to_string(stride) +
                     ", pad=" + std::to_string(pad) + ")");
  return out;
}

void sgemm(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate) {
  std::call_once(g_blas_once, [] { openblas_set_num_threads(1); });
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, m, n, k, 1.0f, a, k, b, n,
              accumulate ? 1.0f : 0.0f, c, n);
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  require_pos(stride, "stride");
  if (padding < 0) throw ValueError("padding must be >= 0");
  int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  int f = kernel.dim(0), kc = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kc != c)
    throw ShapeError("conv2d channel mismatch: input " + shape_str(input.shape) +
                     " vs kernel " + shape_str(kernel.shape));
  int oh = conv_out_extent(h, kh, stride, padding);
  int ow = conv_out_extent(w, kw, stride, padding);
  std::vector<float> col(static_cast<size_t>(c) * kh * kw * oh * ow);
  im2col(input.data.data(), c, h, w, kh, kw, stride, padding, oh, ow, col.data());
  Tensor out({f, oh, ow});
  sgemm(f, oh * ow, c * kh * kw, kernel.data.data(), col.data(), out.data.data());
  return out;
}

Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& kernel, int stride,
                         int padding, int in_h, int in_w) {
  require_rank(grad_out, 3, "conv2d_input_grad grad");
  require_rank(kernel, 4, "conv2d_input_grad kernel");
  int f = kernel.dim(0), c = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  if (grad_out.dim(0) != f)
    throw ShapeError("conv2d_input_grad channel mismatch: grad " + shape_str(grad_out.shape) +
                     " vs kernel " + shape_str(kernel.shape));
  int oh = grad_out.dim(1), ow = grad_out.dim(2);
  if (oh != conv_out_extent(in_h, kh, stride, padding) ||
      ow != conv_out_extent(in_w, kw, stride, padding))
    throw ShapeError("conv2d_input_grad geometry mismatch for input " + std::to_string(in_h) +
                     "x" + std::to_string(in_w));
  // col = kernel^T [C*kh*kw, F] x grad [F, oh*ow], then scatter.
  int rows = c * kh * kw;
  std::vector<float> col(static_cast<size_t>(rows) * oh * ow);
  std::call_once(g_blas_once, [] { openblas_set_num_threads(1); });
  cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, rows, oh * ow, f, 1.0f,
              kernel.data.data(), rows, grad_out.data.data(), oh * ow, 0.0f, col.data(),
              oh * ow);
  Tensor out({c, in_h, in_w});
  col2im(col.data(), c, in_h, in_w, kh, kw, stride, padding, oh, ow, out.data.data());
  return out;
}

Tensor conv2d_kernel_grad(const Tensor& input, const Tensor& grad_out, int stride,
                          int padding, int kh, int kw) {
  require_rank(input, 3, "conv2d_kernel_grad input");
  require_rank(grad_out, 3, "conv2d_kernel_grad grad");
  int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  int f = grad_out.dim(0), oh = grad_out.dim(1), ow = grad_out.dim(2);
  if (oh != conv_out_extent(h, kh, stride, padding) ||
      ow != conv_out_extent(w, kw, stride, padding))
    throw ShapeError("conv2d_kernel_grad geometry mismatch");
  std::vector<float> col(static_cast<size_t>(c) * kh * kw * oh * ow);
  im2col(input.data.data(), c, h, w, kh, kw, stride, padding, oh, ow, col.data());
  Tensor out({f, c, kh, kw});
  // grad [F, oh*ow] x col^T [oh*ow, C*kh*kw]
  std::call_once(g_blas_once, [] { openblas_set_num_threads(1); });
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, f, c * kh * kw, oh * ow, 1.0f,
              grad_out.data.data(), oh * ow, col.data(), oh * ow, 0.0f, out.data.data(),
              c * kh * kw);
  return out;
}

Tensor transposed_conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  require_rank(input, 3, "transposed_conv2d input");
  require_rank(kernel, 4, "transposed_conv2d kernel");
  require_pos(stride, "stride");
  if (padding < 0) throw ValueError("padding must be >= 0");
  if (input.dim(0) != kernel.dim(0))
    throw ShapeError("transposed_conv2d channel mismatch: input " + shape_str(input.shape) +
                     " vs kernel " + shape_str(kernel.shape));
  int oh = tconv_out_extent(input.dim(1), kernel.dim(2), stride, padding);
  int ow = tconv_out_extent(input.dim(2), kernel.dim(3), stride, padding);
  return conv2d_input_grad(input, kernel, stride, padding, oh, ow);
}

Tensor transposed_conv2d_input_grad(const Tensor& grad_out, const Tensor& kernel,
                                    int stride, int padding) {
  // Adjoint of an adjoint: plain convolution of the output gradient.
  return conv2d(grad_out, kernel, stride, padding);
}

Tensor transposed_conv2d_kernel_grad(const Tensor& input, const Tensor& grad_out,
                                     int stride, int padding, int kh, int kw) {
  // d<tconv(u,k), g>/dk equals the conv kernel gradient with roles swapped.
  return conv2d_kernel_grad(grad_out, input, stride, padding, kh, kw);
}

Tensor relu(const Tensor& x) {
  return map_unary(x, [](float v) { return v > 0.0f ? v : 0.0f; });
}

Tensor sigmoid(const Tensor& x) {
  return map_unary(x, [](float v) { return 1.0f / (1.0f + std::exp(-v)); });
}

Tensor scale_shift(const Tensor& x, float scale, float shift) {
  Tensor out(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] * scale + shift;
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape);
  for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape);
  for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] - b.data[i];
  return out;
}

Tensor scale(const Tensor& x, float s) { return scale_shift(x, s, 0.0f); }

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor out(a.shape);
  for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
  return out;
}

Tensor abs(const Tensor& x) {
  return map_unary(x, [](float v) { return std::fabs(v); });
}

Tensor clamp_min(const Tensor& x, float lo) {
  Tensor out(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = std::max(x.data[i], lo);
  return out;
}

Tensor elementwise_max(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "elementwise_max");
  Tensor out(a.shape);
  for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = std::max(a.data[i], b.data[i]);
  return out;
}

Tensor bias_add_channel(const Tensor& x, const Tensor& bias) {
  require_rank(x, 3, "bias_add_channel input");
  require_rank(bias, 1, "bias_add_channel bias");
  if (bias.dim(0) != x.dim(0))
    throw ShapeError("bias_add_channel: bias " + shape_str(bias.shape) + " vs input " +
                     shape_str(x.shape));
  Tensor out(x.shape);
  size_t plane = static_cast<size_t>(x.dim(1)) * x.dim(2);
  for (int c = 0; c < x.dim(0); ++c) {
    float b = bias.data[static_cast<size_t>(c)];
    const float* src = x.data.data() + c * plane;
    float* dst = out.data.data() + c * plane;
    for (size_t i = 0; i < plane; ++i) dst[i] = src[i] + b;
  }
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  if (axis < 0 || axis >= x.rank())
    throw ValueError("softmax axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(x.shape));
  int n = x.dim(axis);
  size_t inner = 1;
  for (int a = axis + 1; a < x.rank(); ++a) inner *= static_cast<size_t>(x.dim(a));
  size_t outer = x.data.size() / (inner * static_cast<size_t>(n));
  Tensor out(x.shape);
  for (size_t o = 0; o < outer; ++o) {
    for (size_t in = 0; in < inner; ++in) {
      size_t base = o * n * inner + in;
      float mx = x.data[base];
      for (int i = 1; i < n; ++i) mx = std::max(mx, x.data[base + i * inner]);
      float total = 0.0f;
      for (int i = 0; i < n; ++i) {
        float e = std::exp(x.data[base + i * inner] - mx);
        out.data[base + i * inner] = e;
        total += e;
      }
      for (int i = 0; i < n; ++i) out.data[base + i * inner] /= total;
    }
  }
  return out;
}

Tensor reduce(const Tensor& x, Reduce kind, const std::vector<int>& axes) {
  std::vector<bool> drop(static_cast<size_t>(x.rank()), false);
  for (int a : axes) {
    if (a < 0 || a >= x.rank())
      throw ValueError("reduce axis " + std::to_string(a) + " out of range for shape " +
                       shape_str(x.shape));
    if (drop[static_cast<size_t>(a)]) throw ValueError("reduce axis repeated");
    drop[static_cast<size_t>(a)] = true;
  }
  Shape out_shape;
  for (int a = 0; a < x.rank(); ++a)
    if (!drop[static_cast<size_t>(a)]) out_shape.push_back(x.dim(a));

  size_t reduced = 1;
  for (int a : axes) reduced *= static_cast<size_t>(x.dim(a));
  Tensor out(out_shape);
  if (kind == Reduce::Max) {
    std::fill(out.data.begin(), out.data.end(), -std::numeric_limits<float>::infinity());
    if (reduced == 0) throw ValueError("reduce max over empty extent");
  }

  // Straightforward index walk (shapes here are small).
  std::vector<int> coord(static_cast<size_t>(x.rank()), 0);
  for (size_t flat = 0; flat < x.data.size(); ++flat) {
    size_t out_flat = 0;
    for (int a = 0; a < x.rank(); ++a)
      if (!drop[static_cast<size_t>(a)])
        out_flat = out_flat * static_cast<size_t>(x.dim(a)) + static_cast<size_t>(coord[static_cast<size_t>(a)]);
    float v = x.data[flat];
    if (kind == Reduce::Max)
      out.data[out_flat] = std::max(out.data[out_flat], v);
    else
      out.data[out_flat] += v;
    for (int a = x.rank() - 1; a >= 0; --a) {
      if (++coord[static_cast<size_t>(a)] < x.dim(a)) break;
      coord[static_cast<size_t>(a)] = 0;
    }
  }
  if (kind == Reduce::Mean)
    for (float& v : out.data) v /= static_cast<float>(reduced);
  return out;
}

float sum_all(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data) acc += v;
  return static_cast<float>(acc);
}

Tensor l2_norm(const Tensor& x, int axis) {
  if (axis < 0 || axis >= x.rank())
    throw ValueError("l2_norm axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(x.shape));
  int n = x.dim(axis);
  size_t inner = 1;
  for (int a = axis + 1; a < x.rank(); ++a) inner *= static_cast<size_t>(x.dim(a));
  size_t outer = x.data.size() / (inner * static_cast<size_t>(n));
  Shape out_shape;
  for (int a = 0; a < x.rank(); ++a)
    if (a != axis) out_shape.push_back(x.dim(a));
  Tensor out(out_shape);
  for (size_t o = 0; o < outer; ++o)
    for (size_t in = 0; in < inner; ++in) {
      size_t base = o * n * inner + in;
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        double v = x.data[base + i * inner];
        acc += v * v;
      }
      out.data[o * inner + in] = static_cast<float>(std::sqrt(acc));
    }
  return out;
}

Tensor matvec(const Tensor& w, const Tensor& x) {
  require_rank(w, 2, "matvec weight");
  require_rank(x, 1, "matvec input");
  if (w.dim(1) != x.dim(0))
    throw ShapeError("matvec: weight " + shape_str(w.shape) + " vs input " + shape_str(x.shape));
  std::call_once(g_blas_once, [] { openblas_set_num_threads(1); });
  Tensor out({w.dim(0)});
  cblas_sgemv(CblasRowMajor, CblasNoTrans, w.dim(0), w.dim(1), 1.0f, w.data.data(), w.dim(1),
              x.data.data(), 1, 0.0f, out.data.data(), 1);
  return out;
}

float dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double acc = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i)
    acc += static_cast<double>(a.data[i]) * b.data[i];
  return static_cast<float>(acc);
}

Tensor minmax_normalize(const Tensor& x) {
  if (x.data.empty()) return x;
  float lo = x.data[0], hi = x.data[0];
  for (float v : x.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Tensor out(x.shape);
  float span = hi - lo;
  if (span < 1e-12f) return out;  // constant map -> zeros
  for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = (x.data[i] - lo) / span;
  return out;
}

std::vector<float> gaussian_kernel1d(float sigma) {
  if (sigma < 0.0f) throw ValueError("gaussian sigma must be >= 0");
  if (sigma == 0.0f) return {1.0f};
  int radius = static_cast<int>(std::ceil(3.0f * sigma));
  std::vector<float> k(static_cast<size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * (static_cast<double>(i) * i) / (static_cast<double>(sigma) * sigma));
    k[static_cast<size_t>(i + radius)] = static_cast<float>(v);
    total += v;
  }
  for (float& v : k) v = static_cast<float>(v / total);
  return k;
}

namespace {

// One separable pass along rows (horizontal) with reflect padding.
Tensor blur_pass_rows(const Tensor& x, const std::vector<float>& k, bool adjoint) {
  int h = x.dim(0), w = x.dim(1);
  int radius = (static_cast<int>(k.size()) - 1) / 2;
  Tensor out({h, w});
  for (int y = 0; y < h; ++y) {
    const float* src = x.data.data() + static_cast<size_t>(y) * w;
    float* dst = out.data.data() + static_cast<size_t>(y) * w;
    if (!adjoint) {
      for (int xx = 0; xx < w; ++xx) {
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t)
          acc += static_cast<double>(k[static_cast<size_t>(t + radius)]) *
                 src[reflect_index(xx + t, w)];
        dst[xx] = static_cast<float>(acc);
      }
    } else {
      for (int xx = 0; xx < w; ++xx) {
        float v = src[xx];
        for (int t = -radius; t <= radius; ++t)
          dst[reflect_index(xx + t, w)] += k[static_cast<size_t>(t + radius)] * v;
      }
    }
  }
  return out;
}

Tensor transpose2d(const Tensor& x) {
  int h = x.dim(0), w = x.dim(1);
  Tensor out({w, h});
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      out.data[static_cast<size_t>(xx) * h + y] = x.data[static_cast<size_t>(y) * w + xx];
  return out;
}

}  // namespace

Tensor gaussian_blur2d(const Tensor& x, float sigma) {
  if (x.rank() != 2) throw ShapeError("gaussian_blur2d expects [H,W], got " + shape_str(x.shape));
  if (sigma < 0.0f) throw ValueError("gaussian sigma must be >= 0");
  if (sigma == 0.0f) return x;
  auto k = gaussian_kernel1d(sigma);
  Tensor t = blur_pass_rows(x, k, false);
  t = transpose2d(t);
  t = blur_pass_rows(t, k, false);
  return transpose2d(t);
}

Tensor gaussian_blur2d_adjoint(const Tensor& g, float sigma) {
  if (g.rank() != 2) throw ShapeError("gaussian_blur2d_adjoint expects [H,W]");
  if (sigma < 0.0f) throw ValueError("gaussian sigma must be >= 0");
  if (sigma == 0.0f) return g;
  auto k = gaussian_kernel1d(sigma);
  // (R_col . R_row)^T = R_row^T . R_col^T
  Tensor t = transpose2d(g);
  t = blur_pass_rows(t, k, true);
  t = transpose2d(t);
  return blur_pass_rows(t, k, true);
}

}  // namespace cwss::ops
