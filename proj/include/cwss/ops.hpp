#pragma once

#include <vector>

#include "cwss/tensor.hpp"

// Dense numeric kernels. All convolutions use the cross-correlation
// convention (no kernel flip). Functions are pure and thread-safe.
namespace cwss::ops {

// floor((in + 2*pad - k) / stride) + 1
int conv_out_extent(int in, int k, int stride, int pad);
// (in - 1) * stride - 2*pad + k
int tconv_out_extent(int in, int k, int stride, int pad);

// input [C,H,W], kernel [F,C,kH,kW] -> [F,H',W']
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding);
// gradient of conv2d w.r.t. its input; grad_out [F,H',W'] -> [C,in_h,in_w]
Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& kernel, int stride,
                         int padding, int in_h, int in_w);
// gradient of conv2d w.r.t. its kernel
Tensor conv2d_kernel_grad(const Tensor& input, const Tensor& grad_out, int stride,
                          int padding, int kh, int kw);

// input [Cin,H,W], kernel [Cin,Cout,kH,kW] -> [Cout,H'',W''] where
// H'' = (H-1)*stride - 2*pad + kH. Identical to applying the
// conv2d-input-gradient operator to `input`.
Tensor transposed_conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding);
Tensor transposed_conv2d_input_grad(const Tensor& grad_out, const Tensor& kernel,
                                    int stride, int padding);
Tensor transposed_conv2d_kernel_grad(const Tensor& input, const Tensor& grad_out,
                                     int stride, int padding, int kh, int kw);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor scale_shift(const Tensor& x, float scale, float shift);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float s);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor abs(const Tensor& x);
Tensor clamp_min(const Tensor& x, float lo);
Tensor elementwise_max(const Tensor& a, const Tensor& b);
// x [C,H,W] + bias[C] broadcast over the spatial plane
Tensor bias_add_channel(const Tensor& x, const Tensor& bias);

Tensor softmax(const Tensor& x, int axis);

enum class Reduce { Sum, Mean, Max };
// Reduced axes are removed from the shape; reducing all axes yields a
// rank-0 scalar tensor.
Tensor reduce(const Tensor& x, Reduce kind, const std::vector<int>& axes);
float sum_all(const Tensor& x);

// sqrt(sum of squares along `axis`); the axis is removed.
Tensor l2_norm(const Tensor& x, int axis);

// w [out,in] times x [in] -> [out]
Tensor matvec(const Tensor& w, const Tensor& x);
float dot(const Tensor& a, const Tensor& b);

// Rescales x to [0,1] by (x - min)/(max - min); a constant map (max - min
// below epsilon) maps to all zeros.
Tensor minmax_normalize(const Tensor& x);

// Discrete Gaussian, truncated at +-3 sigma and normalized to sum 1.
std::vector<float> gaussian_kernel1d(float sigma);
// x [H,W]; separable blur with reflect padding; sigma 0 returns x.
Tensor gaussian_blur2d(const Tensor& x, float sigma);
// Exact adjoint of gaussian_blur2d (transposed scatter, same padding).
Tensor gaussian_blur2d_adjoint(const Tensor& g, float sigma);

// Single-threaded BLAS sgemm: C = A[m,k] * B[k,n] (+ C if accumulate).
void sgemm(int m, int n, int k, const float* a, const float* b, float* c,
           bool accumulate = false);

}  // namespace cwss::ops
