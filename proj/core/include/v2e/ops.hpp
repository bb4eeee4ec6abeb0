#pragma once

// Differentiable tensor operations. Binary elementwise ops broadcast with
// NumPy rules. Axis arguments accept negative values counted from the end.

#include <vector>

#include "v2e/tensor.hpp"

namespace v2e::ag {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator+(double c, const Tensor& a) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add_scalar(a, -c); }
inline Tensor operator-(double c, const Tensor& a) {
  return add_scalar(mul_scalar(a, -1.0), c);
}
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }
inline Tensor operator-(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
// sqrt(max(x, floor)); gradient is zero where x < floor.
Tensor safe_sqrt(const Tensor& x, double floor = 1e-12);
Tensor abs(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor pow_scalar(const Tensor& x, double exponent);
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);
// Gradient flows to the first maximal element along the axis.
Tensor max(const Tensor& x, int axis, bool keepdim = false);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& axes);
Tensor transpose(const Tensor& x, int a, int b);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t length);
Tensor concat(const std::vector<Tensor>& parts, int axis);
// Gathers entries along axis 0; indices may repeat.
Tensor index_select(const Tensor& x, const std::vector<int64_t>& indices);

// [m,k]x[k,n], [b,m,k]x[b,k,n], or [b,m,k]x[k,n].
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);
Tensor l2_normalize(const Tensor& x, int axis, double eps = 1e-12);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-6);

// x: [N,Ci,H,W], w: [Co,Ci,kh,kw], bias: [Co] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              int stride, int padding);

// Bilinear sampling of src [N,C,H,W] on the affine grid
//   x_s = s_x * x_t + t_x,  y_s = s_y * y_t + t_y
// with target coordinates spanning [-1,1] over the output pixel centers
// (corner-aligned). params: [N,4] laid out as (s_x, s_y, t_x, t_y).
// Samples outside the source read zero.
Tensor affine_grid_sample(const Tensor& src, const Tensor& params,
                          int64_t out_h, int64_t out_w);

// Generalized mean over the last axis: (mean(max(x,eps)^p))^(1/p).
// p is a single-element tensor and receives a gradient.
Tensor gem(const Tensor& x, const Tensor& p, double eps);

// Fused gem(map[:, None] * att[:, :, None], p, eps) without materializing
// the product: map [N,C,S], att [N,M,S] -> [N,M,C].
Tensor attention_gem(const Tensor& map, const Tensor& att, const Tensor& p, double eps);

// K*(x+1)^T for x > 0, K*e^x otherwise.
Tensor delta_activation(const Tensor& x, double k, double t);

}  // namespace v2e::ag
