#pragma once

#include <cstddef>
#include <vector>

#include "itcfn/tensor.hpp"

// Differentiable primitives. All ops are single-threaded with a fixed
// summation order, so forward and backward results are reproducible bit for
// bit for fixed inputs.
namespace itcfn::ops {

// Elementwise arithmetic with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.2);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor pow(const Tensor& x, double exponent);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& x, std::size_t axis, bool keepdim = false);

Tensor softmax(const Tensor& x, std::size_t axis);
// Normalizes over the last axis to zero mean and unit variance (no affine).
Tensor layer_norm(const Tensor& x, double eps = 1e-5);

// [..., m, k] x [..., k, n] with identical leading dimensions.
Tensor matmul(const Tensor& a, const Tensor& b);
// x[..., in] -> x W^T + b with W[out, in]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor transpose(const Tensor& x, std::size_t axis_a, std::size_t axis_b);
Tensor concat(const std::vector<Tensor>& xs, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

struct Conv3dSpec {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

// input[N,C,D,H,W], kernel[F,C,kd,kh,kw], bias[F] (optional).
Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Conv3dSpec spec);
// input[N,C,D,H,W], kernel[C,F,kd,kh,kw]; output extent (in-1)*stride - 2*padding + k.
Tensor conv_transpose3d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Conv3dSpec spec);
Tensor max_pool3d(const Tensor& input, std::size_t kernel, std::size_t stride);
Tensor avg_pool3d(const Tensor& input, std::size_t kernel, std::size_t stride);
// [N,C,D,H,W] -> [N,C]
Tensor global_avg_pool3d(const Tensor& input);

// Forward value is `value`; the incoming gradient is passed unchanged to
// `source`. Shapes must match.
Tensor straight_through(const Tensor& source, const Tensor& value);

// Builds [N, d, D, H, W] by copying row indices[n,z,y,x] of codebook[M, d].
// The gradient is scatter-added into the selected codebook rows.
Tensor codebook_lookup(const Tensor& codebook, const std::vector<std::size_t>& indices, const Shape& grid);

}  // namespace itcfn::ops

namespace itcfn {

inline Tensor operator+(const Tensor& a, const Tensor& b) { return ops::add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return ops::sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return ops::mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return ops::div(a, b); }
inline Tensor operator+(const Tensor& a, double c) { return ops::add_scalar(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return ops::add_scalar(a, -c); }
inline Tensor operator*(const Tensor& a, double c) { return ops::mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return ops::mul_scalar(a, c); }
inline Tensor operator-(double c, const Tensor& a) { return ops::add_scalar(ops::neg(a), c); }
inline Tensor operator-(const Tensor& a) { return ops::neg(a); }

}  // namespace itcfn
