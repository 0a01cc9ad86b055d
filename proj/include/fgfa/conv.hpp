#pragma once

#include "fgfa/tensor.hpp"

namespace fgfa {

// 2-D cross-correlation with zero same-padding.
//   input  [C_in, H, W], kernel [C_out, C_in, kh, kw] (kh, kw odd),
//   bias   [C_out], output [C_out, ceil(H/stride), ceil(W/stride)].
// Sums are accumulated in double regardless of the storage type.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& kernel, int stride,
                  int dilation, const TensorT<T>& bias);

template <typename T>
struct Conv2dGrads {
  TensorT<T> input;
  TensorT<T> kernel;
  TensorT<T> bias;
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const TensorT<T>& input, const TensorT<T>& kernel,
                               int stride, int dilation, const TensorT<T>& upstream);

template <typename T>
TensorT<T> relu(const TensorT<T>& x);

// Mask upstream by x > 0 (zero subgradient at the origin).
template <typename T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& upstream);

}  // namespace fgfa
