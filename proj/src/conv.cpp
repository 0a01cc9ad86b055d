#include "fgfa/conv.hpp"

#include <vector>

#include "fgfa/parallel.hpp"

namespace fgfa {

namespace {

template <typename T>
void check_conv_args(const TensorT<T>& input, const TensorT<T>& kernel, int stride,
                     int dilation, const TensorT<T>* bias) {
  if (input.rank() != 3) throw ConfigError("conv2d: input must be [C,H,W]");
  if (kernel.rank() != 4) throw ConfigError("conv2d: kernel must be [C_out,C_in,kh,kw]");
  if (stride < 1) throw ConfigError("conv2d: stride must be positive");
  if (dilation < 1) throw ConfigError("conv2d: dilation must be positive");
  if (kernel.dim(1) != input.dim(0))
    throw ConfigError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                      " input channels, got " + std::to_string(input.dim(0)));
  if (kernel.dim(2) % 2 == 0 || kernel.dim(3) % 2 == 0)
    throw ConfigError("conv2d: kernel extents must be odd for same padding");
  if (bias && (bias->rank() != 1 || bias->dim(0) != kernel.dim(0)))
    throw ConfigError("conv2d: bias must be [C_out]");
}

int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& kernel, int stride,
                  int dilation, const TensorT<T>& bias) {
  check_conv_args(input, kernel, stride, dilation, &bias);
  const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  const int pad_h = dilation * (kh - 1) / 2;
  const int pad_w = dilation * (kw - 1) / 2;
  const int oh = ceil_div(h, stride), ow = ceil_div(w, stride);

  TensorT<T> out({cout, oh, ow});
  parallel_chunks(cout, [&](int o_begin, int o_end) {
    for (int o = o_begin; o < o_end; ++o) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double acc = static_cast<double>(bias[static_cast<std::size_t>(o)]);
          for (int c = 0; c < cin; ++c) {
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = oy * stride - pad_h + ky * dilation;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = ox * stride - pad_w + kx * dilation;
                if (ix < 0 || ix >= w) continue;
                acc += static_cast<double>(input.at3(c, iy, ix)) *
                       static_cast<double>(kernel.at4(o, c, ky, kx));
              }
            }
          }
          out.at3(o, oy, ox) = static_cast<T>(acc);
        }
      }
    }
  });
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const TensorT<T>& input, const TensorT<T>& kernel,
                               int stride, int dilation, const TensorT<T>& upstream) {
  check_conv_args<T>(input, kernel, stride, dilation, nullptr);
  const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  const int pad_h = dilation * (kh - 1) / 2;
  const int pad_w = dilation * (kw - 1) / 2;
  const int oh = ceil_div(h, stride), ow = ceil_div(w, stride);
  if (upstream.rank() != 3 || upstream.dim(0) != cout || upstream.dim(1) != oh ||
      upstream.dim(2) != ow)
    throw ConfigError("conv2d_backward: upstream shape mismatch");

  std::vector<double> gin(input.numel(), 0.0);
  std::vector<double> gker(kernel.numel(), 0.0);
  std::vector<double> gbias(static_cast<std::size_t>(cout), 0.0);

  for (int o = 0; o < cout; ++o) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const double g = static_cast<double>(upstream.at3(o, oy, ox));
        if (g == 0.0) continue;
        gbias[static_cast<std::size_t>(o)] += g;
        for (int c = 0; c < cin; ++c) {
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride - pad_h + ky * dilation;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * stride - pad_w + kx * dilation;
              if (ix < 0 || ix >= w) continue;
              gin[input.idx3(c, iy, ix)] +=
                  g * static_cast<double>(kernel.at4(o, c, ky, kx));
              gker[kernel.idx4(o, c, ky, kx)] +=
                  g * static_cast<double>(input.at3(c, iy, ix));
            }
          }
        }
      }
    }
  }

  Conv2dGrads<T> grads{TensorT<T>(input.dims()), TensorT<T>(kernel.dims()),
                       TensorT<T>({cout})};
  for (std::size_t i = 0; i < gin.size(); ++i) grads.input[i] = static_cast<T>(gin[i]);
  for (std::size_t i = 0; i < gker.size(); ++i) grads.kernel[i] = static_cast<T>(gker[i]);
  for (std::size_t i = 0; i < gbias.size(); ++i) grads.bias[i] = static_cast<T>(gbias[i]);
  return grads;
}

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  TensorT<T> out(x.dims());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& upstream) {
  if (!x.same_shape(upstream)) throw ConfigError("relu_backward: shape mismatch");
  TensorT<T> out(x.dims());
  for (std::size_t i = 0; i < x.numel(); ++i)
    out[i] = x[i] > T(0) ? upstream[i] : T(0);
  return out;
}

template TensorT<float> conv2d(const TensorT<float>&, const TensorT<float>&, int, int,
                               const TensorT<float>&);
template TensorT<double> conv2d(const TensorT<double>&, const TensorT<double>&, int, int,
                                const TensorT<double>&);
template Conv2dGrads<float> conv2d_backward(const TensorT<float>&, const TensorT<float>&,
                                            int, int, const TensorT<float>&);
template Conv2dGrads<double> conv2d_backward(const TensorT<double>&,
                                             const TensorT<double>&, int, int,
                                             const TensorT<double>&);
template TensorT<float> relu(const TensorT<float>&);
template TensorT<double> relu(const TensorT<double>&);
template TensorT<float> relu_backward(const TensorT<float>&, const TensorT<float>&);
template TensorT<double> relu_backward(const TensorT<double>&, const TensorT<double>&);

}  // namespace fgfa
