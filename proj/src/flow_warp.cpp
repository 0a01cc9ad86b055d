#include "fgfa/flow_warp.hpp"

#include <cmath>

#include "fgfa/errors.hpp"
#include "fgfa/parallel.hpp"

namespace fgfa {

template <typename T>
void require_flow_shape(const TensorT<T>& flow) {
  if (flow.rank() != 3 || flow.dim(0) != 2) {
    throw ContractViolation("flow field must be [2,H,W], got " + flow.shape_str());
  }
}

namespace {

// One bilinear tap: value, corner weights and the local gradient of the
// sampled value w.r.t. the continuous coordinates (sx, sy).
template <typename T>
struct Tap {
  int x0, y0;
  double wx1, wy1;  // fractional parts
  bool in(int x, int y, int W, int H) const { return x >= 0 && x < W && y >= 0 && y < H; }
};

template <typename T>
Tap<T> make_tap(double sx, double sy) {
  Tap<T> t;
  t.x0 = static_cast<int>(std::floor(sx));
  t.y0 = static_cast<int>(std::floor(sy));
  t.wx1 = sx - t.x0;
  t.wy1 = sy - t.y0;
  return t;
}

}  // namespace

template <typename T>
TensorT<T> warp_bilinear(const TensorT<T>& source, const TensorT<T>& flow) {
  if (source.rank() != 3) {
    throw ContractViolation("warp source must be [C,H,W], got " + source.shape_str());
  }
  require_flow_shape(flow);
  const int C = source.dim(0), H = source.dim(1), W = source.dim(2);
  if (flow.dim(1) != H || flow.dim(2) != W) {
    throw ContractViolation("flow " + flow.shape_str() + " does not match source " +
                            source.shape_str());
  }
  TensorT<T> out({C, H, W});
  const T* src = source.data();
  const T* flo = flow.data();
  T* dst = out.data();
  parallel_chunks(H, [&](int y_begin, int y_end) {
    for (int y = y_begin; y < y_end; ++y) {
      for (int x = 0; x < W; ++x) {
        const double sx = x + static_cast<double>(flo[0 * H * W + y * W + x]);
        const double sy = y + static_cast<double>(flo[1 * H * W + y * W + x]);
        const Tap<T> t = make_tap<T>(sx, sy);
        const double w00 = (1.0 - t.wx1) * (1.0 - t.wy1);
        const double w10 = t.wx1 * (1.0 - t.wy1);
        const double w01 = (1.0 - t.wx1) * t.wy1;
        const double w11 = t.wx1 * t.wy1;
        for (int c = 0; c < C; ++c) {
          const T* plane = src + c * H * W;
          double acc = 0.0;
          if (t.in(t.x0, t.y0, W, H)) acc += w00 * plane[t.y0 * W + t.x0];
          if (t.in(t.x0 + 1, t.y0, W, H)) acc += w10 * plane[t.y0 * W + t.x0 + 1];
          if (t.in(t.x0, t.y0 + 1, W, H)) acc += w01 * plane[(t.y0 + 1) * W + t.x0];
          if (t.in(t.x0 + 1, t.y0 + 1, W, H)) acc += w11 * plane[(t.y0 + 1) * W + t.x0 + 1];
          dst[c * H * W + y * W + x] = static_cast<T>(acc);
        }
      }
    }
  });
  return out;
}

template <typename T>
WarpGrads<T> warp_bilinear_backward(const TensorT<T>& source, const TensorT<T>& flow,
                                    const TensorT<T>& upstream) {
  require_flow_shape(flow);
  if (!upstream.same_shape(source)) {
    throw ContractViolation("warp upstream " + upstream.shape_str() + " does not match source " +
                            source.shape_str());
  }
  const int C = source.dim(0), H = source.dim(1), W = source.dim(2);
  WarpGrads<T> g{TensorT<T>({C, H, W}), TensorT<T>({2, H, W})};
  const T* src = source.data();
  const T* flo = flow.data();
  const T* up = upstream.data();
  std::vector<double> gsrc(static_cast<size_t>(C) * H * W, 0.0);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double sx = x + static_cast<double>(flo[0 * H * W + y * W + x]);
      const double sy = y + static_cast<double>(flo[1 * H * W + y * W + x]);
      const Tap<T> t = make_tap<T>(sx, sy);
      const double fx = t.wx1, fy = t.wy1;
      double gdx = 0.0, gdy = 0.0;
      for (int c = 0; c < C; ++c) {
        const T* plane = src + c * H * W;
        const double u = up[c * H * W + y * W + x];
        const double v00 = t.in(t.x0, t.y0, W, H) ? plane[t.y0 * W + t.x0] : 0.0;
        const double v10 = t.in(t.x0 + 1, t.y0, W, H) ? plane[t.y0 * W + t.x0 + 1] : 0.0;
        const double v01 = t.in(t.x0, t.y0 + 1, W, H) ? plane[(t.y0 + 1) * W + t.x0] : 0.0;
        const double v11 =
            t.in(t.x0 + 1, t.y0 + 1, W, H) ? plane[(t.y0 + 1) * W + t.x0 + 1] : 0.0;
        if (t.in(t.x0, t.y0, W, H)) {
          gsrc[static_cast<size_t>(c) * H * W + t.y0 * W + t.x0] += u * (1.0 - fx) * (1.0 - fy);
        }
        if (t.in(t.x0 + 1, t.y0, W, H)) {
          gsrc[static_cast<size_t>(c) * H * W + t.y0 * W + t.x0 + 1] += u * fx * (1.0 - fy);
        }
        if (t.in(t.x0, t.y0 + 1, W, H)) {
          gsrc[static_cast<size_t>(c) * H * W + (t.y0 + 1) * W + t.x0] += u * (1.0 - fx) * fy;
        }
        if (t.in(t.x0 + 1, t.y0 + 1, W, H)) {
          gsrc[static_cast<size_t>(c) * H * W + (t.y0 + 1) * W + t.x0 + 1] += u * fx * fy;
        }
        gdx += u * ((1.0 - fy) * (v10 - v00) + fy * (v11 - v01));
        gdy += u * ((1.0 - fx) * (v01 - v00) + fx * (v11 - v10));
      }
      g.flow.data()[0 * H * W + y * W + x] = static_cast<T>(gdx);
      g.flow.data()[1 * H * W + y * W + x] = static_cast<T>(gdy);
    }
  }
  T* gs = g.source.data();
  for (size_t i = 0; i < gsrc.size(); ++i) gs[i] = static_cast<T>(gsrc[i]);
  return g;
}

template <typename T>
TensorT<T> downscale_flow(const TensorT<T>& flow, int factor) {
  require_flow_shape(flow);
  if (factor < 1) throw ConfigError("downscale factor must be >= 1");
  const int H = flow.dim(1), W = flow.dim(2);
  if (H % factor != 0 || W % factor != 0) {
    throw ContractViolation("flow " + flow.shape_str() + " not divisible by factor " +
                            std::to_string(factor));
  }
  const int Ho = H / factor, Wo = W / factor;
  TensorT<T> out({2, Ho, Wo});
  const double scale = 1.0 / (static_cast<double>(factor) * factor * factor);
  for (int c = 0; c < 2; ++c) {
    for (int yo = 0; yo < Ho; ++yo) {
      for (int xo = 0; xo < Wo; ++xo) {
        double acc = 0.0;
        for (int dy = 0; dy < factor; ++dy) {
          for (int dx = 0; dx < factor; ++dx) {
            acc += flow.at3(c, yo * factor + dy, xo * factor + dx);
          }
        }
        // mean over the pooled block, then values rescaled into the
        // coarser grid's pixel units
        out.at3(c, yo, xo) = static_cast<T>(acc * scale);
      }
    }
  }
  return out;
}

template <typename T>
TensorT<T> compose_flows(const TensorT<T>& first, const TensorT<T>& second) {
  require_flow_shape(first);
  require_flow_shape(second);
  if (!first.same_shape(second)) {
    throw ContractViolation("cannot compose flows " + first.shape_str() + " and " +
                            second.shape_str());
  }
  TensorT<T> hopped = warp_bilinear(second, first);
  TensorT<T> out = first;
  T* o = out.data();
  const T* h = hopped.data();
  for (size_t i = 0; i < out.numel(); ++i) o[i] = static_cast<T>(o[i] + h[i]);
  return out;
}

template void require_flow_shape<float>(const TensorT<float>&);
template void require_flow_shape<double>(const TensorT<double>&);
template TensorT<float> warp_bilinear<float>(const TensorT<float>&, const TensorT<float>&);
template TensorT<double> warp_bilinear<double>(const TensorT<double>&, const TensorT<double>&);
template WarpGrads<float> warp_bilinear_backward<float>(const TensorT<float>&,
                                                        const TensorT<float>&,
                                                        const TensorT<float>&);
template WarpGrads<double> warp_bilinear_backward<double>(const TensorT<double>&,
                                                          const TensorT<double>&,
                                                          const TensorT<double>&);
template TensorT<float> downscale_flow<float>(const TensorT<float>&, int);
template TensorT<double> downscale_flow<double>(const TensorT<double>&, int);
template TensorT<float> compose_flows<float>(const TensorT<float>&, const TensorT<float>&);
template TensorT<double> compose_flows<double>(const TensorT<double>&, const TensorT<double>&);

}  // namespace fgfa
