#pragma once

#include "fgfa/tensor.hpp"

namespace fgfa {

// Flow convention, used everywhere in this project:
//   A flow field is a [2,H,W] tensor. Channel 0 is the displacement along
//   width (dx), channel 1 along height (dy), in pixels at the field's own
//   resolution. Warping is backward sampling: the output at location
//   p = (x,y) reads the source at p + M(p) = (x + dx, y + dy). Sample
//   positions outside [0,W-1] x [0,H-1] contribute zero per out-of-bounds
//   bilinear corner (zero extension).
// A field labelled "ref -> nbr" therefore aligns the neighbor's content to
// the reference frame's geometry: warp(f_nbr, M_ref2nbr) lives in reference
// coordinates.

template <typename T>
void require_flow_shape(const TensorT<T>& flow);

// Bilinear flow-guided warp. source [C,H,W], flow [2,H,W] -> [C,H,W].
template <typename T>
TensorT<T> warp_bilinear(const TensorT<T>& source, const TensorT<T>& flow);

template <typename T>
struct WarpGrads {
  TensorT<T> source;  // [C,H,W]
  TensorT<T> flow;    // [2,H,W]
};

// Exact analytic gradients of warp_bilinear. At integer sample coordinates
// the flow gradient takes the right-limit subgradient (floor-cell slope).
template <typename T>
WarpGrads<T> warp_bilinear_backward(const TensorT<T>& source, const TensorT<T>& flow,
                                    const TensorT<T>& upstream);

// Average-pool the field spatially by `factor` and divide the displacement
// values by `factor`, so they stay in output-resolution pixel units.
template <typename T>
TensorT<T> downscale_flow(const TensorT<T>& flow, int factor);

// Chain two fields: out(p) = first(p) + bilinear(second, p + first(p)).
// With first = M_i2j and second = M_j2k the result approximates M_i2k.
template <typename T>
TensorT<T> compose_flows(const TensorT<T>& first, const TensorT<T>& second);

}  // namespace fgfa
