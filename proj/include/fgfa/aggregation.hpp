#pragma once

#include <deque>
#include <vector>

#include "fgfa/tensor.hpp"

namespace fgfa {

// Weighted per-location fusion of aligned feature maps:
//   out(c,p) = sum_j weights_j(p) * warped_j(c,p)
// Callers must pass weights that sum to 1 at every location; a deviation
// beyond 1e-4 is treated as a broken contract upstream and throws.
template <typename T>
TensorT<T> aggregate(const std::vector<TensorT<T>>& warped,
                     const std::vector<TensorT<T>>& weights);

template <typename T>
struct AggregateGrads {
  std::vector<TensorT<T>> warped;
  std::vector<TensorT<T>> weights;
};

template <typename T>
AggregateGrads<T> aggregate_backward(const std::vector<TensorT<T>>& warped,
                                     const std::vector<TensorT<T>>& weights,
                                     const TensorT<T>& upstream);

// Relative per-frame cost of aggregated inference versus the single-frame
// baseline. All costs are in arbitrary but consistent units.
struct CostModelInput {
  int k = 0;            // neighbor radius, window is 2k+1 frames
  double o_flow = 0.0;  // flow estimation cost per pair
  double o_embed = 0.0;
  double o_warp = 0.0;
  double o_feat = 0.0;  // per-frame feature network cost
  double o_det = 0.0;   // detection head cost
};

double cost_ratio(const CostModelInput& in);

// Sliding window of per-frame features for streaming inference. Frames are
// appended in order, one feature per index, and the oldest entry is evicted
// once the window exceeds its capacity.
class FrameBuffer {
 public:
  explicit FrameBuffer(int capacity);

  void push(int frame, Tensor feature);
  bool has(int frame) const;
  const Tensor& feature(int frame) const;
  int lowest() const;
  int highest() const;
  int size() const { return static_cast<int>(entries_.size()); }
  int capacity() const { return capacity_; }

 private:
  struct Entry {
    int frame;
    Tensor feature;
  };
  int capacity_;
  std::deque<Entry> entries_;
};

}  // namespace fgfa
