#include "fgfa/aggregation.hpp"

#include <cmath>
#include <string>

#include "fgfa/errors.hpp"

namespace fgfa {

namespace {

template <typename T>
void check_aggregate_args(const std::vector<TensorT<T>>& warped,
                          const std::vector<TensorT<T>>& weights) {
  if (warped.empty() || warped.size() != weights.size()) {
    throw ContractViolation("aggregate needs matching non-empty map lists, got " +
                            std::to_string(warped.size()) + " features and " +
                            std::to_string(weights.size()) + " weights");
  }
  const TensorT<T>& f0 = warped[0];
  if (f0.rank() != 3) {
    throw ContractViolation("aggregate features must be [C,H,W], got " + f0.shape_str());
  }
  for (const auto& f : warped) {
    if (!f.same_shape(f0)) {
      throw ContractViolation("aggregate feature shape mismatch: " + f.shape_str() + " vs " +
                              f0.shape_str());
    }
  }
  for (const auto& w : weights) {
    if (w.rank() != 2 || w.dim(0) != f0.dim(1) || w.dim(1) != f0.dim(2)) {
      throw ContractViolation("aggregate weight map " + w.shape_str() +
                              " does not match features " + f0.shape_str());
    }
  }
}

}  // namespace

template <typename T>
TensorT<T> aggregate(const std::vector<TensorT<T>>& warped,
                     const std::vector<TensorT<T>>& weights) {
  check_aggregate_args(warped, weights);
  const int C = warped[0].dim(0), H = warped[0].dim(1), W = warped[0].dim(2);
  const size_t plane = static_cast<size_t>(H) * W;
  for (size_t i = 0; i < plane; ++i) {
    double sum = 0.0;
    for (const auto& w : weights) sum += w.data()[i];
    if (std::abs(sum - 1.0) > 1e-4) {
      throw ContractViolation("aggregate received unnormalized weights (sum " +
                              std::to_string(sum) + " at location " + std::to_string(i) + ")");
    }
  }
  TensorT<T> out({C, H, W});
  T* o = out.data();
  for (int c = 0; c < C; ++c) {
    for (size_t i = 0; i < plane; ++i) {
      double acc = 0.0;
      for (size_t j = 0; j < warped.size(); ++j) {
        acc += static_cast<double>(weights[j].data()[i]) * warped[j].data()[c * plane + i];
      }
      o[c * plane + i] = static_cast<T>(acc);
    }
  }
  return out;
}

template <typename T>
AggregateGrads<T> aggregate_backward(const std::vector<TensorT<T>>& warped,
                                     const std::vector<TensorT<T>>& weights,
                                     const TensorT<T>& upstream) {
  check_aggregate_args(warped, weights);
  if (!upstream.same_shape(warped[0])) {
    throw ContractViolation("aggregate upstream " + upstream.shape_str() +
                            " does not match features " + warped[0].shape_str());
  }
  const int C = warped[0].dim(0), H = warped[0].dim(1), W = warped[0].dim(2);
  const size_t plane = static_cast<size_t>(H) * W;
  AggregateGrads<T> g;
  g.warped.reserve(warped.size());
  g.weights.reserve(weights.size());
  for (size_t j = 0; j < warped.size(); ++j) {
    g.warped.emplace_back(warped[0].dims());
    g.weights.emplace_back(weights[0].dims());
  }
  for (size_t j = 0; j < warped.size(); ++j) {
    for (size_t i = 0; i < plane; ++i) {
      const double wj = weights[j].data()[i];
      double gw = 0.0;
      for (int c = 0; c < C; ++c) {
        const double u = upstream.data()[c * plane + i];
        g.warped[j].data()[c * plane + i] = static_cast<T>(wj * u);
        gw += u * warped[j].data()[c * plane + i];
      }
      g.weights[j].data()[i] = static_cast<T>(gw);
    }
  }
  return g;
}

double cost_ratio(const CostModelInput& in) {
  if (in.k < 0) throw ConfigError("cost model needs k >= 0");
  for (double v : {in.o_flow, in.o_embed, in.o_warp, in.o_feat, in.o_det}) {
    if (v < 0.0) throw ConfigError("cost model components must be nonnegative");
  }
  const double denom = in.o_feat + in.o_det;
  if (denom <= 0.0) throw ConfigError("cost model denominator o_feat + o_det must be positive");
  return 1.0 + (2.0 * in.k + 1.0) * (in.o_flow + in.o_embed + in.o_warp) / denom;
}

FrameBuffer::FrameBuffer(int capacity) : capacity_(capacity) {
  if (capacity < 1) throw ConfigError("frame buffer capacity must be >= 1");
}

void FrameBuffer::push(int frame, Tensor feature) {
  if (!entries_.empty() && frame != entries_.back().frame + 1) {
    throw ContractViolation("frame buffer expects contiguous appends, got frame " +
                            std::to_string(frame) + " after " +
                            std::to_string(entries_.back().frame));
  }
  entries_.push_back(Entry{frame, std::move(feature)});
  if (static_cast<int>(entries_.size()) > capacity_) entries_.pop_front();
}

bool FrameBuffer::has(int frame) const {
  return !entries_.empty() && frame >= entries_.front().frame && frame <= entries_.back().frame;
}

const Tensor& FrameBuffer::feature(int frame) const {
  if (!has(frame)) {
    throw ContractViolation("frame " + std::to_string(frame) + " not in buffer");
  }
  return entries_[frame - entries_.front().frame].feature;
}

int FrameBuffer::lowest() const {
  if (entries_.empty()) throw ContractViolation("empty frame buffer");
  return entries_.front().frame;
}

int FrameBuffer::highest() const {
  if (entries_.empty()) throw ContractViolation("empty frame buffer");
  return entries_.back().frame;
}

#define FGFA_INSTANTIATE(T)                                                       \
  template TensorT<T> aggregate<T>(const std::vector<TensorT<T>>&,                \
                                   const std::vector<TensorT<T>>&);               \
  template AggregateGrads<T> aggregate_backward<T>(const std::vector<TensorT<T>>&, \
                                                   const std::vector<TensorT<T>>&, \
                                                   const TensorT<T>&);

FGFA_INSTANTIATE(float)
FGFA_INSTANTIATE(double)
#undef FGFA_INSTANTIATE

}  // namespace fgfa
