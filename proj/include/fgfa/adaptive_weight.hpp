#pragma once

#include <vector>

#include "fgfa/tensor.hpp"

namespace fgfa {

// Three-layer fully convolutional embedding applied to (warped) features
// before similarity weighting: 1x1 -> relu -> 3x3 -> relu -> 1x1, all
// stride 1. The final projection is linear.
template <typename T>
struct EmbedNetT {
  TensorT<T> w1, b1;  // [c_mid, c_in, 1, 1]
  TensorT<T> w2, b2;  // [c_mid, c_mid, 3, 3]
  TensorT<T> w3, b3;  // [c_out, c_mid, 1, 1]
};

template <typename T>
struct EmbedActsT {
  TensorT<T> a1;  // relu(conv1)
  TensorT<T> a2;  // relu(conv2)
  TensorT<T> e;   // conv3 output
};

template <typename T>
struct EmbedGradsT {
  EmbedNetT<T> net;
  TensorT<T> input;
};

template <typename T>
EmbedNetT<T> make_embed_net(int c_in, int c_mid, int c_out, class Rng& rng);

template <typename T>
EmbedActsT<T> embed_forward_acts(const EmbedNetT<T>& net, const TensorT<T>& f);

template <typename T>
TensorT<T> embed_forward(const EmbedNetT<T>& net, const TensorT<T>& f);

template <typename T>
EmbedGradsT<T> embed_backward(const EmbedNetT<T>& net, const TensorT<T>& f,
                              const EmbedActsT<T>& acts, const TensorT<T>& upstream);

// Per-location cosine similarity across channels of two [C,H,W] embeddings,
// result [H,W] in [-1,1]. If the product of the two norms at a location
// falls below 1e-12 the similarity is defined as 0 there, with zero
// gradient through that location.
template <typename T>
TensorT<T> cosine_map(const TensorT<T>& a, const TensorT<T>& b);

template <typename T>
struct CosineGrads {
  TensorT<T> a;
  TensorT<T> b;
};

template <typename T>
CosineGrads<T> cosine_map_backward(const TensorT<T>& a, const TensorT<T>& b,
                                   const TensorT<T>& upstream);

// Unnormalized weight map: elementwise exp of a similarity map.
template <typename T>
TensorT<T> exp_map(const TensorT<T>& c);

template <typename T>
TensorT<T> exp_map_backward(const TensorT<T>& exp_out, const TensorT<T>& upstream);

// Divide each location's raw weights by their sum across the window, so the
// normalized maps sum to one at every position. With exp_map upstream this
// is a per-location softmax over window offsets.
template <typename T>
std::vector<TensorT<T>> normalize_weights(const std::vector<TensorT<T>>& raw);

template <typename T>
std::vector<TensorT<T>> normalize_weights_backward(const std::vector<TensorT<T>>& raw,
                                                   const std::vector<TensorT<T>>& upstream);

}  // namespace fgfa
