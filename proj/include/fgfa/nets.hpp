#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fgfa/adaptive_weight.hpp"
#include "fgfa/boxes.hpp"
#include "fgfa/tensor.hpp"

namespace fgfa {

class Rng;

struct NetConfig {
  int in_channels = 3;
  std::vector<int> feature_channels = {8, 16};
  std::vector<int> feature_kernels = {3, 3};
  std::vector<int> feature_strides = {2, 2};
  int embed_mid = 8;
  int embed_out = 16;
  int num_classes = 3;       // foreground classes; scores add a background channel
  double anchor_size = 12.0;  // square anchor edge, input pixels
  double score_thresh = 0.5;
  double nms_iou = 0.5;

  int feature_stride() const;
  int score_channels() const { return num_classes + 1; }
  int head_channels() const { return num_classes + 1 + 4; }
  void validate() const;
};

template <typename T>
struct FeatureLayerT {
  TensorT<T> w, b;
  int stride = 1;
};

template <typename T>
struct FeatureNetT {
  std::vector<FeatureLayerT<T>> layers;
};

// 1x1 conv over aggregated features emitting, per cell, class logits
// (background first) followed by 4 anchor offsets (tx, ty, tw, th).
template <typename T>
struct DetectHeadT {
  TensorT<T> w, b;
};

template <typename T>
struct ModelT {
  NetConfig config;
  FeatureNetT<T> feature;
  EmbedNetT<T> embed;
  DetectHeadT<T> head;
};

using Model = ModelT<float>;

template <typename T>
ModelT<T> make_model(const NetConfig& config, Rng& rng);

template <typename T>
struct FeatureActsT {
  std::vector<TensorT<T>> post;  // relu output per layer
};

template <typename T>
FeatureActsT<T> feature_forward_acts(const FeatureNetT<T>& net, const TensorT<T>& image);

template <typename T>
TensorT<T> feature_forward(const FeatureNetT<T>& net, const TensorT<T>& image);

// Gradients for the feature stack; layer order matches the net.
template <typename T>
FeatureNetT<T> feature_backward(const FeatureNetT<T>& net, const TensorT<T>& image,
                                const FeatureActsT<T>& acts, const TensorT<T>& upstream,
                                TensorT<T>* grad_image);

template <typename T>
TensorT<T> head_logits(const DetectHeadT<T>& head, const TensorT<T>& features);

// Per-cell softmax over the first `count` channels; remaining channels pass
// through unchanged. Used for class probabilities.
template <typename T>
TensorT<T> softmax_channels(const TensorT<T>& logits, int count);

// Decode head output into scored boxes for one frame: cells whose best
// foreground probability clears the threshold emit an anchor-relative box,
// then class-wise greedy NMS.
template <typename T>
std::vector<Detection> forward_detect(const ModelT<T>& model, const TensorT<T>& features,
                                      int frame);

// Enumerate every parameter tensor with a stable dotted name, in a fixed
// order shared by checkpoints, the optimizer, and gradient checks.
template <typename T>
void visit_params(ModelT<T>& model,
                  const std::function<void(const std::string&, TensorT<T>&)>& fn);
template <typename T>
void visit_params(const ModelT<T>& model,
                  const std::function<void(const std::string&, const TensorT<T>&)>& fn);

template <typename T>
ModelT<T> zero_like(const ModelT<T>& model);

template <typename Dst, typename Src>
ModelT<Dst> cast_model(const ModelT<Src>& model);

// Checkpoint directory: one .fgt per parameter plus manifest.json carrying
// the architecture, training step and rng state.
struct CheckpointMeta {
  long step = 0;
  std::string rng_state;
};

void save_checkpoint(const std::string& dir, const Model& model, const CheckpointMeta& meta);
Model load_checkpoint(const std::string& dir, CheckpointMeta* meta);

std::string net_config_to_json(const NetConfig& config);
NetConfig net_config_from_json(const std::string& text);

}  // namespace fgfa
