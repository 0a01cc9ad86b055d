#include "fgfa/nets.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "fgfa/conv.hpp"
#include "fgfa/errors.hpp"
#include "fgfa/rng.hpp"
#include "fgfa/tensor_io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace fgfa {

int NetConfig::feature_stride() const {
  int s = 1;
  for (int v : feature_strides) s *= v;
  return s;
}

void NetConfig::validate() const {
  if (in_channels < 1) throw ConfigError("net.in_channels must be >= 1");
  if (feature_channels.empty() || feature_channels.size() != feature_kernels.size() ||
      feature_channels.size() != feature_strides.size()) {
    throw ConfigError("net feature layer lists must be non-empty and equal length");
  }
  for (size_t i = 0; i < feature_channels.size(); ++i) {
    if (feature_channels[i] < 1) throw ConfigError("net.feature_channels must be positive");
    if (feature_kernels[i] < 1 || feature_kernels[i] % 2 == 0) {
      throw ConfigError("net.feature_kernels must be odd and positive");
    }
    if (feature_strides[i] < 1) throw ConfigError("net.feature_strides must be positive");
  }
  if (embed_mid < 1 || embed_out < 1) throw ConfigError("net embed widths must be positive");
  if (num_classes < 1) throw ConfigError("net.num_classes must be >= 1");
  if (anchor_size <= 0) throw ConfigError("net.anchor_size must be positive");
  if (score_thresh < 0 || score_thresh > 1) throw ConfigError("net.score_thresh must be in [0,1]");
  if (nms_iou < 0 || nms_iou > 1) throw ConfigError("net.nms_iou must be in [0,1]");
}

template <typename T>
ModelT<T> make_model(const NetConfig& config, Rng& rng) {
  config.validate();
  ModelT<T> m;
  m.config = config;
  int c_in = config.in_channels;
  for (size_t i = 0; i < config.feature_channels.size(); ++i) {
    FeatureLayerT<T> layer;
    const int c_out = config.feature_channels[i];
    const int k = config.feature_kernels[i];
    const int fan_in = c_in * k * k;
    layer.w = TensorT<T>::random_normal({c_out, c_in, k, k}, rng, 0.0, std::sqrt(2.0 / fan_in));
    layer.b = TensorT<T>({c_out});
    layer.stride = config.feature_strides[i];
    m.feature.layers.push_back(std::move(layer));
    c_in = c_out;
  }
  m.embed = make_embed_net<T>(c_in, config.embed_mid, config.embed_out, rng);
  const int head_out = config.head_channels();
  m.head.w = TensorT<T>::random_normal({head_out, c_in, 1, 1}, rng, 0.0, std::sqrt(2.0 / c_in));
  m.head.b = TensorT<T>({head_out});
  return m;
}

template <typename T>
FeatureActsT<T> feature_forward_acts(const FeatureNetT<T>& net, const TensorT<T>& image) {
  FeatureActsT<T> acts;
  const TensorT<T>* x = &image;
  for (const auto& layer : net.layers) {
    acts.post.push_back(relu(conv2d(*x, layer.w, layer.stride, 1, layer.b)));
    x = &acts.post.back();
  }
  return acts;
}

template <typename T>
TensorT<T> feature_forward(const FeatureNetT<T>& net, const TensorT<T>& image) {
  if (net.layers.empty()) throw ContractViolation("feature net has no layers");
  return feature_forward_acts(net, image).post.back();
}

template <typename T>
FeatureNetT<T> feature_backward(const FeatureNetT<T>& net, const TensorT<T>& image,
                                const FeatureActsT<T>& acts, const TensorT<T>& upstream,
                                TensorT<T>* grad_image) {
  if (acts.post.size() != net.layers.size()) {
    throw ContractViolation("feature activations do not match layer count");
  }
  FeatureNetT<T> grads;
  grads.layers.resize(net.layers.size());
  TensorT<T> up = upstream;
  for (int i = static_cast<int>(net.layers.size()) - 1; i >= 0; --i) {
    up = relu_backward(acts.post[i], up);
    const TensorT<T>& input = i == 0 ? image : acts.post[i - 1];
    Conv2dGrads<T> g = conv2d_backward(input, net.layers[i].w, net.layers[i].stride, 1, up);
    grads.layers[i].w = g.kernel;
    grads.layers[i].b = g.bias;
    grads.layers[i].stride = net.layers[i].stride;
    up = std::move(g.input);
  }
  if (grad_image) *grad_image = std::move(up);
  return grads;
}

template <typename T>
TensorT<T> head_logits(const DetectHeadT<T>& head, const TensorT<T>& features) {
  return conv2d(features, head.w, 1, 1, head.b);
}

template <typename T>
TensorT<T> softmax_channels(const TensorT<T>& logits, int count) {
  if (logits.rank() != 3 || count < 1 || count > logits.dim(0)) {
    throw ContractViolation("softmax_channels needs [C,H,W] with 1 <= count <= C");
  }
  const int C = logits.dim(0), H = logits.dim(1), W = logits.dim(2);
  TensorT<T> out = logits;
  const size_t plane = static_cast<size_t>(H) * W;
  for (size_t i = 0; i < plane; ++i) {
    double mx = logits.data()[i];
    for (int c = 1; c < count; ++c) mx = std::max(mx, static_cast<double>(logits.data()[c * plane + i]));
    double sum = 0.0;
    for (int c = 0; c < count; ++c) sum += std::exp(static_cast<double>(logits.data()[c * plane + i]) - mx);
    for (int c = 0; c < count; ++c) {
      out.data()[c * plane + i] =
          static_cast<T>(std::exp(static_cast<double>(logits.data()[c * plane + i]) - mx) / sum);
    }
  }
  return out;
}

template <typename T>
std::vector<Detection> forward_detect(const ModelT<T>& model, const TensorT<T>& features,
                                      int frame) {
  const NetConfig& cfg = model.config;
  if (features.rank() != 3 || features.dim(0) != model.head.w.dim(1)) {
    throw ConfigError("detection head expects " + std::to_string(model.head.w.dim(1)) +
                      " channels, got " + features.shape_str());
  }
  TensorT<T> logits = head_logits(model.head, features);
  TensorT<T> probs = softmax_channels(logits, cfg.score_channels());
  const int Hf = logits.dim(1), Wf = logits.dim(2);
  const int stride = cfg.feature_stride();
  const double canvas_w = static_cast<double>(Wf) * stride;
  const double canvas_h = static_cast<double>(Hf) * stride;
  const int off0 = cfg.score_channels();
  const double A = cfg.anchor_size;
  std::vector<Detection> cands;
  for (int y = 0; y < Hf; ++y) {
    for (int x = 0; x < Wf; ++x) {
      int best_c = 0;
      double best_p = 0.0;
      for (int c = 1; c < cfg.score_channels(); ++c) {
        const double p = probs.at3(c, y, x);
        if (p > best_p) {
          best_p = p;
          best_c = c;
        }
      }
      if (best_c == 0 || best_p <= cfg.score_thresh) continue;
      const double acx = (x + 0.5) * stride;
      const double acy = (y + 0.5) * stride;
      const double tx = logits.at3(off0 + 0, y, x);
      const double ty = logits.at3(off0 + 1, y, x);
      const double tw = logits.at3(off0 + 2, y, x);
      const double th = logits.at3(off0 + 3, y, x);
      const double bcx = acx + tx * A;
      const double bcy = acy + ty * A;
      const double bw = A * std::exp(std::clamp(tw, -4.0, 4.0));
      const double bh = A * std::exp(std::clamp(th, -4.0, 4.0));
      Box b{bcx - bw / 2, bcy - bh / 2, bcx + bw / 2, bcy + bh / 2};
      b.x1 = std::clamp(b.x1, 0.0, canvas_w);
      b.y1 = std::clamp(b.y1, 0.0, canvas_h);
      b.x2 = std::clamp(b.x2, 0.0, canvas_w);
      b.y2 = std::clamp(b.y2, 0.0, canvas_h);
      if (b.area() <= 0.0) continue;
      cands.push_back(Detection{frame, best_c, best_p, b});
    }
  }
  std::vector<Detection> out;
  for (int cls = 1; cls <= cfg.num_classes; ++cls) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    std::vector<int> src;
    for (size_t i = 0; i < cands.size(); ++i) {
      if (cands[i].class_id == cls) {
        boxes.push_back(cands[i].box);
        scores.push_back(cands[i].score);
        src.push_back(static_cast<int>(i));
      }
    }
    for (int k : nms_keep(boxes, scores, cfg.nms_iou)) out.push_back(cands[src[k]]);
  }
  std::sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
    if (a.class_id != b.class_id) return a.class_id < b.class_id;
    if (a.score != b.score) return a.score > b.score;
    if (a.box.x1 != b.box.x1) return a.box.x1 < b.box.x1;
    return a.box.y1 < b.box.y1;
  });
  return out;
}

template <typename T>
void visit_params(ModelT<T>& model,
                  const std::function<void(const std::string&, TensorT<T>&)>& fn) {
  for (size_t i = 0; i < model.feature.layers.size(); ++i) {
    fn("feature." + std::to_string(i) + ".w", model.feature.layers[i].w);
    fn("feature." + std::to_string(i) + ".b", model.feature.layers[i].b);
  }
  fn("embed.w1", model.embed.w1);
  fn("embed.b1", model.embed.b1);
  fn("embed.w2", model.embed.w2);
  fn("embed.b2", model.embed.b2);
  fn("embed.w3", model.embed.w3);
  fn("embed.b3", model.embed.b3);
  fn("head.w", model.head.w);
  fn("head.b", model.head.b);
}

template <typename T>
void visit_params(const ModelT<T>& model,
                  const std::function<void(const std::string&, const TensorT<T>&)>& fn) {
  visit_params(const_cast<ModelT<T>&>(model),
               std::function<void(const std::string&, TensorT<T>&)>(
                   [&](const std::string& name, TensorT<T>& t) { fn(name, t); }));
}

template <typename T>
ModelT<T> zero_like(const ModelT<T>& model) {
  ModelT<T> z = model;
  visit_params(z, std::function<void(const std::string&, TensorT<T>&)>(
                      [](const std::string&, TensorT<T>& t) { t = TensorT<T>(t.dims()); }));
  return z;
}

template <typename Dst, typename Src>
ModelT<Dst> cast_model(const ModelT<Src>& model) {
  ModelT<Dst> out;
  out.config = model.config;
  for (const auto& layer : model.feature.layers) {
    out.feature.layers.push_back(FeatureLayerT<Dst>{cast_tensor<Dst>(layer.w),
                                                    cast_tensor<Dst>(layer.b), layer.stride});
  }
  out.embed.w1 = cast_tensor<Dst>(model.embed.w1);
  out.embed.b1 = cast_tensor<Dst>(model.embed.b1);
  out.embed.w2 = cast_tensor<Dst>(model.embed.w2);
  out.embed.b2 = cast_tensor<Dst>(model.embed.b2);
  out.embed.w3 = cast_tensor<Dst>(model.embed.w3);
  out.embed.b3 = cast_tensor<Dst>(model.embed.b3);
  out.head.w = cast_tensor<Dst>(model.head.w);
  out.head.b = cast_tensor<Dst>(model.head.b);
  return out;
}

namespace {

nlohmann::ordered_json net_config_json(const NetConfig& c) {
  nlohmann::ordered_json j;
  j["in_channels"] = c.in_channels;
  j["feature_channels"] = c.feature_channels;
  j["feature_kernels"] = c.feature_kernels;
  j["feature_strides"] = c.feature_strides;
  j["embed_mid"] = c.embed_mid;
  j["embed_out"] = c.embed_out;
  j["num_classes"] = c.num_classes;
  j["anchor_size"] = c.anchor_size;
  j["score_thresh"] = c.score_thresh;
  j["nms_iou"] = c.nms_iou;
  return j;
}

NetConfig net_config_parse(const nlohmann::json& j) {
  NetConfig c;
  try {
    c.in_channels = j.at("in_channels").get<int>();
    c.feature_channels = j.at("feature_channels").get<std::vector<int>>();
    c.feature_kernels = j.at("feature_kernels").get<std::vector<int>>();
    c.feature_strides = j.at("feature_strides").get<std::vector<int>>();
    c.embed_mid = j.at("embed_mid").get<int>();
    c.embed_out = j.at("embed_out").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.anchor_size = j.at("anchor_size").get<double>();
    c.score_thresh = j.at("score_thresh").get<double>();
    c.nms_iou = j.at("nms_iou").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad net config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace

std::string net_config_to_json(const NetConfig& config) {
  return net_config_json(config).dump(2);
}

NetConfig net_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("bad net config json: ") + e.what());
  }
  return net_config_parse(j);
}

void save_checkpoint(const std::string& dir, const Model& model, const CheckpointMeta& meta) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint dir " + dir + ": " + ec.message());
  nlohmann::ordered_json manifest;
  manifest["format"] = "fgfa-checkpoint";
  manifest["version"] = 1;
  manifest["architecture"] = net_config_json(model.config);
  manifest["step"] = meta.step;
  manifest["rng_state"] = meta.rng_state;
  std::vector<std::string> names;
  visit_params(model, std::function<void(const std::string&, const Tensor&)>(
                          [&](const std::string& name, const Tensor& t) {
                            names.push_back(name);
                            write_tensor((fs::path(dir) / (name + ".fgt")).string(), t);
                          }));
  manifest["params"] = names;
  std::ofstream out(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint manifest in " + dir);
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("failed writing checkpoint manifest in " + dir);
}

Model load_checkpoint(const std::string& dir, CheckpointMeta* meta) {
  const fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream in(mpath, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint manifest " + mpath.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("bad checkpoint manifest " + mpath.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "fgfa-checkpoint") {
    throw IoError("not a checkpoint manifest: " + mpath.string());
  }
  NetConfig config = net_config_parse(manifest.at("architecture"));
  Rng throwaway(1);
  Model model = make_model<float>(config, throwaway);
  visit_params(model, std::function<void(const std::string&, Tensor&)>(
                          [&](const std::string& name, Tensor& t) {
                            Tensor loaded = read_tensor((fs::path(dir) / (name + ".fgt")).string());
                            if (!loaded.same_shape(t)) {
                              throw IoError("checkpoint tensor " + name + " has shape " +
                                            loaded.shape_str() + ", architecture expects " +
                                            t.shape_str());
                            }
                            t = std::move(loaded);
                          }));
  if (meta) {
    meta->step = manifest.value("step", static_cast<long>(0));
    meta->rng_state = manifest.value("rng_state", "");
  }
  return model;
}

#define FGFA_INSTANTIATE(T)                                                                    \
  template ModelT<T> make_model<T>(const NetConfig&, Rng&);                                    \
  template FeatureActsT<T> feature_forward_acts<T>(const FeatureNetT<T>&, const TensorT<T>&);  \
  template TensorT<T> feature_forward<T>(const FeatureNetT<T>&, const TensorT<T>&);            \
  template FeatureNetT<T> feature_backward<T>(const FeatureNetT<T>&, const TensorT<T>&,        \
                                              const FeatureActsT<T>&, const TensorT<T>&,       \
                                              TensorT<T>*);                                    \
  template TensorT<T> head_logits<T>(const DetectHeadT<T>&, const TensorT<T>&);                \
  template TensorT<T> softmax_channels<T>(const TensorT<T>&, int);                             \
  template std::vector<Detection> forward_detect<T>(const ModelT<T>&, const TensorT<T>&, int); \
  template void visit_params<T>(ModelT<T>&,                                                    \
                                const std::function<void(const std::string&, TensorT<T>&)>&);  \
  template void visit_params<T>(                                                               \
      const ModelT<T>&, const std::function<void(const std::string&, const TensorT<T>&)>&);    \
  template ModelT<T> zero_like<T>(const ModelT<T>&);

FGFA_INSTANTIATE(float)
FGFA_INSTANTIATE(double)
#undef FGFA_INSTANTIATE

template ModelT<double> cast_model<double, float>(const ModelT<float>&);
template ModelT<float> cast_model<float, double>(const ModelT<double>&);

}  // namespace fgfa
