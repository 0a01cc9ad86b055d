#include "fgfa/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "fgfa/adaptive_weight.hpp"
#include "fgfa/aggregation.hpp"
#include "fgfa/conv.hpp"
#include "fgfa/errors.hpp"
#include "fgfa/flow_warp.hpp"
#include "fgfa/infer.hpp"
#include "fgfa/rng.hpp"
#include "fgfa/tensor_io.hpp"

namespace fs = std::filesystem;

namespace fgfa {

void TrainConfig::validate() const {
  if (k_train < 0) throw ConfigError("train.k_train must be >= 0");
  if (t_range < k_train) throw ConfigError("train.t_range must be >= train.k_train");
  if (iterations < 1) throw ConfigError("train.iterations must be >= 1");
  if (lr_initial < 0 || lr_final < 0) throw ConfigError("train learning rates must be >= 0");
  if (lr_switch_frac < 0 || lr_switch_frac > 1) {
    throw ConfigError("train.lr_switch_frac must be in [0,1]");
  }
  if (momentum < 0 || momentum >= 1) throw ConfigError("train.momentum must be in [0,1)");
  if (pos_weight <= 0) throw ConfigError("train.pos_weight must be positive");
  if (box_weight < 0) throw ConfigError("train.box_weight must be >= 0");
  if (flow_noise_sigma < 0) throw ConfigError("train.flow_noise_sigma must be >= 0");
}

std::vector<int> sample_training_window(int reference, int t_range, int k_train, int num_frames,
                                        Rng& rng) {
  if (reference < 0 || reference >= num_frames) {
    throw ContractViolation("reference frame outside video");
  }
  std::vector<int> pool;
  for (int j = std::max(0, reference - t_range); j <= std::min(num_frames - 1, reference + t_range);
       ++j) {
    if (j != reference) pool.push_back(j);
  }
  const int take = std::min<int>(k_train, static_cast<int>(pool.size()));
  std::vector<int> window = rng.sample_without_replacement(pool, take);
  window.push_back(reference);
  std::sort(window.begin(), window.end());
  return window;
}

CellTargets make_targets(const std::vector<Track>& tracks, int frame, const NetConfig& cfg,
                         int hf, int wf) {
  CellTargets tg;
  tg.hf = hf;
  tg.wf = wf;
  const int n = hf * wf;
  tg.cls.assign(n, 0);
  tg.tx.assign(n, 0.0);
  tg.ty.assign(n, 0.0);
  tg.tw.assign(n, 0.0);
  tg.th.assign(n, 0.0);
  const int stride = cfg.feature_stride();
  const double A = cfg.anchor_size;
  for (const Track& t : tracks) {
    if (frame < 0 || frame >= static_cast<int>(t.points.size())) continue;
    const TrackPoint& p = t.points[frame];
    if (!p.present || p.box.area() <= 0.0) continue;
    if (t.class_id < 1 || t.class_id > cfg.num_classes) {
      throw ConfigError("track class " + std::to_string(t.class_id) +
                        " outside model range 1.." + std::to_string(cfg.num_classes));
    }
    const double bcx = p.box.cx(), bcy = p.box.cy();
    const int cx = std::clamp(static_cast<int>(std::floor(bcx / stride)), 0, wf - 1);
    const int cy = std::clamp(static_cast<int>(std::floor(bcy / stride)), 0, hf - 1);
    const int idx = cy * wf + cx;
    const double acx = (cx + 0.5) * stride;
    const double acy = (cy + 0.5) * stride;
    tg.cls[idx] = t.class_id;
    tg.tx[idx] = (bcx - acx) / A;
    tg.ty[idx] = (bcy - acy) / A;
    tg.tw[idx] = std::log(p.box.width() / A);
    tg.th[idx] = std::log(p.box.height() / A);
  }
  for (int v : tg.cls) {
    if (v > 0) ++tg.npos;
  }
  return tg;
}

namespace {

double smooth_l1(double x) { return std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5; }
double smooth_l1_grad(double x) { return std::abs(x) < 1.0 ? x : (x > 0 ? 1.0 : -1.0); }

template <typename T>
void add_into(TensorT<T>& dst, const TensorT<T>& src) {
  if (!dst.same_shape(src)) throw ContractViolation("gradient accumulation shape mismatch");
  for (size_t i = 0; i < dst.numel(); ++i) dst.data()[i] += src.data()[i];
}

template <typename T>
void accumulate_embed(EmbedNetT<T>& dst, const EmbedNetT<T>& src) {
  add_into(dst.w1, src.w1);
  add_into(dst.b1, src.b1);
  add_into(dst.w2, src.w2);
  add_into(dst.b2, src.b2);
  add_into(dst.w3, src.w3);
  add_into(dst.b3, src.b3);
}

}  // namespace

template <typename T>
double detect_loss(const TensorT<T>& logits, const CellTargets& tg, const NetConfig& cfg,
                   double pos_weight, double box_weight, TensorT<T>* dlogits) {
  const int S = cfg.score_channels();
  if (logits.rank() != 3 || logits.dim(0) != cfg.head_channels() || logits.dim(1) != tg.hf ||
      logits.dim(2) != tg.wf) {
    throw ContractViolation("detect_loss logits " + logits.shape_str() +
                            " do not match targets/head");
  }
  const int n = tg.hf * tg.wf;
  TensorT<T> probs = softmax_channels(logits, S);
  if (dlogits) *dlogits = TensorT<T>(logits.dims());
  double weight_sum = 0.0;
  for (int i = 0; i < n; ++i) weight_sum += tg.cls[i] > 0 ? pos_weight : 1.0;
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const int target = tg.cls[i];
    const double w = target > 0 ? pos_weight : 1.0;
    const double p = std::max(1e-12, static_cast<double>(probs.data()[target * n + i]));
    loss += -w * std::log(p) / weight_sum;
    if (dlogits) {
      for (int c = 0; c < S; ++c) {
        const double pc = probs.data()[c * n + i];
        dlogits->data()[c * n + i] =
            static_cast<T>(w * (pc - (c == target ? 1.0 : 0.0)) / weight_sum);
      }
    }
  }
  const int norm = std::max(1, tg.npos);
  for (int i = 0; i < n; ++i) {
    if (tg.cls[i] == 0) continue;
    const double targets[4] = {tg.tx[i], tg.ty[i], tg.tw[i], tg.th[i]};
    for (int k = 0; k < 4; ++k) {
      const double pred = logits.data()[(S + k) * n + i];
      const double diff = pred - targets[k];
      loss += box_weight * smooth_l1(diff) / norm;
      if (dlogits) {
        dlogits->data()[(S + k) * n + i] =
            static_cast<T>(box_weight * smooth_l1_grad(diff) / norm);
      }
    }
  }
  return loss;
}

template <typename T>
double fgfa_forward_backward(const ModelT<T>& model, const std::vector<TensorT<T>>& frames,
                             int ref_pos, const std::vector<TensorT<T>>& flows,
                             const CellTargets& targets, double pos_weight, double box_weight,
                             ModelT<T>* grads, TensorT<T>* out_logits) {
  const int n = static_cast<int>(frames.size());
  if (n < 1 || ref_pos < 0 || ref_pos >= n || flows.size() != frames.size()) {
    throw ContractViolation("fgfa forward needs matching window frames/flows and a valid ref");
  }
  // forward
  std::vector<FeatureActsT<T>> facts;
  facts.reserve(n);
  for (int j = 0; j < n; ++j) facts.push_back(feature_forward_acts(model.feature, frames[j]));
  std::vector<TensorT<T>> warped;
  warped.reserve(n);
  for (int j = 0; j < n; ++j) {
    if (j == ref_pos) {
      warped.push_back(facts[j].post.back());
    } else {
      warped.push_back(warp_bilinear(facts[j].post.back(), flows[j]));
    }
  }
  std::vector<EmbedActsT<T>> eacts;
  eacts.reserve(n);
  for (int j = 0; j < n; ++j) eacts.push_back(embed_forward_acts(model.embed, warped[j]));
  const TensorT<T>& e_ref = eacts[ref_pos].e;
  std::vector<TensorT<T>> raw;
  raw.reserve(n);
  for (int j = 0; j < n; ++j) raw.push_back(exp_map(cosine_map(eacts[j].e, e_ref)));
  std::vector<TensorT<T>> weights = normalize_weights(raw);
  TensorT<T> fbar = aggregate(warped, weights);
  TensorT<T> logits = head_logits(model.head, fbar);
  TensorT<T> dlogits;
  const double loss = detect_loss(logits, targets, model.config, pos_weight, box_weight,
                                  grads ? &dlogits : nullptr);
  if (out_logits) *out_logits = logits;
  if (!grads) return loss;

  // backward
  *grads = zero_like(model);
  Conv2dGrads<T> ghead = conv2d_backward(fbar, model.head.w, 1, 1, dlogits);
  grads->head.w = std::move(ghead.kernel);
  grads->head.b = std::move(ghead.bias);
  AggregateGrads<T> gagg = aggregate_backward(warped, weights, ghead.input);
  std::vector<TensorT<T>> draw = normalize_weights_backward(raw, gagg.weights);
  TensorT<T> de_ref(e_ref.dims());
  std::vector<TensorT<T>> de(n, TensorT<T>(e_ref.dims()));
  for (int j = 0; j < n; ++j) {
    TensorT<T> dcos = exp_map_backward(raw[j], draw[j]);
    CosineGrads<T> gc = cosine_map_backward(eacts[j].e, e_ref, dcos);
    add_into(de[j], gc.a);
    add_into(de_ref, gc.b);
  }
  add_into(de[ref_pos], de_ref);
  std::vector<TensorT<T>>& dwarped = gagg.warped;
  for (int j = 0; j < n; ++j) {
    EmbedGradsT<T> ge = embed_backward(model.embed, warped[j], eacts[j], de[j]);
    accumulate_embed(grads->embed, ge.net);
    add_into(dwarped[j], ge.input);
  }
  for (int j = 0; j < n; ++j) {
    TensorT<T> df;
    if (j == ref_pos) {
      df = std::move(dwarped[j]);
    } else {
      WarpGrads<T> gw = warp_bilinear_backward(facts[j].post.back(), flows[j], dwarped[j]);
      df = std::move(gw.source);
    }
    FeatureNetT<T> gf = feature_backward<T>(model.feature, frames[j], facts[j], df, nullptr);
    for (size_t l = 0; l < gf.layers.size(); ++l) {
      add_into(grads->feature.layers[l].w, gf.layers[l].w);
      add_into(grads->feature.layers[l].b, gf.layers[l].b);
    }
  }
  return loss;
}

namespace {

std::vector<Tensor*> param_ptrs(Model& m) {
  std::vector<Tensor*> out;
  visit_params(m, std::function<void(const std::string&, Tensor&)>(
                      [&](const std::string&, Tensor& t) { out.push_back(&t); }));
  return out;
}

void dump_nan_diagnostics(const std::string& dir, long step, const std::vector<Tensor>& frames,
                          const Tensor& logits) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  for (size_t j = 0; j < frames.size(); ++j) {
    write_tensor((fs::path(dir) / ("window_" + std::to_string(j) + ".fgt")).string(), frames[j]);
  }
  write_tensor((fs::path(dir) / "logits.fgt").string(), logits);
  std::ofstream note(fs::path(dir) / "step.txt", std::ios::binary);
  note << "non-finite loss at step " << step << "\n";
}

}  // namespace

TrainResult train(const std::vector<TrainClip>& clips, const Model& init,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (clips.empty()) throw ContractViolation("train needs at least one clip");
  for (const TrainClip& c : clips) {
    if (c.frames.empty()) throw ContractViolation("train clip has no frames");
    if (static_cast<int>(c.frames.size()) != c.spec.frames) {
      throw ContractViolation("train clip frame count does not match its spec");
    }
  }
  const int stride = init.config.feature_stride();
  TrainResult res;
  res.model = init;
  Model velocity = zero_like(init);
  std::vector<Tensor*> params = param_ptrs(res.model);
  std::vector<Tensor*> vels = param_ptrs(velocity);
  Rng rng(cfg.seed);
  std::vector<std::unique_ptr<ExactFlowSource>> exact;
  std::vector<std::unique_ptr<NoisyFlowSource>> noisy;
  for (size_t ci = 0; ci < clips.size(); ++ci) {
    exact.push_back(std::make_unique<ExactFlowSource>(clips[ci].spec, stride));
    if (cfg.flow_noise_sigma > 0) {
      noisy.push_back(std::make_unique<NoisyFlowSource>(
          exact.back().get(), cfg.flow_noise_sigma,
          cfg.seed ^ (0x9e3779b9u + static_cast<uint32_t>(ci))));
    }
  }
  const long switch_step = static_cast<long>(cfg.iterations * cfg.lr_switch_frac);
  for (long step = 0; step < cfg.iterations; ++step) {
    const int ci = clips.size() > 1
                       ? rng.uniform_int(0, static_cast<int>(clips.size()) - 1)
                       : 0;
    const TrainClip& clip = clips[ci];
    const int N = static_cast<int>(clip.frames.size());
    const int ref = rng.uniform_int(0, N - 1);
    std::vector<int> window = sample_training_window(ref, cfg.t_range, cfg.k_train, N, rng);
    FlowSource* src = cfg.flow_noise_sigma > 0 ? static_cast<FlowSource*>(noisy[ci].get())
                                               : exact[ci].get();
    std::vector<Tensor> frames;
    std::vector<Tensor> flows;
    int ref_pos = 0;
    for (size_t w = 0; w < window.size(); ++w) {
      if (window[w] == ref) ref_pos = static_cast<int>(w);
      frames.push_back(clip.frames[window[w]]);
      flows.push_back(src->flow(ref, window[w]));
    }
    const int hf = clip.spec.height / stride, wf = clip.spec.width / stride;
    CellTargets targets = make_targets(clip.tracks, ref, res.model.config, hf, wf);
    Model grads = zero_like(res.model);
    Tensor logits;
    const double loss = fgfa_forward_backward(res.model, frames, ref_pos, flows, targets,
                                              cfg.pos_weight, cfg.box_weight, &grads, &logits);
    if (!std::isfinite(loss)) {
      dump_nan_diagnostics(cfg.dump_dir, step, frames, logits);
      throw ContractViolation("non-finite loss at step " + std::to_string(step) +
                              "; diagnostics dumped to " + cfg.dump_dir);
    }
    const double lr = step < switch_step ? cfg.lr_initial : cfg.lr_final;
    std::vector<Tensor*> gptrs = param_ptrs(grads);
    for (size_t p = 0; p < params.size(); ++p) {
      float* theta = params[p]->data();
      float* v = vels[p]->data();
      const float* g = gptrs[p]->data();
      for (size_t i = 0; i < params[p]->numel(); ++i) {
        v[i] = static_cast<float>(cfg.momentum * v[i] - lr * g[i]);
        theta[i] += v[i];
      }
    }
    res.log.push_back(TrainLogRow{step, loss, lr});
  }
  res.final_rng_state = rng.state();
  return res;
}

void write_train_log_csv(const std::string& path, const std::vector<TrainLogRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "step,loss,lr\n";
  for (const TrainLogRow& r : rows) {
    std::ostringstream line;
    line.precision(9);
    line << r.step << "," << r.loss << "," << r.lr << "\n";
    out << line.str();
  }
  if (!out) throw IoError("failed writing " + path);
}

#define FGFA_INSTANTIATE(T)                                                                  \
  template double detect_loss<T>(const TensorT<T>&, const CellTargets&, const NetConfig&,    \
                                 double, double, TensorT<T>*);                               \
  template double fgfa_forward_backward<T>(const ModelT<T>&, const std::vector<TensorT<T>>&, \
                                           int, const std::vector<TensorT<T>>&,              \
                                           const CellTargets&, double, double, ModelT<T>*,   \
                                           TensorT<T>*);

FGFA_INSTANTIATE(float)
FGFA_INSTANTIATE(double)
#undef FGFA_INSTANTIATE

}  // namespace fgfa
