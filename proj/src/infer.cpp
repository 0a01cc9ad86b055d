#include "fgfa/infer.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "fgfa/adaptive_weight.hpp"
#include "fgfa/aggregation.hpp"
#include "fgfa/errors.hpp"
#include "fgfa/eval.hpp"
#include "fgfa/flow_warp.hpp"

namespace fgfa {

InferMode infer_mode_from_string(const std::string& name) {
  if (name == "single") return InferMode::kSingle;
  if (name == "naive") return InferMode::kNaive;
  if (name == "adaptive") return InferMode::kAdaptive;
  if (name == "fgfa") return InferMode::kFgfa;
  if (name == "fgfa-composed") return InferMode::kFgfaComposed;
  throw ConfigError("unknown inference mode '" + name +
                    "' (expected single|naive|adaptive|fgfa|fgfa-composed)");
}

std::string to_string(InferMode mode) {
  switch (mode) {
    case InferMode::kSingle: return "single";
    case InferMode::kNaive: return "naive";
    case InferMode::kAdaptive: return "adaptive";
    case InferMode::kFgfa: return "fgfa";
    case InferMode::kFgfaComposed: return "fgfa-composed";
  }
  throw ContractViolation("bad InferMode value");
}

InferConfig InferConfig::for_mode(InferMode mode, int k) {
  InferConfig c;
  c.k = k;
  switch (mode) {
    case InferMode::kSingle:
      c.aggregate = false;
      c.use_flow = false;
      c.use_adaptive_weights = false;
      break;
    case InferMode::kNaive:
      c.use_flow = false;
      c.use_adaptive_weights = false;
      break;
    case InferMode::kAdaptive:
      c.use_flow = false;
      c.use_adaptive_weights = true;
      break;
    case InferMode::kFgfa:
      break;
    case InferMode::kFgfaComposed:
      c.composed = true;
      break;
  }
  return c;
}

ExactFlowSource::ExactFlowSource(SceneSpec spec, int stride)
    : spec_(std::move(spec)), stride_(stride) {
  if (stride < 1) throw ConfigError("flow source stride must be >= 1");
  if (spec_.width % stride != 0 || spec_.height % stride != 0) {
    throw ConfigError("scene dims must be divisible by the feature stride");
  }
}

Tensor ExactFlowSource::flow(int ref, int src) {
  if (ref == src) return Tensor({2, spec_.height / stride_, spec_.width / stride_});
  ++evals_;
  return downscale_flow(flow_between(spec_, ref, src), stride_);
}

ComposedFlowSource::ComposedFlowSource(const std::map<std::pair<int, int>, Tensor>* adjacent,
                                       int stride)
    : adjacent_(adjacent), stride_(stride) {
  if (!adjacent) throw ContractViolation("composed flow source needs adjacent fields");
  if (stride < 1) throw ConfigError("flow source stride must be >= 1");
}

const Tensor& ComposedFlowSource::adjacent_flow(int a, int b) {
  auto it = adjacent_->find({a, b});
  if (it == adjacent_->end()) {
    throw ContractViolation("missing adjacent flow " + std::to_string(a) + "->" +
                            std::to_string(b));
  }
  if (touched_.insert({std::min(a, b), std::max(a, b)}).second) ++evals_;
  return it->second;
}

Tensor ComposedFlowSource::flow(int ref, int src) {
  if (ref == src) {
    const Tensor& any = adjacent_->begin()->second;
    return Tensor({2, any.dim(1) / stride_, any.dim(2) / stride_});
  }
  const int dir = src > ref ? 1 : -1;
  Tensor m = adjacent_flow(ref, ref + dir);
  for (int t = ref + dir; t != src; t += dir) {
    m = compose_flows(m, adjacent_flow(t, t + dir));
  }
  return downscale_flow(m, stride_);
}

NoisyFlowSource::NoisyFlowSource(FlowSource* inner, double sigma, uint32_t seed)
    : inner_(inner), sigma_(sigma), rng_(seed) {
  if (!inner) throw ContractViolation("noisy flow source needs an inner source");
  if (sigma < 0) throw ConfigError("flow noise sigma must be >= 0");
}

Tensor NoisyFlowSource::flow(int ref, int src) {
  Tensor t = inner_->flow(ref, src);
  if (sigma_ > 0 && ref != src) {
    for (size_t i = 0; i < t.numel(); ++i) {
      t.data()[i] += static_cast<float>(rng_.normal(0.0, sigma_));
    }
  }
  return t;
}

InferResult infer_video(const std::vector<Tensor>& frames, const Model& model,
                        const InferConfig& config, FlowSource* flows) {
  if (frames.empty()) throw ContractViolation("empty video");
  model.config.validate();
  const int stride = model.config.feature_stride();
  for (const Tensor& f : frames) {
    if (f.rank() != 3 || f.dim(0) != model.config.in_channels) {
      throw ConfigError("frames must be [" + std::to_string(model.config.in_channels) +
                        ",H,W], got " + f.shape_str());
    }
    if (f.dim(1) % stride != 0 || f.dim(2) % stride != 0) {
      throw ConfigError("frame dims must be divisible by the feature stride " +
                        std::to_string(stride));
    }
  }
  const int N = static_cast<int>(frames.size());
  InferResult res;

  if (!config.aggregate) {
    for (int i = 0; i < N; ++i) {
      Tensor f = feature_forward(model.feature, frames[i]);
      ++res.feature_extractions;
      std::vector<Detection> dets = forward_detect(model, f, i);
      res.detections.insert(res.detections.end(), dets.begin(), dets.end());
      if (config.record_features) res.features.push_back(std::move(f));
    }
    return res;
  }

  if (config.k < 0) throw ConfigError("infer k must be >= 0");
  if (config.use_flow && !flows) throw ContractViolation("flow-guided mode needs a flow source");
  const int K = config.k;
  FrameBuffer buf(2 * K + 1);
  for (int t = 0; t <= std::min(K, N - 1); ++t) {
    buf.push(t, feature_forward(model.feature, frames[t]));
    ++res.feature_extractions;
  }
  for (int i = 0; i < N; ++i) {
    const int lo = std::max(0, i - K);
    const int hi = std::min(N - 1, i + K);
    const Tensor& f_i = buf.feature(i);
    const int Hf = f_i.dim(1), Wf = f_i.dim(2);
    std::vector<Tensor> warped;
    std::vector<int> offsets;
    for (int j = lo; j <= hi; ++j) {
      if (j == i || !config.use_flow) {
        warped.push_back(buf.feature(j));
      } else {
        warped.push_back(warp_bilinear(buf.feature(j), flows->flow(i, j)));
      }
      offsets.push_back(j - i);
    }
    std::vector<Tensor> weights;
    if (config.use_adaptive_weights) {
      Tensor e_ref = embed_forward(model.embed, f_i);
      std::vector<Tensor> raw;
      for (size_t idx = 0; idx < warped.size(); ++idx) {
        const int j = lo + static_cast<int>(idx);
        Tensor e_j = j == i ? e_ref : embed_forward(model.embed, warped[idx]);
        raw.push_back(exp_map(cosine_map(e_j, e_ref)));
      }
      weights = normalize_weights(raw);
    } else {
      Tensor u({Hf, Wf});
      const float v = 1.0f / static_cast<float>(warped.size());
      for (size_t p = 0; p < u.numel(); ++p) u.data()[p] = v;
      weights.assign(warped.size(), u);
    }
    Tensor fbar = aggregate(warped, weights);
    std::vector<Detection> dets = forward_detect(model, fbar, i);
    res.detections.insert(res.detections.end(), dets.begin(), dets.end());
    if (config.record_features) res.features.push_back(fbar);
    if (config.record_weights) {
      for (size_t idx = 0; idx < weights.size(); ++idx) {
        res.weights.push_back(WeightRecord{i, offsets[idx], std::move(weights[idx])});
      }
    }
    const int next = i + K + 1;
    if (next < N) {
      buf.push(next, feature_forward(model.feature, frames[next]));
      ++res.feature_extractions;
    }
  }
  res.flow_evaluations = flows ? flows->evaluations() : 0;
  return res;
}

std::vector<WeightHistogramRow> weight_histogram(const InferResult& result,
                                                 const std::vector<Track>& tracks, int k,
                                                 int stride, int num_frames) {
  if (result.weights.empty()) {
    throw ContractViolation("weight histogram needs an inference run with recorded weights");
  }
  const MotionGroupThresholds thr;
  std::map<std::pair<std::string, int>, std::pair<double, int>> acc;  // (group, offset) -> (sum, n)
  for (const WeightRecord& rec : result.weights) {
    const int i = rec.frame;
    if (i - k < 0 || i + k > num_frames - 1) continue;  // full windows only
    for (const Track& track : tracks) {
      if (i >= static_cast<int>(track.points.size()) || !track.points[i].present) continue;
      const std::string group = motion_group(motion_iou(track, i, thr.window), thr);
      const Box& b = track.points[i].box;
      double sum = 0.0;
      int cells = 0;
      for (int y = 0; y < rec.map.dim(0); ++y) {
        for (int x = 0; x < rec.map.dim(1); ++x) {
          const double cx = (x + 0.5) * stride;
          const double cy = (y + 0.5) * stride;
          if (cx >= b.x1 && cx <= b.x2 && cy >= b.y1 && cy <= b.y2) {
            sum += rec.map.at2(y, x);
            ++cells;
          }
        }
      }
      if (cells == 0) continue;
      auto& slot = acc[{group, rec.offset}];
      slot.first += sum / cells;
      slot.second += 1;
    }
  }
  std::vector<WeightHistogramRow> rows;
  for (const std::string& group : {"slow", "medium", "fast"}) {
    bool any = false;
    for (int d = -k; d <= k; ++d) {
      if (acc.count({group, d})) any = true;
    }
    if (!any) continue;
    for (int d = -k; d <= k; ++d) {
      auto it = acc.find({group, d});
      WeightHistogramRow row;
      row.offset = d;
      row.motion_group = group;
      row.mean_mass = it == acc.end() ? 0.0 : it->second.first / it->second.second;
      rows.push_back(row);
    }
  }
  return rows;
}

void write_weight_histogram_csv(const std::string& path,
                                const std::vector<WeightHistogramRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "offset,motion_group,mean_mass\n";
  for (const WeightHistogramRow& r : rows) {
    std::ostringstream line;
    line.precision(9);
    line << r.offset << "," << r.motion_group << "," << r.mean_mass << "\n";
    out << line.str();
  }
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace fgfa
