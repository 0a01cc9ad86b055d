#pragma once

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fgfa/boxes.hpp"
#include "fgfa/nets.hpp"
#include "fgfa/rng.hpp"
#include "fgfa/synthetic.hpp"
#include "fgfa/tensor.hpp"

namespace fgfa {

// Inference modes, from plain per-frame detection to full flow-guided
// aggregation with composed flow reuse.
enum class InferMode { kSingle, kNaive, kAdaptive, kFgfa, kFgfaComposed };

InferMode infer_mode_from_string(const std::string& name);
std::string to_string(InferMode mode);

struct InferConfig {
  int k = 10;
  bool aggregate = true;             // false: per-frame baseline
  bool use_flow = true;              // false: neighbors fused without alignment
  bool use_adaptive_weights = true;  // false: uniform 1/window
  bool composed = false;             // build non-adjacent flow by chaining adjacent fields
  bool record_weights = false;
  bool record_features = false;  // keep per-frame aggregated features for analysis

  static InferConfig for_mode(InferMode mode, int k);
};

// Produces feature-resolution displacement fields aligning a source frame's
// features to a reference frame, and counts how many flow-network
// evaluations a real system would have spent.
class FlowSource {
 public:
  virtual ~FlowSource() = default;
  virtual Tensor flow(int ref, int src) = 0;
  virtual int evaluations() const = 0;
};

// Regenerates the exact field for any (ref, src) pair from scene geometry.
// Every ref != src request costs one evaluation, like running a flow
// network per pair.
class ExactFlowSource : public FlowSource {
 public:
  ExactFlowSource(SceneSpec spec, int stride);
  Tensor flow(int ref, int src) override;
  int evaluations() const override { return evals_; }

 private:
  SceneSpec spec_;
  int stride_;
  int evals_ = 0;
};

// Chains stored adjacent-pair fields to reach non-adjacent sources. Only
// the first touch of each adjacent pair counts as an evaluation; chaining
// itself is warp work, not flow estimation.
class ComposedFlowSource : public FlowSource {
 public:
  ComposedFlowSource(const std::map<std::pair<int, int>, Tensor>* adjacent, int stride);
  Tensor flow(int ref, int src) override;
  int evaluations() const override { return evals_; }

 private:
  const Tensor& adjacent_flow(int a, int b);
  const std::map<std::pair<int, int>, Tensor>* adjacent_;
  int stride_;
  std::set<std::pair<int, int>> touched_;  // unordered pairs, stored (lo,hi)
  int evals_ = 0;
};

// Adds Gaussian noise to another source's fields.
class NoisyFlowSource : public FlowSource {
 public:
  NoisyFlowSource(FlowSource* inner, double sigma, uint32_t seed);
  Tensor flow(int ref, int src) override;
  int evaluations() const override { return inner_->evaluations(); }

 private:
  FlowSource* inner_;
  double sigma_;
  Rng rng_;
};

struct WeightRecord {
  int frame = 0;   // reference frame
  int offset = 0;  // neighbor frame minus reference frame
  Tensor map;      // [Hf,Wf]
};

struct InferResult {
  std::vector<Detection> detections;
  std::vector<WeightRecord> weights;  // only when record_weights
  std::vector<Tensor> features;       // only when record_features, one per frame
  int feature_extractions = 0;
  int flow_evaluations = 0;
};

// Streaming inference over a frame sequence: warm up a sliding feature
// buffer, and per reference frame align buffered neighbors, weight them
// per location, aggregate and detect. Each frame's features are extracted
// exactly once. `flows` may be null when use_flow is false.
InferResult infer_video(const std::vector<Tensor>& frames, const Model& model,
                        const InferConfig& config, FlowSource* flows);

struct WeightHistogramRow {
  int offset = 0;
  std::string motion_group;
  double mean_mass = 0.0;
};

// Mean recorded weight inside ground-truth boxes, per neighbor offset and
// track motion group. Only reference frames with a full window contribute,
// so uniform weighting yields an exactly flat histogram.
std::vector<WeightHistogramRow> weight_histogram(const InferResult& result,
                                                 const std::vector<Track>& tracks, int k,
                                                 int stride, int num_frames);

void write_weight_histogram_csv(const std::string& path,
                                const std::vector<WeightHistogramRow>& rows);

}  // namespace fgfa
